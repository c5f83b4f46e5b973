//! Training objectives: multi-class cross-entropy and supervised contrastive
//! (SupCon) loss, plus a literal double-loop SupCon used as a verification oracle.
//!
//! Both objectives are built from tape primitives, so their gradients come from
//! the same reverse-mode machinery as the rest of the model.

use crate::error::{Error, Result};
use crate::ndtensor::{Scalar, Tape, Tensor, Var, NORM_EPS};

/// How per-sample terms are combined. `Sum` is the printed form of both
/// objectives; `Mean` divides by the number of rows and is the training default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

/// `mask[i][j]` is set iff `i != j` and `labels[i] == labels[j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositiveMask {
    n: usize,
    bits: Vec<bool>,
}

impl PositiveMask {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn count(&self, i: usize) -> usize {
        self.row(i).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

pub fn positive_mask(labels: &[usize]) -> Result<PositiveMask> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::invalid(format!("contrastive batch needs at least 2 views, got {n}")));
    }
    let bits = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            i != j && labels[i] == labels[j]
        })
        .collect();
    Ok(PositiveMask { n, bits })
}

/// Projections `z` for a batch of `2N` views with their labels and temperature.
#[derive(Clone, Debug)]
pub struct SupConBatch<T> {
    pub projections: Tensor<T>,
    pub labels: Vec<usize>,
    pub temperature: f64,
}

impl<T: Scalar> SupConBatch<T> {
    pub fn new(projections: Tensor<T>, labels: Vec<usize>, temperature: f64) -> Result<Self> {
        check_supcon_shape(projections.shape(), labels.len(), temperature)?;
        Ok(SupConBatch {
            projections,
            labels,
            temperature,
        })
    }
}

fn check_supcon_shape(shape: &[usize], n_labels: usize, temperature: f64) -> Result<()> {
    let rows = match shape {
        [r, d] if *d > 0 => *r,
        s => return Err(Error::shape("supcon_loss", format!("projections must be 2N×d, got {s:?}"))),
    };
    if rows < 2 {
        return Err(Error::invalid(format!("SupCon needs 2N ≥ 2 views, got {rows}")));
    }
    if rows != n_labels {
        return Err(Error::shape(
            "supcon_loss",
            format!("{rows} projection rows but {n_labels} labels"),
        ));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    Ok(())
}

/// A recorded SupCon loss and the number of views that had no positive.
#[derive(Clone, Copy, Debug)]
pub struct SupConOutput {
    pub loss: Var,
    /// Views without any positive; they contribute zero to the loss.
    pub singletons: usize,
}

/// Supervised contrastive loss over the rows of `projections`.
///
/// Rows are L2-normalized first, so the loss is invariant to row scaling. For
/// each anchor `i` with positive set `P(i)` the term is
/// `−1/|P(i)| · Σ_{j∈P(i)} log(exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ))`, which with
/// two views per sample makes `|P(i)| = 2N_{y_i} − 1`.
pub fn supcon_loss<T: Scalar>(
    tape: &mut Tape<T>,
    projections: Var,
    labels: &[usize],
    temperature: f64,
    reduction: Reduction,
) -> Result<SupConOutput> {
    check_supcon_shape(tape.value(projections).shape(), labels.len(), temperature)?;
    let n = labels.len();
    let mask = positive_mask(labels)?;

    let z = tape.l2_normalize_rows(projections)?;
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let logits = tape.scale(sim, T::of(1.0 / temperature))?;

    let off_diagonal: Vec<bool> = (0..n * n).map(|idx| idx / n != idx % n).collect();
    let lse = tape.log_sum_exp_rows(logits, Some(off_diagonal))?;

    let mut pair_weights = vec![T::zero(); n * n];
    let mut anchor_weights = vec![T::zero(); n];
    let mut singletons = 0;
    for i in 0..n {
        let positives = mask.count(i);
        if positives == 0 {
            singletons += 1;
            continue;
        }
        let coef = T::of(1.0 / positives as f64);
        for j in mask.row(i) {
            pair_weights[i * n + j] = coef;
        }
        anchor_weights[i] = T::one();
    }

    // Σ_i [lse_i − (1/|P(i)|) Σ_{j∈P(i)} logit_ij]
    let attract = tape.weighted_sum(logits, pair_weights)?;
    let normalizer = tape.weighted_sum(lse, anchor_weights)?;
    let neg_attract = tape.scale(attract, -T::one())?;
    let total = tape.add(normalizer, neg_attract)?;
    let loss = match reduction {
        Reduction::Sum => total,
        Reduction::Mean => tape.scale(total, T::of(1.0 / n as f64))?,
    };
    Ok(SupConOutput { loss, singletons })
}

/// Evaluate [`supcon_loss`] on a fresh tape; returns the loss and singleton count.
pub fn supcon_loss_value<T: Scalar>(batch: &SupConBatch<T>, reduction: Reduction) -> Result<(T, usize)> {
    let mut tape = Tape::new();
    let z = tape.leaf(batch.projections.clone())?;
    let out = supcon_loss(&mut tape, z, &batch.labels, batch.temperature, reduction)?;
    Ok((tape.value(out.loss).item()?, out.singletons))
}

/// Literal transcription of the SupCon definition with nested loops and naive
/// exponentials. Summed over anchors. Intended for batches of at most 64 views.
pub fn supcon_loss_bruteforce(batch: &SupConBatch<f64>) -> Result<f64> {
    let rows = batch.labels.len();
    let d = batch.projections.shape()[1];
    let raw = batch.projections.data();

    let mut z = vec![vec![0.0f64; d]; rows];
    for i in 0..rows {
        let mut sq = 0.0;
        for c in 0..d {
            sq += raw[i * d + c] * raw[i * d + c];
        }
        let norm = sq.sqrt();
        if norm <= NORM_EPS {
            return Err(Error::DegenerateInput {
                op: "supcon_loss_bruteforce",
                detail: format!("projection row {i} has norm {norm}"),
            });
        }
        for c in 0..d {
            z[i][c] = raw[i * d + c] / norm;
        }
    }
    let sim = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for (x, y) in z[a].iter().zip(&z[b]).take(d) {
            s += x * y;
        }
        s
    };

    let tau = batch.temperature;
    let mut total = 0.0;
    for i in 0..rows {
        let mut same_class = 0usize;
        for j in 0..rows {
            if i != j && batch.labels[i] == batch.labels[j] {
                same_class += 1;
            }
        }
        if same_class == 0 {
            continue;
        }
        let mut denominator = 0.0;
        for k in 0..rows {
            if i != k {
                denominator += (sim(i, k) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for j in 0..rows {
            if i != j && batch.labels[i] == batch.labels[j] {
                inner += ((sim(i, j) / tau).exp() / denominator).ln();
            }
        }
        total += -1.0 / same_class as f64 * inner;
    }
    Ok(total)
}

/// Logits `s` (N×K) and integer targets.
#[derive(Clone, Debug)]
pub struct CEBatch<T> {
    pub logits: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> CEBatch<T> {
    pub fn new(logits: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        check_ce_shape(logits.shape(), &labels)?;
        Ok(CEBatch { logits, labels })
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[1]
    }
}

fn check_ce_shape(shape: &[usize], labels: &[usize]) -> Result<usize> {
    let (n, k) = match shape {
        [n, k] => (*n, *k),
        s => return Err(Error::shape("cross_entropy", format!("logits must be N×K, got {s:?}"))),
    };
    if k < 2 {
        return Err(Error::invalid(format!("cross-entropy needs K ≥ 2 classes, got {k}")));
    }
    if n != labels.len() || n == 0 {
        return Err(Error::shape(
            "cross_entropy",
            format!("{n} logit rows but {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    Ok(k)
}

/// `Σ_i −log softmax(s_i)[t_i]`, max-shifted.
pub fn cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    reduction: Reduction,
) -> Result<Var> {
    let k = check_ce_shape(tape.value(logits).shape(), labels)?;
    let n = labels.len();
    let lse = tape.log_sum_exp_rows(logits, None)?;
    let mut onehot = vec![T::zero(); n * k];
    for (i, &t) in labels.iter().enumerate() {
        onehot[i * k + t] = T::one();
    }
    let picked = tape.weighted_sum(logits, onehot)?;
    let normalizer = tape.sum(lse)?;
    let neg_picked = tape.scale(picked, -T::one())?;
    let total = tape.add(normalizer, neg_picked)?;
    match reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => tape.scale(total, T::of(1.0 / n as f64)),
    }
}

pub fn cross_entropy_value<T: Scalar>(batch: &CEBatch<T>, reduction: Reduction) -> Result<T> {
    let mut tape = Tape::new();
    let s = tape.leaf(batch.logits.clone())?;
    let loss = cross_entropy(&mut tape, s, &batch.labels, reduction)?;
    tape.value(loss).item()
}
