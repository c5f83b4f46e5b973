//! Encoder `g`, projection head `h` and linear classifier, stored as named
//! parameter tensors grouped for freezing.
//!
//! The encoder is a desk-scale convolutional stand-in for a ResNet: four
//! 3×3 conv stages with stride-2 downsampling between them, ReLU, and global
//! average pooling. `Arch::Deep` doubles the convolutions per stage and adds a
//! residual connection around the second one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ndtensor::{Gradients, Scalar, Tape, Tensor, Var};

/// Default projection size, matching the 128-d output of the head.
pub const DEFAULT_HEAD_DIM: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Small,
    Deep,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Small => "small",
            Arch::Deep => "deep",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Arch::Small),
            "deep" => Ok(Arch::Deep),
            other => Err(Error::invalid(format!("unknown encoder arch `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub arch: Arch,
    /// Channels of the first stage; later stages use 2× and 4× this.
    pub width: usize,
    /// Channels of the last stage, i.e. the feature size after pooling.
    pub feature_dim: usize,
    pub input_size: usize,
    pub in_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            arch: Arch::Small,
            width: 16,
            feature_dim: 128,
            input_size: 32,
            in_channels: 3,
        }
    }
}

const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 2];
const TOTAL_STRIDE: usize = 8;

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 8 {
            return Err(Error::Validation(format!(
                "feature_dim must be at least 8, got {}",
                self.feature_dim
            )));
        }
        if self.width == 0 || self.in_channels == 0 {
            return Err(Error::Validation("encoder width and input channels must be positive".into()));
        }
        if self.input_size < TOTAL_STRIDE || !self.input_size.is_multiple_of(TOTAL_STRIDE) {
            return Err(Error::Validation(format!(
                "input size {} is not divisible by the total stride {TOTAL_STRIDE}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn stage_channels(&self) -> [usize; 4] {
        [self.width, 2 * self.width, 4 * self.width, self.feature_dim]
    }

    fn convs_per_stage(&self) -> usize {
        match self.arch {
            Arch::Small => 1,
            Arch::Deep => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Encoder,
    Head,
    Classifier,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Head => "head",
            ParamGroup::Classifier => "classifier",
        }
    }

    /// Group of a parameter, taken from its name prefix.
    pub fn of_name(name: &str) -> Result<Self> {
        match name.split('.').next() {
            Some("encoder") => Ok(ParamGroup::Encoder),
            Some("head") => Ok(ParamGroup::Head),
            Some("classifier") => Ok(ParamGroup::Classifier),
            _ => Err(Error::invalid(format!("parameter `{name}` has no known group prefix"))),
        }
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::of_name(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<f32>,
}

/// Which parts a model carries besides the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Projection output size; `None` for models without a head.
    pub head_dim: Option<usize>,
    /// Classifier output size; `None` for models without a classifier.
    pub n_classes: Option<usize>,
}

impl ModelConfig {
    pub fn supcon(encoder: EncoderConfig) -> Self {
        ModelConfig {
            encoder,
            head_dim: Some(DEFAULT_HEAD_DIM),
            n_classes: None,
        }
    }

    pub fn cross_entropy(encoder: EncoderConfig, n_classes: usize) -> Self {
        ModelConfig {
            encoder,
            head_dim: None,
            n_classes: Some(n_classes),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    params: Vec<Param>,
    frozen: BTreeSet<ParamGroup>,
    /// Free-form run metadata (loss type, temperature, epoch, ...).
    pub metadata: BTreeMap<String, String>,
}

impl ModelBundle {
    pub(crate) fn from_parts(
        config: ModelConfig,
        params: Vec<Param>,
        frozen: BTreeSet<ParamGroup>,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        ModelBundle {
            config,
            params,
            frozen,
            metadata,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn group_params(&self, group: ParamGroup) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(move |p| p.group == group)
    }

    pub fn num_params(&self, group: ParamGroup) -> usize {
        self.group_params(group).map(|p| p.value.numel()).sum()
    }

    pub fn has_group(&self, group: ParamGroup) -> bool {
        self.params.iter().any(|p| p.group == group)
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        self.frozen.insert(group);
    }

    pub fn unfreeze(&mut self, group: ParamGroup) {
        self.frozen.remove(&group);
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn frozen_groups(&self) -> &BTreeSet<ParamGroup> {
        &self.frozen
    }

    /// Drop the projection head, leaving encoder parameters untouched.
    pub fn discard_head(&mut self) {
        self.params.retain(|p| p.group != ParamGroup::Head);
        self.frozen.remove(&ParamGroup::Head);
        self.config.head_dim = None;
    }

    /// Replace any classifier with a freshly initialized `feature_dim → n_classes` layer.
    pub fn attach_classifier(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::Validation(format!("classifier needs at least 2 classes, got {n_classes}")));
        }
        self.params.retain(|p| p.group != ParamGroup::Classifier);
        self.frozen.remove(&ParamGroup::Classifier);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fd = self.config.encoder.feature_dim;
        push_dense(&mut self.params, &mut rng, "classifier", ParamGroup::Classifier, fd, n_classes)?;
        self.config.n_classes = Some(n_classes);
        Ok(())
    }

    /// Place the parameters of `groups` (all groups when empty) on `tape` as leaves.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, groups: &[ParamGroup]) -> Result<Bound> {
        let mut bound = Bound::default();
        for (idx, p) in self.params.iter().enumerate() {
            if groups.is_empty() || groups.contains(&p.group) {
                let var = tape.leaf(p.value.cast())?;
                bound.vars.insert(p.name.clone(), var);
                bound.order.push((idx, var));
            }
        }
        Ok(bound)
    }
}

/// Parameters of a bundle placed on a tape.
#[derive(Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<(usize, Var)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients of the bound parameters as `(param index, gradient)` pairs in
    /// bundle order; parameters the root does not depend on get zeros.
    pub fn gradients<T: Scalar>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> Vec<(usize, Tensor<f32>)> {
        self.order
            .iter()
            .map(|&(idx, var)| {
                let g = match grads.get(var) {
                    Some(g) => g.cast(),
                    None => Tensor::zeros(tape.value(var).shape().to_vec()),
                };
                (idx, g)
            })
            .collect()
    }
}

fn kaiming(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Result<Tensor<f32>> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(Tensor::from_fn(shape, |_| normal.sample(rng) as f32))
}

fn push_dense(
    params: &mut Vec<Param>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    params.push(Param {
        name: format!("{prefix}.weight"),
        group,
        value: kaiming(rng, vec![fan_in, fan_out], fan_in)?,
    });
    params.push(Param {
        name: format!("{prefix}.bias"),
        group,
        value: Tensor::zeros([fan_out]),
    });
    Ok(())
}

fn conv_name(stage: usize, conv: usize) -> String {
    format!("encoder.stage{stage}.conv{conv}")
}

/// Kaiming-normal weights, zero biases, fully determined by `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelBundle> {
    cfg.encoder.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();

    let mut in_ch = cfg.encoder.in_channels;
    for (stage, &out_ch) in cfg.encoder.stage_channels().iter().enumerate() {
        for conv in 0..cfg.encoder.convs_per_stage() {
            let c_in = if conv == 0 { in_ch } else { out_ch };
            let name = conv_name(stage, conv);
            params.push(Param {
                name: format!("{name}.weight"),
                group: ParamGroup::Encoder,
                value: kaiming(&mut rng, vec![out_ch, c_in, 3, 3], c_in * 9)?,
            });
            params.push(Param {
                name: format!("{name}.bias"),
                group: ParamGroup::Encoder,
                value: Tensor::zeros([out_ch]),
            });
        }
        in_ch = out_ch;
    }

    let fd = cfg.encoder.feature_dim;
    if let Some(head_dim) = cfg.head_dim {
        if head_dim == 0 {
            return Err(Error::Validation("head_dim must be positive".into()));
        }
        push_dense(&mut params, &mut rng, "head.fc1", ParamGroup::Head, fd, fd)?;
        push_dense(&mut params, &mut rng, "head.fc2", ParamGroup::Head, fd, head_dim)?;
    }
    let mut bundle = ModelBundle {
        config: cfg.clone(),
        params,
        frozen: BTreeSet::new(),
        metadata: BTreeMap::new(),
    };
    if let Some(k) = cfg.n_classes {
        bundle.attach_classifier(k, rng_fork(seed))?;
    }
    Ok(bundle)
}

fn rng_fork(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn conv_block<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, x: Var, name: &str, stride: usize) -> Result<Var> {
    let w = bound.get(&format!("{name}.weight"))?;
    let b = bound.get(&format!("{name}.bias"))?;
    let y = tape.conv2d(x, w, stride)?;
    let y = tape.add_channel_bias(y, b)?;
    tape.relu(y)
}

/// `g(x)`: images `[B×C×S×S]` in `[0,1]` to features `[B×feature_dim]`.
pub fn encoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &EncoderConfig,
    bound: &Bound,
    images: Var,
) -> Result<Var> {
    let shape = tape.value(images).shape();
    let expected = [cfg.in_channels, cfg.input_size, cfg.input_size];
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::shape(
            "encoder_forward",
            format!("expected B×{}×{}×{}, got {shape:?}", expected[0], expected[1], expected[2]),
        ));
    }
    let mut x = images;
    for (stage, &stride) in STAGE_STRIDES.iter().enumerate() {
        x = conv_block(tape, bound, x, &conv_name(stage, 0), stride)?;
        if cfg.convs_per_stage() == 2 {
            let inner = conv_block(tape, bound, x, &conv_name(stage, 1), 1)?;
            x = tape.add(x, inner)?;
        }
    }
    tape.global_avg_pool(x)
}

/// `h(features)`: dense, ReLU, dense, then row-wise L2 normalization.
pub fn projection_forward<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, features: Var) -> Result<Var> {
    let hidden = tape.dense(features, bound.get("head.fc1.weight")?, bound.get("head.fc1.bias")?)?;
    let hidden = tape.relu(hidden)?;
    let z = tape.dense(hidden, bound.get("head.fc2.weight")?, bound.get("head.fc2.bias")?)?;
    tape.l2_normalize_rows(z)
}

/// Linear classifier logits `[B×K]`.
pub fn classifier_forward<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, features: Var) -> Result<Var> {
    tape.dense(features, bound.get("classifier.weight")?, bound.get("classifier.bias")?)
}
