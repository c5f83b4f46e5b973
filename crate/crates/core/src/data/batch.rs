use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ImageBank;
use crate::augment::{sample_rng, AugPolicy};
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchConfig {
    pub batch_size: usize,
    /// 1 for plain batches, 2 for two-view contrastive batches.
    pub views: usize,
    pub shuffle: bool,
    pub drop_last: bool,
    /// Drives both the epoch shuffle and per-sample augmentation streams.
    pub seed: u64,
}

/// Images are `[views·n, C, H, W]`, laid out `[all first views | all second views]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn n_samples(&self) -> usize {
        self.indices.len()
    }
}

pub struct BatchIter<'a> {
    bank: &'a ImageBank,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    config: BatchConfig,
    policy: &'a AugPolicy,
}

/// Iterate over `indices` of `bank` for one epoch.
pub fn batch_iter<'a>(
    bank: &'a ImageBank,
    indices: &[usize],
    epoch: u64,
    config: &BatchConfig,
    policy: &'a AugPolicy,
) -> Result<BatchIter<'a>> {
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if !(1..=2).contains(&config.views) {
        return Err(Error::invalid(format!("views must be 1 or 2, got {}", config.views)));
    }
    if indices.is_empty() {
        return Err(Error::invalid("cannot iterate over an empty split"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= bank.len()) {
        return Err(Error::invalid(format!("index {bad} out of range for {} records", bank.len())));
    }
    policy.validate()?;
    let mut order = indices.to_vec();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    Ok(BatchIter {
        bank,
        order,
        cursor: 0,
        epoch,
        config: config.clone(),
        policy,
    })
}

impl BatchIter<'_> {
    /// Number of batches this epoch will yield.
    pub fn n_batches(&self) -> usize {
        let n = self.order.len();
        if self.config.drop_last {
            n / self.config.batch_size
        } else {
            n.div_ceil(self.config.batch_size)
        }
    }

    fn assemble(&self, chunk: &[usize]) -> Result<Batch> {
        let bank = self.bank;
        let views = self.config.views;
        let per_image = bank.pixels_per_image();
        let per_sample: Vec<Vec<Vec<f32>>> = chunk
            .par_iter()
            .map(|&idx| {
                let image = bank.image(idx);
                let mut rng = sample_rng(self.config.seed, self.epoch, idx as u64);
                (0..views)
                    .map(|_| self.policy.apply(&image, &mut rng).map(|img| img.into_data()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(views * chunk.len() * per_image);
        for v in 0..views {
            for sample in &per_sample {
                data.extend_from_slice(&sample[v]);
            }
        }
        let labels = bank.labels(chunk);
        Ok(Batch {
            images: Tensor::new(vec![views * chunk.len(), bank.channels, bank.height, bank.width], data)?,
            labels: labels.iter().cycle().take(views * chunk.len()).copied().collect(),
            indices: chunk.to_vec(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let remaining = self.order.len() - self.cursor;
        let take = remaining.min(self.config.batch_size);
        if take == 0 || (self.config.drop_last && take < self.config.batch_size) {
            return None;
        }
        let chunk = self.order[self.cursor..self.cursor + take].to_vec();
        self.cursor += take;
        Some(self.assemble(&chunk))
    }
}
