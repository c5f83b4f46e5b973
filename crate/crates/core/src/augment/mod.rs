//! Image augmentation: a shared transform vocabulary and the four
//! strategies built on it (SimAugment, RandAugment, Stacked RandAugment,
//! AutoAugment).
//!
//! Every pipeline draws a single `u64` from the caller's rng and derives an
//! independent ChaCha stream per stage from it, so switching a stage off (or
//! inserting one) never shifts the randomness seen by the others.

mod image;
mod ops;
mod policy;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use image::Image;
pub use ops::{
    apply_transform, color_jitter, gaussian_blur, gaussian_kernel, grayscale, horizontal_flip, hue_shift,
    random_resized_crop, resized_crop, ColorJitter, TransformKind, LUMA, RAND_AUGMENT_OPS,
};
pub use policy::{PolicyOp, PolicyTable, AUTO_AUGMENT_BINS};

use crate::error::{Error, Result};

const STAGE_CROP: u64 = 1;
const STAGE_FLIP: u64 = 2;
const STAGE_RANDAUG: u64 = 3;
const STAGE_JITTER: u64 = 4;
const STAGE_GRAY: u64 = 5;
const STAGE_BLUR: u64 = 6;

/// The rng for sample `sample` in epoch `epoch`: a pure function of its inputs.
pub fn sample_rng(global_seed: u64, epoch: u64, sample: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&global_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&epoch.to_le_bytes());
    seed[16..24].copy_from_slice(&sample.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

/// Kernel size `int(0.1 · side)`, bumped to the next odd number when even.
pub fn default_blur_kernel(side: usize) -> usize {
    let k = (0.1 * side as f64) as usize;
    if k.is_multiple_of(2) {
        k + 1
    } else {
        k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimAugmentParams {
    pub crop_scale: (f32, f32),
    pub crop_ratio: (f32, f32),
    pub flip_p: f32,
    pub jitter: ColorJitter,
    pub jitter_p: f32,
    pub grayscale_p: f32,
    pub blur_kernel: usize,
    pub blur_sigma: (f32, f32),
    pub blur_p: f32,
}

impl Default for SimAugmentParams {
    fn default() -> Self {
        SimAugmentParams {
            crop_scale: (0.2, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_p: 0.5,
            jitter: ColorJitter::default(),
            jitter_p: 0.8,
            grayscale_p: 0.2,
            blur_kernel: default_blur_kernel(32),
            blur_sigma: (0.1, 2.0),
            blur_p: 1.0,
        }
    }
}

impl SimAugmentParams {
    /// Crop covers the whole image and every random stage is off.
    pub fn identity() -> Self {
        SimAugmentParams {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            flip_p: 0.0,
            jitter_p: 0.0,
            grayscale_p: 0.0,
            blur_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_p", self.flip_p),
            ("jitter_p", self.jitter_p),
            ("grayscale_p", self.grayscale_p),
            ("blur_p", self.blur_p),
        ] {
            check_prob(name, p)?;
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("crop scale ({lo}, {hi}) must satisfy 0 < lo ≤ hi ≤ 1")));
        }
        let (lo, hi) = self.crop_ratio;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("crop ratio ({lo}, {hi}) must satisfy 0 < lo ≤ hi")));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("blur sigma ({lo}, {hi}) must satisfy 0 < lo ≤ hi")));
        }
        gaussian_kernel(self.blur_kernel, lo)?;
        let j = &self.jitter;
        if [j.brightness, j.contrast, j.saturation].iter().any(|&a| !(0.0..=1.0).contains(&a))
            || !(0.0..=0.5).contains(&j.hue)
        {
            return Err(Error::invalid("color jitter strengths out of range".to_string()));
        }
        Ok(())
    }
}

fn check_prob(name: &str, p: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandAugmentParams {
    pub n_ops: usize,
    pub magnitude: usize,
    pub num_bins: usize,
    pub ops: Vec<TransformKind>,
}

impl Default for RandAugmentParams {
    fn default() -> Self {
        RandAugmentParams {
            n_ops: 2,
            magnitude: 9,
            num_bins: 31,
            ops: RAND_AUGMENT_OPS.to_vec(),
        }
    }
}

impl RandAugmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_ops == 0 {
            return Err(Error::invalid("RandAugment needs n_ops ≥ 1".to_string()));
        }
        if self.num_bins < 2 || self.magnitude >= self.num_bins {
            return Err(Error::invalid(format!(
                "RandAugment magnitude {} outside [0, {}]",
                self.magnitude,
                self.num_bins.saturating_sub(1)
            )));
        }
        if self.ops.is_empty() {
            return Err(Error::invalid("RandAugment op list is empty".to_string()));
        }
        Ok(())
    }
}

/// One applied transform, for tracing what a random pipeline did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppliedOp {
    pub kind: TransformKind,
    pub magnitude: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    None,
    SimAugment,
    RandAugment,
    StackedRandAugment,
    AutoAugmentImageNet,
}

impl Strategy {
    /// The four strategies compared in the augmentation ablation.
    pub const ABLATION: [Strategy; 4] = [
        Strategy::AutoAugmentImageNet,
        Strategy::RandAugment,
        Strategy::SimAugment,
        Strategy::StackedRandAugment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::SimAugment => "simaugment",
            Strategy::RandAugment => "randaugment",
            Strategy::StackedRandAugment => "stacked-randaugment",
            Strategy::AutoAugmentImageNet => "autoaugment",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.trim().to_ascii_lowercase().chars().filter(|c| *c != '-' && *c != '_').collect();
        Ok(match norm.as_str() {
            "none" => Strategy::None,
            "simaugment" | "sim" => Strategy::SimAugment,
            "randaugment" | "rand" => Strategy::RandAugment,
            "stackedrandaugment" | "stacked" | "stackedsimaugment" => Strategy::StackedRandAugment,
            "autoaugment" | "autoaugmentimagenet" | "auto" => Strategy::AutoAugmentImageNet,
            _ => return Err(Error::invalid(format!("unknown augmentation strategy {s:?}"))),
        })
    }
}

/// A fully parameterized augmentation strategy.
#[derive(Clone, Debug, PartialEq)]
pub enum AugPolicy {
    None,
    SimAugment(SimAugmentParams),
    RandAugment(RandAugmentParams),
    StackedRandAugment {
        sim: SimAugmentParams,
        rand: RandAugmentParams,
    },
    AutoAugment(PolicyTable),
}

impl AugPolicy {
    pub fn from_strategy(strategy: Strategy) -> Self {
        match strategy {
            Strategy::None => AugPolicy::None,
            Strategy::SimAugment => AugPolicy::SimAugment(SimAugmentParams::default()),
            Strategy::RandAugment => AugPolicy::RandAugment(RandAugmentParams::default()),
            Strategy::StackedRandAugment => AugPolicy::StackedRandAugment {
                sim: SimAugmentParams::default(),
                rand: RandAugmentParams::default(),
            },
            Strategy::AutoAugmentImageNet => AugPolicy::AutoAugment(PolicyTable::imagenet()),
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            AugPolicy::None => Strategy::None,
            AugPolicy::SimAugment(_) => Strategy::SimAugment,
            AugPolicy::RandAugment(_) => Strategy::RandAugment,
            AugPolicy::StackedRandAugment { .. } => Strategy::StackedRandAugment,
            AugPolicy::AutoAugment(_) => Strategy::AutoAugmentImageNet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AugPolicy::None | AugPolicy::AutoAugment(_) => Ok(()),
            AugPolicy::SimAugment(p) => p.validate(),
            AugPolicy::RandAugment(p) => p.validate(),
            AugPolicy::StackedRandAugment { sim, rand } => {
                sim.validate()?;
                rand.validate()
            }
        }
    }

    pub fn apply(&self, image: &Image, rng: &mut impl Rng) -> Result<Image> {
        match self {
            AugPolicy::None => Ok(image.clone()),
            AugPolicy::SimAugment(p) => sim_augment(image, p, rng),
            AugPolicy::RandAugment(p) => rand_augment(image, p, rng).map(|(img, _)| img),
            AugPolicy::StackedRandAugment { sim, rand } => stacked_rand_augment(image, sim, rand, rng),
            AugPolicy::AutoAugment(t) => auto_augment(image, t, rng).map(|(img, _)| img),
        }
    }
}

/// Crop → flip → color jitter → grayscale → blur.
pub fn sim_augment(image: &Image, params: &SimAugmentParams, rng: &mut impl Rng) -> Result<Image> {
    sim_pipeline(image, params, None, rng)
}

/// SimAugment with RandAugment inserted between the flip and color jitter.
pub fn stacked_rand_augment(
    image: &Image,
    sim: &SimAugmentParams,
    rand: &RandAugmentParams,
    rng: &mut impl Rng,
) -> Result<Image> {
    sim_pipeline(image, sim, Some(rand), rng)
}

fn sim_pipeline(
    image: &Image,
    params: &SimAugmentParams,
    rand: Option<&RandAugmentParams>,
    rng: &mut impl Rng,
) -> Result<Image> {
    params.validate()?;
    let seed: u64 = rng.random();

    let mut out = random_resized_crop(image, params.crop_scale, params.crop_ratio, &mut stage_rng(seed, STAGE_CROP));
    if stage_rng(seed, STAGE_FLIP).random::<f32>() < params.flip_p {
        out = horizontal_flip(&out);
    }
    if let Some(rp) = rand {
        out = rand_augment(&out, rp, &mut stage_rng(seed, STAGE_RANDAUG))?.0;
    }
    let mut jr = stage_rng(seed, STAGE_JITTER);
    if jr.random::<f32>() < params.jitter_p {
        out = color_jitter(&out, &params.jitter, &mut jr);
    }
    if stage_rng(seed, STAGE_GRAY).random::<f32>() < params.grayscale_p {
        out = grayscale(&out);
    }
    let mut br = stage_rng(seed, STAGE_BLUR);
    if br.random::<f32>() < params.blur_p {
        let (lo, hi) = params.blur_sigma;
        let sigma = if hi > lo { br.random_range(lo..hi) } else { lo };
        out = gaussian_blur(&out, params.blur_kernel, sigma)?;
    }
    out.clamp();
    Ok(out)
}

/// Apply `n_ops` transforms drawn uniformly from `params.ops`; signed ops get a
/// random sign. Returns the image and the trace of applied ops.
pub fn rand_augment(image: &Image, params: &RandAugmentParams, rng: &mut impl Rng) -> Result<(Image, Vec<AppliedOp>)> {
    params.validate()?;
    let mut out = image.clone();
    let mut trace = Vec::with_capacity(params.n_ops);
    for _ in 0..params.n_ops {
        let kind = params.ops[rng.random_range(0..params.ops.len())];
        let mut magnitude = kind.binned_magnitude(params.magnitude, params.num_bins);
        if kind.is_signed() && rng.random_bool(0.5) {
            magnitude = -magnitude;
        }
        out = apply_transform(kind, magnitude, &out)?;
        trace.push(AppliedOp { kind, magnitude });
    }
    Ok((out, trace))
}

/// Pick one sub-policy uniformly and apply each of its ops with its probability.
pub fn auto_augment(image: &Image, table: &PolicyTable, rng: &mut impl Rng) -> Result<(Image, Vec<AppliedOp>)> {
    let sub = table.sub_policy(rng.random_range(0..table.len()));
    let mut out = image.clone();
    let mut trace = Vec::new();
    for op in sub {
        let fire = rng.random::<f32>() < op.prob;
        let negate = rng.random_bool(0.5);
        if !fire {
            continue;
        }
        let mut magnitude = op.kind.binned_magnitude(op.bin, AUTO_AUGMENT_BINS);
        if op.kind.is_signed() && negate {
            magnitude = -magnitude;
        }
        out = apply_transform(op.kind, magnitude, &out)?;
        trace.push(AppliedOp {
            kind: op.kind,
            magnitude,
        });
    }
    Ok((out, trace))
}
