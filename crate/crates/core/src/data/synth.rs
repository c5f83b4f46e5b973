//! Deterministic synthetic multi-domain images: classes are shapes, domains
//! are rendering styles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ImageBank, Record, SplitTag};
use crate::error::{Error, Result};

pub const SHAPE_NAMES: [&str; 8] = ["circle", "square", "triangle", "cross", "diamond", "ring", "bars", "crescent"];
pub const STYLE_NAMES: [&str; 6] = ["solid", "outline", "speckle", "inverted", "striped", "sketch"];

const SIDE: usize = 32;

fn inside(shape: usize, u: f64, v: f64) -> bool {
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => u.abs().max(v.abs()) <= 0.8,
        2 => (-0.9..=0.6).contains(&v) && u.abs() <= 0.85 * (v + 0.9) / 1.5,
        3 => (u.abs() <= 0.25 && v.abs() <= 0.9) || (v.abs() <= 0.25 && u.abs() <= 0.9),
        4 => u.abs() + v.abs() <= 0.95,
        5 => (0.55..=1.0).contains(&(u * u + v * v).sqrt()),
        6 => u.abs() <= 0.9 && v.abs() <= 0.9 && ((v + 0.9) / 0.36).floor() as i64 % 2 == 0,
        _ => u * u + v * v <= 1.0 && (u - 0.45) * (u - 0.45) + v * v > 0.6,
    }
}

fn render(shape: usize, style: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let cx = rng.random_range(11.0..21.0);
    let cy = rng.random_range(11.0..21.0);
    let radius = rng.random_range(7.0..11.0);
    let (sin, cos) = rng.random_range(-0.6f64..0.6).sin_cos();
    let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.55..1.0));
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.25));

    let mut mask = vec![false; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = ((x as f64 - cx) / radius, (y as f64 - cy) / radius);
            mask[y * SIDE + x] = inside(shape, cos * dx + sin * dy, -sin * dx + cos * dy);
        }
    }
    let edge = |i: usize| {
        let (x, y) = (i % SIDE, i / SIDE);
        mask[i]
            && (x == 0
                || y == 0
                || x == SIDE - 1
                || y == SIDE - 1
                || !mask[i - 1]
                || !mask[i + 1]
                || !mask[i - SIDE]
                || !mask[i + SIDE])
    };

    let noise = Normal::new(0.0, 0.03).unwrap();
    let gray = |c: [f64; 3]| {
        let l = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        [l; 3]
    };
    let mut out = vec![0u8; SIDE * SIDE * 3];
    for i in 0..SIDE * SIDE {
        let (x, y) = (i % SIDE, i / SIDE);
        let color = match STYLE_NAMES[style] {
            "solid" => {
                if mask[i] {
                    fg
                } else {
                    bg
                }
            }
            "outline" => {
                if edge(i) {
                    fg
                } else {
                    bg
                }
            }
            "speckle" => {
                let on = rng.random_bool(if mask[i] { 0.6 } else { 0.08 });
                if on {
                    fg
                } else {
                    bg
                }
            }
            "inverted" => {
                if mask[i] {
                    bg
                } else {
                    fg.map(|c| 1.0 - c * 0.3)
                }
            }
            "striped" => {
                if mask[i] && (x + y) / 2 % 2 == 0 {
                    fg
                } else if mask[i] {
                    fg.map(|c| c * 0.5)
                } else {
                    bg
                }
            }
            _ => {
                if edge(i) && rng.random_bool(0.8) {
                    gray(fg)
                } else {
                    [0.9; 3]
                }
            }
        };
        for c in 0..3 {
            let v = color[c] + noise.sample(rng);
            out[i * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

/// `n_per` images for every (domain, class) pair, in domain-major order, all
/// untagged. Supports up to 8 classes and 6 domains.
pub fn gen_synthetic_multidomain(n_classes: usize, n_domains: usize, n_per: usize, seed: u64) -> Result<ImageBank> {
    if !(2..=SHAPE_NAMES.len()).contains(&n_classes) {
        return Err(Error::invalid(format!(
            "n_classes must be in [2, {}], got {n_classes}",
            SHAPE_NAMES.len()
        )));
    }
    if !(1..=STYLE_NAMES.len()).contains(&n_domains) {
        return Err(Error::invalid(format!(
            "n_domains must be in [1, {}], got {n_domains}",
            STYLE_NAMES.len()
        )));
    }
    if n_per == 0 {
        return Err(Error::invalid("n_per must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_classes * n_domains * n_per);
    for domain in 0..n_domains {
        for class in 0..n_classes {
            for _ in 0..n_per {
                records.push(Record {
                    pixels: render(class, domain, &mut rng),
                    class,
                    domain,
                    split: SplitTag::Unassigned,
                });
            }
        }
    }
    ImageBank::new(
        SIDE,
        SIDE,
        3,
        SHAPE_NAMES[..n_classes].iter().map(|s| s.to_string()).collect(),
        STYLE_NAMES[..n_domains].iter().map(|s| s.to_string()).collect(),
        records,
    )
}
