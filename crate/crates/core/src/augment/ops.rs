//! Transform vocabulary shared by every augmentation strategy.
//!
//! Magnitudes are physical values: degrees for `Rotate`, shear factor for
//! `Shear*`, fraction of the image side for `Translate*`, enhancement delta
//! (factor `1 + m`) for the photometric enhancers, threshold in `[0,1]` for
//! `Solarize` and bit depth for `Posterize`. Geometric ops resample bilinearly
//! with zero fill.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::image::{to_level, Image};
use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Invert,
    HorizontalFlip,
    Grayscale,
}

/// The fourteen operations RandAugment samples from.
pub const RAND_AUGMENT_OPS: [TransformKind; 14] = [
    TransformKind::Identity,
    TransformKind::ShearX,
    TransformKind::ShearY,
    TransformKind::TranslateX,
    TransformKind::TranslateY,
    TransformKind::Rotate,
    TransformKind::Brightness,
    TransformKind::Color,
    TransformKind::Contrast,
    TransformKind::Sharpness,
    TransformKind::Posterize,
    TransformKind::Solarize,
    TransformKind::AutoContrast,
    TransformKind::Equalize,
];

const ALL: [TransformKind; 17] = [
    TransformKind::Identity,
    TransformKind::AutoContrast,
    TransformKind::Equalize,
    TransformKind::Rotate,
    TransformKind::Solarize,
    TransformKind::Color,
    TransformKind::Posterize,
    TransformKind::Contrast,
    TransformKind::Brightness,
    TransformKind::Sharpness,
    TransformKind::ShearX,
    TransformKind::ShearY,
    TransformKind::TranslateX,
    TransformKind::TranslateY,
    TransformKind::Invert,
    TransformKind::HorizontalFlip,
    TransformKind::Grayscale,
];

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "Identity",
            TransformKind::AutoContrast => "AutoContrast",
            TransformKind::Equalize => "Equalize",
            TransformKind::Rotate => "Rotate",
            TransformKind::Solarize => "Solarize",
            TransformKind::Color => "Color",
            TransformKind::Posterize => "Posterize",
            TransformKind::Contrast => "Contrast",
            TransformKind::Brightness => "Brightness",
            TransformKind::Sharpness => "Sharpness",
            TransformKind::ShearX => "ShearX",
            TransformKind::ShearY => "ShearY",
            TransformKind::TranslateX => "TranslateX",
            TransformKind::TranslateY => "TranslateY",
            TransformKind::Invert => "Invert",
            TransformKind::HorizontalFlip => "HorizontalFlip",
            TransformKind::Grayscale => "Grayscale",
        }
    }

    /// Inclusive range of accepted magnitudes; `(0, 0)` for parameterless ops.
    pub fn magnitude_range(self) -> (f32, f32) {
        match self {
            TransformKind::Rotate => (-180.0, 180.0),
            TransformKind::ShearX | TransformKind::ShearY => (-1.0, 1.0),
            TransformKind::TranslateX | TransformKind::TranslateY => (-1.0, 1.0),
            TransformKind::Brightness
            | TransformKind::Color
            | TransformKind::Contrast
            | TransformKind::Sharpness => (-1.0, 1.0),
            TransformKind::Solarize => (0.0, 1.0),
            TransformKind::Posterize => (0.0, 8.0),
            _ => (0.0, 0.0),
        }
    }

    /// Ops whose magnitude gets a random sign when sampled by RandAugment/AutoAugment.
    pub fn is_signed(self) -> bool {
        matches!(
            self,
            TransformKind::Rotate
                | TransformKind::ShearX
                | TransformKind::ShearY
                | TransformKind::TranslateX
                | TransformKind::TranslateY
                | TransformKind::Brightness
                | TransformKind::Color
                | TransformKind::Contrast
                | TransformKind::Sharpness
        )
    }

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            TransformKind::Identity
                | TransformKind::Rotate
                | TransformKind::ShearX
                | TransformKind::ShearY
                | TransformKind::TranslateX
                | TransformKind::TranslateY
        )
    }

    /// Physical magnitude of bin `bin` on a `num_bins` scale, unsigned.
    pub fn binned_magnitude(self, bin: usize, num_bins: usize) -> f32 {
        let span = (num_bins.max(2) - 1) as f32;
        let frac = bin as f32 / span;
        match self {
            TransformKind::ShearX | TransformKind::ShearY => 0.3 * frac,
            TransformKind::TranslateX | TransformKind::TranslateY => 150.0 / 331.0 * frac,
            TransformKind::Rotate => 30.0 * frac,
            TransformKind::Brightness
            | TransformKind::Color
            | TransformKind::Contrast
            | TransformKind::Sharpness => 0.9 * frac,
            TransformKind::Posterize => 8.0 - (bin as f32 / (span / 4.0)).round(),
            TransformKind::Solarize => 1.0 - frac,
            _ => 0.0,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL.iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownTransform(s.to_string()))
    }
}

/// Apply one vocabulary transform. Output has the input's shape and lies in `[0,1]`.
pub fn apply_transform(kind: TransformKind, magnitude: f32, image: &Image) -> Result<Image> {
    let (lo, hi) = kind.magnitude_range();
    if !(magnitude >= lo && magnitude <= hi) {
        return Err(Error::MagnitudeOutOfRange {
            op: kind.name(),
            magnitude,
            min: lo,
            max: hi,
        });
    }
    let mut out = match kind {
        TransformKind::Identity => image.clone(),
        TransformKind::AutoContrast => autocontrast(image),
        TransformKind::Equalize => equalize(image),
        TransformKind::Rotate => {
            let (s, c) = (magnitude as f64).to_radians().sin_cos();
            affine(image, |dx, dy| (c * dx - s * dy, s * dx + c * dy))
        }
        TransformKind::Solarize => {
            let mut out = image.clone();
            for v in out.data_mut() {
                if *v >= magnitude {
                    *v = 1.0 - *v;
                }
            }
            out
        }
        TransformKind::Color => blend(image, &grayscale(image), 1.0 + magnitude),
        TransformKind::Posterize => posterize(image, magnitude.round() as u32),
        TransformKind::Contrast => {
            let mean = grayscale(image).mean();
            let degenerate = Image::filled(image.channels(), image.height(), image.width(), mean);
            blend(image, &degenerate, 1.0 + magnitude)
        }
        TransformKind::Brightness => {
            let black = Image::filled(image.channels(), image.height(), image.width(), 0.0);
            blend(image, &black, 1.0 + magnitude)
        }
        TransformKind::Sharpness => blend(image, &smooth(image), 1.0 + magnitude),
        TransformKind::ShearX => {
            let m = magnitude as f64;
            affine(image, |dx, dy| (dx + m * dy, dy))
        }
        TransformKind::ShearY => {
            let m = magnitude as f64;
            affine(image, |dx, dy| (dx, dy + m * dx))
        }
        TransformKind::TranslateX => {
            let t = magnitude as f64 * image.width() as f64;
            affine(image, |dx, dy| (dx - t, dy))
        }
        TransformKind::TranslateY => {
            let t = magnitude as f64 * image.height() as f64;
            affine(image, |dx, dy| (dx, dy - t))
        }
        TransformKind::Invert => {
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = 1.0 - *v;
            }
            out
        }
        TransformKind::HorizontalFlip => horizontal_flip(image),
        TransformKind::Grayscale => grayscale(image),
    };
    out.clamp();
    Ok(out)
}

pub fn horizontal_flip(image: &Image) -> Image {
    let mut out = image.clone();
    let w = image.width();
    for c in 0..image.channels() {
        for row in out.plane_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
    out
}

/// BT.601 luma replicated into every channel.
pub fn grayscale(image: &Image) -> Image {
    if image.channels() != 3 {
        return image.clone();
    }
    let n = image.height() * image.width();
    let mut luma = vec![0.0f32; n];
    for (c, w) in LUMA.iter().enumerate() {
        for (l, &v) in luma.iter_mut().zip(image.plane(c)) {
            *l += w * v;
        }
    }
    let mut out = image.clone();
    for c in 0..3 {
        out.plane_mut(c).copy_from_slice(&luma);
    }
    out.clamp();
    out
}

/// `factor·image + (1−factor)·degenerate`, clamped.
fn blend(image: &Image, degenerate: &Image, factor: f32) -> Image {
    let mut out = image.clone();
    for (o, &d) in out.data_mut().iter_mut().zip(degenerate.data()) {
        *o = factor * *o + (1.0 - factor) * d;
    }
    out.clamp();
    out
}

fn autocontrast(image: &Image) -> Image {
    let mut out = image.clone();
    for c in 0..image.channels() {
        let plane = out.plane_mut(c);
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            let scale = 1.0 / (hi - lo);
            for v in plane.iter_mut() {
                *v = (*v - lo) * scale;
            }
        }
    }
    out
}

/// Histogram equalization per channel on the 8-bit levels of the image.
fn equalize(image: &Image) -> Image {
    let mut out = image.clone();
    for c in 0..image.channels() {
        let plane = out.plane_mut(c);
        let levels: Vec<u8> = plane.iter().map(|&v| to_level(v)).collect();
        let mut hist = [0usize; 256];
        for &l in &levels {
            hist[l as usize] += 1;
        }
        let last_nonzero = hist.iter().rev().find(|&&h| h > 0).copied().unwrap_or(0);
        let step = (levels.len() - last_nonzero) / 255;
        if step == 0 {
            for (v, &l) in plane.iter_mut().zip(&levels) {
                *v = l as f32 / 255.0;
            }
            continue;
        }
        let mut lut = [0u8; 256];
        let mut acc = step / 2;
        for (level, slot) in lut.iter_mut().enumerate() {
            *slot = (acc / step).min(255) as u8;
            acc += hist[level];
        }
        for (v, &l) in plane.iter_mut().zip(&levels) {
            *v = lut[l as usize] as f32 / 255.0;
        }
    }
    out
}

fn posterize(image: &Image, bits: u32) -> Image {
    let bits = bits.min(8);
    let mask: u8 = if bits == 0 { 0 } else { !((1u16 << (8 - bits)) as u8).wrapping_sub(1) };
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (to_level(*v) & mask) as f32 / 255.0;
    }
    out
}

/// 3×3 smoothing kernel `[[1,1,1],[1,5,1],[1,1,1]]/13`; border pixels are kept.
fn smooth(image: &Image) -> Image {
    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..image.channels() {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut s = 4.0 * src[y * w + x];
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += src[(y + dy - 1) * w + (x + dx - 1)];
                    }
                }
                dst[y * w + x] = s / 13.0;
            }
        }
    }
    out
}

/// Resample with `src = center + map(dst − center)`, bilinear, zero outside.
fn affine(image: &Image, map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (h, w) = (image.height(), image.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64 - cx, y as f64 - cy);
            let (sx, sy) = (sx + cx, sy + cy);
            for c in 0..image.channels() {
                out.set(c, y, x, bilinear_zero(image.plane(c), w, h, sx, sy));
            }
        }
    }
    out
}

fn bilinear_zero(plane: &[f32], w: usize, h: usize, sx: f64, sy: f64) -> f32 {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
    let at = |x: f64, y: f64| -> f32 {
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    let top = (1.0 - fx) * at(x0, y0) + fx * at(x0 + 1.0, y0);
    let bottom = (1.0 - fx) * at(x0, y0 + 1.0) + fx * at(x0 + 1.0, y0 + 1.0);
    (1.0 - fy) * top + fy * bottom
}

/// Bilinear resize of the crop `(top, left, h, w)` to `out_h×out_w` with
/// half-pixel centers and edge clamping.
pub fn resized_crop(image: &Image, top: usize, left: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Image {
    let (ih, iw) = (image.height(), image.width());
    let (sy_scale, sx_scale) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut data = vec![0.0f32; image.channels() * out_h * out_w];
    for c in 0..image.channels() {
        let plane = image.plane(c);
        for y in 0..out_h {
            let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, h as f64 - 1.0) + top as f64;
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(ih - 1);
            let fy = (sy - y0 as f64) as f32;
            for x in 0..out_w {
                let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, w as f64 - 1.0) + left as f64;
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(iw - 1);
                let fx = (sx - x0 as f64) as f32;
                let top_v = (1.0 - fx) * plane[y0 * iw + x0] + fx * plane[y0 * iw + x1];
                let bot_v = (1.0 - fx) * plane[y1 * iw + x0] + fx * plane[y1 * iw + x1];
                data[(c * out_h + y) * out_w + x] = (1.0 - fy) * top_v + fy * bot_v;
            }
        }
    }
    Image::new(image.channels(), out_h, out_w, data).expect("sizes computed above")
}

/// Random crop covering `scale` of the area with aspect ratio in `ratio`
/// (sampled log-uniformly), resized back to the input size. Falls back to a
/// central crop after ten rejected draws.
pub fn random_resized_crop(image: &Image, scale: (f32, f32), ratio: (f32, f32), rng: &mut impl Rng) -> Image {
    let (h, w) = (image.height(), image.width());
    let area = (h * w) as f64;
    let (log_lo, log_hi) = ((ratio.0 as f64).ln(), (ratio.1 as f64).ln());
    for _ in 0..10 {
        let target = area * uniform(rng, scale.0 as f64, scale.1 as f64);
        let aspect = uniform(rng, log_lo, log_hi).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && cw <= w && ch > 0 && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return resized_crop(image, top, left, ch, cw, h, w);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (cw, ch) = if in_ratio < ratio.0 as f64 {
        (w, ((w as f64 / ratio.0 as f64).round() as usize).min(h))
    } else if in_ratio > ratio.1 as f64 {
        (((h as f64 * ratio.1 as f64).round() as usize).min(w), h)
    } else {
        (w, h)
    };
    resized_crop(image, (h - ch) / 2, (w - cw) / 2, ch, cw, h, w)
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Strength of each color-jitter component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorJitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl Default for ColorJitter {
    fn default() -> Self {
        ColorJitter {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
        }
    }
}

/// Brightness, contrast and saturation factors from `U[max(0,1−a), 1+a]`, hue
/// shift from `U[−h, h]`, applied in a random order drawn first from `rng`.
pub fn color_jitter(image: &Image, params: &ColorJitter, rng: &mut impl Rng) -> Image {
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    let factor = |rng: &mut dyn FnMut(f64, f64) -> f64, a: f32| -> Option<f32> {
        (a > 0.0).then(|| rng((1.0 - a as f64).max(0.0), 1.0 + a as f64) as f32)
    };
    let mut draw = |lo: f64, hi: f64| uniform(rng, lo, hi);
    let b = factor(&mut draw, params.brightness);
    let c = factor(&mut draw, params.contrast);
    let s = factor(&mut draw, params.saturation);
    let h = (params.hue > 0.0).then(|| draw(-params.hue as f64, params.hue as f64) as f32);

    let mut out = image.clone();
    for step in order {
        out = match step {
            0 => match b {
                Some(f) => blend(&out, &Image::filled(out.channels(), out.height(), out.width(), 0.0), f),
                None => out,
            },
            1 => match c {
                Some(f) => {
                    let mean = grayscale(&out).mean();
                    blend(&out, &Image::filled(out.channels(), out.height(), out.width(), mean), f)
                }
                None => out,
            },
            2 => match s {
                Some(f) => blend(&out, &grayscale(&out), f),
                None => out,
            },
            _ => match h {
                Some(shift) => hue_shift(&out, shift),
                None => out,
            },
        };
    }
    out
}

/// Rotate hue by `shift` turns (fraction of the color wheel).
pub fn hue_shift(image: &Image, shift: f32) -> Image {
    if image.channels() != 3 {
        return image.clone();
    }
    let mut out = image.clone();
    let n = image.height() * image.width();
    for i in 0..n {
        let (r, g, b) = (image.plane(0)[i], image.plane(1)[i], image.plane(2)[i]);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        out.plane_mut(0)[i] = r;
        out.plane_mut(1)[i] = g;
        out.plane_mut(2)[i] = b;
    }
    out.clamp();
    out
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let sector = h * 6.0;
    let i = sector.floor();
    let f = sector - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Normalized 1-d Gaussian weights.
pub fn gaussian_kernel(kernel_size: usize, sigma: f32) -> Result<Vec<f64>> {
    if kernel_size.is_multiple_of(2) {
        return Err(Error::invalid(format!("blur kernel size must be odd, got {kernel_size}")));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let half = (kernel_size / 2) as f64;
    let weights: Vec<f64> = (0..kernel_size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma as f64 * sigma as f64)).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Separable Gaussian blur with reflect padding (edge pixel not repeated).
pub fn gaussian_blur(image: &Image, kernel_size: usize, sigma: f32) -> Result<Image> {
    let k: Vec<f32> = gaussian_kernel(kernel_size, sigma)?.into_iter().map(|w| w as f32).collect();
    let half = (kernel_size / 2) as isize;
    let (h, w) = (image.height() as isize, image.width() as isize);
    let reflect = |i: isize, n: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m >= n { period - m } else { m }) as usize
    };
    let mut out = image.clone();
    for c in 0..image.channels() {
        let src = image.plane(c);
        let mut tmp = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (t, &wt) in k.iter().enumerate() {
                    s += wt * src[y as usize * w as usize + reflect(x + t as isize - half, w)];
                }
                tmp[(y * w + x) as usize] = s;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (t, &wt) in k.iter().enumerate() {
                    s += wt * tmp[reflect(y + t as isize - half, h) * w as usize + x as usize];
                }
                dst[(y * w + x) as usize] = s;
            }
        }
    }
    out.clamp();
    Ok(out)
}
