//! Multi-domain image banks: the on-disk format, split rules, a synthetic
//! generator and the batch iterator used for training.

mod batch;
mod synth;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use batch::{batch_iter, Batch, BatchConfig, BatchIter};
pub use synth::{gen_synthetic_multidomain, SHAPE_NAMES, STYLE_NAMES};

use crate::augment::Image;
use crate::binio::{narrow, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MDIB";
const VERSION: u8 = 1;
const FORMAT: &str = "MDIB";

/// Fraction of the training pool kept for training when no validation split exists.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Per-record split tag as stored in the bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unassigned,
}

impl SplitTag {
    pub fn code(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Val => 1,
            SplitTag::Test => 2,
            SplitTag::Unassigned => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Val),
            2 => Some(SplitTag::Test),
            255 => Some(SplitTag::Unassigned),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// Row-major interleaved `H×W×C` bytes.
    pub pixels: Vec<u8>,
    pub class: usize,
    pub domain: usize,
    pub split: SplitTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBank {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub records: Vec<Record>,
}

impl ImageBank {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        class_names: Vec<String>,
        domain_names: Vec<String>,
        records: Vec<Record>,
    ) -> Result<Self> {
        let bank = ImageBank {
            height,
            width,
            channels,
            class_names,
            domain_names,
            records,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Validation(format!(
                "image dimensions {}×{}×{} must be positive",
                self.height, self.width, self.channels
            )));
        }
        let pixels = self.pixels_per_image();
        for (i, r) in self.records.iter().enumerate() {
            if r.pixels.len() != pixels {
                return Err(Error::Validation(format!(
                    "record {i} has {} bytes, expected {pixels}",
                    r.pixels.len()
                )));
            }
            if r.class >= self.n_classes() {
                return Err(Error::Validation(format!(
                    "record {i}: class {} ≥ n_classes {}",
                    r.class,
                    self.n_classes()
                )));
            }
            if r.domain >= self.n_domains() {
                return Err(Error::Validation(format!(
                    "record {i}: domain {} ≥ n_domains {}",
                    r.domain,
                    self.n_domains()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, index: usize) -> Image {
        Image::from_hwc_u8(self.height, self.width, self.channels, &self.records[index].pixels)
            .expect("bank records are validated")
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.records[i].class).collect()
    }

    pub fn has_split(&self, tag: SplitTag) -> bool {
        self.records.iter().any(|r| r.split == tag)
    }

    pub fn indices_with(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.records[i].split == tag).collect()
    }

    /// New bank holding only `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> ImageBank {
        ImageBank {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.header_clone()
        }
    }

    fn header_clone(&self) -> ImageBank {
        ImageBank {
            height: self.height,
            width: self.width,
            channels: self.channels,
            class_names: self.class_names.clone(),
            domain_names: self.domain_names.clone(),
            records: Vec::new(),
        }
    }

    /// Tag a seeded random `test_fraction` of records as the test split and the rest as train.
    pub fn assign_test_split(&mut self, test_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.len() as f64).floor() as usize;
        for (rank, &i) in order.iter().enumerate() {
            self.records[i].split = if rank < n_test { SplitTag::Test } else { SplitTag::Train };
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.u32(narrow(self.len(), "n_records")?);
        w.u16(narrow(self.height, "height")?);
        w.u16(narrow(self.width, "width")?);
        w.u8(narrow(self.channels, "channels")?);
        w.u16(narrow(self.n_classes(), "n_classes")?);
        w.u8(narrow(self.n_domains(), "n_domains")?);
        for name in self.class_names.iter().chain(&self.domain_names) {
            w.string(name)?;
        }
        for r in &self.records {
            w.u16(r.class as u16);
            w.u8(r.domain as u8);
            w.u8(r.split.code());
            w.bytes(&r.pixels);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, FORMAT);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let n_records = r.u32()? as usize;
        let height = r.u16()? as usize;
        let width = r.u16()? as usize;
        let channels = r.u8()? as usize;
        let n_classes = r.u16()? as usize;
        let n_domains = r.u8()? as usize;
        let class_names = (0..n_classes).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let domain_names = (0..n_domains).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let pixels = height * width * channels;
        let mut records = Vec::with_capacity(n_records.min(bytes.len() / (pixels + 4).max(1)));
        for i in 0..n_records {
            let class = r.u16()? as usize;
            let domain = r.u8()? as usize;
            let code = r.u8()?;
            let split = SplitTag::from_code(code)
                .ok_or_else(|| Error::Validation(format!("record {i}: unknown split code {code}")))?;
            records.push(Record {
                pixels: r.take(pixels)?.to_vec(),
                class,
                domain,
                split,
            });
        }
        r.finish()?;
        ImageBank::new(height, width, channels, class_names, domain_names, records)
    }
}

pub fn write_bank(bank: &ImageBank, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, bank.to_bytes()?)?;
    Ok(())
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<ImageBank> {
    ImageBank::from_bytes(&fs::read(path)?)
}

/// Concatenate banks sharing one class vocabulary. Domains are merged by name.
pub fn combine_domains(banks: &[ImageBank]) -> Result<ImageBank> {
    let first = banks
        .first()
        .ok_or_else(|| Error::invalid("combine_domains needs at least one bank"))?;
    let mut out = first.header_clone();
    out.domain_names.clear();
    for (b, bank) in banks.iter().enumerate() {
        if bank.class_names != first.class_names {
            return Err(Error::Validation(format!("bank {b} has a different class vocabulary")));
        }
        if (bank.height, bank.width, bank.channels) != (first.height, first.width, first.channels) {
            return Err(Error::Validation(format!("bank {b} has different image dimensions")));
        }
        let remap: Vec<usize> = bank
            .domain_names
            .iter()
            .map(|name| match out.domain_names.iter().position(|n| n == name) {
                Some(i) => i,
                None => {
                    out.domain_names.push(name.clone());
                    out.domain_names.len() - 1
                }
            })
            .collect();
        out.records.extend(bank.records.iter().map(|r| Record {
            domain: remap[r.domain],
            ..r.clone()
        }));
    }
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// True when train/val came from the bank's own tags rather than a random split.
    pub official: bool,
}

impl SplitSpec {
    /// Train and val combined, for the final refit after model selection.
    pub fn train_val(&self) -> Vec<usize> {
        let mut all = self.train.clone();
        all.extend(&self.val);
        all
    }
}

/// Seeded 70/30 split of every non-test record; `floor(0.7·n)` go to train.
pub fn split_train_val(bank: &ImageBank, seed: u64) -> Result<SplitSpec> {
    let mut pool: Vec<usize> = (0..bank.len()).filter(|&i| bank.records[i].split != SplitTag::Test).collect();
    if pool.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 records to split, got {}", pool.len())));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * pool.len() as f64).floor() as usize;
    let val = pool.split_off(n_train);
    Ok(SplitSpec {
        train: pool,
        val,
        test: bank.indices_with(SplitTag::Test),
        seed,
        official: false,
    })
}

/// Official train/val tags when the bank carries a validation split, otherwise
/// a seeded 70/30 split of the non-test records.
pub fn holdout_split(bank: &ImageBank, seed: u64) -> Result<SplitSpec> {
    if bank.has_split(SplitTag::Val) {
        let train = bank.indices_with(SplitTag::Train);
        if train.is_empty() {
            return Err(Error::invalid("bank has a val split but no train records"));
        }
        return Ok(SplitSpec {
            train,
            val: bank.indices_with(SplitTag::Val),
            test: bank.indices_with(SplitTag::Test),
            seed,
            official: true,
        });
    }
    split_train_val(bank, seed)
}
