use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::binio::{narrow, Reader, Writer};
use crate::error::{Error, Result};
use crate::models::{init_params, Arch, EncoderConfig, ModelBundle, ModelConfig, Param, ParamGroup};
use crate::ndtensor::Tensor;

const MAGIC: &[u8; 4] = b"SCKP";
const VERSION: u8 = 1;
const FORMAT: &str = "SCKP";
const MODEL_PREFIX: &str = "model.";

fn model_metadata(bundle: &ModelBundle) -> BTreeMap<String, String> {
    let cfg = &bundle.config;
    let mut m = BTreeMap::new();
    m.insert("model.arch".into(), cfg.encoder.arch.to_string());
    m.insert("model.width".into(), cfg.encoder.width.to_string());
    m.insert("model.feature_dim".into(), cfg.encoder.feature_dim.to_string());
    m.insert("model.input_size".into(), cfg.encoder.input_size.to_string());
    m.insert("model.in_channels".into(), cfg.encoder.in_channels.to_string());
    if let Some(h) = cfg.head_dim {
        m.insert("model.head_dim".into(), h.to_string());
    }
    if let Some(k) = cfg.n_classes {
        m.insert("model.n_classes".into(), k.to_string());
    }
    if !bundle.frozen_groups().is_empty() {
        let groups: Vec<&str> = bundle.frozen_groups().iter().map(|g| g.as_str()).collect();
        m.insert("model.frozen".into(), groups.join(","));
    }
    m
}

pub fn checkpoint_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    if let Some(key) = bundle.metadata.keys().find(|k| k.starts_with(MODEL_PREFIX)) {
        return Err(Error::Validation(format!("metadata key `{key}` uses the reserved `model.` prefix")));
    }
    let mut meta = model_metadata(bundle);
    meta.extend(bundle.metadata.clone());

    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.u16(narrow(meta.len(), "metadata count")?);
    for (k, v) in &meta {
        w.string(k)?;
        w.string(v)?;
    }
    w.u32(narrow(bundle.params().len(), "tensor count")?);
    for p in bundle.params() {
        w.string(&p.name)?;
        w.u8(narrow(p.value.ndim(), "ndim")?);
        for &d in p.value.shape() {
            w.u32(narrow(d, "dimension")?);
        }
        w.f32s(p.value.data());
    }
    Ok(w.into_bytes())
}

fn take<T: std::str::FromStr>(meta: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match meta.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Format {
                format: FORMAT,
                detail: format!("metadata `{key}` has unparsable value {v:?}"),
            }),
    }
}

fn require<T: std::str::FromStr>(meta: &mut BTreeMap<String, String>, key: &str) -> Result<T> {
    take(meta, key)?.ok_or_else(|| Error::Format {
        format: FORMAT,
        detail: format!("missing metadata `{key}`"),
    })
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader::new(bytes, FORMAT);
    r.magic(MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let n_meta = r.u16()? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..n_meta {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    let n_tensors = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_tensors.min(1024));
    for _ in 0..n_tensors {
        let name = r.string()?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.ok_or_else(|| r.error(format!("tensor `{name}` shape {shape:?} overflows")))?;
        let data = r.f32s(numel)?;
        let group = ParamGroup::of_name(&name).map_err(|_| r.error(format!("tensor `{name}` belongs to no parameter group")))?;
        params.push(Param {
            name,
            group,
            value: Tensor::new(shape, data)?,
        });
    }
    r.finish()?;

    let encoder = EncoderConfig {
        arch: require::<Arch>(&mut meta, "model.arch")?,
        width: require(&mut meta, "model.width")?,
        feature_dim: require(&mut meta, "model.feature_dim")?,
        input_size: require(&mut meta, "model.input_size")?,
        in_channels: require(&mut meta, "model.in_channels")?,
    };
    let config = ModelConfig {
        encoder,
        head_dim: take(&mut meta, "model.head_dim")?,
        n_classes: take(&mut meta, "model.n_classes")?,
    };
    let frozen: BTreeSet<ParamGroup> = match meta.remove("model.frozen") {
        None => BTreeSet::new(),
        Some(list) => list.split(',').map(|g| g.parse()).collect::<Result<_>>()?,
    };
    if let Some(key) = meta.keys().find(|k| k.starts_with(MODEL_PREFIX)) {
        return Err(r.error(format!("unknown model metadata `{key}`")));
    }
    check_structure(&config, &params)?;
    Ok(ModelBundle::from_parts(config, params, frozen, meta))
}

/// Names and shapes must be exactly those a fresh model with `config` would have.
fn check_structure(config: &ModelConfig, params: &[Param]) -> Result<()> {
    let expected = init_params(config, 0)?;
    let want: BTreeMap<&str, &[usize]> = expected.params().iter().map(|p| (p.name.as_str(), p.value.shape())).collect();
    let got: BTreeMap<&str, &[usize]> = params.iter().map(|p| (p.name.as_str(), p.value.shape())).collect();
    if got.len() != params.len() {
        return Err(Error::Format {
            format: FORMAT,
            detail: "duplicate tensor names".into(),
        });
    }
    if want != got {
        let detail = want
            .iter()
            .find(|(k, v)| got.get(*k) != Some(*v))
            .map(|(k, v)| format!("`{k}` should be {v:?}, found {:?}", got.get(*k)))
            .or_else(|| got.keys().find(|k| !want.contains_key(*k)).map(|k| format!("unexpected tensor `{k}`")))
            .unwrap_or_default();
        return Err(Error::shape("load_checkpoint", detail));
    }
    Ok(())
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(bundle)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    checkpoint_from_bytes(&fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,mean_loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.lr, r.mean_loss);
    }
    out
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize| Error::Format {
        format: "history",
        detail: format!("line {line} is not `epoch,lr,mean_loss`"),
    };
    let mut lines = text.lines();
    if lines.next() != Some("epoch,lr,mean_loss") {
        return Err(bad(1));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(i + 2));
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(i + 2))?,
                lr: f[1].parse().map_err(|_| bad(i + 2))?,
                mean_loss: f[2].parse().map_err(|_| bad(i + 2))?,
            })
        })
        .collect()
}
