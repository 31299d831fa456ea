//! Model files: linear and quadrant classifier JSON records and the
//! `IATSMPL1` sampler container.
//!
//! Sampler container layout:
//!
//! ```text
//! "IATSMPL1"            8-byte magic
//! u32 LE                header length in bytes
//! header                UTF-8 JSON: kind, K, channels, descriptor, ...
//! payload               gaussian: joint mean then covariance, f64 LE
//!                       empirical: u32 LE bucket count, then per bucket
//!                         key bytes, u32 LE patch count, patch bytes
//!                       reference: empty
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use infoattr_core::sampler::{
    ConditionalGaussianModel, DescriptorConfig, EmpiricalPatchModel, Patch, ReferenceSampler,
};
use infoattr_core::{
    Classifier, ContextWindow, LinearSoftmaxModel, PatchSampler, QuadrantClassifier, Support,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read, write_atomic};

pub const LINEAR_FORMAT: &str = "infoattr-linear-v1";
pub const QUADRANT_FORMAT: &str = "infoattr-quadrant-v1";
pub const SAMPLER_MAGIC: &[u8; 8] = b"IATSMPL1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearRecord {
    format: String,
    input_shape: [usize; 3],
    num_classes: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    normalize: String,
}

#[derive(Serialize, Deserialize)]
struct QuadrantRecord {
    format: String,
    #[serde(flatten)]
    model: QuadrantClassifier,
}

/// A classifier stored in one of the JSON model formats.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Linear(LinearSoftmaxModel),
    Quadrant(QuadrantClassifier),
}

impl Classifier for ModelFile {
    fn num_classes(&self) -> usize {
        match self {
            ModelFile::Linear(m) => m.num_classes(),
            ModelFile::Quadrant(m) => m.num_classes(),
        }
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            ModelFile::Linear(m) => m.input_shape(),
            ModelFile::Quadrant(m) => m.input_shape(),
        }
    }

    fn predict_batch(&self, images: &[infoattr_core::Image]) -> infoattr_core::Result<Vec<infoattr_core::Prediction>> {
        match self {
            ModelFile::Linear(m) => m.predict_batch(images),
            ModelFile::Quadrant(m) => m.predict_batch(images),
        }
    }

    fn id(&self) -> String {
        match self {
            ModelFile::Linear(m) => m.id(),
            ModelFile::Quadrant(m) => m.id(),
        }
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::format(format!("model JSON: {e}"))
}

pub fn linear_to_json(model: &LinearSoftmaxModel) -> String {
    let (h, w, c) = model.input_shape();
    let rec = LinearRecord {
        format: LINEAR_FORMAT.into(),
        input_shape: [h, w, c],
        num_classes: model.num_classes(),
        w: (0..model.num_classes()).map(|r| model.weight_row(r).to_vec()).collect(),
        b: model.bias().to_vec(),
        normalize: "unit_scale".into(),
    };
    serde_json::to_string(&rec).expect("finite weights serialize") + "\n"
}

pub fn quadrant_to_json(model: &QuadrantClassifier) -> String {
    let rec = QuadrantRecord { format: QUADRANT_FORMAT.into(), model: model.clone() };
    serde_json::to_string_pretty(&rec).expect("serializable") + "\n"
}

/// Parses any classifier record, dispatching on its format tag.
pub fn model_from_json(text: &str) -> Result<ModelFile> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(LINEAR_FORMAT) => {
            let rec: LinearRecord = serde_json::from_value(value).map_err(json_err)?;
            if rec.normalize != "unit_scale" {
                return Err(Error::format(format!("unsupported normalization {:?}", rec.normalize)));
            }
            if rec.w.len() != rec.num_classes {
                return Err(Error::format(format!(
                    "W has {} rows for {} classes",
                    rec.w.len(),
                    rec.num_classes
                )));
            }
            let [h, w, c] = rec.input_shape;
            let dim = h * w * c;
            if let Some(r) = rec.w.iter().position(|row| row.len() != dim) {
                return Err(Error::format(format!("W row {r} has {} entries, expected {dim}", rec.w[r].len())));
            }
            let weights = rec.w.into_iter().flatten().collect();
            LinearSoftmaxModel::new((h, w, c), rec.num_classes, weights, rec.b)
                .map(ModelFile::Linear)
                .map_err(|e| Error::format(e.to_string()))
        }
        Some(QUADRANT_FORMAT) => {
            let rec: QuadrantRecord = serde_json::from_value(value).map_err(json_err)?;
            rec.model.validate().map_err(|e| Error::format(e.to_string()))?;
            Ok(ModelFile::Quadrant(rec.model))
        }
        Some(other) => Err(Error::format(format!("unknown model format {other:?}"))),
        None => Err(Error::format("model JSON lacks a format tag")),
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(format!("{} is not UTF-8", path.display())))?;
    model_from_json(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn save_linear(model: &LinearSoftmaxModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, linear_to_json(model).as_bytes())
}

pub fn save_quadrant(model: &QuadrantClassifier, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, quadrant_to_json(model).as_bytes())
}

/// A patch sampler that can be stored in a sampler file.
#[derive(Clone, Debug, PartialEq)]
pub enum SamplerModel {
    Reference(ReferenceSampler),
    Gaussian(ConditionalGaussianModel),
    Empirical(EmpiricalPatchModel),
}

impl SamplerModel {
    fn inner(&self) -> &dyn PatchSampler {
        match self {
            SamplerModel::Reference(s) => s,
            SamplerModel::Gaussian(s) => s,
            SamplerModel::Empirical(s) => s,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SamplerModel::Reference(_) => "reference",
            SamplerModel::Gaussian(_) => "gaussian",
            SamplerModel::Empirical(_) => "empirical",
        }
    }
}

impl PatchSampler for SamplerModel {
    fn patch_size(&self) -> usize {
        self.inner().patch_size()
    }

    fn channels(&self) -> usize {
        self.inner().channels()
    }

    fn sample(&self, context: &ContextWindow, n: usize, seed: u64) -> infoattr_core::Result<Vec<Patch>> {
        self.inner().sample(context, n, seed)
    }

    fn support(&self, context: &ContextWindow) -> infoattr_core::Result<Support> {
        self.inner().support(context)
    }

    fn is_enumerable(&self) -> bool {
        self.inner().is_enumerable()
    }

    fn id(&self) -> String {
        self.inner().id()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplerHeader {
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptor: Option<DescriptorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    jitter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fill: Option<Vec<u8>>,
}

pub fn encode_sampler(model: &SamplerModel) -> Vec<u8> {
    let mut header = SamplerHeader {
        kind: model.kind().into(),
        k: model.patch_size(),
        channels: model.channels(),
        descriptor: None,
        jitter: None,
        fill: None,
    };
    let mut payload = Vec::new();
    match model {
        SamplerModel::Reference(s) => header.fill = Some(s.fill().to_vec()),
        SamplerModel::Gaussian(g) => {
            header.descriptor = Some(g.descriptor());
            header.jitter = Some(g.jitter());
            for v in g.mean().iter().chain(g.covariance()) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        SamplerModel::Empirical(e) => {
            header.descriptor = Some(e.descriptor());
            payload.extend_from_slice(&(e.buckets().len() as u32).to_le_bytes());
            for (key, patches) in e.buckets() {
                payload.extend_from_slice(key);
                payload.extend_from_slice(&(patches.len() as u32).to_le_bytes());
                for p in patches {
                    payload.extend_from_slice(p);
                }
            }
        }
    }
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(SAMPLER_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Payload<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!("sampler file truncated while reading {what}"))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::format("sampler dimension overflow"))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after sampler payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_sampler(bytes: &[u8]) -> Result<SamplerModel> {
    let mut r = Payload { bytes, pos: 0 };
    if r.take(8, "magic")? != SAMPLER_MAGIC {
        return Err(Error::format("not a sampler file (bad magic)"));
    }
    let header_len = r.u32("header length")?;
    let header: SamplerHeader = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::format(format!("sampler header: {e}")))?;
    let core = |e: infoattr_core::Error| Error::format(format!("sampler file: {e}"));
    let descriptor = || {
        header
            .descriptor
            .ok_or_else(|| Error::format(format!("{} sampler header lacks a descriptor", header.kind)))
    };
    let (k, channels) = (header.k, header.channels);
    if k == 0 || !(channels == 1 || channels == 3) {
        return Err(Error::format(format!("invalid sampler shape K={k}, channels={channels}")));
    }
    let model = match header.kind.as_str() {
        "reference" => {
            let fill = header.fill.clone().ok_or_else(|| Error::format("reference sampler lacks fill"))?;
            if fill.len() != channels {
                return Err(Error::format("reference fill length differs from channel count"));
            }
            SamplerModel::Reference(ReferenceSampler::new(k, fill).map_err(core)?)
        }
        "gaussian" => {
            let d = descriptor()?;
            d.validate(k).map_err(core)?;
            let jitter = header.jitter.ok_or_else(|| Error::format("gaussian sampler lacks jitter"))?;
            let n = k * k * channels + d.len(k, channels);
            let mean = r.f64s(n, "mean")?;
            let cov = r.f64s(n * n, "covariance")?;
            SamplerModel::Gaussian(
                ConditionalGaussianModel::from_moments(k, channels, d, jitter, mean, cov).map_err(core)?,
            )
        }
        "empirical" => {
            let d = descriptor()?;
            d.validate(k).map_err(core)?;
            let key_len = d.len(k, channels);
            let patch_len = k * k * channels;
            let count = r.u32("bucket count")?;
            let mut buckets = BTreeMap::new();
            for _ in 0..count {
                let key = r.take(key_len, "bucket key")?.to_vec();
                let n = r.u32("bucket size")?;
                let patches: Vec<Patch> = (0..n)
                    .map(|_| r.take(patch_len, "patch").map(<[u8]>::to_vec))
                    .collect::<Result<_>>()?;
                if buckets.insert(key, patches).is_some() {
                    return Err(Error::format("duplicate bucket key in sampler file"));
                }
            }
            SamplerModel::Empirical(EmpiricalPatchModel::from_buckets(k, channels, d, buckets).map_err(core)?)
        }
        other => return Err(Error::format(format!("unknown sampler kind {other:?}"))),
    };
    r.finish()?;
    Ok(model)
}

pub fn save_sampler(model: &SamplerModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_sampler(model))
}

pub fn load_sampler(path: impl AsRef<Path>) -> Result<SamplerModel> {
    let path = path.as_ref();
    decode_sampler(&read(path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
