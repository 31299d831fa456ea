//! Classifier and sampler specs as written on the command line.
//!
//! Classifiers: `builtin:<model.json>`, `exec:<command>`, `tcp:<host:port>`.
//! Samplers: a sampler file path (`{K}` is replaced by the patch size),
//! `reference:<byte>`, `exec:<command>`, `tcp:<host:port>`.

use std::time::Duration;

use infoattr_core::sampler::{Patch, ReferenceSampler};
use infoattr_core::{Classifier, ContextWindow, Image, PatchSampler, Prediction, Support};

use crate::error::{Error, Result};
use crate::formats::{load_model, load_sampler, ModelFile, SamplerModel};
use crate::protocol::{ExternalClassifier, ExternalSampler, Transport};

pub enum AnyClassifier {
    File(ModelFile),
    External(ExternalClassifier),
}

impl AnyClassifier {
    pub fn open(spec: &str, timeout: Duration) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("builtin:") {
            return Ok(AnyClassifier::File(load_model(path)?));
        }
        match Transport::parse(spec) {
            Some(t) => Ok(AnyClassifier::External(ExternalClassifier::connect(&t, timeout)?)),
            None => Err(Error::Usage(format!(
                "classifier spec {spec:?} must start with builtin:, exec: or tcp:"
            ))),
        }
    }

    fn inner(&self) -> &(dyn Classifier + Sync) {
        match self {
            AnyClassifier::File(m) => m,
            AnyClassifier::External(m) => m,
        }
    }
}

impl Classifier for AnyClassifier {
    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.inner().input_shape()
    }

    fn predict_batch(&self, images: &[Image]) -> infoattr_core::Result<Vec<Prediction>> {
        self.inner().predict_batch(images)
    }

    fn id(&self) -> String {
        self.inner().id()
    }
}

pub enum AnySampler {
    Model(SamplerModel),
    External(ExternalSampler),
}

impl AnySampler {
    /// Opens a sampler for patch size `k` and `channels`.
    pub fn open(spec: &str, k: usize, channels: usize, timeout: Duration) -> Result<Self> {
        let sampler = if let Some(v) = spec.strip_prefix("reference:") {
            let fill: u8 = v
                .parse()
                .map_err(|_| Error::Usage(format!("reference fill {v:?} is not a byte value")))?;
            AnySampler::Model(SamplerModel::Reference(ReferenceSampler::gray(k, channels, fill)?))
        } else if let Some(t) = Transport::parse(spec) {
            AnySampler::External(ExternalSampler::connect(&t, timeout)?)
        } else {
            AnySampler::Model(load_sampler(sampler_path(spec, k))?)
        };
        if sampler.patch_size() != k || sampler.channels() != channels {
            return Err(Error::Usage(format!(
                "sampler {spec:?} has K={} with {} channel(s); this run needs K={k} with {channels}",
                sampler.patch_size(),
                sampler.channels()
            )));
        }
        Ok(sampler)
    }

    fn inner(&self) -> &(dyn PatchSampler + Sync) {
        match self {
            AnySampler::Model(m) => m,
            AnySampler::External(m) => m,
        }
    }
}

/// Substitutes `{K}` in a sampler path template.
pub fn sampler_path(template: &str, k: usize) -> String {
    template.replace("{K}", &k.to_string())
}

impl PatchSampler for AnySampler {
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
