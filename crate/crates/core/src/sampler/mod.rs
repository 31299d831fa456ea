//! Conditional patch models: given the 3K×3K neighbourhood of a hidden
//! patch, draw plausible replacement patches.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::ContextWindow;

mod descriptor;
mod empirical;
mod gaussian;

pub use descriptor::DescriptorConfig;
pub use empirical::{build_empirical_sampler, EmpiricalConfig, EmpiricalPatchModel};
pub use gaussian::{fit_conditional_gaussian, ConditionalGaussianModel, GaussianConfig};

/// A patch as `K·K·C` bytes, row-major and channel-last.
pub type Patch = Vec<u8>;

/// The full outcome set of an enumerable sampler.
#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    Enumerated(Vec<(Patch, f64)>),
    /// Continuous or otherwise unlisted support.
    NotEnumerable,
}

/// A conditional distribution `p(patch | context)`.
pub trait PatchSampler {
    /// Patch side length K.
    fn patch_size(&self) -> usize;

    fn channels(&self) -> usize;

    /// `n` patches, deterministic in `(context, n, seed)`.
    fn sample(&self, context: &ContextWindow, n: usize, seed: u64) -> Result<Vec<Patch>>;

    fn support(&self, context: &ContextWindow) -> Result<Support>;

    fn is_enumerable(&self) -> bool;

    /// Short identifier recorded in map metadata.
    fn id(&self) -> String;
}

macro_rules! forward_sampler {
    ($($ptr:ty),*) => {$(
        impl<T: PatchSampler + ?Sized> PatchSampler for $ptr {
            fn patch_size(&self) -> usize { (**self).patch_size() }
            fn channels(&self) -> usize { (**self).channels() }
            fn sample(&self, context: &ContextWindow, n: usize, seed: u64) -> Result<Vec<Patch>> {
                (**self).sample(context, n, seed)
            }
            fn support(&self, context: &ContextWindow) -> Result<Support> { (**self).support(context) }
            fn is_enumerable(&self) -> bool { (**self).is_enumerable() }
            fn id(&self) -> String { (**self).id() }
        }
    )*};
}
forward_sampler!(&T, Box<T>, Arc<T>);

/// Checks that a context fits a sampler of patch size `k` and `channels`.
pub fn check_context(k: usize, channels: usize, context: &ContextWindow) -> Result<()> {
    if context.patch_size() != k || context.channels() != channels {
        return Err(Error::InvalidArgument(format!(
            "sampler expects K={k} with {channels} channels, context has K={} with {}",
            context.patch_size(),
            context.channels()
        )));
    }
    Ok(())
}

/// Rejects a request for zero samples.
pub fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Always yields a constant patch: the classic gray-out substitution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSampler {
    k: usize,
    fill: Vec<u8>,
}

impl ReferenceSampler {
    /// `fill` holds one byte per channel.
    pub fn new(k: usize, fill: Vec<u8>) -> Result<Self> {
        if k == 0 || !(fill.len() == 1 || fill.len() == 3) {
            return Err(Error::InvalidArgument(format!(
                "reference sampler needs K >= 1 and 1 or 3 fill bytes, got K={k}, {} bytes",
                fill.len()
            )));
        }
        Ok(Self { k, fill })
    }

    pub fn gray(k: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(k, alloc::vec![value; channels])
    }

    pub fn fill(&self) -> &[u8] {
        &self.fill
    }

    fn patch(&self) -> Patch {
        self.fill.iter().copied().cycle().take(self.k * self.k * self.fill.len()).collect()
    }
}

impl PatchSampler for ReferenceSampler {
    fn patch_size(&self) -> usize {
        self.k
    }

    fn channels(&self) -> usize {
        self.fill.len()
    }

    fn sample(&self, context: &ContextWindow, n: usize, _seed: u64) -> Result<Vec<Patch>> {
        check_context(self.k, self.channels(), context)?;
        check_count(n)?;
        Ok(alloc::vec![self.patch(); n])
    }

    fn support(&self, context: &ContextWindow) -> Result<Support> {
        check_context(self.k, self.channels(), context)?;
        Ok(Support::Enumerated(alloc::vec![(self.patch(), 1.0)]))
    }

    fn is_enumerable(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        let fill: Vec<String> = self.fill.iter().map(|b| format!("{b}")).collect();
        format!("reference:{}", fill.join(","))
    }
}

/// Returns the hidden patch itself. Marginalizing with it must leave every
/// prediction unchanged, which makes it a null model for the engine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OriginalPatchSampler {
    k: usize,
    channels: usize,
}

impl OriginalPatchSampler {
    pub fn new(k: usize, channels: usize) -> Self {
        Self { k, channels }
    }
}

impl PatchSampler for OriginalPatchSampler {
    fn patch_size(&self) -> usize {
        self.k
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn sample(&self, context: &ContextWindow, n: usize, _seed: u64) -> Result<Vec<Patch>> {
        check_context(self.k, self.channels, context)?;
        check_count(n)?;
        Ok(alloc::vec![context.center_patch(); n])
    }

    fn support(&self, context: &ContextWindow) -> Result<Support> {
        check_context(self.k, self.channels, context)?;
        Ok(Support::Enumerated(alloc::vec![(context.center_patch(), 1.0)]))
    }

    fn is_enumerable(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        String::from("original")
    }
}
