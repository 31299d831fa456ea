//! Marginalization, PMI/IG attribution and the perturbation baselines.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::geometry::{extract_context, write_patch, accumulate_patch_values, Origin, PatchGrid};
use crate::image::{Image, Prediction};
use crate::map::{AttributionMap, MapKind, MapMeta};
use crate::sampler::{PatchSampler, Support};
use crate::seed;

/// Which classes receive a PMI map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassSelection {
    /// The `k` most probable classes of the original prediction.
    TopK(usize),
    Explicit(Vec<usize>),
}

impl ClassSelection {
    pub fn resolve(&self, prediction: &Prediction) -> Result<Vec<usize>> {
        let classes = match self {
            ClassSelection::TopK(k) => prediction.top_k(*k),
            ClassSelection::Explicit(list) => list.clone(),
        };
        if classes.is_empty() {
            return Err(Error::InvalidArgument("no classes selected".into()));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= prediction.num_classes()) {
            return Err(Error::InvalidArgument(format!(
                "class {c} out of range for {} classes",
                prediction.num_classes()
            )));
        }
        Ok(classes)
    }
}

/// Attribution settings. Logarithms are base 2, so attributions are in bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Patch side length.
    pub k: usize,
    /// Monte-Carlo samples per patch.
    pub n: usize,
    /// Patch stride; `None` tiles with stride K.
    pub stride: Option<usize>,
    /// Added to numerator and denominator inside the logarithm.
    pub eps: f64,
    pub classes: ClassSelection,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { k: 8, n: 8, stride: None, eps: 1e-13, classes: ClassSelection::TopK(1), seed: 0 }
    }
}

impl EngineConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.k == 0 {
            return Err(Error::InvalidGeometry("K must be at least 1".into()));
        }
        Ok(())
    }

    fn meta(&self, sampler: &str, classifier: &str) -> MapMeta {
        MapMeta {
            k: self.k,
            n: self.n,
            stride: self.stride(),
            eps: self.eps,
            seed: self.seed,
            sampler: sampler.into(),
            classifier: classifier.into(),
        }
    }
}

/// Point-wise mutual information in bits: `log2((p_full + ε) / (p_marg + ε))`.
pub fn pmi(p_full: f64, p_marg: f64, eps: f64) -> f64 {
    libm::log2((p_full + eps) / (p_marg + eps))
}

/// Information gain in bits: the PMI of every class weighted by the full
/// prediction. Equals `KL(full ‖ marg)` when `eps = 0`.
pub fn ig(full: &Prediction, marg: &Prediction, eps: f64) -> Result<f64> {
    if full.num_classes() != marg.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "class count mismatch: {} vs {}",
            full.num_classes(),
            marg.num_classes()
        )));
    }
    Ok(full
        .probs()
        .iter()
        .zip(marg.probs())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * pmi(p, q, eps))
        .sum())
}

/// `log2(p / (1 − p))` after clamping `p` into `[eps, 1 − eps]`.
pub fn log_odds(p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    libm::log2(p / (1.0 - p))
}

fn check_sampler_output(patches: &[Vec<u8>], n: usize, len: usize) -> Result<()> {
    if patches.len() != n || patches.iter().any(|p| p.len() != len) {
        return Err(Error::Protocol(format!(
            "sampler returned {} patches (wanted {n} of {len} bytes)",
            patches.len()
        )));
    }
    Ok(())
}

/// Monte-Carlo estimate of the prediction with the patch at `origin`
/// marginalized out: the mean prediction over `n` sampled replacements,
/// evaluated as one batch.
pub fn marginal_prediction<C, S>(
    classifier: &C,
    sampler: &S,
    image: &Image,
    origin: Origin,
    n: usize,
    seed: u64,
) -> Result<Prediction>
where
    C: Classifier + ?Sized,
    S: PatchSampler + ?Sized,
{
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let k = sampler.patch_size();
    let context = extract_context(image, origin, k)?;
    let patches = sampler.sample(&context, n, seed)?;
    check_sampler_output(&patches, n, k * k * image.channels())?;
    let batch = patches
        .iter()
        .map(|p| {
            let mut img = image.clone();
            write_patch(&mut img, origin, k, p)?;
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = classifier.predict_batch(&batch)?;
    if preds.len() != n {
        return Err(Error::Protocol(format!("classifier returned {} of {n} predictions", preds.len())));
    }
    Prediction::mean(&preds)
}

/// Exact marginal prediction over the full support of an enumerable sampler.
pub fn exact_marginal_prediction<C, S>(
    classifier: &C,
    sampler: &S,
    image: &Image,
    origin: Origin,
) -> Result<Prediction>
where
    C: Classifier + ?Sized,
    S: PatchSampler + ?Sized,
{
    let k = sampler.patch_size();
    let context = extract_context(image, origin, k)?;
    let outcomes = match sampler.support(&context)? {
        Support::Enumerated(o) => o,
        Support::NotEnumerable => return Err(Error::UnsupportedOracle(sampler.id())),
    };
    let batch = outcomes
        .iter()
        .map(|(p, _)| {
            let mut img = image.clone();
            write_patch(&mut img, origin, k, p)?;
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = classifier.predict_batch(&batch)?;
    let mut acc = alloc::vec![0.0; classifier.num_classes()];
    for ((_, w), pred) in outcomes.iter().zip(&preds) {
        for (a, v) in acc.iter_mut().zip(pred.probs()) {
            *a += w * v;
        }
    }
    Ok(Prediction::from_convex(acc))
}

/// Attribution of one patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub index: usize,
    pub origin: Origin,
    pub marginal: Prediction,
    /// PMI per requested class, in the order of [`ExplanationResult::classes`].
    pub pmi: Vec<f64>,
    pub ig: f64,
}

/// The output of [`explain`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationResult {
    pub original_prediction: Prediction,
    pub classes: Vec<usize>,
    pub pmi_maps: Vec<AttributionMap>,
    pub ig_map: AttributionMap,
    pub patches: Vec<PatchRecord>,
}

/// Attribution of one image, split into independent per-patch jobs.
///
/// Each patch draws its samples from a seed derived from the run seed and
/// the patch index, so any execution order gives identical results.
pub struct Explainer<'a, C: ?Sized, S: ?Sized> {
    classifier: &'a C,
    sampler: &'a S,
    image: &'a Image,
    config: EngineConfig,
    grid: PatchGrid,
    original: Prediction,
    classes: Vec<usize>,
}

impl<'a, C, S> Explainer<'a, C, S>
where
    C: Classifier + ?Sized,
    S: PatchSampler + ?Sized,
{
    pub fn new(classifier: &'a C, sampler: &'a S, image: &'a Image, config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        if image.shape() != classifier.input_shape() {
            return Err(Error::InvalidInput(format!(
                "image is {:?}, classifier expects {:?}",
                image.shape(),
                classifier.input_shape()
            )));
        }
        if sampler.patch_size() != config.k {
            return Err(Error::InvalidArgument(format!(
                "sampler patch size {} differs from K={}",
                sampler.patch_size(),
                config.k
            )));
        }
        if sampler.channels() != image.channels() {
            return Err(Error::InvalidArgument(format!(
                "sampler has {} channels, image has {}",
                sampler.channels(),
                image.channels()
            )));
        }
        let grid = PatchGrid::new(image.height(), image.width(), config.k, config.stride())?;
        let original = classifier.predict(image)?;
        let classes = config.classes.resolve(&original)?;
        Ok(Self { classifier, sampler, image, config: config.clone(), grid, original, classes })
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn num_patches(&self) -> usize {
        self.grid.len()
    }

    pub fn original_prediction(&self) -> &Prediction {
        &self.original
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Computes the record for patch `index`; errors carry the index.
    pub fn explain_patch(&self, index: usize) -> Result<PatchRecord> {
        self.patch_inner(index)
            .map_err(|e| Error::Patch { index, source: Box::new(e) })
    }

    fn patch_inner(&self, index: usize) -> Result<PatchRecord> {
        let origin = *self
            .grid
            .origins()
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no patch {index}")))?;
        let marginal = marginal_prediction(
            self.classifier,
            self.sampler,
            self.image,
            origin,
            self.config.n,
            seed::derive(self.config.seed, index as u64),
        )?;
        if marginal.num_classes() != self.original.num_classes() {
            return Err(Error::Protocol("marginal prediction changed the class count".into()));
        }
        let eps = self.config.eps;
        let pmi_values = self
            .classes
            .iter()
            .map(|&c| pmi(self.original.probs()[c], marginal.probs()[c], eps))
            .collect();
        let ig_value = ig(&self.original, &marginal, eps)?;
        Ok(PatchRecord { index, origin, marginal, pmi: pmi_values, ig: ig_value })
    }

    /// Assembles per-patch records (in any order) into maps.
    pub fn finish(self, mut records: Vec<PatchRecord>) -> Result<ExplanationResult> {
        records.sort_by_key(|r| r.index);
        if records.len() != self.grid.len() || records.iter().enumerate().any(|(i, r)| r.index != i) {
            return Err(Error::InvalidArgument(format!(
                "expected one record per patch ({}), got {}",
                self.grid.len(),
                records.len()
            )));
        }
        let meta = self.config.meta(&self.sampler.id(), &self.classifier.id());
        let (h, w) = (self.image.height(), self.image.width());
        let pmi_maps = self
            .classes
            .iter()
            .enumerate()
            .map(|(j, &class)| {
                let per: Vec<f64> = records.iter().map(|r| r.pmi[j]).collect();
                AttributionMap::new(
                    MapKind::Pmi { class },
                    h,
                    w,
                    accumulate_patch_values(&self.grid, &per)?,
                    meta.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let per_ig: Vec<f64> = records.iter().map(|r| r.ig).collect();
        let ig_map =
            AttributionMap::new(MapKind::Ig, h, w, accumulate_patch_values(&self.grid, &per_ig)?, meta)?;
        Ok(ExplanationResult {
            original_prediction: self.original,
            classes: self.classes,
            pmi_maps,
            ig_map,
            patches: records,
        })
    }

    /// Runs every patch in order on the calling thread.
    pub fn run(self) -> Result<ExplanationResult> {
        let records = (0..self.num_patches())
            .map(|i| self.explain_patch(i))
            .collect::<Result<Vec<_>>>()?;
        self.finish(records)
    }
}

/// PMI maps for the selected classes and the IG map of one image.
pub fn explain<C, S>(
    classifier: &C,
    sampler: &S,
    image: &Image,
    config: &EngineConfig,
) -> Result<ExplanationResult>
where
    C: Classifier + ?Sized,
    S: PatchSampler + ?Sized,
{
    Explainer::new(classifier, sampler, image, config)?.run()
}

const BASELINE_BATCH: usize = 64;

/// Gray-out baseline: `p(c | x) − p(c | x with the patch filled)` for the
/// first selected class.
pub fn occlusion_map<C>(classifier: &C, image: &Image, fill: u8, config: &EngineConfig) -> Result<AttributionMap>
where
    C: Classifier + ?Sized,
{
    config.validate()?;
    let grid = PatchGrid::new(image.height(), image.width(), config.k, config.stride())?;
    let original = classifier.predict(image)?;
    let class = config.classes.resolve(&original)?[0];
    let patch = alloc::vec![fill; config.k * config.k * image.channels()];
    let mut per = Vec::with_capacity(grid.len());
    for chunk in grid.origins().chunks(BASELINE_BATCH) {
        let batch = chunk
            .iter()
            .map(|&o| {
                let mut img = image.clone();
                write_patch(&mut img, o, config.k, &patch)?;
                Ok(img)
            })
            .collect::<Result<Vec<_>>>()?;
        for p in classifier.predict_batch(&batch)? {
            per.push(original.probs()[class] - p.probs()[class]);
        }
    }
    let meta = MapMeta {
        n: 1,
        sampler: format!("reference:{fill}"),
        ..config.meta("", &classifier.id())
    };
    AttributionMap::new(
        MapKind::Occlusion { class },
        image.height(),
        image.width(),
        accumulate_patch_values(&grid, &per)?,
        meta,
    )
}

/// Prediction-difference baseline: weight of evidence
/// `logodds(p(c | x)) − logodds(p(c | x∖i))` in bits, with the marginal
/// estimated exactly like [`explain`] does (same grid, N and seeds).
pub fn pda_map<C, S>(classifier: &C, sampler: &S, image: &Image, config: &EngineConfig) -> Result<AttributionMap>
where
    C: Classifier + ?Sized,
    S: PatchSampler + ?Sized,
{
    let explainer = Explainer::new(classifier, sampler, image, config)?;
    let class = explainer.classes()[0];
    let full = log_odds(explainer.original_prediction().probs()[class], config.eps);
    let per = explainer
        .grid()
        .origins()
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            let marg = marginal_prediction(
                classifier,
                sampler,
                image,
                o,
                config.n,
                seed::derive(config.seed, i as u64),
            )
            .map_err(|e| Error::Patch { index: i, source: Box::new(e) })?;
            Ok(full - log_odds(marg.probs()[class], config.eps))
        })
        .collect::<Result<Vec<_>>>()?;
    AttributionMap::new(
        MapKind::Pda { class },
        image.height(),
        image.width(),
        accumulate_patch_values(explainer.grid(), &per)?,
        config.meta(&sampler.id(), &classifier.id()),
    )
}
