//! Faithfulness and sanity metrics for attribution maps.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::{train_logistic, Classifier, TrainConfig};
use crate::engine::{explain, ClassSelection, EngineConfig, ExplanationResult};
use crate::error::{Error, Result};
use crate::geometry::{extract_context, write_patch, PatchGrid};
use crate::image::Image;
use crate::map::AttributionMap;
use crate::sampler::PatchSampler;
use crate::seed;
use rand::Rng as _;

/// Which end of the ranking is removed first.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalOrder {
    /// Highest attribution first (deletion).
    Descending,
    /// Lowest attribution first (negative-evidence removal).
    Ascending,
}

/// Replacement values for removed pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Fill {
    /// One byte per channel (or a single byte for every channel).
    Constant(Vec<u8>),
    /// Pixels are copied from a donor image of the same shape.
    Donor(Image),
}

impl Fill {
    pub fn gray() -> Self {
        Fill::Constant(alloc::vec![128])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub order: RemovalOrder,
    pub fill: Fill,
    pub steps: usize,
    /// Rank only pixels with negative attribution.
    pub only_negative: bool,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { order: RemovalOrder::Descending, fill: Fill::gray(), steps: 100, only_negative: false }
    }
}

/// Probability of a tracked class as pixels are progressively removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub class: usize,
    pub order: RemovalOrder,
    pub fractions: Vec<f64>,
    pub probabilities: Vec<f64>,
}

const CURVE_BATCH: usize = 32;

/// Removes pixels in attribution order and records the class probability
/// after each of `steps` equal increments.
///
/// Ties are broken by row-major index. At step `t` the first
/// `⌈t · P / steps⌉` ranked pixels are filled, where `P` is the number of
/// ranked pixels; the fraction axis is `t / steps`.
pub fn perturbation_curve<C: Classifier + ?Sized>(
    classifier: &C,
    image: &Image,
    map: &AttributionMap,
    class: usize,
    options: &CurveOptions,
) -> Result<PerturbationCurve> {
    let (h, w, ch) = image.shape();
    if map.height() != h || map.width() != w {
        return Err(Error::InvalidArgument(format!(
            "map is {}x{}, image is {h}x{w}",
            map.height(),
            map.width()
        )));
    }
    if options.steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if class >= classifier.num_classes() {
        return Err(Error::InvalidArgument(format!("class {class} out of range")));
    }
    let fill_pixel = |idx: usize| -> &[u8] {
        match &options.fill {
            Fill::Constant(v) if v.len() == 1 => &v[..1],
            Fill::Constant(v) => &v[..ch],
            Fill::Donor(d) => &d.data()[idx * ch..(idx + 1) * ch],
        }
    };
    match &options.fill {
        Fill::Constant(v) if v.len() != 1 && v.len() != ch => {
            return Err(Error::InvalidArgument(format!("fill has {} bytes for {ch} channels", v.len())));
        }
        Fill::Donor(d) if d.shape() != image.shape() => {
            return Err(Error::InvalidArgument("donor image shape differs".into()));
        }
        _ => {}
    }

    let values = map.values();
    let mut ranked: Vec<usize> = (0..h * w)
        .filter(|&i| !options.only_negative || values[i] < 0.0)
        .collect();
    match options.order {
        RemovalOrder::Descending => {
            ranked.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)))
        }
        RemovalOrder::Ascending => {
            ranked.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        }
    }

    let total = ranked.len();
    let steps = options.steps;
    let mut current = image.clone();
    let mut removed = 0usize;
    let mut fractions = Vec::with_capacity(steps + 1);
    let mut probabilities = Vec::with_capacity(steps + 1);
    let mut pending: Vec<Image> = Vec::with_capacity(CURVE_BATCH);
    for t in 0..=steps {
        let target = (t * total).div_ceil(steps);
        for &idx in &ranked[removed..target] {
            let px = fill_pixel(idx);
            let dst = current.pixel_mut(idx / w, idx % w);
            if px.len() == 1 {
                dst.fill(px[0]);
            } else {
                dst.copy_from_slice(px);
            }
        }
        removed = target;
        fractions.push(t as f64 / steps as f64);
        pending.push(current.clone());
        if pending.len() == CURVE_BATCH || t == steps {
            for p in classifier.predict_batch(&pending)? {
                probabilities.push(p.probs()[class]);
            }
            pending.clear();
        }
    }
    Ok(PerturbationCurve { class, order: options.order, fractions, probabilities })
}

/// A donor image built by sampling one replacement for every tile of a
/// stride-K grid, each conditioned on the original image.
pub fn sampler_infill<S: PatchSampler + ?Sized>(sampler: &S, image: &Image, seed_: u64) -> Result<Image> {
    let k = sampler.patch_size();
    let grid = PatchGrid::new(image.height(), image.width(), k, k)?;
    let mut out = image.clone();
    for (i, &o) in grid.origins().iter().enumerate() {
        let ctx = extract_context(image, o, k)?;
        let patch = sampler
            .sample(&ctx, 1, seed::derive(seed_, i as u64))?
            .pop()
            .ok_or_else(|| Error::Protocol("sampler returned no patch".into()))?;
        write_patch(&mut out, o, k, &patch)?;
    }
    Ok(out)
}

/// Trapezoidal area under the curve over the fraction axis.
pub fn auc(curve: &PerturbationCurve) -> f64 {
    curve
        .fractions
        .windows(2)
        .zip(curve.probabilities.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "correlation needs equal non-empty inputs, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Pearson correlation of two equally sized value sets.
pub fn pearson_values(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("an input is constant".into()));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties receive their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_values(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson_values(&average_ranks(a), &average_ranks(b))
}

fn check_maps(a: &AttributionMap, b: &AttributionMap) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::InvalidArgument("maps differ in size".into()));
    }
    Ok(())
}

pub fn pearson(a: &AttributionMap, b: &AttributionMap) -> Result<f64> {
    check_maps(a, b)?;
    pearson_values(a.values(), b.values())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &AttributionMap, b: &AttributionMap) -> Result<f64> {
    check_maps(a, b)?;
    spearman_values(a.values(), b.values())
}

/// Correlations between two explanations of the same image.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapAgreement {
    pub pmi_pearson: f64,
    pub pmi_spearman: f64,
    pub ig_pearson: f64,
    pub ig_spearman: f64,
}

/// Compares the first PMI map and the IG map of two explanations.
pub fn map_agreement(a: &ExplanationResult, b: &ExplanationResult) -> Result<MapAgreement> {
    let (pa, pb) = (&a.pmi_maps[0], &b.pmi_maps[0]);
    Ok(MapAgreement {
        pmi_pearson: pearson(pa, pb)?,
        pmi_spearman: spearman(pa, pb)?,
        ig_pearson: pearson(&a.ig_map, &b.ig_map)?,
        ig_spearman: spearman(&a.ig_map, &b.ig_map)?,
    })
}

/// Averages over images for one randomization level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityRow {
    pub fraction: f64,
    pub mean: MapAgreement,
    /// Means of absolute coefficients.
    pub mean_abs: MapAgreement,
    pub per_image: Vec<MapAgreement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub config: EngineConfig,
    pub rows: Vec<SanityRow>,
}

/// Mean and mean-absolute of each coefficient.
pub fn summarize(per_image: &[MapAgreement]) -> (MapAgreement, MapAgreement) {
    let n = per_image.len() as f64;
    let avg = |f: &dyn Fn(&MapAgreement) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    let mean = MapAgreement {
        pmi_pearson: avg(&|m| m.pmi_pearson),
        pmi_spearman: avg(&|m| m.pmi_spearman),
        ig_pearson: avg(&|m| m.ig_pearson),
        ig_spearman: avg(&|m| m.ig_spearman),
    };
    let mean_abs = MapAgreement {
        pmi_pearson: avg(&|m| m.pmi_pearson.abs()),
        pmi_spearman: avg(&|m| m.pmi_spearman.abs()),
        ig_pearson: avg(&|m| m.ig_pearson.abs()),
        ig_spearman: avg(&|m| m.ig_spearman.abs()),
    };
    (mean, mean_abs)
}

/// Parameter-randomization sanity check.
///
/// `factory(fraction)` returns the classifier with that fraction of its
/// parameters randomized (`factory(0.0)` is the original). Every image is
/// explained under each fraction, with the PMI class pinned to what the
/// original model selects, and the maps are correlated against the
/// fraction-0 maps.
pub fn sanity_param_randomization<C, S, F>(
    factory: F,
    sampler: &S,
    images: &[Image],
    fractions: &[f64],
    config: &EngineConfig,
) -> Result<SanityReport>
where
    C: Classifier,
    S: PatchSampler + ?Sized,
    F: Fn(f64) -> Result<C>,
{
    if images.is_empty() {
        return Err(Error::InvalidArgument("sanity check needs at least one image".into()));
    }
    let base = factory(0.0)?;
    let baseline = images
        .iter()
        .map(|img| explain(&base, sampler, img, config))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let model = factory(fraction)?;
        let per_image = images
            .iter()
            .zip(&baseline)
            .map(|(img, reference)| {
                let pinned = EngineConfig {
                    classes: ClassSelection::Explicit(reference.classes.clone()),
                    ..config.clone()
                };
                let r = explain(&model, sampler, img, &pinned)?;
                map_agreement(reference, &r)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, mean_abs) = summarize(&per_image);
        rows.push(SanityRow { fraction, mean, mean_abs, per_image });
    }
    Ok(SanityReport { config: config.clone(), rows })
}

/// Fraction of images whose argmax prediction equals the label.
pub fn accuracy<C: Classifier + ?Sized>(classifier: &C, images: &[Image], labels: &[usize]) -> Result<f64> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "accuracy needs matching non-empty inputs, got {} images and {} labels",
            images.len(),
            labels.len()
        )));
    }
    let preds = classifier.predict_batch(images)?;
    let hits = preds.iter().zip(labels).filter(|(p, &y)| p.argmax() == y).count();
    Ok(hits as f64 / images.len() as f64)
}

/// A seeded Fisher–Yates permutation of the labels.
pub fn shuffle_labels(labels: &[usize], seed_: u64) -> Vec<usize> {
    let mut out = labels.to_vec();
    let mut rng = seed::rng(seed_);
    for i in (1..out.len()).rev() {
        let j = rng.random_range(0..=i);
        out.swap(i, j);
    }
    out
}

/// Result of the label-randomization sanity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSanityReport {
    pub config: EngineConfig,
    pub train: TrainConfig,
    pub shuffle_seed: u64,
    /// Training accuracy of the model fit to the true labels.
    pub true_accuracy: f64,
    /// Training accuracy of the model fit to the shuffled labels.
    pub shuffled_accuracy: f64,
    pub mean: MapAgreement,
    pub mean_abs: MapAgreement,
    pub per_image: Vec<MapAgreement>,
}

/// Label-randomization sanity check: one logistic model is trained on the
/// true labels and one on a seeded shuffle of them (same initialization
/// seed); maps of both on `explain_images` are correlated. Classes are
/// pinned to those the true-label model selects.
pub fn sanity_label_randomization<S: PatchSampler + ?Sized>(
    train_images: &[Image],
    labels: &[usize],
    explain_images: &[Image],
    sampler: &S,
    train: &TrainConfig,
    shuffle_seed: u64,
    config: &EngineConfig,
) -> Result<LabelSanityReport> {
    if explain_images.is_empty() {
        return Err(Error::InvalidArgument("sanity check needs at least one image".into()));
    }
    let shuffled = shuffle_labels(labels, shuffle_seed);
    let truth = train_logistic(train_images, labels, train)?.model;
    let noise = train_logistic(train_images, &shuffled, train)?.model;
    let per_image = explain_images
        .iter()
        .map(|img| {
            let reference = explain(&truth, sampler, img, config)?;
            let pinned = EngineConfig {
                classes: ClassSelection::Explicit(reference.classes.clone()),
                ..config.clone()
            };
            map_agreement(&reference, &explain(&noise, sampler, img, &pinned)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, mean_abs) = summarize(&per_image);
    Ok(LabelSanityReport {
        config: config.clone(),
        train: train.clone(),
        shuffle_seed,
        true_accuracy: accuracy(&truth, train_images, labels)?,
        shuffled_accuracy: accuracy(&noise, train_images, &shuffled)?,
        mean,
        mean_abs,
        per_image,
    })
}
