//! Brute-force reference implementations for the acceptance checks.
//!
//! Nothing here calls into the engine's own helpers: patches are written,
//! logits computed and sums taken by hand so that a bug in the engine and a
//! bug in the oracle are unlikely to cancel.

#![allow(dead_code)]

use infoattr_core::sampler::Patch;
use infoattr_core::{Classifier, ContextWindow, Error, Image, PatchSampler, Prediction, Result, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest outcome set the oracle is willing to enumerate.
pub const MAX_OUTCOMES: usize = 10_000;

/// Softmax of an affine function of unit-scaled pixels.
#[derive(Clone, Debug)]
pub struct ToyClassifier {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// `classes × (height·width)` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ToyClassifier {
    /// Closed-form posterior, written out independently of the engine.
    pub fn posterior(&self, pixels: &[u8]) -> Vec<f64> {
        let d = self.height * self.width;
        let mut logits = vec![0.0; self.classes];
        for c in 0..self.classes {
            let mut z = self.bias[c];
            for i in 0..d {
                z += self.weights[c * d + i] * (pixels[i] as f64 / 255.0);
            }
            logits[c] = z;
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }
}

impl Classifier for ToyClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 1)
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
        images.iter().map(|img| Prediction::new(self.posterior(img.data()))).collect()
    }

    fn id(&self) -> String {
        "toy".into()
    }
}

/// A sampler with a fixed, context-independent outcome list.
#[derive(Clone, Debug)]
pub struct ListSampler {
    pub k: usize,
    pub outcomes: Vec<(Patch, f64)>,
}

impl PatchSampler for ListSampler {
    fn patch_size(&self) -> usize {
        self.k
    }

    fn channels(&self) -> usize {
        1
    }

    /// Inverse-CDF draws from the outcome list.
    fn sample(&self, _context: &ContextWindow, n: usize, seed: u64) -> Result<Vec<Patch>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (p, w) in &self.outcomes {
                    acc += w;
                    if u < acc {
                        return p.clone();
                    }
                }
                self.outcomes.last().unwrap().0.clone()
            })
            .collect())
    }

    fn support(&self, _context: &ContextWindow) -> Result<Support> {
        Ok(Support::Enumerated(self.outcomes.clone()))
    }

    fn is_enumerable(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        "list".into()
    }
}

/// A tiny gray image, classifier and enumerable sampler.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub image: Image,
    pub classifier: ToyClassifier,
    pub sampler: ListSampler,
}

impl ToyScene {
    /// Up to 8×8 pixels, 2–4 classes, K ∈ 1..=4, 1–16 outcomes.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let height = rng.random_range(4..=8);
        let width = rng.random_range(4..=8);
        let classes = rng.random_range(2..=4);
        let k = rng.random_range(1..=4);
        let support = rng.random_range(1..=16);
        Self::build(&mut rng, height, width, classes, k, support, 3.0)
    }

    /// The fixed 6×6 two-class scene used for Monte-Carlo checks. Only the
    /// 2×2 patch at (2, 2) carries weight and the logits are centred, so the
    /// outcomes' posteriors spread over much of [0, 1].
    pub fn six_by_six() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut scene = Self::build(&mut rng, 6, 6, 2, 2, 16, 6.0);
        let c = &mut scene.classifier;
        for class in 0..2 {
            let mut centre = 0.0;
            for i in 0..36 {
                let (r, col) = (i / 6, i % 6);
                if !(2..4).contains(&r) || !(2..4).contains(&col) {
                    c.weights[class * 36 + i] = 0.0;
                }
                centre += c.weights[class * 36 + i] * 0.5;
            }
            c.bias[class] = -centre;
        }
        scene
    }

    fn build(
        rng: &mut ChaCha8Rng,
        height: usize,
        width: usize,
        classes: usize,
        k: usize,
        support: usize,
        scale: f64,
    ) -> Self {
        let pixels: Vec<u8> = (0..height * width).map(|_| rng.random()).collect();
        let image = Image::new(height, width, 1, pixels).unwrap();
        let d = height * width;
        let classifier = ToyClassifier {
            height,
            width,
            classes,
            weights: (0..classes * d).map(|_| rng.random_range(-scale..scale)).collect(),
            bias: (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let raw: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let outcomes = raw
            .iter()
            .map(|w| ((0..k * k).map(|_| rng.random()).collect(), w / total))
            .collect();
        Self { image, classifier, sampler: ListSampler { k, outcomes } }
    }

    /// Every top-left corner a K×K patch fits at.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        let k = self.sampler.k;
        let mut out = Vec::new();
        for r in 0..=self.image.height() - k {
            for c in 0..=self.image.width() - k {
                out.push((r, c));
            }
        }
        out
    }
}

/// `Σ_outcomes w · p(y | image with the patch at (row, col) replaced)`,
/// straight from the definition.
pub fn oracle_marginal(scene: &ToyScene, row: usize, col: usize) -> Result<Vec<f64>> {
    let outcomes = &scene.sampler.outcomes;
    if outcomes.len() > MAX_OUTCOMES {
        return Err(Error::UnsupportedOracle(format!("{} outcomes exceed {MAX_OUTCOMES}", outcomes.len())));
    }
    let k = scene.sampler.k;
    let w = scene.image.width();
    let mut acc = vec![0.0; scene.classifier.classes];
    for (patch, weight) in outcomes {
        let mut pixels = scene.image.data().to_vec();
        for i in 0..k {
            for j in 0..k {
                pixels[(row + i) * w + (col + j)] = patch[i * k + j];
            }
        }
        let post = scene.classifier.posterior(&pixels);
        for c in 0..acc.len() {
            acc[c] += weight * post[c];
        }
    }
    Ok(acc)
}

/// `Σ p · log2(p / q)`, skipping terms with `p = 0`.
pub fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            total += p[i] * (p[i] / q[i]).log2();
        }
    }
    total
}

/// Textbook two-pass Pearson correlation.
pub fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// A strictly positive random distribution over `len` classes.
pub fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(1e-3..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}
