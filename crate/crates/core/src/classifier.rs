//! The black-box classifier contract and the in-process models.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Prediction};
use crate::map::AttributionMap;
use crate::math::{sigmoid, softmax};
use crate::seed;

/// Anything that maps a batch of images to class posteriors.
///
/// Implementations must be deterministic: the same batch always yields the
/// same predictions, and a batch result must equal the per-image results.
pub trait Classifier {
    fn num_classes(&self) -> usize;

    /// `(height, width, channels)` of accepted images.
    fn input_shape(&self) -> (usize, usize, usize);

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>>;

    /// Short identifier recorded in map metadata.
    fn id(&self) -> String {
        String::from("classifier")
    }

    fn predict(&self, image: &Image) -> Result<Prediction> {
        self.predict_batch(core::slice::from_ref(image))?
            .pop()
            .ok_or_else(|| Error::Protocol("classifier returned an empty batch".into()))
    }
}

macro_rules! forward_classifier {
    ($($ptr:ty),*) => {$(
        impl<T: Classifier + ?Sized> Classifier for $ptr {
            fn num_classes(&self) -> usize { (**self).num_classes() }
            fn input_shape(&self) -> (usize, usize, usize) { (**self).input_shape() }
            fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
                (**self).predict_batch(images)
            }
            fn id(&self) -> String { (**self).id() }
        }
    )*};
}
forward_classifier!(&T, Box<T>, Arc<T>);

/// Rejects images whose shape differs from `shape`.
pub fn check_batch(shape: (usize, usize, usize), images: &[Image]) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        if img.shape() != shape {
            return Err(Error::InvalidInput(format!(
                "image {i} is {:?}, classifier expects {shape:?}",
                img.shape()
            )));
        }
    }
    Ok(())
}

/// Ignores its input and always returns the same posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantClassifier {
    shape: (usize, usize, usize),
    prediction: Prediction,
}

impl ConstantClassifier {
    pub fn new(shape: (usize, usize, usize), prediction: Prediction) -> Self {
        Self { shape, prediction }
    }
}

impl Classifier for ConstantClassifier {
    fn num_classes(&self) -> usize {
        self.prediction.num_classes()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
        check_batch(self.shape, images)?;
        Ok(images.iter().map(|_| self.prediction.clone()).collect())
    }

    fn id(&self) -> String {
        String::from("constant")
    }
}

/// `softmax(W · x / 255 + b)` over the flattened image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    height: usize,
    width: usize,
    channels: usize,
    num_classes: usize,
    /// `num_classes` rows of `height·width·channels` weights.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearSoftmaxModel {
    pub fn new(
        shape: (usize, usize, usize),
        num_classes: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let (height, width, channels) = shape;
        let dim = height * width * channels;
        if dim == 0 {
            return Err(Error::InvalidArgument("empty input shape".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if weights.len() != num_classes * dim || bias.len() != num_classes {
            return Err(Error::InvalidArgument(format!(
                "expected {num_classes}x{dim} weights and {num_classes} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self { height, width, channels, num_classes, weights, bias })
    }

    pub fn zeros(shape: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        Self::new(shape, num_classes, alloc::vec![0.0; num_classes * dim], alloc::vec![0.0; num_classes])
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        let d = self.input_dim();
        &self.weights[class * d..(class + 1) * d]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let dot: f64 = self.weight_row(c).iter().zip(x).map(|(w, v)| w * v).sum();
                dot + self.bias[c]
            })
            .collect()
    }

    fn probs_of(&self, image: &Image) -> Vec<f64> {
        let x = unit_scale(image);
        softmax(&self.logits(&x))
    }
}

fn unit_scale(image: &Image) -> Vec<f64> {
    image.data().iter().map(|&b| f64::from(b) / 255.0).collect()
}

impl Classifier for LinearSoftmaxModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
        check_batch(self.input_shape(), images)?;
        Ok(images.iter().map(|img| Prediction::from_convex(self.probs_of(img))).collect())
    }

    fn id(&self) -> String {
        String::from("linear-softmax")
    }
}

/// An axis-aligned pixel rectangle.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub const fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self { top, left, height, width }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row)
            && (self.left..self.left + self.width).contains(&col)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    fn mean_intensity(&self, image: &Image) -> f64 {
        let mut sum = 0u64;
        for r in self.top..self.top + self.height {
            for c in self.left..self.left + self.width {
                sum += image.pixel(r, c).iter().map(|&v| u64::from(v)).sum::<u64>();
            }
        }
        sum as f64 / (self.area() * image.channels()) as f64 / 255.0
    }
}

/// Two-class model whose evidence lives in a known rectangle.
///
/// The class-1 logit is `temperature · (mean(region) − threshold − mean(inhibit))`
/// with means of unit-scaled intensities; the class-0 logit is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrantClassifier {
    height: usize,
    width: usize,
    channels: usize,
    region: Rect,
    temperature: f64,
    #[serde(default)]
    threshold: f64,
    #[serde(default)]
    inhibit: Option<Rect>,
}

impl QuadrantClassifier {
    pub fn new(shape: (usize, usize, usize), region: Rect, temperature: f64) -> Result<Self> {
        let (height, width, channels) = shape;
        let q = Self { height, width, channels, region, temperature, threshold: 0.0, inhibit: None };
        q.validate()?;
        Ok(q)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn with_inhibit(mut self, inhibit: Rect) -> Result<Self> {
        self.inhibit = Some(inhibit);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() || !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("temperature must be positive and finite".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!("unsupported channel count {}", self.channels)));
        }
        for r in core::iter::once(&self.region).chain(self.inhibit.as_ref()) {
            if r.area() == 0 || r.top + r.height > self.height || r.left + r.width > self.width {
                return Err(Error::InvalidGeometry(format!("rectangle {r:?} outside input")));
            }
        }
        Ok(())
    }

    pub fn region(&self) -> Rect {
        self.region
    }

    pub fn inhibit(&self) -> Option<Rect> {
        self.inhibit
    }

    pub fn logit(&self, image: &Image) -> f64 {
        let mut z = self.region.mean_intensity(image) - self.threshold;
        if let Some(inh) = &self.inhibit {
            z -= inh.mean_intensity(image);
        }
        self.temperature * z
    }

    /// +1 inside the evidence region, −1 inside the inhibiting region, 0 elsewhere.
    pub fn ground_truth_map(&self) -> AttributionMap {
        let mut values = alloc::vec![0.0; self.height * self.width];
        for r in 0..self.height {
            for c in 0..self.width {
                if self.region.contains(r, c) {
                    values[r * self.width + c] = 1.0;
                } else if self.inhibit.is_some_and(|i| i.contains(r, c)) {
                    values[r * self.width + c] = -1.0;
                }
            }
        }
        AttributionMap::custom(self.height, self.width, values).expect("finite by construction")
    }
}

impl Classifier for QuadrantClassifier {
    fn num_classes(&self) -> usize {
        2
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
        check_batch(self.input_shape(), images)?;
        Ok(images
            .iter()
            .map(|img| {
                let z = self.logit(img);
                Prediction::from_convex(alloc::vec![sigmoid(-z), sigmoid(z)])
            })
            .collect())
    }

    fn id(&self) -> String {
        String::from("quadrant")
    }
}

/// Hyperparameters for [`train_logistic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Defaults to one more than the largest label.
    pub num_classes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.5, seed: 0, num_classes: None }
    }
}

/// A trained model and its training-set cross-entropy after each epoch
/// (entry 0 is the initialization).
#[derive(Clone, Debug)]
pub struct Training {
    pub model: LinearSoftmaxModel,
    pub losses: Vec<f64>,
}

/// Mean cross-entropy (nats) of `model` on a labelled set.
pub fn cross_entropy(model: &LinearSoftmaxModel, images: &[Image], labels: &[usize]) -> f64 {
    let xs: Vec<Vec<f64>> = images.iter().map(unit_scale).collect();
    mean_loss(model, &xs, labels)
}

fn mean_loss(model: &LinearSoftmaxModel, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = model.logits(x);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(z.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
            lse - z[y]
        })
        .sum();
    total / xs.len() as f64
}

/// Fits a softmax regression by full-batch gradient descent.
///
/// A step that would raise the training loss is rejected and the step size
/// halved, so the per-epoch loss never increases.
pub fn train_logistic(images: &[Image], labels: &[usize], config: &TrainConfig) -> Result<Training> {
    let first = images
        .first()
        .ok_or_else(|| Error::DegenerateData("no training images".into()))?;
    if labels.len() != images.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let shape = first.shape();
    check_batch(shape, images)?;
    let max_label = *labels.iter().max().expect("non-empty");
    let num_classes = config.num_classes.unwrap_or(max_label + 1).max(2);
    if max_label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {max_label} out of range for {num_classes} classes"
        )));
    }
    let mut present = alloc::vec![false; num_classes];
    for &y in labels {
        present[y] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DegenerateData("training labels contain a single class".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }

    let dim = first.data().len();
    let mut rng = seed::rng(config.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let weights: Vec<f64> = (0..num_classes * dim).map(|_| init.sample(&mut rng)).collect();
    let mut model = LinearSoftmaxModel::new(shape, num_classes, weights, alloc::vec![0.0; num_classes])?;

    let xs: Vec<Vec<f64>> = images.iter().map(unit_scale).collect();
    let n = xs.len() as f64;
    let mut loss = mean_loss(&model, &xs, labels);
    let mut losses = alloc::vec![loss];
    let mut lr = config.learning_rate;

    for _ in 0..config.epochs {
        let mut gw = alloc::vec![0.0; num_classes * dim];
        let mut gb = alloc::vec![0.0; num_classes];
        for (x, &y) in xs.iter().zip(labels) {
            let mut p = softmax(&model.logits(x));
            p[y] -= 1.0;
            for (c, &err) in p.iter().enumerate() {
                gb[c] += err / n;
                let row = &mut gw[c * dim..(c + 1) * dim];
                for (g, &v) in row.iter_mut().zip(x) {
                    *g += err * v / n;
                }
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = model.clone();
            for (w, g) in cand.weights.iter_mut().zip(&gw) {
                *w -= lr * g;
            }
            for (b, g) in cand.bias.iter_mut().zip(&gb) {
                *b -= lr * g;
            }
            let cand_loss = mean_loss(&cand, &xs, labels);
            if cand_loss <= loss {
                model = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        losses.push(loss);
        if !accepted {
            break;
        }
    }
    while losses.len() < config.epochs + 1 {
        losses.push(loss);
    }
    Ok(Training { model, losses })
}

/// Replaces the first `⌈fraction · L⌉` weight rows (and their biases) with
/// draws from `N(0, σ_row)`, where `σ_row` is the row's own standard deviation.
pub fn randomize_parameters(
    model: &LinearSoftmaxModel,
    fraction: f64,
    seed: u64,
) -> Result<LinearSoftmaxModel> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let rows = libm::ceil(fraction * model.num_classes as f64) as usize;
    let mut out = model.clone();
    let dim = model.input_dim();
    let mut rng = seed::rng(seed);
    for r in 0..rows.min(model.num_classes) {
        let row = model.weight_row(r);
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / dim as f64;
        let dist = Normal::new(0.0, libm::sqrt(var)).expect("non-negative std");
        for w in &mut out.weights[r * dim..(r + 1) * dim] {
            *w = dist.sample(&mut rng);
        }
        out.bias[r] = dist.sample(&mut rng);
    }
    Ok(out)
}
