//! Model-agnostic attribution of image classifier predictions.
//!
//! Each K×K patch of an image is marginalized out by sampling replacement
//! patches from a conditional patch model, and the resulting change in the
//! classifier posterior is measured in bits: a class-specific point-wise
//! mutual information (PMI) map and a class-independent information gain
//! (IG) map.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the external
//! model protocol, the parallel executor and the command line live in the
//! `infoattr` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod classifier;
pub mod engine;
mod error;
pub mod eval;
pub mod geometry;
mod image;
mod map;
mod math;
pub mod sampler;
pub mod seed;

pub use classifier::{
    Classifier, ConstantClassifier, LinearSoftmaxModel, QuadrantClassifier, Rect,
};
pub use engine::{
    exact_marginal_prediction, explain, ig, marginal_prediction, occlusion_map, pda_map, pmi,
    ClassSelection, EngineConfig, ExplanationResult, Explainer, PatchRecord,
};
pub use error::{Error, Result};
pub use geometry::{ContextWindow, Origin, PatchGrid};
pub use image::{Image, Prediction};
pub use map::{AttributionMap, MapKind, MapMeta};
pub use sampler::{PatchSampler, Support};
