use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What an attribution map measures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    /// Point-wise mutual information for one class, in bits.
    Pmi { class: usize },
    /// Information gain (KL divergence), class independent, in bits.
    Ig,
    /// Probability drop under a constant fill.
    Occlusion { class: usize },
    /// Weight of evidence (log-odds difference, bits) under a Gaussian sampler.
    Pda { class: usize },
    /// A map supplied from elsewhere, e.g. a ground-truth or random map.
    Custom,
}

impl MapKind {
    pub fn class(&self) -> Option<usize> {
        match *self {
            MapKind::Pmi { class } | MapKind::Occlusion { class } | MapKind::Pda { class } => {
                Some(class)
            }
            MapKind::Ig | MapKind::Custom => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            MapKind::Pmi { .. } => "pmi",
            MapKind::Ig => "ig",
            MapKind::Occlusion { .. } => "occlusion",
            MapKind::Pda { .. } => "pda",
            MapKind::Custom => "custom",
        }
    }
}

/// Settings that produced a map.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub k: usize,
    pub n: usize,
    pub stride: usize,
    pub eps: f64,
    pub seed: u64,
    pub sampler: String,
    pub classifier: String,
}

/// Per-pixel attribution over an H×W image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    kind: MapKind,
    height: usize,
    width: usize,
    values: Vec<f64>,
    meta: MapMeta,
}

impl AttributionMap {
    /// IG values may dip this far below zero because of the stabilizing epsilon.
    pub const IG_FLOOR: f64 = -1e-9;

    pub fn new(
        kind: MapKind,
        height: usize,
        width: usize,
        values: Vec<f64>,
        meta: MapMeta,
    ) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "map value {i} is not finite ({})",
                values[i]
            )));
        }
        if kind == MapKind::Ig {
            if let Some(i) = values.iter().position(|&v| v < Self::IG_FLOOR) {
                return Err(Error::InvalidArgument(format!(
                    "IG value {i} is negative ({})",
                    values[i]
                )));
            }
        }
        Ok(Self { kind, height, width, values, meta })
    }

    /// A map with no provenance, e.g. a ground-truth mask.
    pub fn custom(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(MapKind::Custom, height, width, values, MapMeta::default())
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &MapMeta {
        &self.meta
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
