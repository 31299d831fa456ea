use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_context, check_count, DescriptorConfig, Patch, PatchSampler, Support};
use crate::error::{Error, Result};
use crate::geometry::{extract_context, read_patch, PatchGrid};
use crate::image::Image;
use crate::math::{cholesky, cholesky_solve};
use crate::seed;

/// Fitting options for [`fit_conditional_gaussian`].
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    pub k: usize,
    pub descriptor: DescriptorConfig,
    /// Added to the covariance diagonal, in squared byte units.
    pub jitter: f64,
    /// Stride of the training patch grid; defaults to K.
    pub stride: Option<usize>,
}

/// Joint Gaussian over `(patch bytes ⊕ ring descriptor)`, conditioned on the
/// descriptor with the Schur complement.
///
/// Conditional mean: `μ_p + Σ_pd Σ_dd⁻¹ (d − μ_d)`; conditional covariance
/// `Σ_pp − Σ_pd Σ_dd⁻¹ Σ_dp` (independent of `d`). `jitter` is added to the
/// diagonal of the joint covariance before conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussianModel {
    k: usize,
    channels: usize,
    descriptor: DescriptorConfig,
    jitter: f64,
    mean: Vec<f64>,
    covariance: Vec<f64>,
    /// `Σ_pd Σ_dd⁻¹`, patch_dim × desc_dim.
    gain: Vec<f64>,
    cond_cov: Vec<f64>,
    cond_chol: Vec<f64>,
}

impl ConditionalGaussianModel {
    /// Builds a model from joint moments (patch block first). Fails when the
    /// jittered descriptor or conditional covariance is not positive definite.
    pub fn from_moments(
        k: usize,
        channels: usize,
        descriptor: DescriptorConfig,
        jitter: f64,
        mean: Vec<f64>,
        covariance: Vec<f64>,
    ) -> Result<Self> {
        descriptor.validate(k)?;
        let p = k * k * channels;
        let d = descriptor.len(k, channels);
        let n = p + d;
        if mean.len() != n || covariance.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "joint dimension {n} needs {n} means and {} covariances, got {} and {}",
                n * n,
                mean.len(),
                covariance.len()
            )));
        }
        if !(jitter >= 0.0) || !jitter.is_finite() {
            return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
        }
        let at = |i: usize, j: usize| covariance[i * n + j] + if i == j { jitter } else { 0.0 };

        let mut sdd = alloc::vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                sdd[i * d + j] = at(p + i, p + j);
            }
        }
        let ldd = cholesky(&sdd, d).ok_or_else(|| {
            Error::DegenerateData("descriptor covariance is singular; add jitter".into())
        })?;
        // X = Σ_dd⁻¹ Σ_dp  (d × p)
        let mut x = alloc::vec![0.0; d * p];
        for i in 0..d {
            for j in 0..p {
                x[i * p + j] = at(p + i, j);
            }
        }
        cholesky_solve(&ldd, d, &mut x, p);
        let mut gain = alloc::vec![0.0; p * d];
        for i in 0..p {
            for j in 0..d {
                gain[i * d + j] = x[j * p + i];
            }
        }
        let mut cond_cov = alloc::vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                let mut s = at(i, j);
                for t in 0..d {
                    s -= gain[i * d + t] * at(p + t, j);
                }
                cond_cov[i * p + j] = s;
            }
        }
        // symmetrize rounding noise
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (cond_cov[i * p + j] + cond_cov[j * p + i]);
                cond_cov[i * p + j] = v;
                cond_cov[j * p + i] = v;
            }
        }
        let cond_chol = cholesky(&cond_cov, p).ok_or_else(|| {
            Error::DegenerateData("conditional patch covariance is singular; add jitter".into())
        })?;
        Ok(Self { k, channels, descriptor, jitter, mean, covariance, gain, cond_cov, cond_chol })
    }

    pub fn descriptor(&self) -> DescriptorConfig {
        self.descriptor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Joint mean (patch block first).
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Joint covariance without jitter, row-major.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    fn patch_dim(&self) -> usize {
        self.k * self.k * self.channels
    }

    /// Conditional patch mean given descriptor means `desc`.
    pub fn conditional_mean(&self, desc: &[f64]) -> Vec<f64> {
        let p = self.patch_dim();
        let d = desc.len();
        (0..p)
            .map(|i| {
                let shift: f64 =
                    (0..d).map(|t| self.gain[i * d + t] * (desc[t] - self.mean[p + t])).sum();
                self.mean[i] + shift
            })
            .collect()
    }

    /// Conditional patch covariance (jitter included).
    pub fn conditional_covariance(&self) -> &[f64] {
        &self.cond_cov
    }
}

impl PatchSampler for ConditionalGaussianModel {
    fn patch_size(&self) -> usize {
        self.k
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn sample(&self, context: &super::ContextWindow, n: usize, seed: u64) -> Result<Vec<Patch>> {
        check_context(self.k, self.channels, context)?;
        check_count(n)?;
        let mu = self.conditional_mean(&self.descriptor.describe(context));
        let p = self.patch_dim();
        let mut rng = seed::rng(seed);
        let mut z = alloc::vec![0.0f64; p];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            for v in &mut z {
                *v = StandardNormal.sample(&mut rng);
            }
            let patch = (0..p)
                .map(|i| {
                    let row = &self.cond_chol[i * p..i * p + i + 1];
                    let x = mu[i] + row.iter().zip(&z).map(|(l, zz)| l * zz).sum::<f64>();
                    libm::round(x).clamp(0.0, 255.0) as u8
                })
                .collect();
            out.push(patch);
        }
        Ok(out)
    }

    fn support(&self, context: &super::ContextWindow) -> Result<Support> {
        check_context(self.k, self.channels, context)?;
        Ok(Support::NotEnumerable)
    }

    fn is_enumerable(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        format!("gaussian:K{}", self.k)
    }
}

/// Estimates joint patch/descriptor moments from every grid patch of the
/// training images.
pub fn fit_conditional_gaussian(
    images: &[Image],
    config: &GaussianConfig,
) -> Result<ConditionalGaussianModel> {
    let first = images
        .first()
        .ok_or_else(|| Error::DegenerateData("no training images".into()))?;
    let channels = first.channels();
    let k = config.k;
    config.descriptor.validate(k)?;
    let p = k * k * channels;
    let n = p + config.descriptor.len(k, channels);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for img in images {
        if img.channels() != channels {
            return Err(Error::InvalidInput("training images mix channel counts".into()));
        }
        let grid = PatchGrid::new(img.height(), img.width(), k, config.stride.unwrap_or(k))?;
        for &o in grid.origins() {
            let ctx = extract_context(img, o, k)?;
            let mut row: Vec<f64> = read_patch(img, o, k)?.into_iter().map(f64::from).collect();
            row.extend(config.descriptor.describe(&ctx));
            rows.push(row);
        }
    }
    if rows.len() < n + 1 {
        return Err(Error::DegenerateData(format!(
            "{} training patches for a {n}-dimensional fit (need at least {})",
            rows.len(),
            n + 1
        )));
    }
    let m = rows.len() as f64;
    let mut mean = alloc::vec![0.0; n];
    for row in &rows {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    let mut cov = alloc::vec![0.0; n * n];
    let mut centered = alloc::vec![0.0; n];
    for row in &rows {
        for ((c, v), mu) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - mu;
        }
        for i in 0..n {
            let ci = centered[i];
            let dst = &mut cov[i * n..i * n + i + 1];
            for (d, cj) in dst.iter_mut().zip(&centered[..=i]) {
                *d += ci * cj;
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = cov[i * n + j] / (m - 1.0);
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }
    ConditionalGaussianModel::from_moments(k, channels, config.descriptor, config.jitter, mean, cov)
}
