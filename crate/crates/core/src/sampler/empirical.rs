use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_context, check_count, DescriptorConfig, Patch, PatchSampler, Support};
use crate::error::{Error, Result};
use crate::geometry::{extract_context, read_patch, ContextWindow, PatchGrid};
use crate::image::Image;
use crate::seed;

/// Options for [`build_empirical_sampler`].
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub k: usize,
    pub descriptor: DescriptorConfig,
    /// Bucket capacity; overflowing buckets keep a uniform reservoir sample.
    pub max_per_bucket: usize,
    /// Stride of the training patch grid; defaults to K.
    pub stride: Option<usize>,
    /// Fewer stored patches than this is a degenerate fit.
    pub min_patches: usize,
    pub seed: u64,
}

impl EmpiricalConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            descriptor: DescriptorConfig::default(),
            max_per_bucket: 256,
            stride: None,
            min_patches: 1,
            seed: 0,
        }
    }
}

/// A dictionary of real training patches keyed by the quantized descriptor
/// of their surroundings. Sampling draws uniformly from the bucket matching
/// the query context, falling back to the nearest bucket in L1 distance
/// (ties to the smallest key).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalPatchModel {
    k: usize,
    channels: usize,
    descriptor: DescriptorConfig,
    buckets: BTreeMap<Vec<u8>, Vec<Patch>>,
}

impl EmpiricalPatchModel {
    pub fn from_buckets(
        k: usize,
        channels: usize,
        descriptor: DescriptorConfig,
        buckets: BTreeMap<Vec<u8>, Vec<Patch>>,
    ) -> Result<Self> {
        descriptor.validate(k)?;
        if buckets.is_empty() {
            return Err(Error::DegenerateData("patch dictionary is empty".into()));
        }
        let key_len = descriptor.len(k, channels);
        let patch_len = k * k * channels;
        for (key, patches) in &buckets {
            if key.len() != key_len || key.iter().any(|&q| usize::from(q) >= descriptor.levels) {
                return Err(Error::InvalidArgument(format!("malformed bucket key {key:?}")));
            }
            if patches.is_empty() {
                return Err(Error::DegenerateData(format!("bucket {key:?} is empty")));
            }
            if patches.iter().any(|p| p.len() != patch_len) {
                return Err(Error::InvalidArgument(format!(
                    "bucket {key:?} holds a patch that is not {patch_len} bytes"
                )));
            }
        }
        Ok(Self { k, channels, descriptor, buckets })
    }

    pub fn descriptor(&self) -> DescriptorConfig {
        self.descriptor
    }

    pub fn buckets(&self) -> &BTreeMap<Vec<u8>, Vec<Patch>> {
        &self.buckets
    }

    pub fn total_patches(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    /// The bucket used for a quantized descriptor.
    pub fn lookup(&self, key: &[u8]) -> (&Vec<u8>, &Vec<Patch>) {
        if let Some(hit) = self.buckets.get_key_value(key) {
            return hit;
        }
        let dist = |k: &[u8]| -> u32 {
            k.iter().zip(key).map(|(&a, &b)| u32::from(a.abs_diff(b))).sum()
        };
        let mut best = self.buckets.iter().next().expect("non-empty");
        let mut best_d = dist(best.0);
        for entry in self.buckets.iter().skip(1) {
            let d = dist(entry.0);
            if d < best_d {
                best = entry;
                best_d = d;
            }
        }
        best
    }

    fn bucket_for(&self, context: &ContextWindow) -> &Vec<Patch> {
        self.lookup(&self.descriptor.key(context)).1
    }
}

impl PatchSampler for EmpiricalPatchModel {
    fn patch_size(&self) -> usize {
        self.k
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn sample(&self, context: &ContextWindow, n: usize, seed: u64) -> Result<Vec<Patch>> {
        check_context(self.k, self.channels, context)?;
        check_count(n)?;
        let bucket = self.bucket_for(context);
        let mut rng = seed::rng(seed);
        Ok((0..n).map(|_| bucket[rng.random_range(0..bucket.len())].clone()).collect())
    }

    /// Distinct patches of the matched bucket, weighted by multiplicity.
    fn support(&self, context: &ContextWindow) -> Result<Support> {
        check_context(self.k, self.channels, context)?;
        let bucket = self.bucket_for(context);
        let w = 1.0 / bucket.len() as f64;
        let mut outcomes: Vec<(Patch, usize)> = Vec::new();
        for p in bucket {
            match outcomes.iter_mut().find(|(q, _)| q == p) {
                Some((_, count)) => *count += 1,
                None => outcomes.push((p.clone(), 1)),
            }
        }
        Ok(Support::Enumerated(
            outcomes.into_iter().map(|(p, c)| (p, c as f64 * w)).collect(),
        ))
    }

    fn is_enumerable(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        format!("empirical:K{}", self.k)
    }
}

/// Files every training patch under the descriptor of its own surroundings.
pub fn build_empirical_sampler(images: &[Image], config: &EmpiricalConfig) -> Result<EmpiricalPatchModel> {
    let first = images
        .first()
        .ok_or_else(|| Error::DegenerateData("no training images".into()))?;
    if config.max_per_bucket == 0 {
        return Err(Error::InvalidArgument("bucket capacity must be at least 1".into()));
    }
    let channels = first.channels();
    let k = config.k;
    config.descriptor.validate(k)?;
    let mut rng = seed::rng(config.seed);
    let mut buckets: BTreeMap<Vec<u8>, (usize, Vec<Patch>)> = BTreeMap::new();
    for img in images {
        if img.channels() != channels {
            return Err(Error::InvalidInput("training images mix channel counts".into()));
        }
        let grid = PatchGrid::new(img.height(), img.width(), k, config.stride.unwrap_or(k))?;
        for &o in grid.origins() {
            let key = config.descriptor.key(&extract_context(img, o, k)?);
            let patch = read_patch(img, o, k)?;
            let (seen, stored) = buckets.entry(key).or_default();
            *seen += 1;
            if stored.len() < config.max_per_bucket {
                stored.push(patch);
            } else {
                let j = rng.random_range(0..*seen);
                if j < config.max_per_bucket {
                    stored[j] = patch;
                }
            }
        }
    }
    let buckets: BTreeMap<Vec<u8>, Vec<Patch>> =
        buckets.into_iter().map(|(key, (_, stored))| (key, stored)).collect();
    let model = EmpiricalPatchModel::from_buckets(k, channels, config.descriptor, buckets)?;
    if model.total_patches() < config.min_patches {
        return Err(Error::DegenerateData(format!(
            "{} patches stored, at least {} required",
            model.total_patches(),
            config.min_patches
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Origin;
    use alloc::vec;

    fn single() -> EmpiricalConfig {
        EmpiricalConfig { descriptor: DescriptorConfig { grid: 1, levels: 2 }, ..EmpiricalConfig::new(2) }
    }

    #[test]
    fn one_patch_dictionary_always_returns_it() {
        let img = Image::from_fn(2, 2, 1, |r, c, _| (r * 2 + c) as u8).unwrap();
        let m = build_empirical_sampler(&[img.clone()], &single()).unwrap();
        assert_eq!(m.buckets().len(), 1);
        assert_eq!(m.total_patches(), 1);
        let query = Image::filled(6, 6, 1, 250).unwrap();
        let ctx = extract_context(&query, Origin::new(2, 2), 2).unwrap();
        assert!(m.sample(&ctx, 5, 1).unwrap().iter().all(|p| p == &[0, 1, 2, 3]));
    }

    #[test]
    fn disjoint_descriptors_make_two_buckets() {
        let dark = Image::from_fn(4, 4, 1, |r, c, _| (r + c) as u8).unwrap();
        let bright = Image::from_fn(4, 4, 1, |r, c, _| 200 + (r * c) as u8).unwrap();
        let m = build_empirical_sampler(&[dark.clone(), bright.clone()], &single()).unwrap();
        assert_eq!(m.buckets().keys().cloned().collect::<Vec<_>>(), vec![vec![0], vec![1]]);
        let dark_patches: Vec<Patch> = PatchGrid::new(4, 4, 2, 2)
            .unwrap()
            .origins()
            .iter()
            .map(|&o| read_patch(&dark, o, 2).unwrap())
            .collect();
        let ctx = extract_context(&dark, Origin::new(0, 0), 2).unwrap();
        for p in m.sample(&ctx, 64, 3).unwrap() {
            assert!(dark_patches.contains(&p));
        }
    }

    #[test]
    fn nearest_bucket_fallback_prefers_smallest_key() {
        let d = DescriptorConfig { grid: 1, levels: 4 };
        let mut buckets = BTreeMap::new();
        buckets.insert(vec![0u8], vec![vec![10u8]]);
        buckets.insert(vec![2u8], vec![vec![20u8]]);
        let m = EmpiricalPatchModel::from_buckets(1, 1, d, buckets).unwrap();
        assert_eq!(m.lookup(&[1]).0, &vec![0u8]);
        assert_eq!(m.lookup(&[3]).0, &vec![2u8]);
        assert_eq!(m.lookup(&[2]).0, &vec![2u8]);
    }

    #[test]
    fn support_is_uniform_over_bucket() {
        let d = DescriptorConfig { grid: 1, levels: 1 };
        let mut buckets = BTreeMap::new();
        buckets.insert(vec![0u8], vec![vec![1u8], vec![2], vec![3], vec![4]]);
        let m = EmpiricalPatchModel::from_buckets(1, 1, d, buckets).unwrap();
        let img = Image::filled(3, 3, 1, 0).unwrap();
        let ctx = extract_context(&img, Origin::new(1, 1), 1).unwrap();
        let Support::Enumerated(s) = m.support(&ctx).unwrap() else { panic!() };
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|(_, p)| *p == 0.25));
    }

    #[test]
    fn reservoir_caps_buckets_deterministically() {
        let imgs: Vec<Image> = (0..5).map(|i| Image::filled(8, 8, 1, 100 + i).unwrap()).collect();
        let cfg = EmpiricalConfig { max_per_bucket: 3, seed: 7, ..single() };
        let a = build_empirical_sampler(&imgs, &cfg).unwrap();
        assert!(a.buckets().values().all(|b| b.len() == 3));
        assert_eq!(a, build_empirical_sampler(&imgs, &cfg).unwrap());
        assert!(build_empirical_sampler(&[], &cfg).is_err());
        let strict = EmpiricalConfig { min_patches: 100, ..cfg };
        assert!(matches!(build_empirical_sampler(&imgs, &strict), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn malformed_buckets_rejected() {
        let d = DescriptorConfig { grid: 1, levels: 2 };
        let mut b = BTreeMap::new();
        b.insert(vec![0u8], Vec::new());
        assert!(EmpiricalPatchModel::from_buckets(1, 1, d, b).is_err());
        let mut b = BTreeMap::new();
        b.insert(vec![5u8], vec![vec![0u8]]);
        assert!(EmpiricalPatchModel::from_buckets(1, 1, d, b).is_err());
    }
}
