//! Multi-threaded attribution with schedule-independent output.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use infoattr_core::{Classifier, EngineConfig, Explainer, ExplanationResult, Image, PatchRecord, PatchSampler, Result};

/// Environment variable overriding the default worker count.
pub const WORKERS_ENV: &str = "INFOATTR_WORKERS";

/// Worker count: `INFOATTR_WORKERS` when set to a positive integer,
/// otherwise the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

/// Explains an image with `workers` threads pulling patches from a shared
/// counter. Every patch uses its own derived seed and records are merged by
/// patch index, so the result is bit-identical for any worker count. On
/// failure the error of the lowest failing patch index is returned.
pub fn explain_parallel<C, S>(
    classifier: &C,
    sampler: &S,
    image: &Image,
    config: &EngineConfig,
    workers: usize,
) -> Result<ExplanationResult>
where
    C: Classifier + Sync + ?Sized,
    S: PatchSampler + Sync + ?Sized,
{
    let explainer = Explainer::new(classifier, sampler, image, config)?;
    let total = explainer.num_patches();
    let workers = workers.clamp(1, total.max(1));
    if workers == 1 {
        return explainer.run();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<PatchRecord>>>> = Mutex::new((0..total).map(|_| None).collect());
    let failed = AtomicUsize::new(usize::MAX);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                // stop picking up work past a known failure
                if i >= total || i > failed.load(Ordering::Relaxed) {
                    break;
                }
                let rec = explainer.explain_patch(i);
                if rec.is_err() {
                    failed.fetch_min(i, Ordering::Relaxed);
                }
                slots.lock().expect("no panics while holding the lock")[i] = Some(rec);
            });
        }
    });
    let slots = slots.into_inner().expect("workers joined");
    let mut records = Vec::with_capacity(total);
    for slot in slots {
        match slot {
            Some(Ok(rec)) => records.push(rec),
            Some(Err(e)) => return Err(e),
            None => unreachable!("patches before the first failure are all computed"),
        }
    }
    explainer.finish(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use infoattr_core::sampler::ReferenceSampler;
    use infoattr_core::{explain, Error, QuadrantClassifier, Rect};

    #[test]
    fn matches_sequential_for_any_worker_count() {
        let img = Image::from_fn(16, 16, 1, |r, c, _| (r * 16 + c) as u8).unwrap();
        let clf = QuadrantClassifier::new((16, 16, 1), Rect::new(0, 0, 8, 8), 5.0).unwrap();
        let sampler = ReferenceSampler::gray(4, 1, 128).unwrap();
        let cfg = EngineConfig { k: 4, n: 2, ..EngineConfig::default() };
        let seq = explain(&clf, &sampler, &img, &cfg).unwrap();
        for w in [1, 2, 3, 8, 64] {
            assert_eq!(explain_parallel(&clf, &sampler, &img, &cfg, w).unwrap(), seq);
        }
    }

    struct FailsAt(usize);

    impl PatchSampler for FailsAt {
        fn patch_size(&self) -> usize {
            2
        }
        fn channels(&self) -> usize {
            1
        }
        fn sample(&self, ctx: &infoattr_core::ContextWindow, n: usize, _: u64) -> Result<Vec<Vec<u8>>> {
            let o = ctx.origin();
            if o.row * 4 + o.col >= self.0 * 2 {
                return Err(Error::Protocol("sampler down".into()));
            }
            Ok(vec![vec![0; 4]; n])
        }
        fn support(&self, _: &infoattr_core::ContextWindow) -> Result<infoattr_core::Support> {
            Ok(infoattr_core::Support::NotEnumerable)
        }
        fn is_enumerable(&self) -> bool {
            false
        }
        fn id(&self) -> String {
            "fails".into()
        }
    }

    #[test]
    fn reports_lowest_failing_patch() {
        let img = Image::filled(4, 4, 1, 9).unwrap();
        let clf = QuadrantClassifier::new((4, 4, 1), Rect::new(0, 0, 2, 2), 1.0).unwrap();
        let cfg = EngineConfig { k: 2, n: 1, ..EngineConfig::default() };
        // patch indices 0..4 have origins (0,0),(0,2),(2,0),(2,2); index 1 fails first
        for w in [1, 4] {
            let err = explain_parallel(&clf, &FailsAt(1), &img, &cfg, w).unwrap_err();
            assert!(matches!(err, Error::Patch { index: 1, .. }), "{err}");
        }
    }
}
