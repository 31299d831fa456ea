use infoattr_core::sampler::{build_empirical_sampler, EmpiricalConfig, ReferenceSampler};
use infoattr_core::{
    explain, marginal_prediction, pmi, ClassSelection, Classifier, ConstantClassifier, EngineConfig, Explainer,
    Image, LinearSoftmaxModel, Origin, Prediction,
};
use proptest::prelude::*;

fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(any::<u8>(), h * w * c).prop_map(move |d| Image::new(h, w, c, d).unwrap())
}

fn linear(h: usize, w: usize, c: usize, classes: usize) -> impl Strategy<Value = LinearSoftmaxModel> {
    let dim = h * w * c;
    (prop::collection::vec(-0.2f64..0.2, classes * dim), prop::collection::vec(-1.0f64..1.0, classes))
        .prop_map(move |(wts, b)| LinearSoftmaxModel::new((h, w, c), classes, wts, b).unwrap())
}

fn scene() -> impl Strategy<Value = (LinearSoftmaxModel, Image, Vec<Image>, u64)> {
    (linear(8, 8, 1, 3), image(8, 8, 1), prop::collection::vec(image(8, 8, 1), 2), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ig_is_the_prediction_weighted_pmi((model, img, train, seed) in scene()) {
        let sampler = build_empirical_sampler(&train, &EmpiricalConfig::new(2)).unwrap();
        let config = EngineConfig { k: 2, n: 3, seed, classes: ClassSelection::Explicit(vec![0, 1, 2]), ..EngineConfig::default() };
        let res = explain(&model, &sampler, &img, &config).unwrap();
        let p = res.original_prediction.probs();
        for rec in &res.patches {
            let weighted: f64 = rec.pmi.iter().zip(p).map(|(v, w)| v * w).sum();
            prop_assert!((rec.ig - weighted).abs() <= 1e-9);
        }
    }

    #[test]
    fn marginals_are_valid_predictions((model, img, train, seed) in scene(), n in 1usize..20, r in 0usize..7, c in 0usize..7) {
        let sampler = build_empirical_sampler(&train, &EmpiricalConfig::new(2)).unwrap();
        let m = marginal_prediction(&model, &sampler, &img, Origin::new(r, c), n, seed).unwrap();
        let sum: f64 = m.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= n as f64 * 1e-6);
        prop_assert!(m.probs().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn any_patch_order_gives_the_same_result((model, img, train, seed) in scene(), rotate in 0usize..16) {
        let sampler = build_empirical_sampler(&train, &EmpiricalConfig::new(2)).unwrap();
        let config = EngineConfig { k: 2, n: 4, seed, ..EngineConfig::default() };
        let reference = explain(&model, &sampler, &img, &config).unwrap();
        let explainer = Explainer::new(&model, &sampler, &img, &config).unwrap();
        let mut order: Vec<usize> = (0..explainer.num_patches()).rev().collect();
        let len = order.len();
        order.rotate_left(rotate % len);
        let records = order.iter().map(|&i| explainer.explain_patch(i).unwrap()).collect();
        prop_assert_eq!(explainer.finish(records).unwrap(), reference);
    }

    #[test]
    fn pmi_is_antisymmetric(a in 1e-6f64..1.0, b in 1e-6f64..1.0) {
        prop_assert!((pmi(a, b, 0.0) + pmi(b, a, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn batches_equal_single_predictions(model in linear(4, 4, 3, 5), imgs in prop::collection::vec(image(4, 4, 3), 1..6)) {
        let batch = model.predict_batch(&imgs).unwrap();
        for (img, p) in imgs.iter().zip(&batch) {
            prop_assert_eq!(&model.predict(img).unwrap(), p);
        }
    }
}

#[test]
fn constant_classifier_gives_zero_maps() {
    let img = Image::from_fn(8, 8, 3, |r, c, ch| (r * 31 + c * 7 + ch) as u8).unwrap();
    let clf = ConstantClassifier::new((8, 8, 3), Prediction::new(vec![0.2, 0.3, 0.5]).unwrap());
    let sampler = ReferenceSampler::gray(4, 3, 0).unwrap();
    let res = explain(&clf, &sampler, &img, &EngineConfig { k: 4, classes: ClassSelection::TopK(3), ..EngineConfig::default() }).unwrap();
    assert!(res.pmi_maps.iter().chain([&res.ig_map]).all(|m| m.values().iter().all(|&v| v == 0.0)));
}

#[test]
fn single_patch_grid_gives_a_constant_map() {
    let img = Image::from_fn(4, 4, 1, |r, c, _| (r * 60 + c * 5) as u8).unwrap();
    let model = LinearSoftmaxModel::new((4, 4, 1), 2, (0..32).map(|i| (i as f64 - 16.0) / 10.0).collect(), vec![0.0, 0.0]).unwrap();
    let sampler = ReferenceSampler::gray(4, 1, 128).unwrap();
    let res = explain(&model, &sampler, &img, &EngineConfig { k: 4, ..EngineConfig::default() }).unwrap();
    let class = res.classes[0];
    let full = model.predict(&img).unwrap();
    let marg = model.predict(&Image::filled(4, 4, 1, 128).unwrap()).unwrap();
    let expected = pmi(full.probs()[class], marg.probs()[class], 1e-13);
    assert!(res.pmi_maps[0].values().iter().all(|&v| v == expected));
}
