use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infoattr::formats::{load_model, load_sampler, save_linear, save_quadrant, ModelFile};
use infoattr::mapfile::load_map;
use infoattr::raster::save_image;
use infoattr_core::{Image, LinearSoftmaxModel, PatchSampler, QuadrantClassifier, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_infoattr");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// A 32×32 scene with a bright top-left quadrant, a matching quadrant
    /// model, a linear model and a directory of noise training images.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let region = Rect::new(0, 0, 16, 16);
        let scene = Image::from_fn(32, 32, 1, |row, col, _| {
            if region.contains(row, col) {
                r.random_range(200..=255)
            } else {
                r.random()
            }
        })
        .unwrap();
        save_image(&scene, root.join("scene.png")).unwrap();
        let clf = QuadrantClassifier::new((32, 32, 1), region, 12.0).unwrap().with_threshold(0.7).unwrap();
        save_quadrant(&clf, root.join("quadrant.json")).unwrap();
        let dim = 32 * 32;
        let linear = LinearSoftmaxModel::new(
            (32, 32, 1),
            3,
            (0..3 * dim).map(|_| r.random_range(-0.01..0.01)).collect(),
            vec![0.0; 3],
        )
        .unwrap();
        save_linear(&linear, root.join("linear.json")).unwrap();
        fs::create_dir(root.join("noise")).unwrap();
        let mut labels = String::from("file,label\n");
        for i in 0..12 {
            let img = Image::new(32, 32, 1, (0..dim).map(|_| r.random()).collect()).unwrap();
            let name = format!("n{i:02}.png");
            save_image(&img, root.join("noise").join(&name)).unwrap();
            labels.push_str(&format!("{name},{}\n", i % 2));
        }
        fs::write(root.join("labels.csv"), labels).unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn fit(&self, kind: &str, k: usize) -> String {
        let out = self.p(&format!("{kind}_K{k}.smp"));
        ok(&["fit-sampler", "--kind", kind, "--data", &self.p("noise"), "--K", &k.to_string(), "--out", &out]);
        out
    }

    fn explain(&self, out: &str, extra: &[&str]) -> Output {
        let clf = format!("builtin:{}", self.p("quadrant.json"));
        let (image, out) = (self.p("scene.png"), self.p(out));
        let mut args = vec!["explain", "--image", &image, "--classifier", &clf, "--out", &out];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn read_dir_sorted(dir: &Path, skip_manifest: bool) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && !(skip_manifest && p.ends_with("manifest.json")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn invalid_flags_exit_2() {
    let f = Fixture::new();
    let sampler = "reference:128";
    for extra in [&["--sampler", sampler, "--K", "0"][..], &["--sampler", sampler, "--N", "0"], &["--sampler", sampler, "--classes", "top:0"], &["--sampler", sampler, "--K", "64"]] {
        assert_eq!(f.explain("o", extra).status.code(), Some(2), "{extra:?}");
    }
    assert_eq!(code(&["explain", "--image", "x.png"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--help"]), 0);
    let bad_spec = run(&["explain", "--image", &f.p("scene.png"), "--classifier", "model.json", "--sampler", sampler, "--out", &f.p("o")]);
    assert_eq!(bad_spec.status.code(), Some(2));
    assert!(!f.root.join("o").exists(), "nothing is written on failure");
}

#[test]
fn io_and_format_errors_exit_3() {
    let f = Fixture::new();
    fs::create_dir(f.root.join("empty")).unwrap();
    let out = run(&["fit-sampler", "--kind", "empirical", "--data", &f.p("empty"), "--K", "8", "--out", &f.p("x.smp")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("found 0 image files"));
    fs::write(f.root.join("garbage.png"), b"not an image").unwrap();
    let clf = format!("builtin:{}", f.p("quadrant.json"));
    assert_eq!(code(&["explain", "--image", &f.p("garbage.png"), "--classifier", &clf, "--sampler", "reference:0", "--out", &f.p("o")]), 3);
    assert_eq!(code(&["explain", "--image", &f.p("missing.png"), "--classifier", &clf, "--sampler", "reference:0", "--out", &f.p("o")]), 3);
    fs::write(f.root.join("bad.smp"), b"IATSMPL0").unwrap();
    assert_eq!(f.explain("o", &["--sampler", &f.p("bad.smp")]).status.code(), Some(3));
}

#[test]
fn unreachable_external_model_exits_4() {
    let f = Fixture::new();
    let out = run(&["--timeout", "2", "explain", "--image", &f.p("scene.png"), "--classifier", "exec:true", "--sampler", "reference:0", "--out", &f.p("o")]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn explain_writes_maps_renders_and_a_manifest_deterministically() {
    let f = Fixture::new();
    let sampler = f.fit("empirical", 8);
    for out in ["a", "b"] {
        let res = f.explain(out, &["--sampler", &sampler, "--classes", "1", "--seed", "5", "--workers", "3"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let a = read_dir_sorted(&f.root.join("a"), true);
    assert_eq!(a, read_dir_sorted(&f.root.join("b"), true));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["ig.json", "ig.png", "overlay_ig.png", "overlay_pmi_c1.png", "patches.csv", "pmi_c1.json", "pmi_c1.png"]);

    let pmi = load_map(f.root.join("a/pmi_c1.json")).unwrap();
    assert_eq!((pmi.height(), pmi.width(), pmi.kind().class()), (32, 32, Some(1)));
    assert_eq!((pmi.meta().k, pmi.meta().n, pmi.meta().seed), (8, 8, 5));
    assert!(pmi.get(0, 0) > 0.0 && pmi.get(31, 31) == 0.0);

    let csv = fs::read_to_string(f.root.join("a/patches.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "index,row,col,ig,pmi_c1,marginal_0,marginal_1");
    assert_eq!(lines.count(), 16);

    let manifest: Value = serde_json::from_slice(&fs::read(f.root.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "explain");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["K"][0], 8);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 7);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn sweeps_write_one_directory_per_setting_and_a_correlation_table() {
    let f = Fixture::new();
    f.fit("gaussian", 4);
    f.fit("gaussian", 8);
    let template = f.p("gaussian_K{K}.smp");
    let res = f.explain("sweep", &["--sampler", &template, "--K", "4,8", "--N", "2,8"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for d in ["K4_N2", "K4_N8", "K8_N2", "K8_N8"] {
        assert!(f.root.join("sweep").join(d).join("ig.json").is_file(), "{d}");
    }
    let table = fs::read_to_string(f.root.join("sweep/sweep_pearson.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "setting_a,setting_b,pmi_pearson,ig_pearson");
    assert_eq!(rows.len(), 1 + 6);
    assert!(rows[1].starts_with("K4_N2,K4_N8,"));
}

#[test]
fn fitted_samplers_round_trip_through_files() {
    let f = Fixture::new();
    for kind in ["empirical", "gaussian"] {
        let path = f.fit(kind, 4);
        let model = load_sampler(&path).unwrap();
        assert_eq!((model.kind(), model.patch_size(), model.channels()), (kind, 4, 1));
        let manifest: Value = serde_json::from_slice(&fs::read(format!("{path}.manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["training_images"], 12);
    }
    let out = f.p("ref_K2.smp");
    ok(&["fit-sampler", "--kind", "reference", "--channels", "3", "--K", "2", "--fill", "7", "--out", &out]);
    let model = load_sampler(&out).unwrap();
    assert_eq!((model.kind(), model.patch_size(), model.channels()), ("reference", 2, 3));
}

#[test]
fn evaluate_produces_curves_and_auc() {
    let f = Fixture::new();
    assert!(f.explain("m", &["--sampler", "reference:128", "--classes", "1"]).status.success());
    let clf = format!("builtin:{}", f.p("quadrant.json"));
    let (image, map) = (f.p("scene.png"), f.p("m/pmi_c1.json"));
    ok(&["evaluate", "--image", &image, "--classifier", &clf, "--map", &map, "--steps", "1", "--out", &f.p("e1")]);
    let curve = fs::read_to_string(f.root.join("e1/curve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], "fraction,probability");
    assert!(rows[1].starts_with("0,") && rows[2].starts_with("1,"));

    ok(&["evaluate", "--image", &image, "--classifier", &clf, "--map", &map, "--fill", "gray", "--random-baseline", "3", "--out", &f.p("e2")]);
    let report: Value = serde_json::from_slice(&fs::read(f.root.join("e2/report.json")).unwrap()).unwrap();
    assert_eq!(report["class"], 1);
    let auc = report["auc"].as_f64().unwrap();
    let random = report["random_baseline_mean_auc"].as_f64().unwrap();
    assert!(auc < 0.6 * random, "{auc} vs {random}");

    let sampler = f.fit("empirical", 8);
    let fill = format!("sampler:{sampler}");
    ok(&["evaluate", "--image", &image, "--classifier", &clf, "--map", &map, "--fill", &fill, "--steps", "4", "--out", &f.p("e3")]);
    assert_eq!(code(&["evaluate", "--image", &image, "--classifier", &clf, "--map", &map, "--fill", "purple", "--out", &f.p("e4")]), 2);
}

#[test]
fn train_then_sanity_checks() {
    let f = Fixture::new();
    let model = f.p("trained.json");
    ok(&["train", "--data", &f.p("noise"), "--labels", &f.p("labels.csv"), "--epochs", "20", "--out", &model]);
    let ModelFile::Linear(m) = load_model(&model).unwrap() else { panic!("expected a linear model") };
    assert_eq!(m.input_dim(), 32 * 32);

    let clf = format!("builtin:{model}");
    let (sp, sl) = (f.p("sp"), f.p("sl"));
    let common = ["--images", &f.p("noise"), "--sampler", "reference:128", "--K", "8", "--N", "2"];
    let mut args = vec!["sanity", "--mode", "params", "--classifier", &clf, "--out", &sp];
    args.extend_from_slice(&common);
    ok(&args);
    let csv = fs::read_to_string(f.root.join("sp/sanity.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 5);
    assert!(rows[1].starts_with("0,1,1,1,1,"), "{}", rows[1]);

    let (data, labels) = (f.p("noise"), f.p("labels.csv"));
    let mut args = vec!["sanity", "--mode", "labels", "--data", &data, "--labels", &labels, "--epochs", "20", "--out", &sl];
    args.extend_from_slice(&common);
    ok(&args);
    let report: Value = serde_json::from_slice(&fs::read(f.root.join("sl/sanity.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "labels");
    assert!(report["report"]["mean"]["pmi_pearson"].is_number());
}

#[test]
fn replay_reproduces_outputs_and_detects_changed_inputs() {
    let f = Fixture::new();
    let sampler = f.fit("empirical", 8);
    assert!(f.explain("orig", &["--sampler", &sampler, "--seed", "3"]).status.success());
    ok(&["replay", &f.p("orig/manifest.json"), "--out", &f.p("again")]);
    assert_eq!(read_dir_sorted(&f.root.join("orig"), true), read_dir_sorted(&f.root.join("again"), true));

    fs::copy(f.root.join("noise/n00.png"), f.root.join("scene.png")).unwrap();
    let out = run(&["replay", &f.p("orig/manifest.json"), "--out", &f.p("third")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn explain_through_an_external_classifier() {
    let f = Fixture::new();
    let served = format!("exec:'{BIN}' serve --classifier builtin:'{}'", f.p("quadrant.json"));
    let image = f.p("scene.png");
    ok(&["explain", "--image", &image, "--classifier", &served, "--sampler", "reference:128", "--seed", "1", "--out", &f.p("ext")]);
    assert!(f.explain("int", &["--sampler", "reference:128", "--seed", "1"]).status.success());
    let (a, b) = (load_map(f.root.join("ext/ig.json")).unwrap(), load_map(f.root.join("int/ig.json")).unwrap());
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-6);
    }
}
