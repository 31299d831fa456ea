//! The `infoattr` command line.
//!
//! Exit codes: 0 success, 1 computation error, 2 invalid flags or specs,
//! 3 file or format error, 4 external-model protocol or transport error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufReader, Write as _};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use infoattr_core::classifier::{randomize_parameters, train_logistic, TrainConfig};
use infoattr_core::eval::{
    auc, perturbation_curve, sampler_infill, sanity_label_randomization, sanity_param_randomization,
    shuffle_labels, CurveOptions, Fill, RemovalOrder,
};
use infoattr_core::sampler::{
    build_empirical_sampler, fit_conditional_gaussian, DescriptorConfig, EmpiricalConfig, GaussianConfig,
    ReferenceSampler,
};
use infoattr_core::{
    AttributionMap, ClassSelection, Classifier, EngineConfig, ExplanationResult, Image, PatchSampler,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::formats::{load_model, ModelFile, SamplerModel};
use crate::fsutil::{create_dir, read, sha256_file, write_atomic};
use crate::mapfile::{curve_to_csv, load_map, map_to_json};
use crate::parallel::{default_workers, explain_parallel};
use crate::protocol::{serve, serve_tcp, ClassifierHandler, SamplerHandler};
use crate::raster::{load_image, load_image_dir, save_image};
use crate::render::{overlay, render_heatmap, Colormap};
use crate::resolve::{sampler_path, AnyClassifier, AnySampler};

const MANIFEST_FORMAT: &str = "infoattr-manifest-v1";

#[derive(Parser, Debug)]
#[command(name = "infoattr", version, about = "Information-theoretic attribution maps for black-box image classifiers")]
struct Cli {
    /// Seconds to wait for each response from an external model.
    #[arg(long, global = true, default_value_t = 30.0)]
    timeout: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute PMI and IG maps for one image (optionally sweeping K and N).
    Explain(ExplainArgs),
    /// Fit a patch sampler from a directory of training images.
    FitSampler(FitArgs),
    /// Deletion or negative-evidence curve and its AUC for a map.
    Evaluate(EvaluateArgs),
    /// Parameter- or label-randomization sanity checks.
    Sanity(SanityArgs),
    /// Train a linear softmax model on labeled images.
    Train(TrainArgs),
    /// Serve a classifier or sampler over the wire protocol.
    Serve(ServeArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct EngineArgs {
    /// Patch size; a comma-separated list runs a sweep.
    #[arg(long = "K", value_delimiter = ',', default_value = "8", value_parser = positive)]
    k: Vec<usize>,
    /// Monte-Carlo samples per patch; a comma-separated list runs a sweep.
    #[arg(long = "N", value_delimiter = ',', default_value = "8", value_parser = positive)]
    n: Vec<usize>,
    /// Patch stride (defaults to K).
    #[arg(long, value_parser = positive)]
    stride: Option<usize>,
    /// `top:<k>` or a comma-separated list of class indices.
    #[arg(long, default_value = "top:1")]
    classes: String,
    #[arg(long, default_value_t = 1e-13)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: INFOATTR_WORKERS or available parallelism).
    #[arg(long, value_parser = positive)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    image: PathBuf,
    /// builtin:<model.json> | exec:<command> | tcp:<host:port>
    #[arg(long)]
    classifier: String,
    /// Sampler file (`{K}` is replaced by the patch size) | reference:<byte> | exec:<command> | tcp:<host:port>
    #[arg(long)]
    sampler: String,
    #[command(flatten)]
    engine: EngineArgs,
    /// Heatmap opacity in the overlays.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SamplerKind {
    Gaussian,
    Empirical,
    Reference,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, value_enum)]
    kind: SamplerKind,
    /// Directory of training images (.png/.ppm/.pgm).
    #[arg(long, required_unless_present = "channels")]
    data: Option<PathBuf>,
    #[arg(long = "K", value_parser = positive)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Descriptor cells per side of the context window.
    #[arg(long, default_value_t = 3, value_parser = positive)]
    grid: usize,
    /// Quantization levels per descriptor cell (empirical).
    #[arg(long, default_value_t = 4, value_parser = positive)]
    levels: usize,
    /// Diagonal regularizer in squared byte units (gaussian).
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
    #[arg(long, default_value_t = 256, value_parser = positive)]
    max_per_bucket: usize,
    #[arg(long, default_value_t = 1)]
    min_patches: usize,
    /// Training grid stride (defaults to K).
    #[arg(long, value_parser = positive)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fill byte (reference).
    #[arg(long, default_value_t = 128)]
    fill: u8,
    /// Channel count for a reference sampler fit without data.
    #[arg(long, value_parser = ["1", "3"])]
    channels: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Order {
    Descending,
    Ascending,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    classifier: String,
    /// Map file in the infoattr-map-v1 format.
    #[arg(long)]
    map: PathBuf,
    /// Tracked class (default: the map's class, else the top-1 class).
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, value_enum, default_value = "descending")]
    order: Order,
    /// Rank only pixels with negative attribution.
    #[arg(long)]
    only_negative: bool,
    /// mean (per-channel image mean) | gray | <byte> | sampler:<file>
    #[arg(long, default_value = "mean")]
    fill: String,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    steps: usize,
    /// Also evaluate this many uniform-random maps as a baseline.
    #[arg(long, default_value_t = 0)]
    random_baseline: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum SanityMode {
    Params,
    Labels,
}

#[derive(Args, Debug)]
struct SanityArgs {
    #[arg(long, value_enum)]
    mode: SanityMode,
    /// Images to explain.
    #[arg(long)]
    images: PathBuf,
    /// params mode: builtin:<linear model.json>
    #[arg(long, required_if_eq("mode", "params"))]
    classifier: Option<String>,
    #[arg(long)]
    sampler: String,
    /// params mode: randomized fractions of output rows.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    fractions: Vec<f64>,
    /// labels mode: training images.
    #[arg(long, required_if_eq("mode", "labels"))]
    data: Option<PathBuf>,
    /// labels mode: CSV of `file,label` rows.
    #[arg(long, required_if_eq("mode", "labels"))]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// CSV of `file,label` rows.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on labels shuffled with this seed.
    #[arg(long)]
    shuffle_labels: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, conflicts_with = "sampler", required_unless_present = "sampler")]
    classifier: Option<String>,
    /// Sampler file.
    #[arg(long)]
    sampler: Option<PathBuf>,
    /// Listen on this TCP address instead of standard streams.
    #[arg(long)]
    listen: Option<String>,
    /// Stop after this many TCP connections.
    #[arg(long)]
    max_connections: Option<usize>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct FileHash {
    path: String,
    sha256: String,
}

/// Everything needed to re-run a command.
#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    tool: String,
    version: String,
    command: String,
    args: Vec<String>,
    config: Value,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    seed: u64,
    wall_time_seconds: f64,
}

/// Collects outputs so nothing is written until every computation is done.
struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: impl AsRef<Path>, bytes: Vec<u8>) {
        self.files.push((self.dir.join(name), bytes));
    }

    fn add_png(&mut self, name: impl AsRef<Path>, image: &Image) -> Result<()> {
        // encode through a scratch file to reuse the PNG writer
        let tmp = tempfile::Builder::new().suffix(".png").tempfile().map_err(|e| Error::io("temporary file", e))?;
        save_image(image, tmp.path())?;
        self.add(name, read(tmp.path())?);
        Ok(())
    }

    fn write(self, ctx: &RunContext, command: &str, config: Value, seed: u64, manifest_path: &Path) -> Result<()> {
        for (path, _) in &self.files {
            if let Some(parent) = path.parent() {
                create_dir(parent)?;
            }
        }
        if let Some(parent) = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        let mut outputs = Vec::new();
        for (path, bytes) in &self.files {
            write_atomic(path, bytes)?;
            outputs.push(FileHash { path: path.display().to_string(), sha256: crate::fsutil::sha256_hex(bytes) });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            tool: "infoattr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: ctx.args.clone(),
            config,
            inputs: ctx.inputs.iter().map(|(p, h)| FileHash { path: p.clone(), sha256: h.clone() }).collect(),
            outputs,
            seed,
            wall_time_seconds: ctx.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(manifest_path, text.as_bytes())
    }
}

struct RunContext {
    args: Vec<String>,
    inputs: Vec<(String, String)>,
    started: Instant,
    timeout: Duration,
}

impl RunContext {
    fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((path.display().to_string(), hash));
        Ok(())
    }

    fn input_dir(&mut self, dir: &Path) -> Result<()> {
        for f in crate::raster::image_files(dir)? {
            self.input(&f)?;
        }
        Ok(())
    }

    /// Records the model file of a `builtin:` classifier spec as an input.
    fn input_classifier(&mut self, spec: &str) -> Result<()> {
        match spec.strip_prefix("builtin:") {
            Some(path) => self.input(Path::new(path)),
            None => Ok(()),
        }
    }

    /// Records the file behind a sampler spec (if it names one) as an input.
    fn input_sampler(&mut self, spec: &str, k: usize) -> Result<()> {
        if spec.starts_with("exec:") || spec.starts_with("tcp:") || spec.starts_with("reference:") {
            return Ok(());
        }
        self.input(Path::new(&sampler_path(spec, k)))
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("infoattr: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, args: Vec<String>) -> Result<()> {
    if !(cli.timeout > 0.0) || !cli.timeout.is_finite() {
        return Err(Error::Usage(format!("timeout must be positive, got {}", cli.timeout)));
    }
    let mut ctx = RunContext { args, inputs: Vec::new(), started: Instant::now(), timeout: Duration::from_secs_f64(cli.timeout) };
    match cli.command {
        Command::Explain(a) => cmd_explain(&mut ctx, a),
        Command::FitSampler(a) => cmd_fit_sampler(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Sanity(a) => cmd_sanity(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn parse_classes(s: &str) -> Result<ClassSelection> {
    let bad = || Error::Usage(format!("--classes {s:?}: expected top:<k> or a comma-separated list of indices"));
    if let Some(k) = s.strip_prefix("top:") {
        let k = k.parse::<usize>().ok().filter(|&k| k >= 1).ok_or_else(bad)?;
        return Ok(ClassSelection::TopK(k));
    }
    let list = s
        .split(',')
        .map(|c| c.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad())?;
    if list.is_empty() {
        return Err(bad());
    }
    Ok(ClassSelection::Explicit(list))
}

impl EngineArgs {
    fn config(&self, k: usize, n: usize) -> Result<EngineConfig> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Usage(format!("--eps must be positive, got {}", self.eps)));
        }
        if let Some(s) = self.stride {
            if s > k {
                return Err(Error::Usage(format!("--stride {s} exceeds K={k}")));
            }
        }
        Ok(EngineConfig {
            k,
            n,
            stride: self.stride,
            eps: self.eps,
            classes: parse_classes(&self.classes)?,
            seed: self.seed,
        })
    }

    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(default_workers)
    }

    fn single(&self) -> Result<(usize, usize)> {
        match (&self.k[..], &self.n[..]) {
            ([k], [n]) => Ok((*k, *n)),
            _ => Err(Error::Usage("this command takes a single --K and --N".into())),
        }
    }
}

fn check_image_fits(image: &Image, k: usize) -> Result<()> {
    if k > image.height() || k > image.width() {
        return Err(Error::Usage(format!(
            "K={k} exceeds the {}x{} image",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

fn fmt_real(v: f64) -> String {
    format!("{v}")
}

fn patches_csv(result: &ExplanationResult) -> String {
    let mut out = String::from("index,row,col,ig");
    for c in &result.classes {
        write!(out, ",pmi_c{c}").unwrap();
    }
    for c in 0..result.original_prediction.num_classes() {
        write!(out, ",marginal_{c}").unwrap();
    }
    out.push('\n');
    for rec in &result.patches {
        write!(out, "{},{},{},{}", rec.index, rec.origin.row, rec.origin.col, fmt_real(rec.ig)).unwrap();
        for v in &rec.pmi {
            write!(out, ",{}", fmt_real(*v)).unwrap();
        }
        for v in rec.marginal.probs() {
            write!(out, ",{}", fmt_real(*v)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn add_result(outputs: &mut Outputs, prefix: &Path, image: &Image, result: &ExplanationResult, alpha: f64) -> Result<()> {
    let mut maps: Vec<(String, &AttributionMap)> =
        result.classes.iter().zip(&result.pmi_maps).map(|(c, m)| (format!("pmi_c{c}"), m)).collect();
    maps.push(("ig".into(), &result.ig_map));
    for (name, map) in maps {
        outputs.add(prefix.join(format!("{name}.json")), map_to_json(map)?.into_bytes());
        let heat = render_heatmap(map, Colormap::for_map(map));
        outputs.add_png(prefix.join(format!("{name}.png")), &heat)?;
        outputs.add_png(prefix.join(format!("overlay_{name}.png")), &overlay(image, &heat, alpha)?)?;
    }
    outputs.add(prefix.join("patches.csv"), patches_csv(result).into_bytes());
    Ok(())
}

fn correlation_cell(r: infoattr_core::Result<f64>) -> String {
    r.map_or_else(|_| "undefined".into(), fmt_real)
}

fn cmd_explain(ctx: &mut RunContext, a: ExplainArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Error::Usage(format!("--alpha {} outside [0, 1]", a.alpha)));
    }
    parse_classes(&a.engine.classes)?;
    let image = load_image(&a.image)?;
    ctx.input(&a.image)?;
    for &k in &a.engine.k {
        check_image_fits(&image, k)?;
        ctx.input_sampler(&a.sampler, k)?;
    }
    ctx.input_classifier(&a.classifier)?;
    let classifier = AnyClassifier::open(&a.classifier, ctx.timeout)?;
    let workers = a.engine.workers();
    let sweep = a.engine.k.len() > 1 || a.engine.n.len() > 1;

    let mut outputs = Outputs::new(&a.out);
    let mut settings: Vec<(String, ExplanationResult)> = Vec::new();
    for &k in &a.engine.k {
        let sampler = AnySampler::open(&a.sampler, k, image.channels(), ctx.timeout)?;
        for &n in &a.engine.n {
            let config = a.engine.config(k, n)?;
            let result = explain_parallel(&classifier, &sampler, &image, &config, workers)?;
            let name = format!("K{k}_N{n}");
            let prefix = if sweep { PathBuf::from(&name) } else { PathBuf::new() };
            add_result(&mut outputs, &prefix, &image, &result, a.alpha)?;
            settings.push((name, result));
        }
    }
    if sweep {
        let mut csv = String::from("setting_a,setting_b,pmi_pearson,ig_pearson\n");
        for (i, (na, ra)) in settings.iter().enumerate() {
            for (nb, rb) in &settings[i + 1..] {
                let pmi = correlation_cell(infoattr_core::eval::pearson(&ra.pmi_maps[0], &rb.pmi_maps[0]));
                let ig = correlation_cell(infoattr_core::eval::pearson(&ra.ig_map, &rb.ig_map));
                writeln!(csv, "{na},{nb},{pmi},{ig}").unwrap();
            }
        }
        outputs.add("sweep_pearson.csv", csv.into_bytes());
    }
    let config = json!({
        "image": a.image,
        "classifier": a.classifier,
        "sampler": a.sampler,
        "samplers": a.engine.k.iter().map(|&k| sampler_path(&a.sampler, k)).collect::<Vec<_>>(),
        "K": a.engine.k,
        "N": a.engine.n,
        "stride": a.engine.stride,
        "classes": a.engine.classes,
        "resolved_classes": settings[0].1.classes,
        "eps": a.engine.eps,
        "seed": a.engine.seed,
        "workers": workers,
        "alpha": a.alpha,
        "timeout": ctx.timeout.as_secs_f64(),
        "original_prediction": settings[0].1.original_prediction.probs(),
    });
    let manifest = a.out.join("manifest.json");
    outputs.write(ctx, "explain", config, a.engine.seed, &manifest)
}

fn cmd_fit_sampler(ctx: &mut RunContext, a: FitArgs) -> Result<()> {
    let descriptor = DescriptorConfig { grid: a.grid, levels: a.levels };
    let images = match &a.data {
        Some(dir) => {
            let imgs = load_image_dir(dir)?;
            ctx.input_dir(dir)?;
            imgs
        }
        None => Vec::new(),
    };
    if let Some(img) = images.iter().find(|img| a.k > img.height() || a.k > img.width()) {
        check_image_fits(img, a.k)?;
    }
    let model = match a.kind {
        SamplerKind::Reference => {
            let channels = match (&a.channels, images.first()) {
                (Some(c), _) => c.parse().expect("validated by clap"),
                (None, Some(img)) => img.channels(),
                (None, None) => unreachable!("clap requires --data or --channels"),
            };
            SamplerModel::Reference(ReferenceSampler::gray(a.k, channels, a.fill)?)
        }
        SamplerKind::Gaussian => SamplerModel::Gaussian(fit_conditional_gaussian(
            &images,
            &GaussianConfig { k: a.k, descriptor, jitter: a.jitter, stride: a.stride },
        )?),
        SamplerKind::Empirical => SamplerModel::Empirical(build_empirical_sampler(
            &images,
            &EmpiricalConfig {
                k: a.k,
                descriptor,
                max_per_bucket: a.max_per_bucket,
                stride: a.stride,
                min_patches: a.min_patches,
                seed: a.seed,
            },
        )?),
    };
    let out_name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut outputs = Outputs::new(&dir);
    outputs.add(&out_name, crate::formats::encode_sampler(&model));
    let config = json!({
        "kind": a.kind,
        "data": a.data,
        "K": a.k,
        "grid": a.grid,
        "levels": a.levels,
        "jitter": a.jitter,
        "max_per_bucket": a.max_per_bucket,
        "min_patches": a.min_patches,
        "stride": a.stride.unwrap_or(a.k),
        "seed": a.seed,
        "fill": a.fill,
        "channels": model.channels(),
        "training_images": images.len(),
    });
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest.json");
    outputs.write(ctx, "fit-sampler", config, a.seed, Path::new(&manifest))
}

fn parse_fill(spec: &str, image: &Image, seed: u64, ctx: &mut RunContext) -> Result<Fill> {
    Ok(match spec {
        "mean" => Fill::Constant(image.channel_means().iter().map(|m| (m + 0.5).floor() as u8).collect()),
        "gray" => Fill::gray(),
        s if s.starts_with("sampler:") => {
            let path = &s["sampler:".len()..];
            ctx.input(Path::new(path))?;
            let model = crate::formats::load_sampler(path)?;
            if model.channels() != image.channels() {
                return Err(Error::Usage(format!("sampler {path} does not match the image channels")));
            }
            Fill::Donor(sampler_infill(&model, image, seed)?)
        }
        s => Fill::Constant(vec![s.parse::<u8>().map_err(|_| {
            Error::Usage(format!("--fill {s:?}: expected mean, gray, a byte value or sampler:<file>"))
        })?]),
    })
}

fn cmd_evaluate(ctx: &mut RunContext, a: EvaluateArgs) -> Result<()> {
    let image = load_image(&a.image)?;
    ctx.input(&a.image)?;
    let map = load_map(&a.map)?;
    ctx.input(&a.map)?;
    ctx.input_classifier(&a.classifier)?;
    let fill = parse_fill(&a.fill, &image, a.seed, ctx)?;
    let classifier = AnyClassifier::open(&a.classifier, ctx.timeout)?;
    let class = match a.class.or(map.kind().class()) {
        Some(c) => c,
        None => classifier.predict(&image)?.argmax(),
    };
    if class >= classifier.num_classes() {
        return Err(Error::Usage(format!("--class {class} out of range for {} classes", classifier.num_classes())));
    }
    let order = match a.order {
        Order::Descending => RemovalOrder::Descending,
        Order::Ascending => RemovalOrder::Ascending,
    };
    let options = CurveOptions { order, fill, steps: a.steps, only_negative: a.only_negative };
    let curve = perturbation_curve(&classifier, &image, &map, class, &options)?;
    let area = auc(&curve);
    let mut random_aucs = Vec::new();
    for i in 0..a.random_baseline {
        let values = (0..map.values().len()).map(|j| random_unit(a.seed, i, j)).collect();
        let random = AttributionMap::custom(map.height(), map.width(), values)?;
        random_aucs.push(auc(&perturbation_curve(&classifier, &image, &random, class, &options)?));
    }
    let random_mean = (!random_aucs.is_empty()).then(|| random_aucs.iter().sum::<f64>() / random_aucs.len() as f64);
    let report = json!({
        "class": class,
        "order": a.order,
        "only_negative": a.only_negative,
        "fill": a.fill,
        "steps": a.steps,
        "auc": area,
        "initial_probability": curve.probabilities[0],
        "final_probability": curve.probabilities[curve.probabilities.len() - 1],
        "random_baseline_aucs": random_aucs,
        "random_baseline_mean_auc": random_mean,
    });
    let mut outputs = Outputs::new(&a.out);
    outputs.add("curve.csv", curve_to_csv(&curve).into_bytes());
    outputs.add("report.json", (serde_json::to_string_pretty(&report).expect("serializes") + "\n").into_bytes());
    let config = json!({
        "image": a.image, "classifier": a.classifier, "map": a.map, "class": class, "order": a.order,
        "only_negative": a.only_negative, "fill": a.fill, "steps": a.steps,
        "random_baseline": a.random_baseline, "seed": a.seed,
    });
    outputs.write(ctx, "evaluate", config, a.seed, &a.out.join("manifest.json"))
}

/// Uniform value in [0, 1) for element `j` of random map `i`.
fn random_unit(seed: u64, i: usize, j: usize) -> f64 {
    let bits = infoattr_core::seed::derive(infoattr_core::seed::derive(seed, i as u64), j as u64);
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

fn read_labels(path: &Path, dir: &Path) -> Result<(Vec<Image>, Vec<usize>)> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::format(format!("{} is not UTF-8", path.display())))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (file, label) = line
            .split_once(',')
            .ok_or_else(|| Error::format(format!("{}:{}: expected file,label", path.display(), i + 1)))?;
        let Ok(label) = label.trim().parse::<usize>() else {
            if i == 0 {
                continue; // header
            }
            return Err(Error::format(format!("{}:{}: bad label {label:?}", path.display(), i + 1)));
        };
        images.push(load_image(dir.join(file.trim()))?);
        labels.push(label);
    }
    if images.is_empty() {
        return Err(Error::format(format!("{} lists no images", path.display())));
    }
    Ok((images, labels))
}

fn sanity_csv_row(out: &mut String, label: &str, m: &infoattr_core::eval::MapAgreement, abs: &infoattr_core::eval::MapAgreement) {
    writeln!(
        out,
        "{label},{},{},{},{},{},{},{},{}",
        m.pmi_pearson, m.pmi_spearman, m.ig_pearson, m.ig_spearman,
        abs.pmi_pearson, abs.pmi_spearman, abs.ig_pearson, abs.ig_spearman
    )
    .unwrap();
}

const SANITY_HEADER: &str = "pmi_pearson,pmi_spearman,ig_pearson,ig_spearman,abs_pmi_pearson,abs_pmi_spearman,abs_ig_pearson,abs_ig_spearman";

fn cmd_sanity(ctx: &mut RunContext, a: SanityArgs) -> Result<()> {
    let (k, n) = a.engine.single()?;
    let config = a.engine.config(k, n)?;
    let images = load_image_dir(&a.images)?;
    ctx.input_dir(&a.images)?;
    ctx.input_sampler(&a.sampler, k)?;
    let channels = images[0].channels();
    for img in &images {
        check_image_fits(img, k)?;
    }
    let sampler = AnySampler::open(&a.sampler, k, channels, ctx.timeout)?;
    let mut outputs = Outputs::new(&a.out);
    let (report, csv) = match a.mode {
        SanityMode::Params => {
            let spec = a.classifier.clone().expect("clap requires --classifier");
            ctx.input_classifier(&spec)?;
            let path = spec
                .strip_prefix("builtin:")
                .ok_or_else(|| Error::Usage("parameter randomization needs a builtin: linear model".into()))?;
            let ModelFile::Linear(model) = load_model(path)? else {
                return Err(Error::Usage("parameter randomization needs a linear model".into()));
            };
            if let Some(f) = a.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(Error::Usage(format!("fraction {f} outside [0, 1]")));
            }
            let seed = a.engine.seed;
            let report = sanity_param_randomization(
                |f| randomize_parameters(&model, f, seed),
                &sampler,
                &images,
                &a.fractions,
                &config,
            )?;
            let mut csv = format!("fraction,{SANITY_HEADER}\n");
            for row in &report.rows {
                sanity_csv_row(&mut csv, &row.fraction.to_string(), &row.mean, &row.mean_abs);
            }
            (serde_json::to_value(&report).expect("serializes"), csv)
        }
        SanityMode::Labels => {
            let data = a.data.clone().expect("clap requires --data");
            let labels_path = a.labels.clone().expect("clap requires --labels");
            ctx.input(&labels_path)?;
            let (train_images, labels) = read_labels(&labels_path, &data)?;
            let train = TrainConfig { epochs: a.epochs, learning_rate: a.lr, seed: a.engine.seed, num_classes: None };
            let report = sanity_label_randomization(
                &train_images,
                &labels,
                &images,
                &sampler,
                &train,
                a.engine.seed,
                &config,
            )?;
            let mut csv = format!("comparison,{SANITY_HEADER}\n");
            sanity_csv_row(&mut csv, "true_vs_shuffled", &report.mean, &report.mean_abs);
            (serde_json::to_value(&report).expect("serializes"), csv)
        }
    };
    let full = json!({ "mode": a.mode, "report": report });
    outputs.add("sanity.json", (serde_json::to_string_pretty(&full).expect("serializes") + "\n").into_bytes());
    outputs.add("sanity.csv", csv.into_bytes());
    let cfg = json!({
        "mode": a.mode, "images": a.images, "classifier": a.classifier, "sampler": a.sampler,
        "fractions": a.fractions, "data": a.data, "labels": a.labels, "epochs": a.epochs, "lr": a.lr,
        "engine": config,
    });
    outputs.write(ctx, "sanity", cfg, a.engine.seed, &a.out.join("manifest.json"))
}

fn cmd_train(ctx: &mut RunContext, a: TrainArgs) -> Result<()> {
    ctx.input(&a.labels)?;
    let (images, mut labels) = read_labels(&a.labels, &a.data)?;
    if let Some(s) = a.shuffle_labels {
        labels = shuffle_labels(&labels, s);
    }
    let cfg = TrainConfig { epochs: a.epochs, learning_rate: a.lr, seed: a.seed, num_classes: None };
    let training = train_logistic(&images, &labels, &cfg)?;
    let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut outputs = Outputs::new(&dir);
    outputs.add(a.out.file_name().unwrap_or_default(), crate::formats::linear_to_json(&training.model).into_bytes());
    let config = json!({
        "data": a.data, "labels": a.labels, "epochs": a.epochs, "lr": a.lr, "seed": a.seed,
        "shuffle_labels": a.shuffle_labels,
        "final_loss": training.losses.last(),
    });
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest.json");
    outputs.write(ctx, "train", config, a.seed, Path::new(&manifest))
}

fn cmd_serve(ctx: &RunContext, a: ServeArgs) -> Result<()> {
    let listener = match &a.listen {
        Some(addr) => {
            let l = TcpListener::bind(addr).map_err(|e| Error::io(addr, e))?;
            let local = l.local_addr().map_err(|e| Error::io(addr, e))?;
            eprintln!("listening on {local}");
            Some(l)
        }
        None => None,
    };
    let io_err = |e: std::io::Error| Error::io("<protocol stream>", e);
    macro_rules! run_handler {
        ($handler:expr) => {{
            let mut handler = $handler;
            match listener {
                Some(l) => serve_tcp(&mut handler, l, a.max_connections).map_err(io_err),
                None => {
                    let stdin = std::io::stdin();
                    let stdout = std::io::stdout();
                    serve(&mut handler, BufReader::new(stdin.lock()), stdout.lock()).map_err(io_err)
                }
            }
        }};
    }
    if let Some(spec) = &a.classifier {
        let classifier = AnyClassifier::open(spec, ctx.timeout)?;
        run_handler!(ClassifierHandler(classifier))
    } else {
        let path = a.sampler.as_ref().expect("clap requires one of the two");
        let sampler = crate::formats::load_sampler(path)?;
        run_handler!(SamplerHandler(sampler))
    }
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let bytes = read(&a.manifest)?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("{}: {e}", a.manifest.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::format(format!("unsupported manifest format {:?}", manifest.format)));
    }
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Error::format(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut args = manifest.args.clone();
    if let Some(out) = &a.out {
        let out = out.display().to_string();
        let mut replaced = false;
        for i in 0..args.len() {
            if args[i] == "--out" && i + 1 < args.len() {
                args[i + 1] = out.clone();
                replaced = true;
            } else if args[i].starts_with("--out=") {
                args[i] = format!("--out={out}");
                replaced = true;
            }
        }
        if !replaced {
            return Err(Error::Usage("recorded command has no --out to redirect".into()));
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("infoattr".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Error::format(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_) | Command::Serve(_)) {
        return Err(Error::Usage(format!("cannot replay a {} run", manifest.command)));
    }
    std::io::stderr().flush().ok();
    dispatch(cli, args)
}
