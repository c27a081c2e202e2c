//! Command-line front end. `cli_run` parses arguments, runs one subcommand
//! and maps failures to exit codes: 1 for usage errors, 2 for bad or missing
//! data, 3 for runtime failures.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use csab::augment::{augment_batch, AugmentConfig};
use csab::dataset::{carve_validation, environment_split, read_image, scan_dataset, write_ppm, ExcludeList, RgbImage};
use csab::infer::{bench_latency, infer_sequence, latency_csv, write_text, REFERENCE_LINE};
use csab::model::init_params;
use csab::train::{compare_models, evaluate, history_csv, load_checkpoint, save_checkpoint, saliency_map, split_records, train};
use csab::{Checkpoint, DatasetManifest, Error, HeadKind, LabelMap, ModelSpec, RunConfig, SplitSpec, Tensor, TemporalSmoother, TrainConfig};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) | Error::Config { .. } => CliError::Usage(msg),
            Error::UnknownClass(_)
            | Error::UnknownClassDir(_)
            | Error::MissingEnvironment { .. }
            | Error::Dataset(_)
            | Error::Image { .. }
            | Error::Io { .. }
            | Error::EmptyTrainSplit
            | Error::LabelOutOfRange { .. }
            | Error::Checkpoint(_) => CliError::Data(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

// Results go to stdout; a closed pipe (`csab ... | head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "csab", version, about = "Handwashing step classifier: data prep, training, evaluation and inference")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Walk an `env<k>/<Class>/` image tree and write a manifest.
    Scan(ScanArgs),
    /// Write train/val/test manifests for one held-out environment.
    Split(SplitArgs),
    /// Train a model and save a checkpoint.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint on one subset.
    Eval(EvalArgs),
    /// Train the attention and plain heads on the same split and tabulate them.
    Compare(CompareArgs),
    /// Classify an ordered frame sequence with temporal smoothing.
    Infer(InferArgs),
    /// Gradient saliency map of one image for one class.
    Saliency(SaliencyArgs),
    /// Write a grid of augmented copies of an image.
    AugmentPreview(PreviewArgs),
    /// Time single-frame forward passes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(long)]
    data: PathBuf,
    /// Raw-class to class mapping; the built-in handwashing map by default.
    #[arg(long)]
    labelmap: Option<PathBuf>,
    /// Paths (relative to `--data`) to leave out.
    #[arg(long)]
    exclude_list: Option<PathBuf>,
    /// Manifest destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    labelmap: Option<PathBuf>,
    #[arg(long)]
    test_env: u32,
    /// Writes `<prefix>.train.tsv`, `<prefix>.val.tsv` and `<prefix>.test.tsv`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Hyperparameters shared by `train` and `compare`. Unset flags fall back to
/// the `--config` file, then to built-in defaults.
#[derive(Debug, Args)]
struct HyperArgs {
    /// `key = value` run config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    labelmap: Option<PathBuf>,
    #[arg(long)]
    test_env: Option<u32>,
    /// Backbone preset: tiny or vgg16.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Train without augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset root to scan.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pre-built manifest (instead of `--data`).
    #[arg(long, conflicts_with = "data")]
    manifest: Option<PathBuf>,
    /// Head: csab or plain.
    #[arg(long)]
    head: Option<String>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch loss and accuracy CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train, val, test, or all.
    #[arg(long, default_value = "test")]
    subset: String,
    /// Held-out environment; defaults to the one stored in the checkpoint.
    #[arg(long)]
    test_env: Option<u32>,
    /// Confusion matrix CSV.
    #[arg(long)]
    cm: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory to keep both trained checkpoints in.
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Glob for frame images; matches are taken in lexical order.
    #[arg(long)]
    frames: String,
    #[arg(long, default_value_t = csab::infer::DEFAULT_WINDOW)]
    window: usize,
    /// JSON lines destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SaliencyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Class index or class name.
    #[arg(long)]
    class: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    /// Run config with `augment.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    /// `ROWSxCOLS`.
    #[arg(long, default_value = "4x4")]
    grid: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Checkpoint to time; without it a freshly initialized model is used.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "tiny")]
    spec: String,
    #[arg(long, default_value = "csab")]
    head: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Latency CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code.
pub fn cli_run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Scan(a) => scan(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Infer(a) => infer(a),
        Command::Saliency(a) => saliency(a),
        Command::AugmentPreview(a) => augment_preview(a),
        Command::Bench(a) => bench(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => Ok(write_text(p, text)?),
        None => {
            say_raw!("{text}");
            Ok(())
        }
    }
}

fn label_map(path: Option<&Path>) -> CliResult<LabelMap> {
    Ok(path.map(LabelMap::load).transpose()?.unwrap_or_default())
}

fn scan_root(data: &Path, lm: LabelMap, exclude: Option<&Path>) -> CliResult<DatasetManifest> {
    let exclude = exclude.map(ExcludeList::load).transpose()?.unwrap_or_default();
    let (manifest, report) = scan_dataset(data, &lm, &exclude)?;
    for (path, why) in &report.skipped {
        log::warn!("skipped {}: {why}", path.display());
    }
    if manifest.is_empty() {
        return Err(CliError::Data(format!("no images found under {}", data.display())));
    }
    Ok(manifest)
}

fn scan(a: ScanArgs) -> CliResult {
    let m = scan_root(&a.data, label_map(a.labelmap.as_deref())?, a.exclude_list.as_deref())?;
    emit(a.out.as_deref(), &m.to_text())?;
    if a.out.is_some() {
        say!("{} images in {} environments, checksum {}", m.len(), m.environments().len(), m.checksum);
    }
    Ok(())
}

fn split(a: SplitArgs) -> CliResult {
    let m = DatasetManifest::load(&a.manifest, label_map(a.labelmap.as_deref())?)?;
    let halves = environment_split(&m, a.test_env)?;
    if halves.train.is_empty() {
        return Err(Error::EmptyTrainSplit.into());
    }
    let (train, val) = carve_validation(&halves.train, a.val_fraction, a.seed)?;
    for (name, records) in [("train", train), ("val", val), ("test", halves.test)] {
        let mut path = a.out_prefix.clone().into_os_string();
        path.push(format!(".{name}.tsv"));
        let n = records.len();
        DatasetManifest::new(records, m.label_map.clone())?.save(Path::new(&path))?;
        say!("{name}\t{n}\t{}", Path::new(&path).display());
    }
    Ok(())
}

/// Resolved `train`/`compare` settings: config file first, flags on top.
struct Hyper {
    config: TrainConfig,
    spec: ModelSpec,
    test_env: u32,
    head: Option<String>,
}

fn resolve(h: &HyperArgs, head: Option<&str>, manifest: &DatasetManifest) -> CliResult<Hyper> {
    let mut run = match &h.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let flags: [(&str, Option<String>); 8] = [
        ("spec", h.spec.clone()),
        ("head", head.map(str::to_string)),
        ("test_env", h.test_env.map(|v| v.to_string())),
        ("epochs", h.epochs.map(|v| v.to_string())),
        ("batch_size", h.batch.map(|v| v.to_string())),
        ("learning_rate", h.lr.map(|v| v.to_string())),
        ("momentum", h.momentum.map(|v| v.to_string())),
        ("val_fraction", h.val_fraction.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            run.set(key, v);
        }
    }
    if let Some(s) = h.seed {
        run.set("seed", s.to_string());
    }
    let mut config = TrainConfig::default().overridden_by(&run)?;
    if h.no_augment {
        config.augment = AugmentConfig::identity(config.augment.seed);
    }
    let test_env: u32 = run
        .get("test_env")?
        .ok_or_else(|| CliError::Usage("missing --test-env (or `test_env` in --config)".into()))?;
    let head = run.get_str("head").map(str::to_string);
    let mut spec = ModelSpec::preset(run.get_str("spec").unwrap_or("tiny"), HeadKind::Csab)?;
    spec.num_classes = manifest.label_map.num_classes();
    Ok(Hyper { config, spec, test_env, head })
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let lm = label_map(a.hyper.labelmap.as_deref())?;
    let manifest = match (&a.data, &a.manifest) {
        (Some(d), None) => scan_root(d, lm, None)?,
        (None, Some(m)) => DatasetManifest::load(m, lm)?,
        _ => return Err(CliError::Usage("missing required flag --data (or --manifest)".into())),
    };
    let h = resolve(&a.hyper, a.head.as_deref(), &manifest)?;
    let head = HeadKind::parse(h.head.as_deref().unwrap_or("csab"))?;
    let spec = h.spec.with_head(head);
    let split = SplitSpec::hold_out(&manifest, h.test_env)?;
    log::info!("training {} {} on {} images, test env {}", spec.backbone_name, head.as_str(), manifest.len(), h.test_env);
    let cp = train(&spec, &manifest, &split, &h.config)?;
    save_checkpoint(&cp, &a.out)?;
    if let Some(p) = &a.history {
        write_text(p, &history_csv(&cp.history))?;
    }
    if let Some(last) = cp.history.last() {
        say!(
            "epoch {} loss {:.4} train_acc {:.4} val_acc {}",
            last.epoch,
            last.train_loss,
            last.train_acc,
            last.val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    say!("saved {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let cp = load_checkpoint(&a.ckpt)?;
    let manifest = DatasetManifest::load(&a.manifest, cp.label_map.clone())?;
    let records = if a.subset == "all" {
        manifest.records.iter().filter(|r| r.mapped_class.is_some()).cloned().collect()
    } else {
        let split = match (a.test_env, &cp.split) {
            (Some(k), _) => SplitSpec::hold_out(&manifest, k)?,
            (None, Some(s)) => s.clone(),
            (None, None) => return Err(CliError::Usage("checkpoint has no split; pass --test-env".into())),
        };
        let (train, val, test) = split_records(&manifest, &split, &cp.train_config)?;
        match a.subset.as_str() {
            "train" => train,
            "val" => val,
            "test" => test,
            other => return Err(CliError::Usage(format!("unknown subset `{other}` (train, val, test or all)"))),
        }
    };
    if records.is_empty() {
        return Err(CliError::Data(format!("subset `{}` is empty", a.subset)));
    }
    let (acc, cm) = evaluate(&cp, &records)?;
    if let Some(p) = &a.cm {
        write_text(p, &cm.to_csv(cp.label_map.class_names()))?;
    }
    let metrics = format!("subset,images,correct,accuracy\n{},{},{},{acc:.6}\n", a.subset, cm.total(), cm.trace());
    match &a.out {
        Some(p) => {
            write_text(p, &metrics)?;
            say!("{} accuracy {acc:.4} ({}/{})", a.subset, cm.trace(), cm.total());
        }
        None => say_raw!("{metrics}"),
    }
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult {
    let manifest = DatasetManifest::load(&a.manifest, label_map(a.hyper.labelmap.as_deref())?)?;
    let h = resolve(&a.hyper, None, &manifest)?;
    let split = SplitSpec::hold_out(&manifest, h.test_env)?;
    let (table, checkpoints) = compare_models(&manifest, &split, &h.spec, &h.config)?;
    if let Some(p) = &a.out {
        write_text(p, &table.to_csv())?;
    }
    if let Some(dir) = &a.ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        for cp in &checkpoints {
            save_checkpoint(cp, &dir.join(format!("{}.ckpt", cp.spec.head.as_str())))?;
        }
    }
    say_raw!("{}", table.to_text());
    Ok(())
}

fn frame_paths(pattern: &str) -> CliResult<Vec<PathBuf>> {
    let entries = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad --frames pattern: {e}")))?;
    let mut paths = Vec::new();
    for entry in entries {
        paths.push(entry.map_err(|e| CliError::Data(e.to_string()))?);
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no frames match `{pattern}`")));
    }
    Ok(paths)
}

fn infer(a: InferArgs) -> CliResult {
    let smoother = TemporalSmoother::new(a.window)?;
    let cp = load_checkpoint(&a.ckpt)?;
    let frames = frame_paths(&a.frames)?;
    let result = infer_sequence(&cp.spec, &cp.params, &frames, &smoother)?;
    for f in result.per_frame.iter().filter_map(|f| f.error.as_ref()) {
        log::warn!("{f}");
    }
    emit(a.out.as_deref(), &result.to_json_lines())?;
    if a.out.is_some() {
        let names = cp.label_map.class_names();
        for s in &result.segments {
            let class = s.class.map_or("-", |c| names[c].as_str());
            say!("{}-{}\t{class}", s.start, s.end);
        }
    }
    Ok(())
}

fn saliency(a: SaliencyArgs) -> CliResult {
    let cp = load_checkpoint(&a.ckpt)?;
    let names = cp.label_map.class_names();
    let class = match a.class.parse::<usize>() {
        Ok(k) => k,
        Err(_) => names
            .iter()
            .position(|n| *n == a.class)
            .ok_or_else(|| CliError::Usage(format!("unknown class `{}`; classes: {}", a.class, names.join(", "))))?,
    };
    if class >= names.len() {
        return Err(CliError::Usage(format!("class {class} out of range 0..{}", names.len())));
    }
    let image = csab::dataset::load_image(&a.image, cp.spec.input_size)?;
    let map = saliency_map(&cp.spec, &cp.params, &image, class)?;
    let [h, w] = *map.shape() else { unreachable!("saliency map is 2-d") };
    let data = map.data().iter().flat_map(|&v| [(v * 255.0).round() as u8; 3]).collect();
    write_ppm(&a.out, &RgbImage::new(w, h, data)?)?;
    Ok(())
}

fn parse_grid(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--grid expects ROWSxCOLS, got `{s}`"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (r, c) = (r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

const GRID_GAP: usize = 2;

fn augment_preview(a: PreviewArgs) -> CliResult {
    let run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (rows, cols) = parse_grid(&a.grid)?;
    let mut cfg = AugmentConfig::default().overridden_by(&run)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let img = read_image(&a.image)?;
    let (h, w) = (img.height, img.width);
    let batch = img.to_tensor().reshape([1, h, w, 3])?;
    let (gh, gw) = (rows * h + (rows - 1) * GRID_GAP, cols * w + (cols - 1) * GRID_GAP);
    let mut canvas = Tensor::<f32>::zeros([gh, gw, 3]);
    for t in 0..rows * cols {
        let tile = augment_batch(&batch, &cfg, 0, t)?;
        let (oy, ox) = ((t / cols) * (h + GRID_GAP), (t % cols) * (w + GRID_GAP));
        for y in 0..h {
            let src = &tile.data()[y * w * 3..(y + 1) * w * 3];
            let at = ((oy + y) * gw + ox) * 3;
            canvas.data_mut()[at..at + w * 3].copy_from_slice(src);
        }
    }
    write_ppm(&a.out, &RgbImage::from_tensor(&canvas)?)?;
    say!("{rows}x{cols} grid of {w}x{h} tiles written to {}", a.out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let cp = match &a.ckpt {
        Some(p) => load_checkpoint(p)?,
        None => {
            let spec = ModelSpec::preset(&a.spec, HeadKind::parse(&a.head)?)?;
            Checkpoint {
                params: init_params(&spec, 0)?,
                spec,
                label_map: LabelMap::default(),
                train_config: TrainConfig::default(),
                split: None,
                history: vec![],
            }
        }
    };
    let stats = bench_latency(&cp.spec, &cp.params, a.iters)?;
    let csv = latency_csv(&cp.spec, &stats);
    if let Some(p) = &a.out {
        write_text(p, &csv)?;
    }
    say_raw!("{csv}");
    say!("{REFERENCE_LINE}");
    Ok(())
}
