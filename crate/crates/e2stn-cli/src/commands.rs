use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use e2stn::benchmark::{ablation_benchmark, benchmark_train_config};
use e2stn::classifier::export_contribution;
use e2stn::config::TrainConfig;
use e2stn::data::container::{load_dataset, write_dataset};
use e2stn::data::protocol::{build_protocol, Fold, ProtocolSpec};
use e2stn::data::synthetic::{generate_synthetic, SyntheticSpec};
use e2stn::data::Dataset;
use e2stn::metrics::{evaluate_fold, graph_feature_maps, write_confusion_csv, FoldResult};
use e2stn::report::{build_report, TTEST_CAVEAT};
use e2stn::training::{read_trace_csv, train, write_trace_csv, Checkpoint, DataDims, Model};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T = ()> = Result<T, CliError>;

trait Ctx<T> {
    fn usage(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> Ctx<T> for Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| CliError::Usage(e.to_string()))
    }
    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.to_string()))
    }
}

#[derive(Parser)]
#[command(
    name = "e2stn",
    version,
    about = "EEG style transfer network: train, evaluate and analyze cross-dataset emotion recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-domain benchmark datasets
    GenSynthetic(GenSyntheticArgs),
    /// Train on a source dataset with one target subject as the style pool
    Train(TrainArgs),
    /// Evaluate a checkpoint on target-subject folds
    Eval(EvalArgs),
    /// Run the full-vs-discriminative-only comparison on synthetic data
    Ablate(AblateArgs),
    /// Grid-search the loss weights on one fold
    Sweep(SweepArgs),
    /// Aggregate a run directory into report.json
    Report(ReportArgs),
    /// Export per-channel contribution scores from graph features
    Contribution(ContributionArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// synthetic spec JSON; defaults are used when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ProtocolArgs {
    /// source dataset manifest (.json)
    #[arg(long)]
    source: PathBuf,
    /// target dataset manifest (.json)
    #[arg(long)]
    target: PathBuf,
    /// class subset size of the cross-dataset protocol
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// target subject id; defaults to the first subject
    #[arg(long)]
    subject: Option<u32>,
}

#[derive(Args)]
struct TrainOverrides {
    /// training config JSON; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// style loss weight
    #[arg(long)]
    lambda: Option<f64>,
    /// identity loss weight
    #[arg(long)]
    nu: Option<f64>,
    /// cross-entropy weight
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// train the discriminative module alone on source labels
    #[arg(long)]
    no_transfer: bool,
    /// scaled dot-product attention (off reproduces the unscaled formula)
    #[arg(long, value_enum)]
    attn_scale: Option<Toggle>,
    /// keep the evaluation conv stack frozen at its random initialization
    #[arg(long, value_enum)]
    freeze_eval_conv: Option<Toggle>,
}

impl TrainOverrides {
    fn resolve(&self, base: Option<TrainConfig>) -> CliResult<TrainConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                TrainConfig::from_json(&text).usage()?
            }
            (None, Some(b)) => b,
            (None, None) => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.nu {
            cfg.nu = v;
        }
        if let Some(v) = self.xi {
            cfg.xi = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if self.no_transfer {
            cfg.ablation = true;
        }
        if let Some(t) = self.attn_scale {
            cfg.model.attn_scale = t.as_bool();
        }
        if let Some(t) = self.freeze_eval_conv {
            cfg.freeze_eval_conv = t.as_bool();
        }
        cfg.validate().usage()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// comma-separated training/generation seeds
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// synthetic spec JSON; benchmark defaults when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    /// training config JSON; benchmark defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// comma-separated style-weight grid
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,2.0")]
    lambdas: Vec<f64>,
    /// comma-separated identity-weight grid
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    nus: Vec<f64>,
    /// comma-separated cross-entropy-weight grid
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    xis: Vec<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// directory holding eval_subject_*.json and optional config/metrics files
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct ContributionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// dataset manifest whose trials are pushed through the graph features
    #[arg(long)]
    data: PathBuf,
    /// restrict to one subject
    #[arg(long)]
    subject: Option<u32>,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenSynthetic(args) => gen_synthetic(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Report(args) => run_report(args),
        Command::Contribution(args) => run_contribution(args),
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("cannot parse {what} {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).runtime()?;
    std::fs::write(path, text + "\n").runtime()
}

fn gen_synthetic(args: GenSyntheticArgs) -> CliResult {
    let spec: SyntheticSpec = match &args.spec {
        Some(path) => read_json_file(path, "synthetic spec")?,
        None => SyntheticSpec::default(),
    };
    spec.validate().usage()?;
    let (source, target) = generate_synthetic(&spec, args.seed).runtime()?;
    std::fs::create_dir_all(&args.out_dir).runtime()?;
    for (stem, ds) in [("source", &source), ("target", &target)] {
        write_dataset(
            &args.out_dir,
            stem,
            &ds.manifest.name,
            &ds.manifest.channel_names,
            &ds.manifest.band_names,
            &ds.manifest.class_names,
            &ds.trials,
        )
        .runtime()?;
    }
    write_json(&args.out_dir.join("synthetic_spec.json"), &spec)?;
    println!(
        "wrote source ({} trials) and target ({} trials) under {}",
        source.trials.len(),
        target.trials.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn protocol_spec(classes: usize) -> CliResult<ProtocolSpec> {
    match classes {
        3 => Ok(ProtocolSpec::three_class()),
        4 => Ok(ProtocolSpec::four_class()),
        n => Err(CliError::Usage(format!(
            "unsupported class subset {n}; expected 3 or 4"
        ))),
    }
}

struct LoadedProtocol {
    folds: Vec<Fold>,
    class_names: Vec<String>,
    dims: DataDims,
}

fn load_protocol(args: &ProtocolArgs) -> CliResult<LoadedProtocol> {
    let spec = protocol_spec(args.classes)?;
    let source = load_dataset(&args.source).usage()?;
    let target = load_dataset(&args.target).usage()?;
    let folds = build_protocol(&spec, &source, &target).usage()?;
    let dims = DataDims {
        channels: source.manifest.channel_count(),
        bands: source.manifest.band_count(),
        classes: spec.class_count(),
    };
    Ok(LoadedProtocol {
        folds,
        class_names: spec.canonical_names(),
        dims,
    })
}

fn select_fold<'a>(folds: &'a [Fold], subject: Option<u32>) -> CliResult<&'a Fold> {
    match subject {
        None => Ok(&folds[0]),
        Some(id) => folds.iter().find(|f| f.target_subject == id).ok_or_else(|| {
            let available: Vec<String> =
                folds.iter().map(|f| f.target_subject.to_string()).collect();
            CliError::Usage(format!(
                "target subject {id} not found; available: {}",
                available.join(", ")
            ))
        }),
    }
}

fn run_train(args: TrainArgs) -> CliResult {
    let cfg = args.overrides.resolve(None)?;
    let loaded = load_protocol(&args.protocol)?;
    let fold = select_fold(&loaded.folds, args.protocol.subject)?;
    std::fs::create_dir_all(&args.out_dir).runtime()?;

    let outcome = train(&cfg, &fold.train_source, &fold.unlabeled_target).runtime()?;
    let ckpt = outcome.checkpoint().runtime()?;
    ckpt.save(&args.out_dir.join("checkpoint.e2stn")).runtime()?;
    write_trace_csv(&args.out_dir.join("metrics.csv"), &outcome.trace).runtime()?;
    std::fs::write(args.out_dir.join("config.json"), ckpt.config_json.as_bytes()).runtime()?;
    let last = outcome.trace.last();
    println!(
        "trained {} epochs on subject-{} fold; final loss {}; artifacts in {}",
        outcome.trace.len(),
        fold.target_subject,
        last.map(|t| format!("{:.4}", t.total)).unwrap_or_default(),
        args.out_dir.display()
    );
    Ok(())
}

fn checkpoint_dims_match(ckpt: &Checkpoint, dims: &DataDims) -> CliResult {
    let ws = ckpt.params.get("clf.w_s").usage()?;
    let fc2 = ckpt.params.get("clf.fc2_w").usage()?;
    if ws.shape != [dims.channels, dims.channels] || fc2.shape[1] != dims.classes {
        return Err(CliError::Usage(format!(
            "checkpoint dims (channels {}, classes {}) do not match data (channels {}, classes {})",
            ws.shape[0], fc2.shape[1], dims.channels, dims.classes
        )));
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> CliResult {
    let loaded = load_protocol(&args.protocol)?;
    let ckpt = Checkpoint::load(&args.checkpoint).usage()?;
    checkpoint_dims_match(&ckpt, &loaded.dims)?;
    let model = Model::from_checkpoint(&ckpt, loaded.dims).usage()?;
    std::fs::create_dir_all(&args.out_dir).runtime()?;

    let folds: Vec<&Fold> = match args.protocol.subject {
        Some(_) => vec![select_fold(&loaded.folds, args.protocol.subject)?],
        None => loaded.folds.iter().collect(),
    };
    for fold in folds {
        let result = evaluate_fold(&model, fold).runtime()?;
        write_json(
            &args
                .out_dir
                .join(format!("eval_subject_{}.json", fold.target_subject)),
            &EvalArtifact {
                class_names: loaded.class_names.clone(),
                result: result.clone(),
            },
        )?;
        write_confusion_csv(
            &args
                .out_dir
                .join(format!("confusion_subject_{}.csv", fold.target_subject)),
            &result.confusion,
            &loaded.class_names,
        )
        .runtime()?;
        println!(
            "subject {}: accuracy {:.4} over {} trials",
            fold.target_subject,
            result.accuracy,
            result.confusion.total()
        );
    }
    Ok(())
}

fn run_ablate(args: AblateArgs) -> CliResult {
    let spec: SyntheticSpec = match &args.spec {
        Some(path) => read_json_file(path, "synthetic spec")?,
        None => SyntheticSpec::default(),
    };
    spec.validate().usage()?;
    let base_cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            TrainConfig::from_json(&text).usage()?
        }
        None => benchmark_train_config(),
    };
    if args.seeds.len() < 2 {
        return Err(CliError::Usage("need at least 2 seeds".into()));
    }
    std::fs::create_dir_all(&args.out_dir).runtime()?;

    let outcome = ablation_benchmark(&spec, &base_cfg, &args.seeds, |s| {
        println!(
            "seed {}: full {:.4} vs ablation {:.4}",
            s.seed, s.full_acc, s.ablation_acc
        );
    })
    .runtime()?;

    #[derive(serde::Serialize)]
    struct AblationReport<'a> {
        outcome: &'a e2stn::benchmark::AblationOutcome,
        caveats: [&'a str; 1],
    }
    write_json(
        &args.out_dir.join("ablation.json"),
        &AblationReport {
            outcome: &outcome,
            caveats: [TTEST_CAVEAT],
        },
    )?;
    println!(
        "full {:.4} vs ablation {:.4}: +{:.1} points, one-sided p = {:.4}",
        outcome.mean_full, outcome.mean_ablation, outcome.delta_points, outcome.p_one_sided
    );
    Ok(())
}

fn worker_cap(jobs: usize) -> CliResult<usize> {
    let default = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = match std::env::var("E2STN_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("bad E2STN_THREADS value `{v}`")))?,
        Err(_) => default,
    };
    Ok(cap.min(jobs).max(1))
}

fn run_sweep(args: SweepArgs) -> CliResult {
    let base = args.overrides.resolve(None)?;
    let loaded = load_protocol(&args.protocol)?;
    let fold = select_fold(&loaded.folds, args.protocol.subject)?;
    std::fs::create_dir_all(&args.out_dir).runtime()?;

    let mut grid = Vec::new();
    for &lambda in &args.lambdas {
        for &nu in &args.nus {
            for &xi in &args.xis {
                let mut cfg = base.clone();
                cfg.lambda = lambda;
                cfg.nu = nu;
                cfg.xi = xi;
                cfg.validate().usage()?;
                grid.push(cfg);
            }
        }
    }
    let workers = worker_cap(grid.len())?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(f64, f64, f64, f64)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<String>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= grid.len() {
                    break;
                }
                let cfg = &grid[i];
                let run = train(cfg, &fold.train_source, &fold.unlabeled_target)
                    .and_then(|outcome| evaluate_fold(&outcome.model, fold));
                match run {
                    Ok(result) => {
                        results
                            .lock()
                            .unwrap()
                            .push((cfg.lambda, cfg.nu, cfg.xi, result.accuracy));
                        println!(
                            "lambda {} nu {} xi {}: accuracy {:.4}",
                            cfg.lambda, cfg.nu, cfg.xi, result.accuracy
                        );
                    }
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e.to_string());
                        break;
                    }
                }
            });
        }
    });
    if let Some(msg) = failure.into_inner().unwrap() {
        return Err(CliError::Runtime(msg));
    }

    let mut rows = results.into_inner().unwrap();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut csv = String::from("lambda,nu,xi,accuracy\n");
    for (lambda, nu, xi, acc) in &rows {
        csv.push_str(&format!("{lambda},{nu},{xi},{acc}\n"));
    }
    std::fs::write(args.out_dir.join("sweep.csv"), csv).runtime()?;
    println!("swept {} configurations with {workers} workers", rows.len());
    Ok(())
}

/// On-disk schema of `eval_subject_<id>.json`: the fold result plus the
/// canonical class names, so `report` can label the confusion matrices.
#[derive(serde::Serialize, serde::Deserialize)]
struct EvalArtifact {
    class_names: Vec<String>,
    #[serde(flatten)]
    result: FoldResult,
}

fn run_report(args: ReportArgs) -> CliResult {
    let dir = &args.run_dir;
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut fold_files: Vec<PathBuf> = std::fs::read_dir(dir)
        .runtime()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("eval_subject_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    fold_files.sort();
    if fold_files.is_empty() {
        return Err(CliError::Usage(format!(
            "no eval_subject_*.json files in {}",
            dir.display()
        )));
    }
    let artifacts: Vec<EvalArtifact> = fold_files
        .iter()
        .map(|p| read_json_file(p, "fold result"))
        .collect::<CliResult<_>>()?;
    let class_names = artifacts[0].class_names.clone();
    let folds: Vec<FoldResult> = artifacts.into_iter().map(|a| a.result).collect();

    let config_json = std::fs::read_to_string(dir.join("config.json")).unwrap_or_else(|_| "{}".into());
    let trace = read_trace_csv(&dir.join("metrics.csv")).ok();
    let report = build_report(&config_json, &class_names, &folds, trace.as_deref()).runtime()?;
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "report.json: mean accuracy {:.4} (std {:.4}) over {} folds",
        report.mean_acc,
        report.std_acc,
        report.folds.len()
    );
    Ok(())
}

fn run_contribution(args: ContributionArgs) -> CliResult {
    let dataset: Dataset = load_dataset(&args.data).usage()?;
    let ckpt = Checkpoint::load(&args.checkpoint).usage()?;
    let dims = DataDims {
        channels: dataset.manifest.channel_count(),
        bands: dataset.manifest.band_count(),
        classes: dataset.manifest.class_count(),
    };
    checkpoint_dims_match(&ckpt, &dims)?;
    let model = Model::from_checkpoint(&ckpt, dims).usage()?;

    let trials: Vec<e2stn::data::LabeledTrial> = match args.subject {
        Some(id) => dataset
            .trials
            .iter()
            .filter(|t| t.subject == id)
            .cloned()
            .collect(),
        None => dataset.trials.clone(),
    };
    if trials.is_empty() {
        return Err(CliError::Usage("no trials selected for contribution export".into()));
    }
    let maps = graph_feature_maps(&model, &trials).runtime()?;
    let contribution =
        export_contribution(&maps, &dataset.manifest.channel_names).runtime()?;
    std::fs::create_dir_all(&args.out_dir).runtime()?;
    write_json(&args.out_dir.join("contribution.json"), &contribution)?;
    println!(
        "contribution.json over {} trials, {} channels",
        trials.len(),
        contribution.channels.len()
    );
    Ok(())
}
