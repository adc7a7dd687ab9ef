use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use splitkit::compare::{rank_swap_report, scatter_pairs};
use splitkit::eval::{evaluate, CandidateMode, EvalConfig, EvalReport, Metric, Relevance, ReportIds};
use splitkit::experiment::{run_experiment, validate_config, ExperimentConfig, SchemaChoice};
use splitkit::filter::{apply_filter, builtin_spec, FilterSpec};
use splitkit::ingest::{export_dataset, import_dataset, parse_transactions, Dataset, SchemaConfig};
use splitkit::models::{fit, Checkpoint, Hyperparameters, ModelKind, TrainingSet};
use splitkit::split::{export_release, leakage_report, load_release, read_manifest, split, RatioUnit, SplitStrategy, StrategyTag};
use splitkit::synth::{generate, SynthConfig, DRIFT_TRUTH_FILE};
use splitkit::util::{derive_seed, to_json_bytes, write_file};
use splitkit::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "splitkit", version, about = "Dataset splitting and leakage analysis for recommender evaluation")]
struct Cli {
    /// Global seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw transaction log into the canonical dataset format.
    Ingest {
        input: PathBuf,
        /// canonical, tafeng, dunnhumby, or a JSON schema file.
        #[arg(long, default_value = "canonical")]
        schema: String,
        #[arg(long)]
        compress: bool,
    },
    /// Generate a synthetic log with popularity drift.
    Synth {
        /// JSON synth config; defaults to a small drifting log.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Apply k-core style filtering to a dataset.
    Filter {
        dataset: PathBuf,
        /// A strategy tag whose built-in filter to use.
        #[arg(long, conflicts_with = "spec")]
        strategy: Option<String>,
        /// JSON filter spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Split a dataset and write a release directory.
    Split {
        dataset: PathBuf,
        #[arg(long)]
        strategy: String,
        #[command(flatten)]
        params: SplitParams,
        /// `builtin` (the strategy's filter), `none`, or a JSON spec file.
        #[arg(long, default_value = "builtin")]
        filter: String,
    },
    /// Fit a model on a split's train partition.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        split: PathBuf,
        /// JSON hyperparameter file.
        #[arg(long)]
        hp: Option<PathBuf>,
    },
    /// Evaluate a trained model on a split's test partition.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// System name in the report; defaults to the model kind.
        #[arg(long)]
        system: Option<String>,
        #[command(flatten)]
        params: EvalParams,
    },
    /// Build rank-swap tables and τ from evaluation reports.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "l1i")]
        reference: String,
        #[arg(long, default_value = "ndcg")]
        metric: String,
        /// Also write scatter data for every strategy pair to this directory.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Run a whole experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Validate and print the normalized config without running.
        #[arg(long)]
        check: bool,
    },
    /// Inspect a split, bundle, dataset directory or checkpoint.
    Manifest { path: PathBuf },
}

#[derive(Args)]
struct SplitParams {
    #[arg(long)]
    test_ratio: Option<f64>,
    #[arg(long)]
    valid_ratio: Option<f64>,
    #[arg(long)]
    fold_in_ratio: Option<f64>,
    #[arg(long)]
    min_history: Option<usize>,
    /// baskets or interactions (temporal-global).
    #[arg(long)]
    ratio_unit: Option<String>,
    /// Apply the intersection rule (true/false); default depends on the strategy.
    #[arg(long)]
    intersection: Option<bool>,
}

#[derive(Args)]
struct EvalParams {
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// `full` or `sampled:<negatives>[:<seed>]`.
    #[arg(long, default_value = "full")]
    candidates: String,
    /// basket-union or item.
    #[arg(long, default_value = "basket-union")]
    relevance: String,
    #[arg(long)]
    include_train_items: bool,
    #[arg(long)]
    truncated_recall: bool,
    /// Also write per-user rows to this CSV file.
    #[arg(long)]
    per_user: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Stage) => 4,
        Some(ErrorKind::Data) => 3,
        None if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) => 2,
        None => 3,
    }
}

/// A usage problem detected by the front end itself.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn require_out(out: &Option<PathBuf>) -> anyhow::Result<&Path> {
    out.as_deref().ok_or_else(|| usage("--out is required for this command"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn parse_kebab<T: serde::de::DeserializeOwned>(flag: &str, raw: &str) -> anyhow::Result<T> {
    serde_json::from_value(Value::String(raw.to_owned())).map_err(|e| usage(format!("--{flag}: {e}")))
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    print!("{}", String::from_utf8(to_json_bytes(value)?)?);
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("--threads: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest { input, schema, compress } => {
            let schema = resolve_schema(&schema)?;
            let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let ds = parse_transactions(file, &schema)?;
            export_dataset(&ds, require_out(&cli.out)?, compress)?;
            print_json(&ds.counts())
        }
        Command::Synth { config } => {
            let cfg = match config {
                Some(path) => {
                    let mut v: Value = read_json(&path)?;
                    if let Value::Object(m) = &mut v {
                        if cli.seed.is_some() || !m.contains_key("seed") {
                            m.insert("seed".into(), derive_seed(seed, "synth").into());
                        }
                    }
                    serde_json::from_value(v).map_err(|e| usage(format!("{}: {e}", path.display())))?
                }
                None => SynthConfig::small(derive_seed(seed, "synth")),
            };
            let s = generate(&cfg)?;
            let out = require_out(&cli.out)?;
            export_dataset(&s.dataset, out, false)?;
            s.truth.save(&out.join(DRIFT_TRUTH_FILE))?;
            print_json(&s.dataset.counts())
        }
        Command::Filter { dataset, strategy, spec } => {
            let ds = dataset_dir(&dataset)?;
            let spec = match (strategy, spec) {
                (Some(tag), _) => builtin_spec(tag.parse()?),
                (None, Some(path)) => read_json(&path)?,
                (None, None) => return Err(usage("give --strategy or --spec")),
            };
            let filtered = apply_filter(&ds, &spec)?;
            export_dataset(&filtered, require_out(&cli.out)?, false)?;
            eprintln!("filter: {spec}");
            print_json(&filtered.counts())
        }
        Command::Split { dataset, strategy, params, filter } => {
            let tag: StrategyTag = strategy.parse()?;
            let mut s = SplitStrategy::new(tag);
            s.test_ratio = params.test_ratio;
            s.valid_ratio = params.valid_ratio;
            s.fold_in_ratio = params.fold_in_ratio;
            s.min_history = params.min_history;
            s.intersection = params.intersection;
            s.ratio_unit = params.ratio_unit.as_deref().map(|u| parse_kebab::<RatioUnit>("ratio-unit", u)).transpose()?;
            if tag.is_seeded() {
                s.seed = Some(derive_seed(seed, &format!("split/{tag}")));
            }
            let ds = dataset_dir(&dataset)?;
            let spec: FilterSpec = match filter.as_str() {
                "builtin" => builtin_spec(tag),
                "none" => FilterSpec::identity(),
                path => read_json(Path::new(path))?,
            };
            let ds = apply_filter(&ds, &spec)?;
            let result = split(&ds, &s)?;
            export_release(&result, &ds, require_out(&cli.out)?, false)?;
            print_json(&result.manifest)?;
            let leak = leakage_report(&result, &ds)?;
            eprintln!(
                "leakage_fraction={} per_user_boundary_spread={}",
                leak.leakage_fraction, leak.per_user_boundary_spread
            );
            Ok(())
        }
        Command::Train { model, split, hp } => {
            let kind: ModelKind = model.parse()?;
            let hp: Hyperparameters = match hp {
                Some(path) => read_json(&path)?,
                None => Hyperparameters::default(),
            };
            let hp = hp.resolved(kind)?;
            let (ds, result) = release(&split)?;
            let train = TrainingSet::from_split(&ds, &result);
            let model_seed = derive_seed(seed, &format!("train/{kind}"));
            let fitted = fit(kind, &train, &hp, model_seed)?;
            let ckpt = Checkpoint::new(fitted, hp, model_seed, result.digest());
            ckpt.save(require_out(&cli.out)?)?;
            eprintln!("model digest {}", ckpt.model.digest());
            Ok(())
        }
        Command::Eval { model, split, system, params } => {
            let ckpt = Checkpoint::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let (ds, result) = release(&split)?;
            if ckpt.split_digest != result.digest() {
                return Err(Error::Verification(format!(
                    "{} was trained on split {}, not {}",
                    model.display(),
                    ckpt.split_digest,
                    result.digest()
                ))
                .into());
            }
            let config = EvalConfig {
                k: params.k,
                candidates: params.candidates.parse::<CandidateMode>()?,
                exclude_train_items: !params.include_train_items,
                relevance: parse_kebab::<Relevance>("relevance", &params.relevance)?,
                truncated_recall: params.truncated_recall,
            };
            let ids = ReportIds {
                model: ckpt.kind.as_str().to_owned(),
                system: system.unwrap_or_else(|| ckpt.kind.as_str().to_owned()),
                hp_digest: ckpt.hyperparameters.digest(),
                strategy: result.strategy.tag.as_str().to_owned(),
                dataset: ds.digest(),
            };
            let report = evaluate(&ckpt.model, &ds, &result, &config, ids)?;
            if let Some(path) = params.per_user {
                let mut rows = Vec::new();
                report.write_per_user_csv(&mut rows)?;
                write_file(&path, &rows)?;
            }
            match &cli.out {
                Some(out) => write_file(out, &to_json_bytes(&report)?)?,
                None => print_json(&report)?,
            }
            eprintln!(
                "{}={:.6} {}={:.6} users={}",
                Metric::Ndcg.label(config.k),
                report.mean_ndcg,
                Metric::Recall.label(config.k),
                report.mean_recall,
                report.evaluated_users
            );
            Ok(())
        }
        Command::Compare { reports, reference, metric, scatter } => {
            let metric: Metric = metric.parse()?;
            let reports: Vec<EvalReport> = reports.iter().map(|p| read_json(p)).collect::<anyhow::Result<_>>()?;
            let table = rank_swap_report(&reports, metric, &reference)?;
            match &cli.out {
                None => print!("{}", table.render_text()),
                Some(out) => match out.extension().and_then(|e| e.to_str()) {
                    Some("txt") => write_file(out, table.render_text().as_bytes())?,
                    Some("json") => write_file(out, &to_json_bytes(&table)?)?,
                    Some("csv") => {
                        let mut buf = Vec::new();
                        table.write_csv(&mut buf)?;
                        write_file(out, &buf)?;
                    }
                    _ => {
                        write_file(&out.with_extension("txt"), table.render_text().as_bytes())?;
                        write_file(&out.with_extension("json"), &to_json_bytes(&table)?)?;
                        let mut buf = Vec::new();
                        table.write_csv(&mut buf)?;
                        write_file(&out.with_extension("csv"), &buf)?;
                    }
                },
            }
            if let Some(dir) = scatter {
                for s in scatter_pairs(&reports, metric)? {
                    let mut buf = Vec::new();
                    s.write_csv(&mut buf)?;
                    write_file(&dir.join(format!("{}__{}.csv", s.x_strategy, s.y_strategy)), &buf)?;
                    match s.tau {
                        Some(t) => eprintln!("tau({}, {}) = {t:.4}", s.x_strategy, s.y_strategy),
                        None => eprintln!("tau({}, {}) undefined", s.x_strategy, s.y_strategy),
                    }
                }
            }
            Ok(())
        }
        Command::Run { config, check } => {
            let cfg = load_config(&config, cli.seed)?;
            if check {
                return print_json(&cfg);
            }
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| usage("give --out or `output_dir` in the config"))?;
            let summary = run_experiment(&cfg, &out)?;
            eprintln!(
                "{} reports ({} reused), {} splits reused",
                summary.reports.len(),
                summary.reused_runs,
                summary.reused_splits
            );
            println!("{}", summary.bundle_digest);
            Ok(())
        }
        Command::Manifest { path } => inspect(&path),
    }
}

fn release(dir: &Path) -> anyhow::Result<(Dataset, splitkit::split::SplitResult)> {
    load_release(dir).with_context(|| format!("loading split {}", dir.display()))
}

fn dataset_dir(dir: &Path) -> anyhow::Result<Dataset> {
    import_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn resolve_schema(raw: &str) -> anyhow::Result<SchemaConfig> {
    let path = Path::new(raw);
    if path.is_file() {
        return read_json(path);
    }
    Ok(SchemaChoice::Preset(raw.to_owned()).resolve()?)
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let Some(seed) = seed else {
        return Ok(validate_config(path)?);
    };
    let mut value: Value = read_json(path)?;
    if let Value::Object(m) = &mut value {
        m.insert("seed".into(), seed.into());
    }
    Ok(ExperimentConfig::from_value(value, path.parent().unwrap_or(Path::new(".")))?)
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        return print_json(&Checkpoint::load(path).map(|c| {
            serde_json::json!({
                "kind": c.kind,
                "hyperparameters": c.hyperparameters,
                "seed": c.seed,
                "split_digest": c.split_digest,
                "model_digest": c.model.digest(),
                "toolkit_version": c.toolkit_version,
            })
        })?);
    }
    if path.join("bundle.json").is_file() {
        let v: Value = read_json(&path.join("bundle.json"))?;
        return print_json(&v);
    }
    if path.join("manifest.json").is_file() {
        return print_json(&read_manifest(path)?);
    }
    if path.is_dir() {
        let ds: Dataset = import_dataset(path)?;
        return print_json(&serde_json::json!({
            "digest": ds.digest(),
            "counts": ds.counts(),
            "timestamp_granularity": ds.granularity(),
        }));
    }
    bail!(Error::Verification(format!("{} is not a split, bundle, dataset or checkpoint", path.display())))
}
