//! End-to-end experiments: one config in, one reproducible bundle out.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::compare::{rank_swap_report, same_strategy, scatter_pairs};
use crate::error::{ConfigIssue, Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport, Metric, ReportIds};
use crate::filter::{apply_filter, builtin_spec, FilterSpec};
use crate::ingest::{export_dataset, import_dataset, parse_transactions, Counts, Dataset, Granularity, SchemaConfig};
use crate::models::{fit, Checkpoint, Hyperparameters, ModelKind, TrainingSet};
use crate::split::{
    export_split, load_split, split, SplitResult, SplitStrategy, StrategyTag, MANIFEST_FILE, SPLIT_FORMAT_VERSION,
    TEST_FILE, TRAIN_FILE, VALIDATION_FILE,
};
use crate::synth::{generate, SynthConfig, DRIFT_TRUTH_FILE};
use crate::util::{derive_seed, sha256_hex, to_json_bytes, write_file, Hasher};
use crate::TOOLKIT_VERSION;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const FAILED_MARKER: &str = "FAILED";
const KEY_FILE: &str = "cache_key";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaChoice {
    Preset(String),
    Custom(SchemaConfig),
}

impl SchemaChoice {
    pub fn resolve(&self) -> Result<SchemaConfig> {
        match self {
            SchemaChoice::Custom(s) => Ok(s.clone()),
            SchemaChoice::Preset(name) => match name.as_str() {
                "canonical" => Ok(SchemaConfig::canonical()),
                "tafeng" => Ok(SchemaConfig::tafeng()),
                "dunnhumby" => Ok(SchemaConfig::dunnhumby()),
                other => Err(Error::invalid(
                    "schema",
                    format!("unknown preset {other:?} (expected canonical, tafeng or dunnhumby)"),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synth(SynthConfig),
    /// A raw log file, or a directory written by dataset export.
    File {
        path: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        schema: Option<SchemaChoice>,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synth(cfg) => Ok(generate(cfg)?.dataset),
            DatasetSource::File { path, schema } => {
                if path.is_dir() {
                    return import_dataset(path);
                }
                let schema = schema.clone().unwrap_or(SchemaChoice::Preset("canonical".into())).resolve()?;
                parse_transactions(fs::File::open(path)?, &schema)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyEntry {
    pub label: String,
    #[serde(flatten)]
    pub strategy: SplitStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEntry {
    pub model: ModelKind,
    /// Resolved, de-duplicated hyperparameter points.
    pub points: Vec<Hyperparameters>,
}

/// A validated experiment with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Applied before every split; absent means the strategy's built-in filter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSpec>,
    pub strategies: Vec<StrategyEntry>,
    pub models: Vec<ModelEntry>,
    pub eval: EvalConfig,
    pub metrics: Vec<Metric>,
    /// Label of the strategy rank-swap tables are sorted by.
    pub reference: String,
    pub seed: u64,
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

/// Reads and validates a config file. Relative paths resolve against the
/// file's directory.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let bytes = fs::read(path)?;
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| {
        Error::Config(vec![ConfigIssue {
            path: "$".into(),
            message: format!("not valid JSON: {e}"),
        }])
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::from_value(value, base)
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn from_error(&mut self, path: &str, err: Error) {
        match err {
            Error::InvalidParameter { name, reason } => self.push(format!("{path}.{name}"), reason),
            Error::Config(list) => {
                for i in list {
                    self.push(format!("{path}.{}", i.path), i.message);
                }
            }
            other => self.push(path, other.to_string()),
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(value: Value, path: &str, issues: &mut Issues) -> Option<T> {
    serde_json::from_value(value).map_err(|e| issues.push(path, e.to_string())).ok()
}

const TOP_LEVEL: [&str; 9] = [
    "dataset", "filter", "strategies", "models", "eval", "metrics", "reference", "seed", "output_dir",
];

impl ExperimentConfig {
    /// Validates a parsed config, reporting every problem at once.
    pub fn from_value(value: Value, base: &Path) -> Result<Self> {
        let mut issues = Issues(Vec::new());
        let Value::Object(mut obj) = value else {
            return Err(Error::Config(vec![ConfigIssue {
                path: "$".into(),
                message: "expected a JSON object".into(),
            }]));
        };
        for key in obj.keys() {
            if !TOP_LEVEL.contains(&key.as_str()) {
                issues.push(key.clone(), format!("unknown field; expected one of {}", TOP_LEVEL.join(", ")));
            }
        }
        let seed = match obj.remove("seed") {
            None => 0,
            Some(v) => parse(v, "seed", &mut issues).unwrap_or(0),
        };

        let dataset = match obj.remove("dataset") {
            None => {
                issues.push("dataset", "missing");
                None
            }
            Some(v) => parse_dataset(v, base, seed, &mut issues),
        };

        let filter: Option<FilterSpec> = obj.remove("filter").and_then(|v| {
            let spec: FilterSpec = parse(v, "filter", &mut issues)?;
            spec.validate().map_err(|e| issues.from_error("filter", e)).ok()?;
            Some(spec)
        });

        let strategies = parse_strategies(obj.remove("strategies"), seed, &mut issues);
        let models = parse_models(obj.remove("models"), &mut issues);

        let eval: EvalConfig = match obj.remove("eval") {
            None => EvalConfig::default(),
            Some(v) => parse(v, "eval", &mut issues).unwrap_or_default(),
        };
        if let Err(e) = eval.validate() {
            issues.from_error("eval", e);
        }

        let metrics: Vec<Metric> = match obj.remove("metrics") {
            None => Metric::ALL.to_vec(),
            Some(Value::Array(list)) => list
                .into_iter()
                .enumerate()
                .filter_map(|(k, v)| {
                    let path = format!("metrics[{k}]");
                    match v.as_str().map(str::parse::<Metric>) {
                        Some(Ok(m)) => Some(m),
                        Some(Err(e)) => {
                            issues.push(path, e.to_string());
                            None
                        }
                        None => {
                            issues.push(path, "expected a metric name");
                            None
                        }
                    }
                })
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            Some(_) => {
                issues.push("metrics", "expected a list");
                Vec::new()
            }
        };
        if metrics.is_empty() && issues.0.iter().all(|i| !i.path.starts_with("metrics")) {
            issues.push("metrics", "must not be empty");
        }

        let labels: Vec<&str> = strategies.iter().map(|s| s.label.as_str()).collect();
        let reference = match obj.remove("reference") {
            Some(Value::String(r)) => match labels.iter().find(|l| same_strategy(l, &r)) {
                Some(l) => l.to_string(),
                None => {
                    if !labels.is_empty() {
                        issues.push("reference", format!("{r:?} is not among the strategies [{}]", labels.join(", ")));
                    }
                    r
                }
            },
            Some(_) => {
                issues.push("reference", "expected a strategy label");
                String::new()
            }
            None => labels
                .iter()
                .find(|l| same_strategy(l, StrategyTag::LeaveOneLastItem.as_str()))
                .or(labels.first())
                .map(|l| l.to_string())
                .unwrap_or_default(),
        };

        let output_dir = obj.remove("output_dir").and_then(|v| match v {
            Value::String(s) => Some(base.join(s)),
            _ => {
                issues.push("output_dir", "expected a path");
                None
            }
        });

        if !issues.0.is_empty() {
            return Err(Error::Config(issues.0));
        }
        Ok(Self {
            dataset: dataset.expect("no issues"),
            filter,
            strategies,
            models,
            eval,
            metrics,
            reference,
            seed,
            output_dir,
        })
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Number of (strategy, model, hyperparameter) tuples.
    pub fn n_tuples(&self) -> usize {
        self.strategies.len() * self.models.iter().map(|m| m.points.len()).sum::<usize>()
    }

    /// `(system id, kind, point)` for every model point; ids are the model
    /// name, suffixed with a hyperparameter digest prefix when a model has
    /// several points.
    pub fn systems(&self) -> Vec<(String, ModelKind, Hyperparameters)> {
        let mut out = Vec::new();
        for entry in &self.models {
            for hp in &entry.points {
                let id = if entry.points.len() == 1 {
                    entry.model.as_str().to_owned()
                } else {
                    format!("{}-{}", entry.model, &hp.digest()[..10])
                };
                out.push((id, entry.model, hp.clone()));
            }
        }
        out
    }

    pub fn filter_for(&self, tag: StrategyTag) -> FilterSpec {
        self.filter.clone().unwrap_or_else(|| builtin_spec(tag))
    }
}

fn parse_dataset(value: Value, base: &Path, seed: u64, issues: &mut Issues) -> Option<DatasetSource> {
    let Value::Object(mut obj) = value else {
        issues.push("dataset", "expected an object with `synth` or `file`");
        return None;
    };
    if obj.len() != 1 {
        issues.push("dataset", "expected exactly one of `synth` or `file`");
        return None;
    }
    if let Some(mut synth) = obj.remove("synth") {
        if let Value::Object(m) = &mut synth {
            m.entry("seed").or_insert_with(|| derive_seed(seed, "synth").into());
        }
        let cfg: SynthConfig = parse(synth, "dataset.synth", issues)?;
        if let Err(e) = cfg.windows() {
            issues.push("dataset.synth", e.to_string());
            return None;
        }
        return Some(DatasetSource::Synth(cfg));
    }
    if let Some(file) = obj.remove("file") {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            path: PathBuf,
            schema: Option<SchemaChoice>,
        }
        let raw: Raw = parse(file, "dataset.file", issues)?;
        let path = base.join(&raw.path);
        if !path.exists() {
            issues.push("dataset.file.path", format!("{} does not exist", path.display()));
        }
        if let Some(schema) = &raw.schema {
            if let Err(e) = schema.resolve() {
                issues.from_error("dataset.file", e);
            }
        }
        return Some(DatasetSource::File { path, schema: raw.schema });
    }
    issues.push("dataset", "expected `synth` or `file`");
    None
}

fn valid_label(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !s.starts_with('.')
}

fn parse_strategies(value: Option<Value>, seed: u64, issues: &mut Issues) -> Vec<StrategyEntry> {
    let list = match value {
        Some(Value::Array(list)) if !list.is_empty() => list,
        Some(Value::Array(_)) | None => {
            issues.push("strategies", "at least one strategy is required");
            return Vec::new();
        }
        Some(_) => {
            issues.push("strategies", "expected a list");
            return Vec::new();
        }
    };
    let mut out: Vec<StrategyEntry> = Vec::new();
    for (k, v) in list.into_iter().enumerate() {
        let path = format!("strategies[{k}]");
        let mut obj = match v {
            Value::String(tag) => Map::from_iter([("tag".to_owned(), Value::String(tag))]),
            Value::Object(obj) => obj,
            _ => {
                issues.push(path, "expected a tag or an object");
                continue;
            }
        };
        let label = match obj.remove("label") {
            Some(Value::String(l)) => Some(l),
            Some(_) => {
                issues.push(format!("{path}.label"), "expected a string");
                continue;
            }
            None => None,
        };
        let tag = match obj.get("tag").and_then(Value::as_str).map(str::parse::<StrategyTag>) {
            Some(Ok(tag)) => tag,
            Some(Err(e)) => {
                issues.from_error(&path, e);
                continue;
            }
            None => {
                issues.push(format!("{path}.tag"), format!("missing; valid tags: {}", StrategyTag::valid_tags()));
                continue;
            }
        };
        obj.insert("tag".into(), Value::String(tag.as_str().into()));
        let label = label.unwrap_or_else(|| tag.as_str().to_owned());
        if !valid_label(&label) {
            issues.push(format!("{path}.label"), format!("{label:?} may only use letters, digits, '-', '_' and '.'"));
            continue;
        }
        if tag.is_seeded() {
            obj.entry("seed").or_insert_with(|| derive_seed(seed, &format!("split/{label}")).into());
        }
        let Some(strategy) = parse::<SplitStrategy>(Value::Object(obj), &path, issues) else { continue };
        let strategy = match strategy.normalized() {
            Ok(s) => s,
            Err(e) => {
                issues.from_error(&path, e);
                continue;
            }
        };
        if out.iter().any(|e| e.label == label) {
            issues.push(format!("{path}.label"), format!("duplicate label {label:?}"));
            continue;
        }
        out.push(StrategyEntry { label, strategy });
    }
    out
}

fn expand_grid(grid: Map<String, Value>, path: &str, issues: &mut Issues) -> Vec<Value> {
    let mut points = vec![Map::new()];
    for (key, values) in grid {
        let values = match values {
            Value::Array(v) if !v.is_empty() => v,
            Value::Array(_) => {
                issues.push(format!("{path}.{key}"), "empty value list");
                return Vec::new();
            }
            scalar => vec![scalar],
        };
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in &values {
                let mut p = p.clone();
                p.insert(key.clone(), v.clone());
                next.push(p);
            }
        }
        points = next;
    }
    points.into_iter().map(Value::Object).collect()
}

fn parse_models(value: Option<Value>, issues: &mut Issues) -> Vec<ModelEntry> {
    let list = match value {
        Some(Value::Array(list)) if !list.is_empty() => list,
        Some(Value::Array(_)) | None => {
            issues.push("models", "at least one model is required");
            return Vec::new();
        }
        Some(_) => {
            issues.push("models", "expected a list");
            return Vec::new();
        }
    };
    let mut out: Vec<ModelEntry> = Vec::new();
    for (k, v) in list.into_iter().enumerate() {
        let path = format!("models[{k}]");
        let mut obj = match v {
            Value::String(name) => Map::from_iter([("model".to_owned(), Value::String(name))]),
            Value::Object(obj) => obj,
            _ => {
                issues.push(path, "expected a model name or an object");
                continue;
            }
        };
        let kind = match obj.remove("model").as_ref().and_then(Value::as_str).map(str::parse::<ModelKind>) {
            Some(Ok(kind)) => kind,
            Some(Err(e)) => {
                issues.from_error(&path, e);
                continue;
            }
            None => {
                issues.push(format!("{path}.model"), "missing; expected pop, itemknn, mfbpr or nmf");
                continue;
            }
        };
        let raw_points: Vec<(String, Value)> = match (obj.remove("hyperparameters"), obj.remove("grid"), obj.remove("points")) {
            (None, None, None) => vec![(path.clone(), Value::Object(Map::new()))],
            (Some(hp), None, None) => vec![(format!("{path}.hyperparameters"), hp)],
            (None, Some(Value::Object(grid)), None) => {
                let gpath = format!("{path}.grid");
                expand_grid(grid, &gpath, issues).into_iter().map(|p| (gpath.clone(), p)).collect()
            }
            (None, None, Some(Value::Array(points))) => points
                .into_iter()
                .enumerate()
                .map(|(n, p)| (format!("{path}.points[{n}]"), p))
                .collect(),
            _ => {
                issues.push(path, "give at most one of `hyperparameters`, `grid` (object) or `points` (list)");
                continue;
            }
        };
        for key in obj.keys() {
            issues.push(format!("{path}.{key}"), "unknown field");
        }
        let mut points: Vec<Hyperparameters> = Vec::new();
        for (ppath, raw) in raw_points {
            let Some(hp) = parse::<Hyperparameters>(raw, &ppath, issues) else { continue };
            match hp.resolved(kind) {
                Ok(hp) if !points.contains(&hp) => points.push(hp),
                Ok(_) => {}
                Err(e) => issues.from_error(&ppath, e),
            }
        }
        match out.iter_mut().find(|e| e.model == kind) {
            Some(e) => {
                for p in points {
                    if !e.points.contains(&p) {
                        e.points.push(p);
                    }
                }
            }
            None => out.push(ModelEntry { model: kind, points }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub digest: String,
    pub counts: Counts,
    pub timestamp_granularity: Granularity,
}

/// Every bundle file with its SHA-256, plus a digest over the listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleIndex {
    pub format_version: u32,
    pub toolkit_version: String,
    pub config_digest: String,
    pub files: BTreeMap<String, String>,
    pub bundle_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub bundle_digest: String,
    pub reports: Vec<EvalReport>,
    pub reused_splits: usize,
    pub reused_runs: usize,
}

/// Files written under the bundle root, by relative path.
#[derive(Default)]
struct Written(BTreeSet<String>);

impl Written {
    fn write(&mut self, root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&root.join(rel), bytes)?;
        self.0.insert(rel.to_owned());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, root: &Path, rel: &str, value: &T) -> Result<()> {
        self.write(root, rel, &to_json_bytes(value)?)
    }

    fn csv(&mut self, root: &Path, rel: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(root, rel, &buf)
    }
}

fn stage_error(stage: &str, context: String, source: Error) -> Error {
    Error::Stage {
        stage: stage.into(),
        context,
        source: Box::new(source),
    }
}

struct PreparedSplit {
    label: String,
    dataset: Dataset,
    split: SplitResult,
    reused: bool,
}

fn prepare_split(
    config: &ExperimentConfig,
    entry: &StrategyEntry,
    dataset: &Dataset,
    root: &Path,
) -> Result<(PreparedSplit, Vec<String>)> {
    let ctx = || format!("strategy={}", entry.label);
    let spec = config.filter_for(entry.strategy.tag);
    let filtered = apply_filter(dataset, &spec).map_err(|e| stage_error("filter", ctx(), e))?;
    let dir_rel = format!("splits/{}", entry.label);
    let dir = root.join(&dir_rel);
    let mut key = Hasher::new();
    key.bytes(filtered.digest().as_bytes())
        .bytes(entry.strategy.cache_key().as_bytes())
        .u64(SPLIT_FORMAT_VERSION as u64)
        .bytes(TOOLKIT_VERSION.as_bytes());
    let key = key.hex();

    let cached = fs::read_to_string(dir.join(KEY_FILE)).ok().filter(|k| k.trim() == key);
    let (split, reused) = match cached.and_then(|_| load_split(&dir, &filtered).ok()) {
        Some(s) => (s, true),
        None => {
            let s = split(&filtered, &entry.strategy).map_err(|e| stage_error("split", ctx(), e))?;
            export_split(&s, &dir)?;
            write_file(&dir.join(KEY_FILE), format!("{key}\n").as_bytes())?;
            (s, false)
        }
    };
    write_file(&dir.join("filter.json"), &to_json_bytes(&spec)?)?;
    let files = [TRAIN_FILE, VALIDATION_FILE, TEST_FILE, MANIFEST_FILE, KEY_FILE, "filter.json"]
        .iter()
        .map(|f| format!("{dir_rel}/{f}"))
        .collect();
    Ok((
        PreparedSplit {
            label: entry.label.clone(),
            dataset: filtered,
            split,
            reused,
        },
        files,
    ))
}

struct Tuple<'a> {
    prepared: &'a PreparedSplit,
    system: &'a str,
    kind: ModelKind,
    hp: &'a Hyperparameters,
}

/// Trains and evaluates one tuple, reusing a cached report when its key
/// matches. Returns the report, whether it was reused and the files owned.
fn run_tuple(config: &ExperimentConfig, t: &Tuple, root: &Path) -> Result<(EvalReport, bool, Vec<String>)> {
    let rel = format!("runs/{}/{}", t.prepared.label, t.system);
    let dir = root.join(&rel);
    let model_seed = derive_seed(config.seed, &format!("train/{}", t.system));
    let mut key = Hasher::new();
    key.bytes(t.prepared.split.digest().as_bytes())
        .bytes(t.kind.as_str().as_bytes())
        .bytes(t.hp.digest().as_bytes())
        .u64(model_seed)
        .bytes(&serde_json::to_vec(&config.eval)?)
        .bytes(t.system.as_bytes())
        .bytes(TOOLKIT_VERSION.as_bytes());
    let key = key.hex();
    let files = ["model.json", "report.json", "per_user.csv", KEY_FILE]
        .iter()
        .map(|f| format!("{rel}/{f}"))
        .collect();

    let cached = fs::read_to_string(dir.join(KEY_FILE)).ok().filter(|k| k.trim() == key);
    if cached.is_some() && dir.join("model.json").is_file() && dir.join("per_user.csv").is_file() {
        if let Ok(report) = serde_json::from_slice::<EvalReport>(&fs::read(dir.join("report.json"))?) {
            let _ = fs::remove_file(dir.join(FAILED_MARKER));
            return Ok((report, true, files));
        }
    }

    let ctx = || format!("strategy={} model={} hp={}", t.prepared.label, t.kind, t.hp.digest());
    let outcome = (|| {
        let (ds, split) = (&t.prepared.dataset, &t.prepared.split);
        let train = TrainingSet::from_split(ds, split);
        let model = fit(t.kind, &train, t.hp, model_seed).map_err(|e| stage_error("train", ctx(), e))?;
        Checkpoint::new(model.clone(), t.hp.clone(), model_seed, split.digest()).save(&dir.join("model.json"))?;
        let ids = ReportIds {
            model: t.kind.as_str().to_owned(),
            system: t.system.to_owned(),
            hp_digest: t.hp.digest(),
            strategy: t.prepared.label.clone(),
            dataset: ds.digest(),
        };
        let report = evaluate(&model, ds, split, &config.eval, ids).map_err(|e| stage_error("eval", ctx(), e))?;
        write_file(&dir.join("report.json"), &to_json_bytes(&report)?)?;
        let mut rows = Vec::new();
        report.write_per_user_csv(&mut rows)?;
        write_file(&dir.join("per_user.csv"), &rows)?;
        write_file(&dir.join(KEY_FILE), format!("{key}\n").as_bytes())?;
        Ok(report)
    })();
    match outcome {
        Ok(report) => {
            let _ = fs::remove_file(dir.join(FAILED_MARKER));
            Ok((report, false, files))
        }
        Err(e) => {
            let e = match e {
                Error::Stage { .. } => e,
                other => stage_error("run", ctx(), other),
            };
            let _ = fs::remove_file(dir.join(KEY_FILE));
            write_file(&dir.join(FAILED_MARKER), format!("{e}\n").as_bytes())?;
            Err(e)
        }
    }
}

/// Runs every (strategy, model, hyperparameter) tuple and writes the bundle
/// to `out`. Splits and runs whose cache keys match are reused.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let mut written = Written::default();
    written.json(out, "config.json", config)?;

    let dataset = config.dataset.load().map_err(|e| stage_error("ingest", "dataset".into(), e))?;
    let source = match &config.dataset {
        DatasetSource::Synth(cfg) => {
            let synth = generate(cfg)?;
            export_dataset(&synth.dataset, &out.join("dataset"), false)?;
            for f in [crate::ingest::INTERACTIONS_FILE, crate::ingest::USERS_FILE, crate::ingest::ITEMS_FILE, crate::ingest::BASKETS_FILE] {
                written.0.insert(format!("dataset/{f}"));
            }
            written.json(out, &format!("dataset/{DRIFT_TRUTH_FILE}"), &synth.truth)?;
            "synth".to_owned()
        }
        DatasetSource::File { path, .. } => path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    written.json(
        out,
        "dataset.json",
        &DatasetManifest {
            source,
            digest: dataset.digest(),
            counts: dataset.counts(),
            timestamp_granularity: dataset.granularity(),
        },
    )?;

    let prepared: Vec<(PreparedSplit, Vec<String>)> = config
        .strategies
        .par_iter()
        .map(|entry| prepare_split(config, entry, &dataset, out))
        .collect::<Result<_>>()?;
    let reused_splits = prepared.iter().filter(|(p, _)| p.reused).count();
    for (_, files) in &prepared {
        written.0.extend(files.iter().cloned());
    }

    let systems = config.systems();
    let tuples: Vec<Tuple> = prepared
        .iter()
        .flat_map(|(p, _)| {
            systems.iter().map(move |(id, kind, hp)| Tuple {
                prepared: p,
                system: id,
                kind: *kind,
                hp,
            })
        })
        .collect();
    let outcomes: Vec<Result<(EvalReport, bool, Vec<String>)>> =
        tuples.par_iter().map(|t| run_tuple(config, t, out)).collect();
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut reused_runs = 0;
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok((report, reused, files)) => {
                reused_runs += reused as usize;
                written.0.extend(files);
                reports.push(report);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    if systems.len() >= 2 {
        for &metric in &config.metrics {
            let name = metric.as_str();
            let ctx = || format!("metric={name}");
            if config.strategies.len() >= 2 {
                let table = rank_swap_report(&reports, metric, &config.reference).map_err(|e| stage_error("compare", ctx(), e))?;
                written.write(out, &format!("compare/{name}.txt"), table.render_text().as_bytes())?;
                written.json(out, &format!("compare/{name}.json"), &table)?;
                written.csv(out, &format!("compare/{name}.csv"), |b| table.write_csv(b))?;
            }
            let scatters = scatter_pairs(&reports, metric).map_err(|e| stage_error("compare", ctx(), e))?;
            let mut taus = Vec::new();
            for s in &scatters {
                written.csv(out, &format!("scatter/{name}/{}__{}.csv", s.x_strategy, s.y_strategy), |b| s.write_csv(b))?;
                taus.push(serde_json::json!({
                    "x_strategy": s.x_strategy,
                    "y_strategy": s.y_strategy,
                    "points": s.points.len(),
                    "tau": s.tau,
                }));
            }
            written.json(out, &format!("scatter/{name}/tau.json"), &taus)?;
        }
    }

    let mut files = BTreeMap::new();
    for rel in &written.0 {
        files.insert(rel.clone(), sha256_hex(&fs::read(out.join(rel))?));
    }
    let bundle_digest = sha256_hex(&serde_json::to_vec(&files)?);
    let index = BundleIndex {
        format_version: BUNDLE_FORMAT_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_owned(),
        config_digest: config.digest(),
        files,
        bundle_digest: bundle_digest.clone(),
    };
    write_file(&out.join("bundle.json"), &to_json_bytes(&index)?)?;
    Ok(RunSummary {
        bundle_digest,
        reports,
        reused_splits,
        reused_runs,
    })
}
