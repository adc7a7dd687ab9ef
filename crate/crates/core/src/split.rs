//! Train/validation/test splitting strategies, split manifests and leakage
//! measurement.
//!
//! Every splitter assigns each interaction of a (filtered) dataset to train,
//! validation, test, or to a dropped bucket with a recorded reason. The
//! three partitions are pairwise disjoint and, together with the dropped
//! interactions, cover the dataset exactly.
//!
//! Release directories written by [`export_release`] contain:
//!
//! ```text
//! train.idx  validation.idx  test.idx   sorted interaction row indices
//! manifest.json                         counts, parameters, digests
//! dataset/                              the dataset the indices refer to
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, Counts, Dataset, Granularity};
use crate::util::{ceil_count, floor_count, sha256_hex, to_json_bytes, write_file, Hasher};
use crate::TOOLKIT_VERSION;

pub const SPLIT_FORMAT_VERSION: u32 = 1;
pub const TRAIN_FILE: &str = "train.idx";
pub const VALIDATION_FILE: &str = "validation.idx";
pub const TEST_FILE: &str = "test.idx";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_DIR: &str = "dataset";

const DEFAULT_RATIO: f64 = 0.2;
const DEFAULT_FOLD_IN: f64 = 0.5;
const DEFAULT_MIN_HISTORY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyTag {
    LeaveOneLastItem,
    LeaveOneLastBasket,
    TemporalUser,
    TemporalGlobal,
    RandomLeaveOne,
    RandomRatio,
    UserSplit,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 7] = [
        StrategyTag::LeaveOneLastItem,
        StrategyTag::LeaveOneLastBasket,
        StrategyTag::TemporalUser,
        StrategyTag::TemporalGlobal,
        StrategyTag::RandomLeaveOne,
        StrategyTag::RandomRatio,
        StrategyTag::UserSplit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyTag::LeaveOneLastItem => "leave-one-last-item",
            StrategyTag::LeaveOneLastBasket => "leave-one-last-basket",
            StrategyTag::TemporalUser => "temporal-user",
            StrategyTag::TemporalGlobal => "temporal-global",
            StrategyTag::RandomLeaveOne => "random-leave-one",
            StrategyTag::RandomRatio => "random-ratio",
            StrategyTag::UserSplit => "user-split",
        }
    }

    /// Short alias accepted wherever a tag is parsed.
    pub fn short(self) -> &'static str {
        match self {
            StrategyTag::LeaveOneLastItem => "l1i",
            StrategyTag::LeaveOneLastBasket => "l1b",
            StrategyTag::TemporalUser => "tu",
            StrategyTag::TemporalGlobal => "tem",
            StrategyTag::RandomLeaveOne => "rlo",
            StrategyTag::RandomRatio => "rr",
            StrategyTag::UserSplit => "us",
        }
    }

    pub fn valid_tags() -> String {
        Self::ALL
            .iter()
            .map(|t| format!("{} ({})", t.as_str(), t.short()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn boundary_type(self) -> BoundaryType {
        match self {
            StrategyTag::TemporalGlobal => BoundaryType::Global,
            _ => BoundaryType::PerUser,
        }
    }

    pub fn is_seeded(self) -> bool {
        matches!(
            self,
            StrategyTag::RandomLeaveOne | StrategyTag::RandomRatio | StrategyTag::UserSplit
        )
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.short() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "strategy",
                    format!("unknown tag {s:?}; valid tags: {}", Self::valid_tags()),
                )
            })
    }
}

/// Whether temporal-global ratios count baskets or interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioUnit {
    Baskets,
    Interactions,
}

/// A strategy tag plus its parameters. Parameters that do not apply to the
/// tag are cleared by [`SplitStrategy::normalized`]; applicable ones left
/// unset receive their defaults there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitStrategy {
    pub tag: StrategyTag,
    /// Test share; for `user-split`, the share of users in the test cohort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_in_ratio: Option<f64>,
    /// Minimum interactions (or baskets) per user for leave-one strategies.
    /// 2 keeps users without a validation row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_history: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_unit: Option<RatioUnit>,
    /// Drop held-out interactions whose user or item is absent from train.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<bool>,
}

impl SplitStrategy {
    pub fn new(tag: StrategyTag) -> Self {
        Self {
            tag,
            test_ratio: None,
            valid_ratio: None,
            seed: None,
            fold_in_ratio: None,
            min_history: None,
            ratio_unit: None,
            intersection: None,
        }
    }

    pub fn with_ratios(mut self, test: f64, valid: f64) -> Self {
        self.test_ratio = Some(test);
        self.valid_ratio = Some(valid);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Fills defaults, clears inapplicable parameters and validates ranges.
    pub fn normalized(&self) -> Result<SplitStrategy> {
        use StrategyTag::*;
        let tag = self.tag;
        let mut out = SplitStrategy::new(tag);
        let uses_ratios = matches!(tag, TemporalUser | TemporalGlobal | RandomRatio);
        if uses_ratios || tag == UserSplit {
            out.test_ratio = Some(self.test_ratio.unwrap_or(DEFAULT_RATIO));
        }
        if uses_ratios {
            out.valid_ratio = Some(self.valid_ratio.unwrap_or(DEFAULT_RATIO));
        }
        if tag == UserSplit {
            out.fold_in_ratio = Some(self.fold_in_ratio.unwrap_or(DEFAULT_FOLD_IN));
        }
        if matches!(tag, LeaveOneLastItem | LeaveOneLastBasket | RandomLeaveOne) {
            out.min_history = Some(self.min_history.unwrap_or(DEFAULT_MIN_HISTORY));
        }
        if tag == TemporalGlobal {
            out.ratio_unit = Some(self.ratio_unit.unwrap_or(RatioUnit::Baskets));
        }
        out.intersection = Some(
            self.intersection
                .unwrap_or(matches!(tag, TemporalGlobal | UserSplit)),
        );
        if tag.is_seeded() {
            out.seed = Some(self.seed.ok_or_else(|| {
                Error::invalid("seed", format!("required for strategy {tag}"))
            })?);
        }
        for (name, value) in [("test_ratio", out.test_ratio), ("valid_ratio", out.valid_ratio)] {
            if let Some(r) = value {
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::invalid(name, format!("{r} is outside (0, 1)")));
                }
            }
        }
        if let Some(r) = out.fold_in_ratio {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid("fold_in_ratio", format!("{r} is outside [0, 1)")));
            }
        }
        if let Some(m) = out.min_history {
            if m < 2 {
                return Err(Error::invalid("min_history", "must be at least 2"));
            }
        }
        Ok(out)
    }

    /// Stable key over the normalized parameters, used for caching.
    pub fn cache_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("strategy serializes");
        sha256_hex(&json)
    }

    fn test_ratio(&self) -> f64 {
        self.test_ratio.unwrap_or(DEFAULT_RATIO)
    }

    fn valid_ratio(&self) -> f64 {
        self.valid_ratio.unwrap_or(DEFAULT_RATIO)
    }

    fn min_history(&self) -> usize {
        self.min_history.unwrap_or(DEFAULT_MIN_HISTORY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    TooFewInteractions,
    TooFewBaskets,
    ColdUser,
    ColdItem,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TooFewInteractions => "too-few-interactions",
            DropReason::TooFewBaskets => "too-few-baskets",
            DropReason::ColdUser => "cold-user",
            DropReason::ColdItem => "cold-item",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
    Dropped(DropReason),
}

/// How the validation partition is meant to be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationRole {
    /// Held-out rows for model selection.
    Holdout,
    /// Prefixes of test users' histories, visible at inference time.
    FoldIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryType {
    PerUser,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub users: usize,
    pub items: usize,
    pub baskets: usize,
    pub interactions: usize,
    /// SHA-256 of the partition's index file.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DroppedStats {
    pub count: usize,
    pub reasons: BTreeMap<String, usize>,
}

/// Self-describing record of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub toolkit_version: String,
    pub strategy: SplitStrategy,
    pub dataset_digest: String,
    pub dataset: Counts,
    pub timestamp_granularity: Granularity,
    pub train: PartitionStats,
    pub validation: PartitionStats,
    pub test: PartitionStats,
    pub validation_role: ValidationRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_timestamp: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_boundary_timestamp: Option<i64>,
    pub dropped: DroppedStats,
    pub leakage_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: SplitManifest,
    manifest_digest: String,
}

fn manifest_digest(m: &SplitManifest) -> String {
    sha256_hex(&serde_json::to_vec(m).expect("manifest serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub strategy: SplitStrategy,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub manifest: SplitManifest,
}

impl SplitResult {
    /// Partition membership of every interaction of `dataset`.
    pub fn parts(&self, dataset: &Dataset) -> Vec<Option<Part>> {
        let mut parts = vec![None; dataset.len()];
        for &i in &self.train {
            parts[i] = Some(Part::Train);
        }
        for &i in &self.validation {
            parts[i] = Some(Part::Validation);
        }
        for &i in &self.test {
            parts[i] = Some(Part::Test);
        }
        parts
    }

    pub fn dropped_count(&self) -> usize {
        self.manifest.dropped.count
    }

    /// Short content key of the partitions.
    pub fn digest(&self) -> String {
        let mut h = Hasher::new();
        h.bytes(self.manifest.dataset_digest.as_bytes())
            .bytes(self.manifest.train.digest.as_bytes())
            .bytes(self.manifest.validation.digest.as_bytes())
            .bytes(self.manifest.test.digest.as_bytes());
        h.hex()
    }
}

/// Splits `dataset` with any strategy.
pub fn split(dataset: &Dataset, strategy: &SplitStrategy) -> Result<SplitResult> {
    let s = strategy.normalized()?;
    let (parts, bounds) = match s.tag {
        StrategyTag::LeaveOneLastItem => (assign_leave_one_last_item(dataset, s.min_history()), None),
        StrategyTag::LeaveOneLastBasket => (assign_leave_one_last_basket(dataset, s.min_history()), None),
        StrategyTag::TemporalUser => (
            assign_temporal_user(dataset, s.test_ratio(), s.valid_ratio()),
            None,
        ),
        StrategyTag::TemporalGlobal => {
            let (parts, b) = assign_temporal_global(
                dataset,
                s.test_ratio(),
                s.valid_ratio(),
                s.ratio_unit.unwrap_or(RatioUnit::Baskets),
            )?;
            (parts, Some(b))
        }
        StrategyTag::RandomLeaveOne => (
            assign_random_leave_one(dataset, s.seed.expect("normalized"), s.min_history()),
            None,
        ),
        StrategyTag::RandomRatio => (
            assign_random_ratio(dataset, s.seed.expect("normalized"), s.test_ratio(), s.valid_ratio()),
            None,
        ),
        StrategyTag::UserSplit => (
            assign_user_split(
                dataset,
                s.seed.expect("normalized"),
                s.test_ratio(),
                s.fold_in_ratio.unwrap_or(DEFAULT_FOLD_IN),
            )?,
            None,
        ),
    };
    finalize(dataset, s, parts, bounds)
}

pub fn split_leave_one_last_item(dataset: &Dataset) -> Result<SplitResult> {
    split(dataset, &SplitStrategy::new(StrategyTag::LeaveOneLastItem))
}

pub fn split_leave_one_last_basket(dataset: &Dataset) -> Result<SplitResult> {
    split(dataset, &SplitStrategy::new(StrategyTag::LeaveOneLastBasket))
}

pub fn split_temporal_user(dataset: &Dataset, test_ratio: f64, valid_ratio: f64) -> Result<SplitResult> {
    split(
        dataset,
        &SplitStrategy::new(StrategyTag::TemporalUser).with_ratios(test_ratio, valid_ratio),
    )
}

pub fn split_temporal_global(dataset: &Dataset, test_ratio: f64, valid_ratio: f64) -> Result<SplitResult> {
    split(
        dataset,
        &SplitStrategy::new(StrategyTag::TemporalGlobal).with_ratios(test_ratio, valid_ratio),
    )
}

/// `tag` must be `random-leave-one` or `random-ratio`.
pub fn split_random(dataset: &Dataset, tag: StrategyTag, seed: u64) -> Result<SplitResult> {
    if !matches!(tag, StrategyTag::RandomLeaveOne | StrategyTag::RandomRatio) {
        return Err(Error::invalid("strategy", format!("{tag} is not a random strategy")));
    }
    split(dataset, &SplitStrategy::new(tag).with_seed(seed))
}

pub fn split_user(dataset: &Dataset, test_user_ratio: f64, fold_in_ratio: f64, seed: u64) -> Result<SplitResult> {
    let mut s = SplitStrategy::new(StrategyTag::UserSplit).with_seed(seed);
    s.test_ratio = Some(test_user_ratio);
    s.fold_in_ratio = Some(fold_in_ratio);
    split(dataset, &s)
}

fn assign_leave_one_last_item(ds: &Dataset, min_history: usize) -> Vec<Part> {
    let mut parts = vec![Part::Train; ds.len()];
    for chron in ds.chronologies() {
        let n = chron.len();
        if n < min_history {
            for &i in chron {
                parts[i] = Part::Dropped(DropReason::TooFewInteractions);
            }
            continue;
        }
        parts[chron[n - 1]] = Part::Test;
        if n >= 3 {
            parts[chron[n - 2]] = Part::Validation;
        }
    }
    parts
}

fn assign_leave_one_last_basket(ds: &Dataset, min_history: usize) -> Vec<Part> {
    let mut parts = vec![Part::Train; ds.len()];
    for u in 0..ds.n_users() as u32 {
        let baskets = ds.user_baskets(u);
        let nb = baskets.len();
        if nb < min_history {
            for b in &baskets {
                for &i in *b {
                    parts[i] = Part::Dropped(DropReason::TooFewBaskets);
                }
            }
            continue;
        }
        for &i in baskets[nb - 1] {
            parts[i] = Part::Test;
        }
        if nb >= 3 {
            for &i in baskets[nb - 2] {
                parts[i] = Part::Validation;
            }
        }
    }
    parts
}

/// Per-user sizes for ratio splits: `(train, validation, test)`, or `None`
/// when the training share would be empty.
fn ratio_sizes(n: usize, test_ratio: f64, valid_ratio: f64) -> Option<(usize, usize, usize)> {
    let test = ceil_count(test_ratio, n);
    let rest = n - test;
    let valid = ceil_count(valid_ratio, rest);
    let train = rest - valid;
    (train > 0 && test > 0).then_some((train, valid, test))
}

fn assign_temporal_user(ds: &Dataset, test_ratio: f64, valid_ratio: f64) -> Vec<Part> {
    let mut parts = vec![Part::Train; ds.len()];
    for chron in ds.chronologies() {
        match ratio_sizes(chron.len(), test_ratio, valid_ratio) {
            None => {
                for &i in chron {
                    parts[i] = Part::Dropped(DropReason::TooFewInteractions);
                }
            }
            Some((train, valid, _)) => {
                for &i in &chron[train..train + valid] {
                    parts[i] = Part::Validation;
                }
                for &i in &chron[train + valid..] {
                    parts[i] = Part::Test;
                }
            }
        }
    }
    parts
}

/// Boundary timestamps of a temporal-global split.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    test: i64,
    validation: Option<i64>,
}

/// Position of the first element of the smallest suffix of `weights` whose
/// total reaches `⌈ratio · Σweights⌉`.
fn suffix_cut(weights: &[usize], ratio: f64) -> usize {
    let total: usize = weights.iter().sum();
    let target = ceil_count(ratio, total);
    let mut acc = 0;
    let mut cut = weights.len();
    while cut > 0 && acc < target {
        cut -= 1;
        acc += weights[cut];
    }
    cut
}

/// Moves `cut` right past baskets sharing the timestamp of the basket just
/// before it, so ties at a boundary stay on the earlier side.
fn settle_ties(times: &[i64], mut cut: usize, end: usize) -> usize {
    if cut == 0 {
        return 0;
    }
    while cut < end && times[cut] == times[cut - 1] {
        cut += 1;
    }
    cut
}

fn assign_temporal_global(
    ds: &Dataset,
    test_ratio: f64,
    valid_ratio: f64,
    unit: RatioUnit,
) -> Result<(Vec<Part>, Bounds)> {
    // Interactions are ordered by (timestamp, basket), so basket runs appear
    // in global (timestamp, basket index) order.
    let mut basket_of = Vec::with_capacity(ds.len());
    let mut times: Vec<i64> = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    let mut seen = vec![usize::MAX; ds.n_baskets()];
    for x in ds.interactions() {
        let b = x.basket as usize;
        if seen[b] == usize::MAX {
            seen[b] = times.len();
            times.push(x.timestamp);
            weights.push(0);
        }
        let pos = seen[b];
        weights[pos] += 1;
        basket_of.push(pos);
    }
    let n = times.len();
    if n == 0 {
        return Err(Error::EmptySplit("dataset has no baskets".into()));
    }
    if times[0] == times[n - 1] {
        return Err(Error::DegenerateBoundary(format!(
            "all {n} baskets share timestamp {}",
            times[0]
        )));
    }
    let unit_weights: Vec<usize> = match unit {
        RatioUnit::Baskets => vec![1; n],
        RatioUnit::Interactions => weights,
    };
    let raw_test_cut = suffix_cut(&unit_weights, test_ratio);
    let test_cut = settle_ties(&times, raw_test_cut.max(1), n);
    if test_cut >= n {
        return Err(Error::DegenerateBoundary(format!(
            "every basket from the test boundary onwards shares timestamp {}",
            times[n - 1]
        )));
    }
    let raw_valid_cut = suffix_cut(&unit_weights[..test_cut], valid_ratio);
    let valid_cut = settle_ties(&times, raw_valid_cut, test_cut);
    if valid_cut == 0 {
        return Err(Error::EmptySplit(
            "validation share leaves no training baskets".into(),
        ));
    }
    let parts = basket_of
        .into_iter()
        .map(|pos| {
            if pos >= test_cut {
                Part::Test
            } else if pos >= valid_cut {
                Part::Validation
            } else {
                Part::Train
            }
        })
        .collect();
    let bounds = Bounds {
        test: times[test_cut - 1],
        validation: (valid_cut < test_cut).then(|| times[valid_cut - 1]),
    };
    Ok((parts, bounds))
}

fn user_rng(seed: u64, ds: &Dataset, user: u32) -> ChaCha8Rng {
    let mut h = Hasher::new();
    h.u64(seed)
        .bytes(ds.users().id(user).as_bytes())
        .u64(ds.chronologies()[user as usize].len() as u64);
    ChaCha8Rng::seed_from_u64(h.seed())
}

fn assign_random_leave_one(ds: &Dataset, seed: u64, min_history: usize) -> Vec<Part> {
    let mut parts = vec![Part::Train; ds.len()];
    for (u, chron) in ds.chronologies().iter().enumerate() {
        let n = chron.len();
        if n < min_history {
            for &i in chron {
                parts[i] = Part::Dropped(DropReason::TooFewInteractions);
            }
            continue;
        }
        let mut rng = user_rng(seed, ds, u as u32);
        let t = rng.gen_range(0..n);
        parts[chron[t]] = Part::Test;
        if n >= 3 {
            let mut v = rng.gen_range(0..n - 1);
            if v >= t {
                v += 1;
            }
            parts[chron[v]] = Part::Validation;
        }
    }
    parts
}

fn assign_random_ratio(ds: &Dataset, seed: u64, test_ratio: f64, valid_ratio: f64) -> Vec<Part> {
    let mut parts = vec![Part::Train; ds.len()];
    for (u, chron) in ds.chronologies().iter().enumerate() {
        let n = chron.len();
        match ratio_sizes(n, test_ratio, valid_ratio) {
            None => {
                for &i in chron {
                    parts[i] = Part::Dropped(DropReason::TooFewInteractions);
                }
            }
            Some((_, valid, test)) => {
                let mut rng = user_rng(seed, ds, u as u32);
                let picked = index::sample(&mut rng, n, test + valid);
                for (k, pos) in picked.iter().enumerate() {
                    parts[chron[pos]] = if k < test { Part::Test } else { Part::Validation };
                }
            }
        }
    }
    parts
}

fn assign_user_split(ds: &Dataset, seed: u64, test_user_ratio: f64, fold_in_ratio: f64) -> Result<Vec<Part>> {
    let n_users = ds.n_users();
    if n_users < 2 {
        return Err(Error::EmptySplit(format!("user split needs at least 2 users, found {n_users}")));
    }
    let cohort = ceil_count(test_user_ratio, n_users);
    if cohort == 0 || cohort >= n_users {
        return Err(Error::EmptySplit(format!(
            "test cohort of {cohort} out of {n_users} users leaves a side empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::util::derive_seed(seed, "user-split"));
    let mut parts = vec![Part::Train; ds.len()];
    for u in index::sample(&mut rng, n_users, cohort).iter() {
        let chron = &ds.chronologies()[u];
        let fold_in = floor_count(fold_in_ratio, chron.len()).min(chron.len().saturating_sub(1));
        for (k, &i) in chron.iter().enumerate() {
            parts[i] = if k < fold_in { Part::Validation } else { Part::Test };
        }
    }
    Ok(parts)
}

/// Drops held-out interactions of users or items that never occur in train.
fn apply_intersection(ds: &Dataset, parts: &mut [Part], tag: StrategyTag) {
    let mut train_users = vec![false; ds.n_users()];
    let mut train_items = vec![false; ds.n_items()];
    for (x, p) in ds.interactions().iter().zip(parts.iter()) {
        if *p == Part::Train {
            train_users[x.user as usize] = true;
            train_items[x.item as usize] = true;
        }
    }
    // Test users of a user split are cold by construction; only their
    // fold-out items are checked.
    let check_users = tag != StrategyTag::UserSplit;
    for (x, p) in ds.interactions().iter().zip(parts.iter_mut()) {
        let held_out = match p {
            Part::Test => true,
            Part::Validation => check_users,
            _ => false,
        };
        if !held_out {
            continue;
        }
        if check_users && !train_users[x.user as usize] {
            *p = Part::Dropped(DropReason::ColdUser);
        } else if !train_items[x.item as usize] {
            *p = Part::Dropped(DropReason::ColdItem);
        }
    }
}

fn finalize(ds: &Dataset, strategy: SplitStrategy, mut parts: Vec<Part>, bounds: Option<Bounds>) -> Result<SplitResult> {
    if strategy.intersection == Some(true) {
        apply_intersection(ds, &mut parts, strategy.tag);
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut dropped = DroppedStats::default();
    for (i, p) in parts.iter().enumerate() {
        match p {
            Part::Train => train.push(i),
            Part::Validation => validation.push(i),
            Part::Test => test.push(i),
            Part::Dropped(r) => {
                dropped.count += 1;
                *dropped.reasons.entry(r.as_str().to_owned()).or_default() += 1;
            }
        }
    }
    if train.is_empty() {
        return Err(Error::EmptySplit(format!("{} produced an empty training set", strategy.tag)));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit(format!("{} produced an empty test set", strategy.tag)));
    }
    let validation_role = if strategy.tag == StrategyTag::UserSplit {
        ValidationRole::FoldIn
    } else {
        ValidationRole::Holdout
    };
    let leakage = leakage_fraction(ds, &train, &test);
    let manifest = SplitManifest {
        format_version: SPLIT_FORMAT_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_owned(),
        strategy: strategy.clone(),
        dataset_digest: ds.digest(),
        dataset: ds.counts(),
        timestamp_granularity: ds.granularity(),
        train: partition_stats(ds, &train),
        validation: partition_stats(ds, &validation),
        test: partition_stats(ds, &test),
        validation_role,
        boundary_timestamp: bounds.map(|b| b.test),
        validation_boundary_timestamp: bounds.and_then(|b| b.validation),
        dropped,
        leakage_fraction: leakage,
    };
    Ok(SplitResult {
        strategy,
        train,
        validation,
        test,
        manifest,
    })
}

pub fn index_file_bytes(indices: &[usize]) -> Vec<u8> {
    let mut out = String::with_capacity(indices.len() * 7);
    for i in indices {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

fn partition_stats(ds: &Dataset, indices: &[usize]) -> PartitionStats {
    let mut users = HashSet::new();
    let mut items = HashSet::new();
    let mut baskets = HashSet::new();
    for &i in indices {
        let x = ds.interaction(i);
        users.insert(x.user);
        items.insert(x.item);
        baskets.insert(x.basket);
    }
    PartitionStats {
        users: users.len(),
        items: items.len(),
        baskets: baskets.len(),
        interactions: indices.len(),
        digest: sha256_hex(&index_file_bytes(indices)),
    }
}

fn leakage_fraction(ds: &Dataset, train: &[usize], test: &[usize]) -> f64 {
    let Some(earliest) = test.iter().map(|&i| ds.interaction(i).timestamp).min() else {
        return 0.0;
    };
    if train.is_empty() {
        return 0.0;
    }
    let leaked = train
        .iter()
        .filter(|&&i| ds.interaction(i).timestamp > earliest)
        .count();
    leaked as f64 / train.len() as f64
}

/// Future-information leakage of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Share of train interactions strictly later than the earliest test
    /// interaction.
    pub leakage_fraction: f64,
    /// Max minus min of the per-user train/test boundary timestamps.
    pub per_user_boundary_spread: i64,
    pub boundary_type: BoundaryType,
}

pub fn leakage_report(split: &SplitResult, dataset: &Dataset) -> Result<LeakageReport> {
    if split.test.is_empty() {
        return Err(Error::EmptySplit("leakage needs a non-empty test set".into()));
    }
    let boundary_type = split.strategy.tag.boundary_type();
    let spread = match boundary_type {
        BoundaryType::Global => 0,
        BoundaryType::PerUser => {
            let mut first_test: BTreeMap<u32, i64> = BTreeMap::new();
            for &i in &split.test {
                let x = dataset.interaction(i);
                let e = first_test.entry(x.user).or_insert(x.timestamp);
                *e = (*e).min(x.timestamp);
            }
            let lo = first_test.values().min().copied().unwrap_or(0);
            let hi = first_test.values().max().copied().unwrap_or(0);
            hi - lo
        }
    };
    Ok(LeakageReport {
        leakage_fraction: leakage_fraction(dataset, &split.train, &split.test),
        per_user_boundary_spread: spread,
        boundary_type,
    })
}

/// Writes the index files and the manifest.
pub fn export_split(split: &SplitResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join(TRAIN_FILE), &index_file_bytes(&split.train))?;
    write_file(&dir.join(VALIDATION_FILE), &index_file_bytes(&split.validation))?;
    write_file(&dir.join(TEST_FILE), &index_file_bytes(&split.test))?;
    let file = ManifestFile {
        manifest: split.manifest.clone(),
        manifest_digest: manifest_digest(&split.manifest),
    };
    write_file(&dir.join(MANIFEST_FILE), &to_json_bytes(&file)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<SplitManifest> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let found = value.get("format_version").and_then(|v| v.as_u64());
    if found != Some(SPLIT_FORMAT_VERSION as u64) {
        return Err(Error::FormatVersion {
            what: format!("{}", dir.join(MANIFEST_FILE).display()),
            found: found.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
            expected: SPLIT_FORMAT_VERSION,
        });
    }
    let file: ManifestFile = serde_json::from_value(value)?;
    if manifest_digest(&file.manifest) != file.manifest_digest {
        return Err(Error::Verification(format!(
            "{}: manifest digest mismatch (file edited?)",
            dir.display()
        )));
    }
    Ok(file.manifest)
}

fn read_indices(path: &Path, expected_digest: &str, n: usize) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != expected_digest {
        return Err(Error::Verification(format!("{}: content digest mismatch", path.display())));
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::Verification(format!("{}: not UTF-8", path.display())))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let i: usize = line.parse().map_err(|_| Error::Malformed {
            line: k as u64 + 1,
            message: format!("{}: bad index {line:?}", path.display()),
        })?;
        if i >= n {
            return Err(Error::Verification(format!("{}: index {i} out of range", path.display())));
        }
        if out.last().is_some_and(|&prev| prev >= i) {
            return Err(Error::Verification(format!("{}: indices not strictly increasing", path.display())));
        }
        out.push(i);
    }
    Ok(out)
}

/// Loads a split written by [`export_split`] and re-verifies it against
/// `dataset`: manifest digest, partition file digests, recomputed counts,
/// disjointness and leakage.
pub fn load_split(dir: &Path, dataset: &Dataset) -> Result<SplitResult> {
    let manifest = read_manifest(dir)?;
    if manifest.dataset_digest != dataset.digest() {
        return Err(Error::Verification(format!(
            "{}: split was made from dataset {} but {} was supplied",
            dir.display(),
            manifest.dataset_digest,
            dataset.digest()
        )));
    }
    let n = dataset.len();
    let train = read_indices(&dir.join(TRAIN_FILE), &manifest.train.digest, n)?;
    let validation = read_indices(&dir.join(VALIDATION_FILE), &manifest.validation.digest, n)?;
    let test = read_indices(&dir.join(TEST_FILE), &manifest.test.digest, n)?;

    let mut seen = vec![false; n];
    for &i in train.iter().chain(&validation).chain(&test) {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Verification(format!("interaction {i} appears in two partitions")));
        }
    }
    let covered = train.len() + validation.len() + test.len();
    let reasons: usize = manifest.dropped.reasons.values().sum();
    let checks = [
        ("train", partition_stats(dataset, &train) == manifest.train),
        ("validation", partition_stats(dataset, &validation) == manifest.validation),
        ("test", partition_stats(dataset, &test) == manifest.test),
        ("dataset counts", dataset.counts() == manifest.dataset),
        ("dropped count", covered + manifest.dropped.count == n && reasons == manifest.dropped.count),
        (
            "leakage",
            leakage_fraction(dataset, &train, &test) == manifest.leakage_fraction,
        ),
        ("strategy", manifest.strategy.normalized().ok().as_ref() == Some(&manifest.strategy)),
    ];
    if let Some((what, _)) = checks.iter().find(|(_, ok)| !ok) {
        return Err(Error::Verification(format!(
            "{}: manifest {what} disagrees with the partition files",
            dir.display()
        )));
    }
    Ok(SplitResult {
        strategy: manifest.strategy.clone(),
        train,
        validation,
        test,
        manifest,
    })
}

/// Writes a self-contained split release: the split files plus the dataset
/// they index into.
pub fn export_release(split: &SplitResult, dataset: &Dataset, dir: &Path, compress: bool) -> Result<()> {
    ingest::export_dataset(dataset, &dir.join(DATASET_DIR), compress)?;
    export_split(split, dir)
}

pub fn load_release(dir: &Path) -> Result<(Dataset, SplitResult)> {
    let dataset = ingest::import_dataset(&dir.join(DATASET_DIR))?;
    let split = load_split(dir, &dataset)?;
    Ok((dataset, split))
}

/// Distinct users of a partition, ascending.
pub fn partition_users(dataset: &Dataset, indices: &[usize]) -> BTreeSet<u32> {
    indices.iter().map(|&i| dataset.interaction(i).user).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_transactions, SchemaConfig};

    /// rows: (user, item, basket, timestamp)
    fn dataset(rows: &[(&str, &str, &str, i64)]) -> Dataset {
        let mut text = String::from("user,item,basket,timestamp,quantity\n");
        for (u, i, b, t) in rows {
            text.push_str(&format!("{u},{i},{b},{t},1\n"));
        }
        parse_transactions(text.as_bytes(), &SchemaConfig::canonical()).unwrap()
    }

    fn times(ds: &Dataset, idx: &[usize]) -> Vec<i64> {
        idx.iter().map(|&i| ds.interaction(i).timestamp).collect()
    }

    fn items(ds: &Dataset, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| ds.items().id(ds.interaction(i).item).to_owned()).collect()
    }

    #[test]
    fn tags_parse_long_and_short() {
        for t in StrategyTag::ALL {
            assert_eq!(t.as_str().parse::<StrategyTag>().unwrap(), t);
            assert_eq!(t.short().parse::<StrategyTag>().unwrap(), t);
        }
        let err = "k-fold".parse::<StrategyTag>().unwrap_err().to_string();
        assert!(err.contains("leave-one-last-item"), "{err}");
    }

    #[test]
    fn normalization_validates_and_defaults() {
        let s = SplitStrategy::new(StrategyTag::TemporalGlobal).normalized().unwrap();
        assert_eq!((s.test_ratio, s.valid_ratio), (Some(0.2), Some(0.2)));
        assert_eq!(s.intersection, Some(true));
        assert_eq!(s.ratio_unit, Some(RatioUnit::Baskets));

        let s = SplitStrategy::new(StrategyTag::LeaveOneLastItem).with_seed(4).normalized().unwrap();
        assert_eq!(s.seed, None);
        assert_eq!(s.intersection, Some(false));
        assert_eq!(s.min_history, Some(3));

        assert!(SplitStrategy::new(StrategyTag::RandomRatio).normalized().is_err());
        for bad in [0.0, 1.0, 1.2, -0.1] {
            let s = SplitStrategy::new(StrategyTag::TemporalUser).with_ratios(bad, 0.1);
            assert!(s.normalized().is_err(), "{bad}");
        }
    }

    #[test]
    fn leave_one_last_item_three_events() {
        let ds = dataset(&[("u", "a", "b1", 1), ("u", "b", "b2", 2), ("u", "c", "b3", 3)]);
        let s = split_leave_one_last_item(&ds).unwrap();
        assert_eq!(times(&ds, &s.train), [1]);
        assert_eq!(times(&ds, &s.validation), [2]);
        assert_eq!(times(&ds, &s.test), [3]);
    }

    #[test]
    fn leave_one_last_item_drops_short_users() {
        let ds = dataset(&[
            ("u", "a", "b1", 1),
            ("u", "b", "b2", 2),
            ("u", "c", "b3", 3),
            ("v", "a", "c1", 1),
            ("v", "b", "c2", 2),
        ]);
        let s = split_leave_one_last_item(&ds).unwrap();
        assert_eq!(s.manifest.dropped.count, 2);
        assert_eq!(s.manifest.dropped.reasons["too-few-interactions"], 2);
        assert_eq!(s.manifest.test.users, 1);
    }

    #[test]
    fn no_eligible_user_is_an_error() {
        let ds = dataset(&[("u", "a", "b1", 1), ("u", "b", "b2", 2)]);
        assert!(matches!(split_leave_one_last_item(&ds), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn leave_one_last_basket_example() {
        let ds = dataset(&[
            ("u", "a", "B1", 1),
            ("u", "b", "B1", 1),
            ("u", "c", "B2", 2),
            ("u", "d", "B3", 3),
            ("u", "e", "B3", 3),
        ]);
        let s = split_leave_one_last_basket(&ds).unwrap();
        assert_eq!(items(&ds, &s.train), ["a", "b"]);
        assert_eq!(items(&ds, &s.validation), ["c"]);
        assert_eq!(items(&ds, &s.test), ["d", "e"]);
        assert_eq!(s.manifest.test.baskets, 1);
    }

    #[test]
    fn temporal_user_ceiling_arithmetic() {
        let rows: Vec<(String, String, String, i64)> =
            (0..10).map(|t| ("u".into(), format!("i{t}"), format!("b{t}"), t)).collect();
        let refs: Vec<_> = rows.iter().map(|(a, b, c, t)| (a.as_str(), b.as_str(), c.as_str(), *t)).collect();
        let ds = dataset(&refs);
        let s = split_temporal_user(&ds, 0.2, 0.25).unwrap();
        assert_eq!(times(&ds, &s.test), [8, 9]);
        assert_eq!(times(&ds, &s.validation), [6, 7]);
        assert_eq!(times(&ds, &s.train), [0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn temporal_user_degenerates_to_leave_one_last() {
        let rows: Vec<(String, String, String, i64)> =
            (0..5).map(|t| ("u".into(), format!("i{t}"), format!("b{t}"), t)).collect();
        let refs: Vec<_> = rows.iter().map(|(a, b, c, t)| (a.as_str(), b.as_str(), c.as_str(), *t)).collect();
        let ds = dataset(&refs);
        let tu = split_temporal_user(&ds, 0.2, 0.25).unwrap();
        let l1 = split_leave_one_last_item(&ds).unwrap();
        assert_eq!((tu.train, tu.validation, tu.test), (l1.train, l1.validation, l1.test));
    }

    #[test]
    fn temporal_global_ten_baskets() {
        let rows: Vec<(String, String, String, i64)> =
            (1..=10).map(|t| (format!("u{}", t % 2), "x".into(), format!("b{t}"), t)).collect();
        let refs: Vec<_> = rows.iter().map(|(a, b, c, t)| (a.as_str(), b.as_str(), c.as_str(), *t)).collect();
        let ds = dataset(&refs);
        let s = split_temporal_global(&ds, 0.2, 0.2).unwrap();
        assert_eq!(times(&ds, &s.test), [9, 10]);
        assert_eq!(times(&ds, &s.validation), [7, 8]);
        assert_eq!(times(&ds, &s.train), [1, 2, 3, 4, 5, 6]);
        assert_eq!(s.manifest.boundary_timestamp, Some(8));
        assert_eq!(s.manifest.validation_boundary_timestamp, Some(6));
        assert_eq!(s.manifest.leakage_fraction, 0.0);
    }

    #[test]
    fn temporal_global_boundary_ties_go_to_the_earlier_side() {
        let ds = dataset(&[
            ("u", "x", "b1", 1),
            ("u", "x", "b2", 2),
            ("u", "x", "b3", 3),
            ("u", "x", "b4", 4),
            ("u", "x", "b5", 4),
            ("u", "x", "b6", 6),
        ]);
        // ⌈0.34·6⌉ = 3 test baskets starting at b4; b3 is earlier, no tie.
        let s = split_temporal_global(&ds, 0.34, 0.2).unwrap();
        assert_eq!(times(&ds, &s.test), [4, 4, 6]);
        // ⌈0.2·6⌉ = 2 puts the cut between b4 and b5, both at t=4, so b5
        // stays on the earlier side.
        let s = split_temporal_global(&ds, 0.2, 0.2).unwrap();
        assert_eq!(times(&ds, &s.test), [6]);
        assert!(times(&ds, &s.train).iter().chain(&times(&ds, &s.validation)).all(|&t| t <= 4));
    }

    #[test]
    fn temporal_global_all_same_timestamp_is_degenerate() {
        let ds = dataset(&[("u", "x", "b1", 5), ("v", "x", "b2", 5), ("w", "y", "b3", 5)]);
        let err = split_temporal_global(&ds, 0.2, 0.2).unwrap_err();
        assert!(matches!(err, Error::DegenerateBoundary(_)), "{err}");
        assert!(err.to_string().contains('5'));
    }

    #[test]
    fn temporal_global_drops_cold_users_and_items() {
        let ds = dataset(&[
            ("u", "x", "b1", 1),
            ("u", "y", "b2", 2),
            ("u", "x", "b3", 3),
            ("u", "x", "b4", 4),
            ("v", "x", "b5", 5),
            ("u", "z", "b6", 6),
            ("u", "x", "b7", 7),
        ]);
        // 7 baskets: ⌈0.4·7⌉ = 3 test (b5..b7), ⌈0.2·4⌉ = 1 validation (b4)
        let s = split_temporal_global(&ds, 0.4, 0.2).unwrap();
        assert_eq!(s.manifest.dropped.reasons.get("cold-user"), Some(&1));
        assert_eq!(s.manifest.dropped.reasons.get("cold-item"), Some(&1));
        assert_eq!(times(&ds, &s.test), [7]);
        assert_eq!(times(&ds, &s.validation), [4]);
    }

    #[test]
    fn temporal_global_interaction_unit() {
        // one big early basket and many small late ones
        let mut rows = vec![];
        for k in 0..8 {
            rows.push(("u".to_string(), format!("i{k}"), "big".to_string(), 1));
        }
        for t in 2..=5 {
            rows.push(("u".to_string(), "i0".to_string(), format!("s{t}"), t));
        }
        let refs: Vec<_> = rows.iter().map(|(a, b, c, t)| (a.as_str(), b.as_str(), c.as_str(), *t)).collect();
        let ds = dataset(&refs);
        let mut s = SplitStrategy::new(StrategyTag::TemporalGlobal).with_ratios(0.25, 0.1);
        let by_baskets = split(&ds, &s).unwrap();
        assert_eq!(by_baskets.manifest.test.baskets, 2); // ⌈0.25·5⌉
        s.ratio_unit = Some(RatioUnit::Interactions);
        let by_rows = split(&ds, &s).unwrap();
        assert_eq!(by_rows.manifest.test.baskets, 3); // ⌈0.25·12⌉ = 3 rows
    }

    #[test]
    fn random_split_is_seed_deterministic() {
        let mut rows = vec![];
        for u in 0..20 {
            for t in 0..6 {
                rows.push((format!("u{u}"), format!("i{}", (u + t) % 7), format!("b{u}-{t}"), t as i64));
            }
        }
        let refs: Vec<_> = rows.iter().map(|(a, b, c, t)| (a.as_str(), b.as_str(), c.as_str(), *t)).collect();
        let ds = dataset(&refs);
        for tag in [StrategyTag::RandomLeaveOne, StrategyTag::RandomRatio] {
            let a = split_random(&ds, tag, 11).unwrap();
            let b = split_random(&ds, tag, 11).unwrap();
            let c = split_random(&ds, tag, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.test, c.test);
        }
        let lo = split_random(&ds, StrategyTag::RandomLeaveOne, 3).unwrap();
        assert_eq!(lo.test.len(), 20);
        assert_eq!(lo.validation.len(), 20);
        assert!(split_random(&ds, StrategyTag::TemporalUser, 3).is_err());
    }

    #[test]
    fn random_leave_one_with_three_events_fills_each_partition() {
        let ds = dataset(&[("u", "a", "b1", 1), ("u", "b", "b2", 2), ("u", "c", "b3", 3)]);
        for seed in 0..20 {
            let s = split_random(&ds, StrategyTag::RandomLeaveOne, seed).unwrap();
            assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 1, 1));
        }
    }

    #[test]
    fn user_split_cohorts() {
        let mut rows = vec![];
        for u in 0..10 {
            for t in 0..4 {
                rows.push((format!("u{u}"), format!("i{}", t % 2), format!("b{u}-{t}"), t as i64));
            }
        }
        let refs: Vec<_> = rows.iter().map(|(a, b, c, t)| (a.as_str(), b.as_str(), c.as_str(), *t)).collect();
        let ds = dataset(&refs);
        let s = split_user(&ds, 0.2, 0.5, 9).unwrap();
        assert_eq!(s.manifest.test.users, 2);
        assert_eq!(s.manifest.train.users, 8);
        assert_eq!(s.manifest.validation_role, ValidationRole::FoldIn);
        assert_eq!(s.validation.len(), 4); // 2 of 4 per test user
        assert_eq!(s, split_user(&ds, 0.2, 0.5, 9).unwrap());

        let none = split_user(&ds, 0.2, 0.0, 9).unwrap();
        assert!(none.validation.is_empty());
        let test_users = partition_users(&ds, &none.test);
        assert!(partition_users(&ds, &none.train).is_disjoint(&test_users));

        let one = dataset(&[("u", "a", "b1", 1), ("u", "b", "b2", 2)]);
        assert!(split_user(&one, 0.5, 0.0, 1).is_err());
        assert!(split_user(&ds, 0.99, 0.0, 1).is_err());
    }

    #[test]
    fn leakage_toy_example() {
        let ds = dataset(&[
            ("u1", "a", "b1", 1),
            ("u1", "b", "b2", 2),
            ("u2", "c", "b3", 5),
            ("u2", "d", "b4", 6),
        ]);
        let mut s = SplitStrategy::new(StrategyTag::LeaveOneLastItem);
        s.min_history = Some(2);
        let split = split(&ds, &s).unwrap();
        assert_eq!(times(&ds, &split.train), [1, 5]);
        assert_eq!(times(&ds, &split.test), [2, 6]);
        let report = leakage_report(&split, &ds).unwrap();
        assert_eq!(report.leakage_fraction, 0.5);
        assert_eq!(report.per_user_boundary_spread, 4);
        assert_eq!(report.boundary_type, BoundaryType::PerUser);
    }

    #[test]
    fn single_user_has_no_leakage() {
        let ds = dataset(&[("u", "a", "b1", 1), ("u", "b", "b2", 2), ("u", "c", "b3", 3), ("u", "d", "b4", 4)]);
        for tag in [StrategyTag::LeaveOneLastItem, StrategyTag::LeaveOneLastBasket, StrategyTag::TemporalUser] {
            let s = split(&ds, &SplitStrategy::new(tag)).unwrap();
            assert_eq!(leakage_report(&s, &ds).unwrap().leakage_fraction, 0.0);
        }
    }

    #[test]
    fn export_load_round_trip_and_tamper_detection() {
        let ds = dataset(&[
            ("u", "a", "b1", 1),
            ("u", "b", "b2", 2),
            ("u", "c", "b3", 3),
            ("v", "a", "c1", 1),
            ("v", "b", "c2", 4),
            ("v", "c", "c3", 5),
        ]);
        let s = split_leave_one_last_item(&ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_release(&s, &ds, dir.path(), false).unwrap();
        let (ds2, s2) = load_release(dir.path()).unwrap();
        assert_eq!(ds2, ds);
        assert_eq!(s2, s);

        // hand-edit a count in the manifest
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"interactions\": 2", "\"interactions\": 3", 1)).unwrap();
        assert!(matches!(load_split(dir.path(), &ds), Err(Error::Verification(_))));

        // tamper with an index file
        export_split(&s, dir.path()).unwrap();
        fs::write(dir.path().join(TEST_FILE), "0\n").unwrap();
        assert!(matches!(load_split(dir.path(), &ds), Err(Error::Verification(_))));

        // version mismatch
        export_split(&s, dir.path()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"format_version\": 1", "\"format_version\": 7", 1)).unwrap();
        assert!(matches!(load_split(dir.path(), &ds), Err(Error::FormatVersion { .. })));
    }
}
