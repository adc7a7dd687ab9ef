//! Top-K ranking evaluation: NDCG@K and Recall@K over held-out test items.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::models::Recommender;
use crate::split::SplitResult;
use crate::util::Hasher;
use crate::TOOLKIT_VERSION;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Rank every item of the training universe.
    Full,
    /// Rank the relevant items plus `negatives` seeded uniform negatives.
    Sampled { negatives: usize, seed: u64 },
}

impl fmt::Display for CandidateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateMode::Full => f.write_str("full"),
            CandidateMode::Sampled { negatives, seed } => write!(f, "sampled:{negatives}:{seed}"),
        }
    }
}

impl FromStr for CandidateMode {
    type Err = Error;

    /// `full`, `sampled:<n>` or `sampled:<n>:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("full"), None, None, None) => Ok(CandidateMode::Full),
            (Some("sampled"), Some(n), seed, None) => {
                let negatives = n
                    .parse()
                    .map_err(|_| Error::invalid("candidates", format!("bad negative count {n:?}")))?;
                let seed = seed
                    .map(|s| s.parse().map_err(|_| Error::invalid("candidates", format!("bad seed {s:?}"))))
                    .transpose()?
                    .unwrap_or(0);
                Ok(CandidateMode::Sampled { negatives, seed })
            }
            _ => Err(Error::invalid(
                "candidates",
                format!("{s:?} (expected full or sampled:<n>[:<seed>])"),
            )),
        }
    }
}

/// Which test items count as relevant for a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relevance {
    /// Distinct items over all of the user's test interactions.
    BasketUnion,
    /// Only the item of the user's chronologically last test interaction.
    Item,
}

fn default_k() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_candidates() -> CandidateMode {
    CandidateMode::Full
}

fn default_relevance() -> Relevance {
    Relevance::BasketUnion
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_candidates")]
    pub candidates: CandidateMode,
    #[serde(default = "default_true")]
    pub exclude_train_items: bool,
    #[serde(default = "default_relevance")]
    pub relevance: Relevance,
    /// Divide recall by `min(|relevant|, K)` instead of `|relevant|`.
    #[serde(default)]
    pub truncated_recall: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            candidates: CandidateMode::Full,
            exclude_train_items: true,
            relevance: Relevance::BasketUnion,
            truncated_recall: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if let CandidateMode::Sampled { negatives: 0, .. } = self.candidates {
            return Err(Error::invalid("candidates", "sampled mode needs at least one negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Ndcg, Metric::Recall];

    pub fn label(self, k: usize) -> String {
        match self {
            Metric::Ndcg => format!("NDCG@{k}"),
            Metric::Recall => format!("Recall@{k}"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Recall => "recall",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let base = s.split('@').next().unwrap_or(s).to_ascii_lowercase();
        match base.as_str() {
            "ndcg" => Ok(Metric::Ndcg),
            "recall" => Ok(Metric::Recall),
            _ => Err(Error::invalid("metric", format!("{s:?} (expected ndcg or recall)"))),
        }
    }
}

/// `DCG@K / IDCG@K` with binary relevance.
pub fn ndcg_at_k(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Ok(dcg / ideal)
}

/// `|top-K ∩ relevant| / |relevant|`.
pub fn recall_at_k(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> Result<f64> {
    recall_impl(ranked, relevant, k, false)
}

/// Recall with denominator `min(|relevant|, K)`.
pub fn truncated_recall_at_k(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> Result<f64> {
    recall_impl(ranked, relevant, k, true)
}

fn recall_impl(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize, truncated: bool) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    let denom = if truncated { relevant.len().min(k) } else { relevant.len() };
    Ok(hits as f64 / denom as f64)
}

/// Score order: descending score, ties by ascending item index.
pub fn score_order(a: (u32, f64), b: (u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best `(item, score)` pairs in [`score_order`].
pub fn top_k(mut scored: Vec<(u32, f64)>, k: usize) -> Vec<u32> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k, |a, b| score_order(*a, *b));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| score_order(*a, *b));
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Per-user views of a split needed for ranking.
pub struct EvalContext {
    /// Items occurring in train, ascending.
    pub universe: Vec<u32>,
    /// Distinct train items per user, ascending.
    pub train_items: Vec<Vec<u32>>,
    /// Test interactions per user in chronological order.
    pub test_rows: BTreeMap<u32, Vec<usize>>,
}

impl EvalContext {
    pub fn new(dataset: &Dataset, split: &SplitResult) -> Self {
        let mut train_items: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); dataset.n_users()];
        let mut in_universe = vec![false; dataset.n_items()];
        for &i in &split.train {
            let x = dataset.interaction(i);
            train_items[x.user as usize].insert(x.item);
            in_universe[x.item as usize] = true;
        }
        let mut test_rows: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in &split.test {
            test_rows.entry(dataset.interaction(i).user).or_default().push(i);
        }
        Self {
            universe: (0..dataset.n_items() as u32).filter(|&i| in_universe[i as usize]).collect(),
            train_items: train_items.into_iter().map(|s| s.into_iter().collect()).collect(),
            test_rows,
        }
    }

    pub fn has_history(&self, user: u32) -> bool {
        !self.train_items[user as usize].is_empty()
    }
}

/// Distinct relevant test items of `user`.
pub fn relevant_set(dataset: &Dataset, split: &SplitResult, user: u32, relevance: Relevance) -> BTreeSet<u32> {
    let rows: Vec<usize> = split
        .test
        .iter()
        .copied()
        .filter(|&i| dataset.interaction(i).user == user)
        .collect();
    relevant_from_rows(dataset, &rows, relevance)
}

fn relevant_from_rows(dataset: &Dataset, rows: &[usize], relevance: Relevance) -> BTreeSet<u32> {
    match relevance {
        Relevance::BasketUnion => rows.iter().map(|&i| dataset.interaction(i).item).collect(),
        Relevance::Item => rows.last().map(|&i| dataset.interaction(i).item).into_iter().collect(),
    }
}

fn user_seed(seed: u64, user: u32) -> u64 {
    let mut h = Hasher::new();
    h.u64(seed).u64(user as u64);
    h.seed()
}

/// Candidate items for `user`, before scoring.
fn candidates(ctx: &EvalContext, user: u32, relevant: &BTreeSet<u32>, config: &EvalConfig) -> Vec<u32> {
    let train = &ctx.train_items[user as usize];
    let excluded = |i: &u32| config.exclude_train_items && train.binary_search(i).is_ok();
    match config.candidates {
        CandidateMode::Full => ctx.universe.iter().copied().filter(|i| !excluded(i)).collect(),
        CandidateMode::Sampled { negatives, seed } => {
            let pool: Vec<u32> = ctx
                .universe
                .iter()
                .copied()
                .filter(|i| !excluded(i) && !relevant.contains(i))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, user));
            let take = negatives.min(pool.len());
            let mut picked: Vec<u32> = index::sample(&mut rng, pool.len(), take)
                .into_iter()
                .map(|p| pool[p])
                .collect();
            picked.extend(relevant.iter().copied().filter(|i| !excluded(i)));
            picked.sort_unstable();
            picked
        }
    }
}

/// Full ordering of the user's candidate items by descending score.
pub fn rank_for_user<M: Recommender + ?Sized>(
    model: &M,
    user: u32,
    ctx: &EvalContext,
    relevant: &BTreeSet<u32>,
    config: &EvalConfig,
) -> Vec<u32> {
    let items = candidates(ctx, user, relevant, config);
    let n = items.len();
    let scores = model.score(user, &items);
    top_k(items.into_iter().zip(scores).collect(), n)
}

fn top_for_user<M: Recommender + ?Sized>(
    model: &M,
    user: u32,
    ctx: &EvalContext,
    relevant: &BTreeSet<u32>,
    config: &EvalConfig,
) -> Vec<u32> {
    let items = candidates(ctx, user, relevant, config);
    let scores = model.score(user, &items);
    top_k(items.into_iter().zip(scores).collect(), config.k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: String,
    pub relevant: usize,
    pub ndcg: f64,
    pub recall: f64,
}

/// Identifies what an [`EvalReport`] measured.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportIds {
    /// Model family, e.g. `mfbpr`.
    pub model: String,
    /// Unique system name within a comparison (model plus hyperparameters).
    pub system: String,
    pub hp_digest: String,
    /// Strategy label as configured.
    pub strategy: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub toolkit_version: String,
    #[serde(flatten)]
    pub ids: ReportIds,
    pub config: EvalConfig,
    pub evaluated_users: usize,
    /// Users with training history but no relevant test items.
    pub users_without_relevant: usize,
    /// Test users with no training history.
    pub skipped_no_history: usize,
    pub mean_ndcg: f64,
    pub mean_recall: f64,
    pub per_user: Vec<UserMetrics>,
}

impl EvalReport {
    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ndcg => self.mean_ndcg,
            Metric::Recall => self.mean_recall,
        }
    }

    /// One row per evaluated user.
    pub fn write_per_user_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["user", "relevant", "ndcg", "recall"])?;
        for m in &self.per_user {
            w.write_record([
                m.user.as_str(),
                &m.relevant.to_string(),
                &m.ndcg.to_string(),
                &m.recall.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates `model` on every test user of `split`. Per-user work runs in
/// parallel; the means are summed in ascending user order.
pub fn evaluate<M: Recommender + ?Sized>(
    model: &M,
    dataset: &Dataset,
    split: &SplitResult,
    config: &EvalConfig,
    ids: ReportIds,
) -> Result<EvalReport> {
    config.validate()?;
    let ctx = EvalContext::new(dataset, split);
    let users: Vec<(&u32, &Vec<usize>)> = ctx.test_rows.iter().collect();
    let outcomes: Vec<Option<UserMetrics>> = users
        .par_iter()
        .map(|(&user, rows)| {
            if !ctx.has_history(user) {
                return Ok(None);
            }
            let relevant = relevant_from_rows(dataset, rows, config.relevance);
            let top = top_for_user(model, user, &ctx, &relevant, config);
            let recall = recall_impl(&top, &relevant, config.k, config.truncated_recall)?;
            Ok(Some(UserMetrics {
                user: dataset.users().id(user).to_owned(),
                relevant: relevant.len(),
                ndcg: ndcg_at_k(&top, &relevant, config.k)?,
                recall,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped_no_history = outcomes.iter().filter(|o| o.is_none()).count();
    let per_user: Vec<UserMetrics> = outcomes.into_iter().flatten().collect();
    if per_user.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let test_users: HashSet<u32> = ctx.test_rows.keys().copied().collect();
    let users_without_relevant = (0..dataset.n_users() as u32)
        .filter(|u| ctx.has_history(*u) && !test_users.contains(u))
        .count();
    let n = per_user.len() as f64;
    let mean_ndcg = per_user.iter().map(|m| m.ndcg).sum::<f64>() / n;
    let mean_recall = per_user.iter().map(|m| m.recall).sum::<f64>() / n;
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_owned(),
        ids,
        config: config.clone(),
        evaluated_users: per_user.len(),
        users_without_relevant,
        skipped_no_history,
        mean_ndcg,
        mean_recall,
        per_user,
    })
}

/// Mean Recall@K of `model` on held-out validation items, used for early
/// stopping. Users without training history are ignored. `None` when no
/// user can be evaluated.
pub fn validation_recall<M: Recommender + ?Sized>(
    model: &M,
    universe: &[u32],
    train_items: &[Vec<u32>],
    validation: &[(u32, BTreeSet<u32>)],
    k: usize,
) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (user, relevant) in validation {
        let train = &train_items[*user as usize];
        if train.is_empty() || relevant.is_empty() {
            continue;
        }
        let items: Vec<u32> = universe
            .iter()
            .copied()
            .filter(|i| train.binary_search(i).is_err())
            .collect();
        let scores = model.score(*user, &items);
        let top = top_k(items.into_iter().zip(scores).collect(), k);
        total += recall_at_k(&top, relevant, k).expect("non-empty relevant set");
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[u32]) -> BTreeSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[7, 1, 2], &set(&[7]), 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[1, 2, 7], &set(&[7]), 10).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&[1, 2, 7], &set(&[7]), 2).unwrap(), 0.0);
        assert!(matches!(ndcg_at_k(&[1], &set(&[]), 10), Err(Error::EmptyRelevant)));
    }

    #[test]
    fn ndcg_is_one_for_any_order_of_relevant_prefix() {
        assert_eq!(ndcg_at_k(&[3, 2, 9], &set(&[2, 3]), 10).unwrap(), 1.0);
        assert!((ndcg_at_k(&[2, 9, 3], &set(&[2, 3]), 10).unwrap() - 1.0).abs() > 1e-6);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[4, 5], &set(&[5]), 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[1, 2, 3], &set(&[1, 3, 8, 9]), 10).unwrap(), 0.5);
        assert_eq!(recall_at_k(&[1, 2, 3], &set(&[8]), 10).unwrap(), 0.0);
        assert_eq!(truncated_recall_at_k(&[1, 2], &set(&[1, 2, 3, 4]), 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[1, 2], &set(&[1, 2, 3, 4]), 2).unwrap(), 0.5);
    }

    #[test]
    fn top_k_orders_by_score_then_index() {
        let scored = vec![(0, 2.0), (1, 1.0), (2, 3.0), (3, 2.0)];
        assert_eq!(top_k(scored.clone(), 4), [2, 0, 3, 1]);
        assert_eq!(top_k(scored, 2), [2, 0]);
    }

    #[test]
    fn candidate_mode_parsing() {
        assert_eq!("full".parse::<CandidateMode>().unwrap(), CandidateMode::Full);
        assert_eq!(
            "sampled:50:3".parse::<CandidateMode>().unwrap(),
            CandidateMode::Sampled { negatives: 50, seed: 3 }
        );
        assert!("sampled".parse::<CandidateMode>().is_err());
        assert_eq!("NDCG@10".parse::<Metric>().unwrap(), Metric::Ndcg);
    }
}
