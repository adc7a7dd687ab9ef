//! Classical implicit-feedback baselines behind one recommender contract.

mod bpr;
mod itemknn;
mod nmf;
mod popularity;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bpr::{bpr_triple_gradient, bpr_triple_loss, EpochLog, MfBpr};
pub use itemknn::ItemKnn;
pub use nmf::Nmf;
pub use popularity::Popularity;

use crate::error::{Error, Result};
use crate::eval::top_k;
use crate::ingest::Dataset;
use crate::split::SplitResult;
use crate::util::{sha256_hex, to_json_bytes, write_file};
use crate::TOOLKIT_VERSION;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A fitted model that scores items for users.
///
/// Scores are deterministic and side-effect free once fitted.
pub trait Recommender: Send + Sync {
    /// Items the model can recommend (the training item universe), ascending.
    fn universe(&self) -> &[u32];

    fn score(&self, user: u32, items: &[u32]) -> Vec<f64>;

    /// The `k` highest-scoring universe items not in `exclude`, ties broken
    /// by ascending item index.
    fn recommend(&self, user: u32, k: usize, exclude: &HashSet<u32>) -> Vec<u32> {
        let items: Vec<u32> = self
            .universe()
            .iter()
            .copied()
            .filter(|i| !exclude.contains(i))
            .collect();
        let scores = self.score(user, &items);
        top_k(items.into_iter().zip(scores).collect(), k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "pop")]
    Popularity,
    #[serde(rename = "itemknn")]
    ItemKnn,
    #[serde(rename = "mfbpr")]
    MfBpr,
    #[serde(rename = "nmf")]
    Nmf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Popularity, ModelKind::ItemKnn, ModelKind::MfBpr, ModelKind::Nmf];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Popularity => "pop",
            ModelKind::ItemKnn => "itemknn",
            ModelKind::MfBpr => "mfbpr",
            ModelKind::Nmf => "nmf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pop" | "popularity" => Ok(ModelKind::Popularity),
            "itemknn" | "item-knn" | "knn" => Ok(ModelKind::ItemKnn),
            "mfbpr" | "bpr" | "mf-bpr" => Ok(ModelKind::MfBpr),
            "nmf" => Ok(ModelKind::Nmf),
            other => Err(Error::invalid(
                "model",
                format!("unknown model {other:?} (expected pop, itemknn, mfbpr or nmf)"),
            )),
        }
    }
}

/// Model hyperparameters. Each model reads the subset it uses; unset
/// fields take the documented defaults in [`Hyperparameters::resolved`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negatives_per_positive: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighborhood_size: Option<usize>,
    /// Early-stopping patience in epochs (MF-BPR).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("embedding_dim", self.embedding_dim),
            ("epochs", self.epochs),
            ("negatives_per_positive", self.negatives_per_positive),
            ("neighborhood_size", self.neighborhood_size),
            ("patience", self.patience),
        ];
        for (name, v) in ints {
            if v == Some(0) {
                return Err(Error::invalid(name, "must be strictly positive"));
            }
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("regularization", self.regularization)] {
            if let Some(x) = v {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::invalid(name, format!("{x} must be strictly positive")));
                }
            }
        }
        Ok(())
    }

    /// Keeps the fields `kind` uses and fills their defaults.
    pub fn resolved(&self, kind: ModelKind) -> Result<Hyperparameters> {
        self.validate()?;
        let mut out = Hyperparameters::default();
        match kind {
            ModelKind::Popularity => {}
            ModelKind::ItemKnn => {
                out.neighborhood_size = Some(self.neighborhood_size.unwrap_or(50));
            }
            ModelKind::MfBpr => {
                out.embedding_dim = Some(self.embedding_dim.unwrap_or(32));
                out.learning_rate = Some(self.learning_rate.unwrap_or(0.05));
                out.epochs = Some(self.epochs.unwrap_or(30));
                out.negatives_per_positive = Some(self.negatives_per_positive.unwrap_or(1));
                out.regularization = Some(self.regularization.unwrap_or(0.001));
                out.patience = Some(self.patience.unwrap_or(5));
            }
            ModelKind::Nmf => {
                out.embedding_dim = Some(self.embedding_dim.unwrap_or(16));
                out.epochs = Some(self.epochs.unwrap_or(100));
            }
        }
        Ok(out)
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("hyperparameters serialize"))
    }
}

/// Training-side view of a split: binary and count user-item data from the
/// train partition, plus validation items for early stopping.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub n_users: usize,
    pub n_items: usize,
    /// Distinct train items per user, ascending.
    pub user_items: Vec<Vec<u32>>,
    /// `(item, interaction count)` per user, ascending by item.
    pub user_counts: Vec<Vec<(u32, f64)>>,
    /// Train interactions per item.
    pub item_counts: Vec<u64>,
    /// Items with at least one train interaction, ascending.
    pub universe: Vec<u32>,
    /// Distinct validation items per user, for users that have any.
    pub validation: Vec<(u32, BTreeSet<u32>)>,
}

impl TrainingSet {
    pub fn from_split(dataset: &Dataset, split: &SplitResult) -> Self {
        let mut rows = Vec::with_capacity(split.train.len());
        for &i in &split.train {
            let x = dataset.interaction(i);
            rows.push((x.user, x.item));
        }
        let mut valid: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); dataset.n_users()];
        for &i in &split.validation {
            let x = dataset.interaction(i);
            valid[x.user as usize].insert(x.item);
        }
        let validation = valid
            .into_iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(u, s)| (u as u32, s))
            .collect();
        Self::from_pairs(dataset.n_users(), dataset.n_items(), &rows, validation)
    }

    /// Builds from raw `(user, item)` train rows; repeats count as purchases.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        rows: &[(u32, u32)],
        validation: Vec<(u32, BTreeSet<u32>)>,
    ) -> Self {
        let mut per_user: Vec<Vec<u32>> = vec![Vec::new(); n_users];
        let mut item_counts = vec![0u64; n_items];
        for &(u, i) in rows {
            per_user[u as usize].push(i);
            item_counts[i as usize] += 1;
        }
        let mut user_items = Vec::with_capacity(n_users);
        let mut user_counts = Vec::with_capacity(n_users);
        for mut items in per_user {
            items.sort_unstable();
            let mut counts: Vec<(u32, f64)> = Vec::new();
            for i in items {
                match counts.last_mut() {
                    Some((last, c)) if *last == i => *c += 1.0,
                    _ => counts.push((i, 1.0)),
                }
            }
            user_items.push(counts.iter().map(|&(i, _)| i).collect());
            user_counts.push(counts);
        }
        let universe = (0..n_items as u32).filter(|&i| item_counts[i as usize] > 0).collect();
        Self {
            n_users,
            n_items,
            user_items,
            user_counts,
            item_counts,
            universe,
            validation,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.universe.is_empty()
    }

    pub fn has_positive(&self, user: u32, item: u32) -> bool {
        self.user_items[user as usize].binary_search(&item).is_ok()
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[serde(rename = "pop")]
    Popularity(Popularity),
    ItemKnn(ItemKnn),
    MfBpr(MfBpr),
    Nmf(Nmf),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Popularity(_) => ModelKind::Popularity,
            Model::ItemKnn(_) => ModelKind::ItemKnn,
            Model::MfBpr(_) => ModelKind::MfBpr,
            Model::Nmf(_) => ModelKind::Nmf,
        }
    }

    fn inner(&self) -> &dyn Recommender {
        match self {
            Model::Popularity(m) => m,
            Model::ItemKnn(m) => m,
            Model::MfBpr(m) => m,
            Model::Nmf(m) => m,
        }
    }

    /// Digest of the fitted parameters.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("model serializes"))
    }
}

impl Recommender for Model {
    fn universe(&self) -> &[u32] {
        self.inner().universe()
    }

    fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        self.inner().score(user, items)
    }
}

/// Fits a model of `kind` on `train`.
pub fn fit(kind: ModelKind, train: &TrainingSet, hp: &Hyperparameters, seed: u64) -> Result<Model> {
    if train.is_empty() {
        return Err(Error::EmptySplit("cannot fit on an empty training set".into()));
    }
    let hp = hp.resolved(kind)?;
    Ok(match kind {
        ModelKind::Popularity => Model::Popularity(Popularity::fit(train)),
        ModelKind::ItemKnn => Model::ItemKnn(ItemKnn::fit(train, hp.neighborhood_size.expect("resolved"))),
        ModelKind::MfBpr => Model::MfBpr(MfBpr::fit(train, &hp, seed)?),
        ModelKind::Nmf => Model::Nmf(Nmf::fit(train, &hp, seed)?),
    })
}

/// A fitted model with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub toolkit_version: String,
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    /// Digest of the split the model was trained on.
    pub split_digest: String,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, hyperparameters: Hyperparameters, seed: u64, split_digest: String) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            toolkit_version: TOOLKIT_VERSION.to_owned(),
            kind: model.kind(),
            hyperparameters,
            seed,
            split_digest,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &to_json_bytes(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let found = value.get("format_version").and_then(|v| v.as_u64());
        if found != Some(CHECKPOINT_FORMAT_VERSION as u64) {
            return Err(Error::FormatVersion {
                what: path.display().to_string(),
                found: found.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparameters_must_be_positive() {
        let hp = Hyperparameters {
            learning_rate: Some(0.0),
            ..Default::default()
        };
        assert!(hp.validate().is_err());
        let hp = Hyperparameters {
            embedding_dim: Some(0),
            ..Default::default()
        };
        assert!(hp.resolved(ModelKind::MfBpr).is_err());
    }

    #[test]
    fn resolved_keeps_only_relevant_fields() {
        let hp = Hyperparameters {
            neighborhood_size: Some(5),
            embedding_dim: Some(8),
            ..Default::default()
        };
        let knn = hp.resolved(ModelKind::ItemKnn).unwrap();
        assert_eq!(knn.neighborhood_size, Some(5));
        assert_eq!(knn.embedding_dim, None);
        assert_eq!(hp.resolved(ModelKind::Popularity).unwrap(), Hyperparameters::default());
        assert_eq!(hp.resolved(ModelKind::MfBpr).unwrap().embedding_dim, Some(8));
    }

    #[test]
    fn model_kind_names() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("neumf".parse::<ModelKind>().is_err());
    }

    #[test]
    fn training_set_counts_repeat_purchases() {
        let ts = TrainingSet::from_pairs(2, 4, &[(0, 2), (0, 2), (1, 0), (0, 1)], vec![]);
        assert_eq!(ts.user_items[0], [1, 2]);
        assert_eq!(ts.user_counts[0], [(1, 1.0), (2, 2.0)]);
        assert_eq!(ts.item_counts, [1, 1, 2, 0]);
        assert_eq!(ts.universe, [0, 1, 2]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ts = TrainingSet::from_pairs(3, 3, &[(0, 0), (1, 1), (2, 0), (2, 2)], vec![]);
        let hp = Hyperparameters {
            embedding_dim: Some(2),
            epochs: Some(3),
            ..Default::default()
        };
        for kind in ModelKind::ALL {
            let model = fit(kind, &ts, &hp, 5).unwrap();
            let ckpt = Checkpoint::new(model, hp.resolved(kind).unwrap(), 5, "d".into());
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.json");
            ckpt.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(back.model.digest(), ckpt.model.digest());
        }
    }
}
