use serde::{Deserialize, Serialize};

use super::{Recommender, TrainingSet};

/// Scores every item by its number of train interactions, for all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Popularity {
    counts: Vec<u64>,
    universe: Vec<u32>,
}

impl Popularity {
    pub fn fit(train: &TrainingSet) -> Self {
        Self {
            counts: train.item_counts.clone(),
            universe: train.universe.clone(),
        }
    }
}

impl Recommender for Popularity {
    fn universe(&self) -> &[u32] {
        &self.universe
    }

    fn score(&self, _user: u32, items: &[u32]) -> Vec<f64> {
        items
            .iter()
            .map(|&i| self.counts.get(i as usize).copied().unwrap_or(0) as f64)
            .collect()
    }
}
