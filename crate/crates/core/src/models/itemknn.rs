use serde::{Deserialize, Serialize};

use super::{Recommender, TrainingSet};

/// Item-based nearest neighbours over binary user-item incidence.
///
/// `sim(i, j) = |U_i ∩ U_j| / sqrt(|U_i| · |U_j|)` where `U_i` is the set of
/// train users of item `i`. Each item keeps its `neighborhood_size` most
/// similar other items (ties to the lower index) and
/// `score(u, i) = Σ sim(i, j)` over kept neighbours `j` in the user's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemKnn {
    neighbors: Vec<Vec<(u32, f64)>>,
    history: Vec<Vec<u32>>,
    universe: Vec<u32>,
}

impl ItemKnn {
    pub fn fit(train: &TrainingSet, neighborhood_size: usize) -> Self {
        let mut item_users: Vec<Vec<u32>> = vec![Vec::new(); train.n_items];
        for (u, items) in train.user_items.iter().enumerate() {
            for &i in items {
                item_users[i as usize].push(u as u32);
            }
        }
        let mut co = vec![0u32; train.n_items];
        let mut touched = Vec::new();
        let mut neighbors = Vec::with_capacity(train.n_items);
        for i in 0..train.n_items {
            for &u in &item_users[i] {
                for &j in &train.user_items[u as usize] {
                    if j as usize != i {
                        if co[j as usize] == 0 {
                            touched.push(j);
                        }
                        co[j as usize] += 1;
                    }
                }
            }
            let norm_i = item_users[i].len() as f64;
            let mut sims: Vec<(u32, f64)> = touched
                .iter()
                .map(|&j| {
                    let norm_j = item_users[j as usize].len() as f64;
                    (j, co[j as usize] as f64 / (norm_i * norm_j).sqrt())
                })
                .collect();
            for &j in &touched {
                co[j as usize] = 0;
            }
            touched.clear();
            sims.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims.truncate(neighborhood_size);
            sims.sort_unstable_by_key(|&(j, _)| j);
            neighbors.push(sims);
        }
        Self {
            neighbors,
            history: train.user_items.clone(),
            universe: train.universe.clone(),
        }
    }

    /// Stored similarity of `j` in `i`'s neighbourhood, 0 when absent.
    pub fn similarity(&self, i: u32, j: u32) -> f64 {
        let row = &self.neighbors[i as usize];
        row.binary_search_by_key(&j, |&(k, _)| k)
            .map(|p| row[p].1)
            .unwrap_or(0.0)
    }
}

impl Recommender for ItemKnn {
    fn universe(&self) -> &[u32] {
        &self.universe
    }

    fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let hist = self.history.get(user as usize).map(Vec::as_slice).unwrap_or(&[]);
        items
            .iter()
            .map(|&i| match self.neighbors.get(i as usize) {
                Some(row) => row
                    .iter()
                    .filter(|(j, _)| hist.binary_search(j).is_ok())
                    .map(|&(_, s)| s)
                    .sum(),
                None => 0.0,
            })
            .collect()
    }
}
