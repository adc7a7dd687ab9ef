use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hyperparameters, Recommender, TrainingSet};
use crate::error::{Error, Result};
use crate::util::derive_seed;

const EPS: f64 = 1e-12;

/// Nonnegative factorization `X ≈ W H` of the user-item count matrix,
/// fitted by multiplicative updates on the squared Frobenius error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nmf {
    rank: usize,
    /// `n_users × rank`, row-major.
    w: Vec<f64>,
    /// `rank × n_items`, row-major.
    h: Vec<f64>,
    n_items: usize,
    universe: Vec<u32>,
    /// `‖X − WH‖²` after initialization and after each epoch.
    pub objective: Vec<f64>,
}

impl Nmf {
    pub fn fit(train: &TrainingSet, hp: &Hyperparameters, seed: u64) -> Result<Self> {
        let rank = hp.embedding_dim.unwrap_or(16);
        let epochs = hp.epochs.unwrap_or(100);
        let (nu, ni) = (train.n_users, train.n_items);

        let total: f64 = train.user_counts.iter().flatten().map(|&(_, c)| c).sum();
        let scale = (total / ((nu * ni).max(1) as f64) / rank as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "nmf-init"));
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| scale * rng.gen_range(0.01..1.0)).collect() };
        let w = draw(nu * rank);
        let h = draw(rank * ni);
        let mut model = Self {
            rank,
            w,
            h,
            n_items: ni,
            universe: train.universe.clone(),
            objective: Vec::new(),
        };
        model.objective.push(model.reconstruction_error(train));
        for epoch in 1..=epochs {
            model.update_h(train);
            model.update_w(train);
            let obj = model.reconstruction_error(train);
            if !obj.is_finite() || model.w.iter().chain(&model.h).any(|x| !x.is_finite()) {
                return Err(Error::Divergence { model: "nmf", epoch });
            }
            model.objective.push(obj);
        }
        Ok(model)
    }

    /// `H ← H ∘ (WᵀX) / (WᵀW H + ε)`
    fn update_h(&mut self, train: &TrainingSet) {
        let (k, ni) = (self.rank, self.n_items);
        let mut num = vec![0.0; k * ni];
        for (u, row) in train.user_counts.iter().enumerate() {
            let wu = &self.w[u * k..(u + 1) * k];
            for &(i, x) in row {
                for r in 0..k {
                    num[r * ni + i as usize] += wu[r] * x;
                }
            }
        }
        let wtw = gram(&self.w, k);
        for i in 0..ni {
            for r in 0..k {
                let den: f64 = (0..k).map(|s| wtw[r * k + s] * self.h[s * ni + i]).sum();
                self.h[r * ni + i] *= num[r * ni + i] / (den + EPS);
            }
        }
    }

    /// `W ← W ∘ (XHᵀ) / (W HHᵀ + ε)`
    fn update_w(&mut self, train: &TrainingSet) {
        let (k, ni) = (self.rank, self.n_items);
        let hht = self.hht();
        for (u, row) in train.user_counts.iter().enumerate() {
            let mut num = vec![0.0; k];
            for &(i, x) in row {
                for r in 0..k {
                    num[r] += x * self.h[r * ni + i as usize];
                }
            }
            let wu: Vec<f64> = self.w[u * k..(u + 1) * k].to_vec();
            for r in 0..k {
                let den: f64 = (0..k).map(|s| wu[s] * hht[s * k + r]).sum();
                self.w[u * k + r] *= num[r] / (den + EPS);
            }
        }
    }

    fn hht(&self) -> Vec<f64> {
        let (k, ni) = (self.rank, self.n_items);
        let mut out = vec![0.0; k * k];
        for r in 0..k {
            for s in r..k {
                let v: f64 = (0..ni).map(|i| self.h[r * ni + i] * self.h[s * ni + i]).sum();
                out[r * k + s] = v;
                out[s * k + r] = v;
            }
        }
        out
    }

    /// `‖X‖² − 2⟨X, WH⟩ + ⟨WᵀW, HHᵀ⟩`, touching only nonzeros of `X`.
    pub fn reconstruction_error(&self, train: &TrainingSet) -> f64 {
        let k = self.rank;
        let mut x2 = 0.0;
        let mut cross = 0.0;
        for (u, row) in train.user_counts.iter().enumerate() {
            for &(i, x) in row {
                x2 += x * x;
                cross += x * self.predict(u as u32, i);
            }
        }
        let wtw = gram(&self.w, k);
        let hht = self.hht();
        let quad: f64 = wtw.iter().zip(&hht).map(|(a, b)| a * b).sum();
        (x2 - 2.0 * cross + quad).max(0.0)
    }

    fn predict(&self, user: u32, item: u32) -> f64 {
        let (k, ni) = (self.rank, self.n_items);
        let u = user as usize;
        (0..k).map(|r| self.w[u * k + r] * self.h[r * ni + item as usize]).sum()
    }

    pub fn factors(&self) -> (&[f64], &[f64]) {
        (&self.w, &self.h)
    }
}

/// `AᵀA` for a row-major matrix with `k` columns.
fn gram(a: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for row in a.chunks_exact(k) {
        for r in 0..k {
            for s in 0..k {
                out[r * k + s] += row[r] * row[s];
            }
        }
    }
    out
}

impl Recommender for Nmf {
    fn universe(&self) -> &[u32] {
        &self.universe
    }

    fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        if user as usize >= self.w.len() / self.rank {
            return vec![0.0; items.len()];
        }
        items.iter().map(|&i| self.predict(user, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(rank: usize, epochs: usize) -> Hyperparameters {
        Hyperparameters {
            embedding_dim: Some(rank),
            epochs: Some(epochs),
            ..Default::default()
        }
    }

    /// Rows from a count matrix given densely.
    fn from_dense(m: &[&[u32]]) -> TrainingSet {
        let mut rows = Vec::new();
        for (u, r) in m.iter().enumerate() {
            for (i, &c) in r.iter().enumerate() {
                rows.extend(std::iter::repeat((u as u32, i as u32)).take(c as usize));
            }
        }
        TrainingSet::from_pairs(m.len(), m[0].len(), &rows, vec![])
    }

    #[test]
    fn rank_one_matrix_is_recovered() {
        // outer product of [1, 2, 3] and [2, 1, 4]
        let ts = from_dense(&[&[2, 1, 4], &[4, 2, 8], &[6, 3, 12]]);
        let m = Nmf::fit(&ts, &hp(1, 500), 0).unwrap();
        assert!(*m.objective.last().unwrap() < 1e-6, "{:?}", m.objective.last());
    }

    #[test]
    fn objective_non_increasing_and_factors_nonnegative() {
        let ts = from_dense(&[&[1, 0, 3, 0], &[0, 2, 0, 1], &[1, 1, 1, 0], &[0, 0, 2, 5]]);
        let m = Nmf::fit(&ts, &hp(2, 60), 4).unwrap();
        for w in m.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
        }
        let (w, h) = m.factors();
        assert!(w.iter().chain(h).all(|&x| x >= 0.0));
    }

    #[test]
    fn sparse_objective_matches_dense() {
        let ts = from_dense(&[&[1, 0, 3], &[0, 2, 0]]);
        let m = Nmf::fit(&ts, &hp(2, 3), 9).unwrap();
        let dense = [[1.0, 0.0, 3.0], [0.0, 2.0, 0.0]];
        let mut err = 0.0;
        for u in 0..2 {
            for i in 0..3 {
                let d = dense[u][i] - m.predict(u as u32, i as u32);
                err += d * d;
            }
        }
        assert!((m.reconstruction_error(&ts) - err).abs() < 1e-9);
    }
}
