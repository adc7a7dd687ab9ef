use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hyperparameters, Recommender, TrainingSet};
use crate::error::{Error, Result};
use crate::eval::validation_recall;
use crate::util::derive_seed;

const VALIDATION_K: usize = 10;

/// `softplus(-(x_ui - x_uj)) + reg/2 · (|u|² + |v_i|² + |v_j|²)`, the
/// negative log-likelihood of one `(user, positive, negative)` triple.
pub fn bpr_triple_loss(u: &[f64], vi: &[f64], vj: &[f64], reg: f64) -> f64 {
    let x = dot(u, vi) - dot(u, vj);
    let norms: f64 = u.iter().chain(vi).chain(vj).map(|w| w * w).sum();
    softplus(-x) + 0.5 * reg * norms
}

/// Gradient of [`bpr_triple_loss`] with respect to `(u, vi, vj)`.
pub fn bpr_triple_gradient(u: &[f64], vi: &[f64], vj: &[f64], reg: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = dot(u, vi) - dot(u, vj);
    // d softplus(-x) / dx = -sigmoid(-x)
    let g = -sigmoid(-x);
    let gu = (0..u.len()).map(|k| g * (vi[k] - vj[k]) + reg * u[k]).collect();
    let gi = (0..u.len()).map(|k| g * u[k] + reg * vi[k]).collect();
    let gj = (0..u.len()).map(|k| -g * u[k] + reg * vj[k]).collect();
    (gu, gi, gj)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean triple loss seen during the epoch, before each update.
    pub mean_loss: f64,
    pub validation_recall: Option<f64>,
}

/// Matrix factorization trained with the pairwise BPR objective by SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfBpr {
    dim: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    universe: Vec<u32>,
    /// Epoch whose parameters were kept (1-based; 0 means the initialization).
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl MfBpr {
    /// Seeded initialization, uniform(-0.01, 0.01) / sqrt(dim).
    pub fn initial(train: &TrainingSet, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mfbpr-init"));
        let scale = 1.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.01..0.01) * scale).collect() };
        let user_factors = draw(train.n_users * dim);
        let item_factors = draw(train.n_items * dim);
        Self {
            dim,
            user_factors,
            item_factors,
            universe: train.universe.clone(),
            best_epoch: 0,
            log: Vec::new(),
        }
    }

    pub fn fit(train: &TrainingSet, hp: &Hyperparameters, seed: u64) -> Result<Self> {
        let dim = hp.embedding_dim.unwrap_or(32);
        let lr = hp.learning_rate.unwrap_or(0.05);
        let epochs = hp.epochs.unwrap_or(30);
        let negatives = hp.negatives_per_positive.unwrap_or(1);
        let reg = hp.regularization.unwrap_or(0.001);
        let patience = hp.patience.unwrap_or(5);

        let mut model = Self::initial(train, dim, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mfbpr-sgd"));
        let mut pairs: Vec<(u32, u32)> = train
            .user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
            .collect();

        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut stale = 0;
        for epoch in 1..=epochs {
            pairs.shuffle(&mut rng);
            let mut loss = 0.0;
            let mut n = 0usize;
            for &(u, i) in &pairs {
                for _ in 0..negatives {
                    let Some(j) = sample_negative(train, u, &mut rng) else { break };
                    loss += model.step(u, i, j, lr, reg);
                    n += 1;
                }
            }
            let finite = model.user_factors.iter().chain(&model.item_factors).all(|w| w.is_finite());
            if !finite || !loss.is_finite() {
                return Err(Error::Divergence { model: "mfbpr", epoch });
            }
            let recall = validation_recall(&model, &train.universe, &train.user_items, &train.validation, VALIDATION_K);
            model.log.push(EpochLog {
                epoch,
                mean_loss: if n > 0 { loss / n as f64 } else { 0.0 },
                validation_recall: recall,
            });
            let Some(recall) = recall else { continue };
            if best.as_ref().map_or(true, |(r, _, _)| recall > *r) {
                best = Some((recall, model.user_factors.clone(), model.item_factors.clone()));
                model.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
        match best {
            Some((_, users, items)) => {
                model.user_factors = users;
                model.item_factors = items;
            }
            None => model.best_epoch = model.log.len(),
        }
        Ok(model)
    }

    /// One SGD update on a triple; returns the loss before the update.
    fn step(&mut self, u: u32, i: u32, j: u32, lr: f64, reg: f64) -> f64 {
        let d = self.dim;
        let (u, i, j) = (u as usize * d, i as usize * d, j as usize * d);
        let pu = &self.user_factors[u..u + d];
        let vi = &self.item_factors[i..i + d];
        let vj = &self.item_factors[j..j + d];
        let loss = bpr_triple_loss(pu, vi, vj, reg);
        let (gu, gi, gj) = bpr_triple_gradient(pu, vi, vj, reg);
        for k in 0..d {
            self.user_factors[u + k] -= lr * gu[k];
            self.item_factors[i + k] -= lr * gi[k];
            self.item_factors[j + k] -= lr * gj[k];
        }
        loss
    }

    pub fn user_vector(&self, user: u32) -> &[f64] {
        let s = user as usize * self.dim;
        &self.user_factors[s..s + self.dim]
    }

    pub fn item_vector(&self, item: u32) -> &[f64] {
        let s = item as usize * self.dim;
        &self.item_factors[s..s + self.dim]
    }

    /// Mean regularization-free triple loss over every `(u, i⁺, j⁻)` with
    /// `j⁻` in the universe outside the user's train items.
    pub fn full_objective(&self, train: &TrainingSet) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (u, items) in train.user_items.iter().enumerate() {
            let pu = self.user_vector(u as u32);
            for &i in items {
                for &j in &train.universe {
                    if items.binary_search(&j).is_ok() {
                        continue;
                    }
                    total += bpr_triple_loss(pu, self.item_vector(i), self.item_vector(j), 0.0);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

/// Uniform draw from the universe minus the user's train items, or `None`
/// when the user has bought everything.
fn sample_negative(train: &TrainingSet, user: u32, rng: &mut ChaCha8Rng) -> Option<u32> {
    let own = &train.user_items[user as usize];
    let universe = &train.universe;
    if own.len() >= universe.len() {
        return None;
    }
    loop {
        let j = universe[rng.gen_range(0..universe.len())];
        if own.binary_search(&j).is_err() {
            return Some(j);
        }
    }
}

impl Recommender for MfBpr {
    fn universe(&self) -> &[u32] {
        &self.universe
    }

    fn score(&self, user: u32, items: &[u32]) -> Vec<f64> {
        let n_users = self.user_factors.len() / self.dim;
        if user as usize >= n_users {
            return vec![0.0; items.len()];
        }
        let pu = self.user_vector(user);
        items.iter().map(|&i| dot(pu, self.item_vector(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashSet};

    use super::*;
    use crate::models::Model;

    fn hp(dim: usize, epochs: usize) -> Hyperparameters {
        Hyperparameters {
            embedding_dim: Some(dim),
            epochs: Some(epochs),
            ..Default::default()
        }
    }

    #[test]
    fn disjoint_users_rank_own_item_first() {
        let ts = TrainingSet::from_pairs(2, 2, &[(0, 0), (1, 1)], vec![]);
        let hp = Hyperparameters {
            learning_rate: Some(0.5),
            ..hp(2, 300)
        };
        let m = MfBpr::fit(&ts, &hp, 3).unwrap();
        assert_eq!(m.recommend(0, 1, &HashSet::new()), [0]);
        assert_eq!(m.recommend(1, 1, &HashSet::new()), [1]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let ts = TrainingSet::from_pairs(4, 5, &[(0, 0), (0, 1), (1, 1), (2, 3), (3, 4), (3, 0)], vec![]);
        let a = Model::MfBpr(MfBpr::fit(&ts, &hp(4, 5), 11).unwrap());
        let b = Model::MfBpr(MfBpr::fit(&ts, &hp(4, 5), 11).unwrap());
        let c = Model::MfBpr(MfBpr::fit(&ts, &hp(4, 5), 12).unwrap());
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut v: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let reg = 0.01;
            let (gu, gi, gj) = bpr_triple_gradient(&v[0], &v[1], &v[2], reg);
            let analytic = [gu, gi, gj];
            let h = 1e-6;
            for b in 0..3 {
                for k in 0..4 {
                    let orig = v[b][k];
                    v[b][k] = orig + h;
                    let up = bpr_triple_loss(&v[0], &v[1], &v[2], reg);
                    v[b][k] = orig - h;
                    let down = bpr_triple_loss(&v[0], &v[1], &v[2], reg);
                    v[b][k] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let err = (numeric - analytic[b][k]).abs() / numeric.abs().max(analytic[b][k].abs()).max(1e-8);
                    assert!(err < 1e-4, "block {b} coord {k}: {numeric} vs {}", analytic[b][k]);
                }
            }
        }
    }

    #[test]
    fn loss_is_stable_for_large_margins() {
        let u = [100.0];
        assert!(bpr_triple_loss(&u, &[100.0], &[-100.0], 0.0) < 1e-300);
        assert!((bpr_triple_loss(&u, &[-100.0], &[100.0], 0.0) - 20000.0).abs() < 1e-9);
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let rows: Vec<(u32, u32)> = (0..6).flat_map(|u| [(u, u % 3), (u, 3 + u % 2)]).collect();
        let validation = (0..6).map(|u| (u, BTreeSet::from([(u + 1) % 3]))).collect();
        let ts = TrainingSet::from_pairs(6, 5, &rows, validation);
        let hp = Hyperparameters {
            patience: Some(2),
            ..hp(3, 40)
        };
        let m = MfBpr::fit(&ts, &hp, 7).unwrap();
        let best = m.log.iter().filter_map(|l| l.validation_recall).fold(f64::MIN, f64::max);
        assert_eq!(m.log[m.best_epoch - 1].validation_recall, Some(best));
        assert!(m.log.len() <= m.best_epoch + 2);
    }

    #[test]
    fn huge_learning_rate_diverges_with_epoch() {
        let ts = TrainingSet::from_pairs(2, 3, &[(0, 0), (1, 1), (1, 2)], vec![]);
        let hp = Hyperparameters {
            learning_rate: Some(1e300),
            ..hp(2, 5)
        };
        match MfBpr::fit(&ts, &hp, 1) {
            Err(Error::Divergence { model: "mfbpr", epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
