//! Seeded synthetic transaction logs with step-wise popularity drift.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BasketPolicy, Dataset, DatasetBuilder};
use crate::util::{derive_seed, to_json_bytes, write_file};

pub const DRIFT_TRUTH_FILE: &str = "drift_truth.json";

/// Item weights in force over `[start, end)` time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftWindow {
    pub start: i64,
    pub end: i64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSchedule {
    /// Explicit windows; they must tile `[0, horizon)`.
    Windows { windows: Vec<DriftWindow> },
    /// `windows` equal-length windows of Zipf popularity. Each window
    /// shifts the popularity order by `n_items / windows` items, so the head
    /// of one window is unpopular in the previous one.
    Rotating { windows: usize, exponent: f64 },
}

impl Default for DriftSchedule {
    fn default() -> Self {
        DriftSchedule::Rotating {
            windows: 4,
            exponent: 1.0,
        }
    }
}

fn default_unit() -> i64 {
    86_400
}

fn default_span() -> (f64, f64) {
    (0.3, 0.7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Inclusive range.
    pub baskets_per_user: (usize, usize),
    /// Inclusive range.
    pub items_per_basket: (usize, usize),
    /// Number of time units; basket times fall in `[0, horizon)`.
    pub horizon: i64,
    /// Seconds per time unit.
    #[serde(default = "default_unit")]
    pub time_unit: i64,
    #[serde(default)]
    pub drift: DriftSchedule,
    /// Range of the fraction of the horizon each user is active; the
    /// active interval's start is uniform over the remaining room.
    #[serde(default = "default_span")]
    pub activity_span: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    /// A small drifting log suitable for tests and demos.
    pub fn small(seed: u64) -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            baskets_per_user: (3, 8),
            items_per_basket: (1, 4),
            horizon: 400,
            time_unit: default_unit(),
            drift: DriftSchedule::default(),
            activity_span: default_span(),
            seed,
        }
    }

    /// Resolves the drift schedule into explicit windows, checking every
    /// constraint.
    pub fn windows(&self) -> Result<Vec<DriftWindow>> {
        let bad = |name: &str, reason: String| Err(Error::InfeasibleSynth(format!("{name}: {reason}")));
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users/n_items", "must be positive".into());
        }
        let (bl, bh) = self.baskets_per_user;
        let (il, ih) = self.items_per_basket;
        if bl == 0 || bl > bh {
            return bad("baskets_per_user", format!("({bl}, {bh}) is not a positive range"));
        }
        if il == 0 || il > ih {
            return bad("items_per_basket", format!("({il}, {ih}) is not a positive range"));
        }
        if ih > self.n_items {
            return bad("items_per_basket", format!("{ih} exceeds n_items {}", self.n_items));
        }
        if self.horizon <= 0 || self.time_unit <= 0 {
            return bad("horizon", "horizon and time_unit must be positive".into());
        }
        let (sl, sh) = self.activity_span;
        if !(sl > 0.0 && sl <= sh && sh <= 1.0) {
            return bad("activity_span", format!("({sl}, {sh}) must satisfy 0 < lo <= hi <= 1"));
        }
        let windows = match &self.drift {
            DriftSchedule::Windows { windows } => windows.clone(),
            &DriftSchedule::Rotating { windows, exponent } => {
                if windows == 0 || windows as i64 > self.horizon {
                    return bad("drift.windows", format!("{windows} windows for horizon {}", self.horizon));
                }
                if !(exponent.is_finite() && exponent >= 0.0) {
                    return bad("drift.exponent", format!("{exponent} must be nonnegative"));
                }
                let shift = (self.n_items / windows).max(1);
                (0..windows)
                    .map(|w| DriftWindow {
                        start: self.horizon * w as i64 / windows as i64,
                        end: self.horizon * (w as i64 + 1) / windows as i64,
                        weights: (0..self.n_items)
                            .map(|i| {
                                let rank = (i + self.n_items - (w * shift) % self.n_items) % self.n_items;
                                1.0 / ((rank + 1) as f64).powf(exponent)
                            })
                            .collect(),
                    })
                    .collect()
            }
        };
        let mut at = 0;
        for (k, w) in windows.iter().enumerate() {
            if w.start != at || w.end <= w.start {
                return bad(&format!("drift.windows[{k}]"), format!("[{}, {}) does not continue from {at}", w.start, w.end));
            }
            if w.weights.len() != self.n_items {
                return bad(&format!("drift.windows[{k}].weights"), format!("{} weights for {} items", w.weights.len(), self.n_items));
            }
            if w.weights.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad(&format!("drift.windows[{k}].weights"), "weights must be finite and nonnegative".into());
            }
            let positive = w.weights.iter().filter(|&&x| x > 0.0).count();
            if positive < ih {
                return bad(
                    &format!("drift.windows[{k}].weights"),
                    format!("{positive} items with positive weight cannot fill baskets of {ih}"),
                );
            }
            at = w.end;
        }
        if at != self.horizon {
            return bad("drift.windows", format!("windows end at {at}, horizon is {}", self.horizon));
        }
        Ok(windows)
    }
}

/// The drift schedule a log was generated from, keyed by external item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTruth {
    pub time_unit: i64,
    pub item_ids: Vec<String>,
    pub windows: Vec<DriftWindow>,
}

impl DriftTruth {
    /// Earliest timestamp (seconds) at which `item` has positive weight.
    pub fn first_positive(&self, item: &str) -> Option<i64> {
        let k = self.item_ids.iter().position(|id| id == item)?;
        self.windows
            .iter()
            .find(|w| w.weights[k] > 0.0)
            .map(|w| w.start * self.time_unit)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &to_json_bytes(self)?)
    }
}

pub struct Synthetic {
    pub dataset: Dataset,
    pub truth: DriftTruth,
}

struct Sampler {
    cumulative: Vec<f64>,
    weights: Vec<f64>,
}

impl Sampler {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            cumulative,
            weights: weights.to_vec(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let x = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= x);
        // skip zero-weight items that share a cumulative value
        let mut k = k.min(self.weights.len() - 1);
        while self.weights[k] == 0.0 {
            k = if k + 1 < self.weights.len() { k + 1 } else { 0 };
        }
        k
    }

    /// `n` distinct items, each draw proportional to the remaining weights.
    fn sample_distinct(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        while chosen.len() < n {
            let mut pick = None;
            for _ in 0..64 {
                let k = self.draw(rng);
                if !chosen.contains(&k) {
                    pick = Some(k);
                    break;
                }
            }
            let k = match pick {
                Some(k) => k,
                None => self.draw_excluding(&chosen, rng),
            };
            chosen.push(k);
        }
        chosen
    }

    fn draw_excluding(&self, chosen: &[usize], rng: &mut ChaCha8Rng) -> usize {
        let rest = |k: &usize| !chosen.contains(k) && self.weights[*k] > 0.0;
        let total: f64 = (0..self.weights.len()).filter(rest).map(|k| self.weights[k]).sum();
        let mut x = rng.gen::<f64>() * total;
        let mut last = 0;
        for k in (0..self.weights.len()).filter(rest) {
            last = k;
            x -= self.weights[k];
            if x < 0.0 {
                return k;
            }
        }
        last
    }
}

/// Generates a log from `config`. Identical configs give identical logs.
pub fn generate(config: &SynthConfig) -> Result<Synthetic> {
    let windows = config.windows()?;
    let samplers: Vec<Sampler> = windows.iter().map(|w| Sampler::new(&w.weights)).collect();
    let width = config.n_items.saturating_sub(1).to_string().len();
    let item_ids: Vec<String> = (0..config.n_items).map(|i| format!("i{i:0width$}")).collect();
    let uwidth = config.n_users.saturating_sub(1).to_string().len();

    let mut builder = DatasetBuilder::new(BasketPolicy::Reject);
    let mut line = 0;
    for u in 0..config.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("synth-user-{u}")));
        let (sl, sh) = config.activity_span;
        let span = if sh > sl { rng.gen_range(sl..=sh) } else { sl };
        let len = ((span * config.horizon as f64).round() as i64).clamp(1, config.horizon);
        let start = rng.gen_range(0..=config.horizon - len);
        let n_baskets = rng.gen_range(config.baskets_per_user.0..=config.baskets_per_user.1);
        let user = format!("u{u:0uwidth$}");
        for b in 0..n_baskets {
            let t = start + rng.gen_range(0..len);
            let w = windows.partition_point(|w| w.end <= t);
            let size = rng.gen_range(config.items_per_basket.0..=config.items_per_basket.1);
            let basket = format!("{user}-{b}");
            for k in samplers[w].sample_distinct(size, &mut rng) {
                line += 1;
                builder.push(&user, &item_ids[k], Some(&basket), t * config.time_unit, 1, line)?;
            }
        }
    }
    Ok(Synthetic {
        dataset: builder.finish(),
        truth: DriftTruth {
            time_unit: config.time_unit,
            item_ids,
            windows,
        },
    })
}
