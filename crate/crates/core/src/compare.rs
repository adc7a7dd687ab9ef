//! Kendall's τ-b between system rankings and rank-swap tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, Metric};
use crate::split::StrategyTag;

/// Pair classification behind a τ-b value. `ties_x` and `ties_y` count
/// pairs tied on that side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_both: u64,
}

impl PairCounts {
    /// `(P − Q) / √((P + Q + T_x)(P + Q + T_y))`
    pub fn tau_b(&self) -> Result<f64> {
        let pq = (self.concordant + self.discordant) as f64;
        let den = ((pq + self.ties_x as f64) * (pq + self.ties_y as f64)).sqrt();
        if den == 0.0 {
            return Err(Error::UndefinedTau("every pair is tied on one side".into()));
        }
        Ok((self.concordant as f64 - self.discordant as f64) / den)
    }

    pub fn total(&self) -> u64 {
        self.concordant + self.discordant + self.ties_x + self.ties_y + self.ties_both
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau {
    pub tau: f64,
    pub counts: PairCounts,
}

/// Kendall's τ-b of paired score lists, in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Tau> {
    if x.len() != y.len() {
        return Err(Error::UndefinedTau(format!("score lists differ in length ({} vs {})", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedTau("need at least two paired scores".into()));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::UndefinedTau(format!("non-finite score {v}")));
    }
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let tied_x = tied_pairs(idx.iter().map(|&i| x[i]).collect::<Vec<_>>().as_slice(), |a, b| a == b);
    let joint: Vec<(f64, f64)> = idx.iter().map(|&i| (x[i], y[i])).collect();
    let tied_both = tied_pairs(&joint, |a, b| a == b);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut buf);
    let tied_y = tied_pairs(&ys, |a, b| a == b);

    let all = n * (n - 1) / 2;
    if tied_x == all || tied_y == all {
        return Err(Error::UndefinedTau("all scores tied on one side".into()));
    }
    let counts = PairCounts {
        concordant: all + tied_both - tied_x - tied_y - discordant,
        discordant,
        ties_x: tied_x - tied_both,
        ties_y: tied_y - tied_both,
        ties_both: tied_both,
    };
    Ok(Tau {
        tau: counts.tau_b()?,
        counts,
    })
}

/// Pairs within runs of equal adjacent values of a sorted slice.
fn tied_pairs<T: Copy>(sorted: &[T], eq: impl Fn(T, T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(w[0], w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts ascending and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Systems ordered by descending score under one strategy; equal scores
/// are ordered by system id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRanking {
    pub strategy: String,
    pub metric: String,
    pub entries: Vec<(String, f64)>,
}

impl SystemRanking {
    pub fn new(strategy: impl Into<String>, metric: impl Into<String>, mut entries: Vec<(String, f64)>) -> Result<Self> {
        let strategy = strategy.into();
        if let Some((id, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid("score", format!("{id} under {strategy} is {v}")));
        }
        let mut seen = BTreeSet::new();
        if let Some((id, _)) = entries.iter().find(|(id, _)| !seen.insert(id.as_str())) {
            return Err(Error::invalid("system", format!("{id} appears twice under {strategy}")));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            strategy,
            metric: metric.into(),
            entries,
        })
    }

    /// 1-based rank of `system`.
    pub fn rank(&self, system: &str) -> Option<usize> {
        self.entries.iter().position(|(id, _)| id == system).map(|p| p + 1)
    }

    pub fn score(&self, system: &str) -> Option<f64> {
        self.entries.iter().find(|(id, _)| id == system).map(|&(_, s)| s)
    }

    fn systems(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    pub reference: String,
    pub target: String,
    pub tau: f64,
    pub counts: PairCounts,
    /// `(system, reference rank − target rank)` in reference order; positive
    /// means the system ranks higher under the target.
    pub displacements: Vec<(String, i64)>,
}

/// Compares two rankings over the same systems.
pub fn compare_rankings(reference: &SystemRanking, target: &SystemRanking) -> Result<RankComparison> {
    check_same_systems(reference, target)?;
    let ids: Vec<&str> = reference.entries.iter().map(|(id, _)| id.as_str()).collect();
    let x: Vec<f64> = reference.entries.iter().map(|&(_, s)| s).collect();
    let y: Vec<f64> = ids.iter().map(|id| target.score(id).expect("same systems")).collect();
    let tau = kendall_tau(&x, &y)?;
    let displacements = ids
        .iter()
        .enumerate()
        .map(|(r, id)| (id.to_string(), (r + 1) as i64 - target.rank(id).expect("same systems") as i64))
        .collect();
    Ok(RankComparison {
        reference: reference.strategy.clone(),
        target: target.strategy.clone(),
        tau: tau.tau,
        counts: tau.counts,
        displacements,
    })
}

fn check_same_systems(a: &SystemRanking, b: &SystemRanking) -> Result<()> {
    let (sa, sb) = (a.systems(), b.systems());
    if sa == sb {
        return Ok(());
    }
    let only_a: Vec<_> = sa.difference(&sb).copied().collect();
    let only_b: Vec<_> = sb.difference(&sa).copied().collect();
    Err(Error::ModelSetMismatch(format!(
        "only under {}: [{}]; only under {}: [{}]",
        a.strategy,
        only_a.join(", "),
        b.strategy,
        only_b.join(", ")
    )))
}

/// Same strategy when both labels name the same tag, or are equal strings.
pub fn same_strategy(a: &str, b: &str) -> bool {
    match (a.parse::<StrategyTag>(), b.parse::<StrategyTag>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Groups reports into one ranking per strategy, in first-seen order.
pub fn rankings_from_reports(reports: &[EvalReport], metric: Metric) -> Result<Vec<SystemRanking>> {
    let first = reports.first().ok_or_else(|| Error::invalid("reports", "no reports given"))?;
    for r in reports {
        if r.ids.dataset != first.ids.dataset {
            return Err(Error::invalid(
                "reports",
                format!("mixed datasets {} and {}", first.ids.dataset, r.ids.dataset),
            ));
        }
        if r.config.k != first.config.k {
            return Err(Error::invalid("reports", format!("mixed cutoffs {} and {}", first.config.k, r.config.k)));
        }
    }
    let label = metric.label(first.config.k);
    let mut groups: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for r in reports {
        let entry = (r.ids.system.clone(), r.metric(metric));
        match groups.iter_mut().find(|(s, _)| same_strategy(s, &r.ids.strategy)) {
            Some((_, v)) => v.push(entry),
            None => groups.push((r.ids.strategy.clone(), vec![entry])),
        }
    }
    groups
        .into_iter()
        .map(|(s, entries)| SystemRanking::new(s, label.clone(), entries))
        .collect()
}

/// Rankings sorted by a reference strategy, with displacements and
/// pairwise τ for every strategy pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub metric: String,
    pub reference: String,
    /// Reference ranking first.
    pub rankings: Vec<SystemRanking>,
    /// Reference against each other strategy.
    pub comparisons: Vec<RankComparison>,
    /// Every unordered strategy pair, in ranking order.
    pub pairwise: Vec<RankComparison>,
}

pub fn rank_swap_report(reports: &[EvalReport], metric: Metric, reference: &str) -> Result<SwapReport> {
    swap_report_from_rankings(rankings_from_reports(reports, metric)?, reference)
}

pub fn swap_report_from_rankings(mut rankings: Vec<SystemRanking>, reference: &str) -> Result<SwapReport> {
    if rankings.len() < 2 {
        return Err(Error::invalid("reports", format!("need at least two strategies, got {}", rankings.len())));
    }
    let pos = rankings
        .iter()
        .position(|r| same_strategy(&r.strategy, reference))
        .ok_or_else(|| Error::invalid("reference", format!("no reports for strategy {reference}")))?;
    let reference = rankings.remove(pos);
    rankings.insert(0, reference);
    for r in &rankings[1..] {
        check_same_systems(&rankings[0], r)?;
    }
    let comparisons = rankings[1..]
        .iter()
        .map(|t| compare_rankings(&rankings[0], t))
        .collect::<Result<Vec<_>>>()?;
    let mut pairwise = Vec::new();
    for a in 0..rankings.len() {
        for b in a + 1..rankings.len() {
            pairwise.push(compare_rankings(&rankings[a], &rankings[b])?);
        }
    }
    Ok(SwapReport {
        metric: rankings[0].metric.clone(),
        reference: rankings[0].strategy.clone(),
        rankings,
        comparisons,
        pairwise,
    })
}

/// `▲(n)` for a system that moved up `n` places, `▼(n)` for down, empty
/// when unchanged.
pub fn arrow(displacement: i64) -> String {
    match displacement {
        0 => String::new(),
        d if d > 0 => format!("▲({d})"),
        d => format!("▼({})", -d),
    }
}

impl SwapReport {
    pub fn render_text(&self) -> String {
        let mut header = vec![format!("{} (sorted by {})", self.metric, self.reference)];
        header.extend(self.rankings.iter().map(|r| r.strategy.clone()));
        let mut rows = vec![header];
        for (id, score) in &self.rankings[0].entries {
            let mut row = vec![id.clone(), format!("{score:.4}")];
            for (r, c) in self.rankings[1..].iter().zip(&self.comparisons) {
                let d = c.displacements.iter().find(|(s, _)| s == id).map_or(0, |&(_, d)| d);
                let cell = format!("{:.4} {}", r.score(id).expect("same systems"), arrow(d));
                row.push(cell.trim_end().to_owned());
            }
            rows.push(row);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
            if n == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                writeln!(out, "{}", rule.join("  ")).unwrap();
            }
        }
        out.push('\n');
        for c in &self.pairwise {
            writeln!(out, "tau({}, {}) = {:.4}", c.reference, c.target, c.tau).unwrap();
        }
        out
    }

    /// Rows `strategy,system,score,rank,displacement`; displacement is
    /// relative to the reference.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["strategy", "system", "score", "rank", "displacement"])?;
        for (k, r) in self.rankings.iter().enumerate() {
            for (rank, (id, score)) in r.entries.iter().enumerate() {
                let d = match k {
                    0 => 0,
                    _ => self.comparisons[k - 1]
                        .displacements
                        .iter()
                        .find(|(s, _)| s == id)
                        .map_or(0, |&(_, d)| d),
                };
                w.write_record([
                    r.strategy.as_str(),
                    id,
                    &score.to_string(),
                    &(rank + 1).to_string(),
                    &d.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub system: String,
    pub model: String,
    pub hp_digest: String,
}

/// Paired scores of every system under two strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub x_strategy: String,
    pub y_strategy: String,
    pub metric: String,
    pub tau: Option<f64>,
    pub points: Vec<ScatterPoint>,
}

impl Scatter {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["x_score", "y_score", "system", "model", "hp_digest"])?;
        for p in &self.points {
            w.write_record([&p.x.to_string(), &p.y.to_string(), &p.system, &p.model, &p.hp_digest])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One scatter per unordered strategy pair. τ is absent when undefined.
pub fn scatter_pairs(reports: &[EvalReport], metric: Metric) -> Result<Vec<Scatter>> {
    let rankings = rankings_from_reports(reports, metric)?;
    let mut meta: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    for r in reports {
        meta.insert(&r.ids.system, (&r.ids.model, &r.ids.hp_digest));
    }
    let mut out = Vec::new();
    for a in 0..rankings.len() {
        for b in a + 1..rankings.len() {
            let (ra, rb) = (&rankings[a], &rankings[b]);
            check_same_systems(ra, rb)?;
            let mut points: Vec<ScatterPoint> = ra
                .entries
                .iter()
                .map(|(id, x)| {
                    let (model, hp) = meta[id.as_str()];
                    ScatterPoint {
                        x: *x,
                        y: rb.score(id).expect("same systems"),
                        system: id.clone(),
                        model: model.to_owned(),
                        hp_digest: hp.to_owned(),
                    }
                })
                .collect();
            points.sort_by(|p, q| p.system.cmp(&q.system));
            let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
            out.push(Scatter {
                x_strategy: ra.strategy.clone(),
                y_strategy: rb.strategy.clone(),
                metric: ra.metric.clone(),
                tau: kendall_tau(&xs, &ys).ok().map(|t| t.tau),
                points,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(x: &[f64], y: &[f64]) -> PairCounts {
        let mut c = PairCounts::default();
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let dx = x[i].total_cmp(&x[j]);
                let dy = y[i].total_cmp(&y[j]);
                match (dx.is_eq(), dy.is_eq()) {
                    (true, true) => c.ties_both += 1,
                    (true, false) => c.ties_x += 1,
                    (false, true) => c.ties_y += 1,
                    _ if dx == dy => c.concordant += 1,
                    _ => c.discordant += 1,
                }
            }
        }
        c
    }

    #[test]
    fn identity_and_reverse() {
        let x = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(kendall_tau(&x, &x).unwrap().tau, 1.0);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&x, &rev).unwrap().tau, -1.0);
    }

    #[test]
    fn one_swap_of_three() {
        let t = kendall_tau(&[3.0, 2.0, 1.0], &[3.0, 1.0, 2.0]).unwrap();
        assert!((t.tau - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((t.counts.concordant, t.counts.discordant), (2, 1));
    }

    #[test]
    fn knight_matches_pair_enumeration_with_ties() {
        let x = [1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 0.5];
        let y = [2.0, 2.0, 1.0, 1.0, 4.0, 0.0, 0.5];
        assert_eq!(kendall_tau(&x, &y).unwrap().counts, brute(&x, &y));
    }

    #[test]
    fn all_tied_is_undefined() {
        assert!(matches!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedTau(_))));
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn ranking(strategy: &str, scores: &[(&str, f64)]) -> SystemRanking {
        SystemRanking::new(strategy, "NDCG@10", scores.iter().map(|&(s, v)| (s.to_owned(), v)).collect()).unwrap()
    }

    #[test]
    fn identical_orderings_have_no_displacement() {
        let a = ranking("l1i", &[("a", 0.3), ("b", 0.2), ("c", 0.1)]);
        let b = ranking("tem", &[("a", 0.03), ("b", 0.02), ("c", 0.01)]);
        let c = compare_rankings(&a, &b).unwrap();
        assert_eq!(c.tau, 1.0);
        assert!(c.displacements.iter().all(|&(_, d)| d == 0));
    }

    #[test]
    fn reference_worst_moving_up_three() {
        let names = ["m1", "m2", "m3", "m4", "m5", "m6", "m7"];
        let refs: Vec<(&str, f64)> = names.iter().enumerate().map(|(k, &n)| (n, 1.0 - k as f64 * 0.1)).collect();
        // m7 overtakes m4..m6 under the target
        let target = [("m1", 0.9), ("m2", 0.8), ("m3", 0.7), ("m7", 0.65), ("m4", 0.6), ("m5", 0.5), ("m6", 0.4)];
        let report = swap_report_from_rankings(vec![ranking("tem", &target), ranking("l1i", &refs)], "l1i").unwrap();
        let d = &report.comparisons[0].displacements;
        assert_eq!(d.iter().find(|(s, _)| s == "m7").unwrap().1, 3);
        assert_eq!(d.iter().map(|&(_, v)| v).sum::<i64>(), 0);
        let text = report.render_text();
        assert!(text.contains("▲(3)"), "{text}");
        assert!(text.contains("▼(1)"));
        assert_eq!(report.reference, "l1i");
    }

    #[test]
    fn displacements_are_antisymmetric() {
        let a = ranking("x", &[("a", 3.0), ("b", 2.0), ("c", 1.0), ("d", 0.0)]);
        let b = ranking("y", &[("a", 0.0), ("b", 2.0), ("c", 3.0), ("d", 1.0)]);
        let ab = compare_rankings(&a, &b).unwrap();
        let ba = compare_rankings(&b, &a).unwrap();
        for (id, d) in &ab.displacements {
            let back = ba.displacements.iter().find(|(s, _)| s == id).unwrap().1;
            assert_eq!(*d, -back);
        }
        assert_eq!(ab.tau, ba.tau);
    }

    #[test]
    fn model_set_mismatch_names_both_sides() {
        let a = ranking("x", &[("a", 1.0), ("b", 2.0)]);
        let b = ranking("y", &[("a", 1.0), ("c", 2.0)]);
        match compare_rankings(&a, &b) {
            Err(Error::ModelSetMismatch(msg)) => {
                assert!(msg.contains("[b]") && msg.contains("[c]"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reference_accepts_aliases() {
        let a = ranking("leave-one-last-item", &[("a", 1.0), ("b", 2.0)]);
        let b = ranking("tem", &[("a", 2.0), ("b", 1.0)]);
        let r = swap_report_from_rankings(vec![b, a], "l1i").unwrap();
        assert_eq!(r.reference, "leave-one-last-item");
        assert_eq!(r.pairwise.len(), 1);
    }
}
