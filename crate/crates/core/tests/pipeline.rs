use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splitkit::compare::{kendall_tau, swap_report_from_rankings, SystemRanking};
use splitkit::eval::{evaluate, EvalConfig, ReportIds};
use splitkit::models::{fit, Hyperparameters, ModelKind, TrainingSet};
use splitkit::split::{export_release, leakage_report, load_release, split, SplitStrategy, StrategyTag};
use splitkit::synth::{generate, SynthConfig};

fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let (mut p, mut q, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = x[i].partial_cmp(&x[j]).unwrap();
            let b = y[i].partial_cmp(&y[j]).unwrap();
            match (a.is_eq(), b.is_eq()) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                _ if a == b => p += 1,
                _ => q += 1,
            }
        }
    }
    (p - q) as f64 / (((p + q + tx) * (p + q + ty)) as f64).sqrt()
}

#[test]
fn swap_report_tau_equals_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in [2usize, 3, 10, 57, 200, 500] {
        let a: Vec<(String, f64)> = (0..n).map(|k| (format!("m{k}"), rng.gen_range(0..50) as f64)).collect();
        let b: Vec<(String, f64)> = (0..n).map(|k| (format!("m{k}"), rng.gen_range(0..50) as f64)).collect();
        let x: Vec<f64> = a.iter().map(|e| e.1).collect();
        let y: Vec<f64> = b.iter().map(|e| e.1).collect();
        if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
            continue;
        }
        let ra = SystemRanking::new("l1i", "NDCG@10", a).unwrap();
        let rb = SystemRanking::new("tem", "NDCG@10", b).unwrap();
        let report = swap_report_from_rankings(vec![ra, rb], "l1i").unwrap();
        assert_eq!(report.comparisons[0].tau, brute_tau(&x, &y), "n = {n}");
        let counts = report.comparisons[0].counts;
        assert_eq!(counts.total(), (n * (n - 1) / 2) as u64);
        assert_eq!(report.comparisons[0].displacements.iter().map(|d| d.1).sum::<i64>(), 0);
    }
}

#[test]
fn tau_is_symmetric_and_monotone_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
        let (Ok(xy), Ok(yx)) = (kendall_tau(&x, &y), kendall_tau(&y, &x)) else { continue };
        assert_eq!(xy.tau, yx.tau);
        let fx: Vec<f64> = x.iter().map(|v| (v * 0.3).exp() - 7.0).collect();
        assert_eq!(kendall_tau(&fx, &y).unwrap().tau, xy.tau);
    }
}

#[test]
fn release_round_trip_then_train_and_evaluate() {
    let ds = generate(&SynthConfig::small(6)).unwrap().dataset;
    let s = split(&ds, &SplitStrategy::new(StrategyTag::LeaveOneLastBasket)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_release(&s, &ds, dir.path(), true).unwrap();
    let (ds2, s2) = load_release(dir.path()).unwrap();
    assert_eq!(ds2, ds);
    assert_eq!(s2, s);

    let train = TrainingSet::from_split(&ds2, &s2);
    let model = fit(ModelKind::ItemKnn, &train, &Hyperparameters::default(), 0).unwrap();
    let report = evaluate(&model, &ds2, &s2, &EvalConfig::default(), ReportIds::default()).unwrap();
    assert!(report.evaluated_users > 0);
    assert!((0.0..=1.0).contains(&report.mean_ndcg));
    assert!((0.0..=1.0).contains(&report.mean_recall));
}

#[test]
fn overlapping_spans_leak_only_under_per_user_boundaries() {
    let ds = generate(&SynthConfig::small(12)).unwrap().dataset;
    for (tag, leaks) in [
        (StrategyTag::LeaveOneLastItem, true),
        (StrategyTag::LeaveOneLastBasket, true),
        (StrategyTag::TemporalUser, true),
        (StrategyTag::TemporalGlobal, false),
    ] {
        let s = split(&ds, &SplitStrategy::new(tag)).unwrap();
        let report = leakage_report(&s, &ds).unwrap();
        assert_eq!(report.leakage_fraction > 0.0, leaks, "{tag}: {}", report.leakage_fraction);
        assert_eq!(report.leakage_fraction, s.manifest.leakage_fraction);
    }
}
