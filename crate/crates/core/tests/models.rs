use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splitkit::models::{fit, Hyperparameters, ItemKnn, MfBpr, ModelKind, Recommender, TrainingSet};

/// Dense cosine over binary incidence columns, every pair enumerated.
fn dense_cosine(matrix: &[Vec<u8>], i: usize, j: usize) -> f64 {
    let dot: f64 = matrix.iter().map(|row| (row[i] * row[j]) as f64).sum();
    let ni: f64 = matrix.iter().map(|row| row[i] as f64).sum();
    let nj: f64 = matrix.iter().map(|row| row[j] as f64).sum();
    if ni == 0.0 || nj == 0.0 {
        0.0
    } else {
        dot / (ni * nj).sqrt()
    }
}

#[test]
fn itemknn_matches_dense_oracle_on_five_users() {
    let matrix: Vec<Vec<u8>> = vec![
        vec![1, 1, 0, 0, 1, 0],
        vec![1, 0, 1, 0, 0, 0],
        vec![0, 1, 1, 1, 0, 0],
        vec![1, 1, 1, 0, 0, 1],
        vec![0, 0, 0, 1, 1, 0],
    ];
    let rows: Vec<(u32, u32)> = matrix
        .iter()
        .enumerate()
        .flat_map(|(u, r)| r.iter().enumerate().filter(|(_, &v)| v == 1).map(move |(i, _)| (u as u32, i as u32)))
        .collect();
    let ts = TrainingSet::from_pairs(5, 6, &rows, vec![]);
    // neighbourhood larger than the catalogue keeps every neighbour
    let knn = ItemKnn::fit(&ts, 100);
    for u in 0..5 {
        let items: Vec<u32> = (0..6).collect();
        let got = knn.score(u as u32, &items);
        for i in 0..6 {
            let want: f64 = (0..6)
                .filter(|&j| j != i && matrix[u][j] == 1)
                .map(|j| dense_cosine(&matrix, i, j))
                .sum();
            assert!((got[i] - want).abs() < 1e-12, "user {u} item {i}: {} vs {want}", got[i]);
        }
    }
}

#[test]
fn recommend_never_returns_excluded_or_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<(u32, u32)> = (0..300).map(|_| (rng.gen_range(0..20), rng.gen_range(0..40))).collect();
    let ts = TrainingSet::from_pairs(20, 40, &rows, vec![]);
    let hp = Hyperparameters {
        epochs: Some(3),
        embedding_dim: Some(4),
        ..Default::default()
    };
    for kind in ModelKind::ALL {
        let model = fit(kind, &ts, &hp, 1).unwrap();
        for u in 0..20u32 {
            let exclude: HashSet<u32> = ts.user_items[u as usize].iter().copied().collect();
            let recs = model.recommend(u, 10, &exclude);
            let unique: HashSet<u32> = recs.iter().copied().collect();
            assert_eq!(unique.len(), recs.len(), "{kind}: duplicates");
            assert!(recs.iter().all(|i| !exclude.contains(i)), "{kind}: excluded item returned");
        }
    }
}

#[test]
fn bpr_first_epoch_lowers_the_pairwise_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<(u32, u32)> = (0..30u32)
        .flat_map(|u| {
            let group = u % 3;
            (0..4).map(move |k| (u, group * 10 + k))
        })
        .chain((0..20).map(|_| (rng.gen_range(0..30), rng.gen_range(0..30))))
        .collect();
    let ts = TrainingSet::from_pairs(30, 30, &rows, vec![]);
    let hp = Hyperparameters {
        embedding_dim: Some(8),
        epochs: Some(1),
        learning_rate: Some(0.1),
        ..Default::default()
    };
    let before = MfBpr::initial(&ts, 8, 4).full_objective(&ts);
    let after = MfBpr::fit(&ts, &hp, 4).unwrap().full_objective(&ts);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn popularity_is_blind_to_future_items_under_a_global_boundary() {
    use splitkit::split::{split, SplitStrategy, StrategyTag};
    use splitkit::synth::{generate, DriftSchedule, DriftWindow, SynthConfig};

    // items 0..4 exist throughout, items 5..9 only in the last quarter
    let early: Vec<f64> = (0..10).map(|i| if i < 5 { 1.0 } else { 0.0 }).collect();
    let late = vec![1.0; 10];
    let cfg = SynthConfig {
        n_users: 200,
        n_items: 10,
        baskets_per_user: (3, 6),
        items_per_basket: (1, 2),
        horizon: 400,
        time_unit: 86_400,
        drift: DriftSchedule::Windows {
            windows: vec![
                DriftWindow { start: 0, end: 300, weights: early },
                DriftWindow { start: 300, end: 400, weights: late },
            ],
        },
        activity_span: (0.3, 0.6),
        seed: 2,
    };
    let synth = generate(&cfg).unwrap();
    let ds = synth.dataset;
    let future: Vec<u32> = (5..10).filter_map(|i| ds.items().get(&format!("i{i}"))).collect();
    assert!(!future.is_empty());

    let score_future = |tag: StrategyTag, test_ratio: f64| -> Vec<f64> {
        let s = split(&ds, &SplitStrategy::new(tag).with_ratios(test_ratio, 0.1)).unwrap();
        let ts = TrainingSet::from_split(&ds, &s);
        let model = fit(ModelKind::Popularity, &ts, &Hyperparameters::default(), 0).unwrap();
        model.score(0, &future)
    };
    // the boundary falls inside the late window once at least a quarter of
    // the baskets are held out
    assert!(score_future(StrategyTag::TemporalGlobal, 0.3).iter().all(|&s| s == 0.0));
    assert!(score_future(StrategyTag::LeaveOneLastItem, 0.3).iter().any(|&s| s > 0.0));
}
