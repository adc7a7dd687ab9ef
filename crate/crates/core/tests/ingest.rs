use std::fs;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splitkit::ingest::{
    export_dataset, import_dataset, parse_transactions, BasketPolicy, DatasetBuilder, SchemaConfig, INTERACTIONS_FILE,
};
use splitkit::synth::{generate, SynthConfig};

/// Per-user chronology must equal a plain comparison sort on
/// (timestamp, basket first-seen order, row order).
#[test]
fn chronology_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let mut b = DatasetBuilder::new(BasketPolicy::Reject);
        let mut events = Vec::new();
        for row in 0..100u64 {
            let user = rng.gen_range(0..6);
            let ts = rng.gen_range(0..10i64);
            // one basket per (user, ts) so no basket spans two timestamps
            let basket = format!("u{user}@{ts}");
            let item = format!("i{row}");
            b.push(&format!("u{user}"), &item, Some(&basket), ts, 1, row + 1).unwrap();
            events.push((format!("u{user}"), basket, ts, item));
        }
        let ds = b.finish();

        let mut basket_order: Vec<&str> = Vec::new();
        for (_, basket, _, _) in &events {
            if !basket_order.contains(&basket.as_str()) {
                basket_order.push(basket);
            }
        }
        let rank = |b: &str| basket_order.iter().position(|x| *x == b).unwrap();
        for u in 0..ds.n_users() as u32 {
            let user = ds.users().id(u);
            let mut expected: Vec<(i64, usize, usize, &str)> = events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.0 == user)
                .map(|(row, e)| (e.2, rank(&e.1), row, e.3.as_str()))
                .collect();
            expected.sort();
            let got: Vec<&str> = ds
                .chronology(u)
                .unwrap()
                .iter()
                .map(|&i| ds.items().id(ds.interaction(i).item))
                .collect();
            let want: Vec<&str> = expected.iter().map(|e| e.3).collect();
            assert_eq!(got, want, "user {user}");
        }
    }
}

#[test]
fn shuffling_rows_with_distinct_times_keeps_chronologies() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows: Vec<String> = (0..200)
        .map(|t| format!("u{},i{},b{t},{t},1", t % 7, rng.gen_range(0..30)))
        .collect();
    let parse = |rows: &[String]| {
        let text = format!("user,item,basket,timestamp,quantity\n{}\n", rows.join("\n"));
        parse_transactions(text.as_bytes(), &SchemaConfig::canonical()).unwrap()
    };
    let a = parse(&rows);
    rows.shuffle(&mut rng);
    let b = parse(&rows);
    for u in 0..a.n_users() as u32 {
        let user = a.users().id(u);
        let ub = b.users().get(user).unwrap();
        let times = |ds: &splitkit::ingest::Dataset, u| -> Vec<(i64, String)> {
            ds.chronology(u)
                .unwrap()
                .iter()
                .map(|&i| {
                    let x = ds.interaction(i);
                    (x.timestamp, ds.items().id(x.item).to_owned())
                })
                .collect()
        };
        assert_eq!(times(&a, u), times(&b, ub));
    }
}

#[test]
fn ten_thousand_row_synth_reexports_byte_identically() {
    let mut cfg = SynthConfig::small(17);
    cfg.n_users = 1_000;
    cfg.n_items = 400;
    cfg.baskets_per_user = (3, 7);
    cfg.items_per_basket = (1, 4);
    let ds = generate(&cfg).unwrap().dataset;
    assert!(ds.len() >= 10_000, "only {} rows", ds.len());

    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("a"), dir.path().join("b"));
    export_dataset(&ds, &first, false).unwrap();
    let back = import_dataset(&first).unwrap();
    assert_eq!(back, ds);
    export_dataset(&back, &second, false).unwrap();
    for entry in fs::read_dir(&first).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
    assert!(first.join(INTERACTIONS_FILE).is_file());
}

/// Raw Ta-Feng counts before filtering; runs only when the file is given.
#[test]
fn tafeng_raw_counts() {
    let Some(path) = std::env::var_os("SPLITKIT_TAFENG") else {
        eprintln!("SPLITKIT_TAFENG not set, skipping");
        return;
    };
    let ds = parse_transactions(fs::File::open(path).unwrap(), &SchemaConfig::tafeng()).unwrap();
    let c = ds.counts();
    assert_eq!((c.interactions, c.users, c.items, c.baskets), (464_118, 9_238, 7_973, 77_202));
}
