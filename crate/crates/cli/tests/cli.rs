use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn splitkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = splitkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    splitkit(dir, args).status.code().unwrap()
}

const SMALL_RUN: &str = r#"{
    "dataset": {"synth": {"n_users": 80, "n_items": 40, "baskets_per_user": [3, 6],
                          "items_per_basket": [1, 3], "horizon": 120}},
    "filter": {"order": ["items"]},
    "strategies": ["l1i", "tem"],
    "models": ["pop", "itemknn"],
    "seed": 3
}"#;

#[test]
fn stepwise_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "data"]);
    assert!(d.join("data/drift_truth.json").is_file());

    for tag in ["l1i", "tem"] {
        let out = format!("split-{tag}");
        let manifest = ok(d, &["split", "data", "--strategy", tag, "--filter", "none", "--out", &out]);
        assert!(manifest.contains("\"dataset_digest\""), "{manifest}");
        for model in ["pop", "itemknn"] {
            let ckpt = format!("{model}-{tag}.json");
            ok(d, &["train", "--model", model, "--split", &format!("split-{tag}"), "--out", &ckpt]);
            ok(
                d,
                &["eval", "--model", &ckpt, "--split", &format!("split-{tag}"), "--out", &format!("r-{model}-{tag}.json")],
            );
        }
    }
    let table = ok(
        d,
        &[
            "compare", "--reports", "r-pop-l1i.json", "r-itemknn-l1i.json", "r-pop-tem.json", "r-itemknn-tem.json",
            "--scatter", "scatter",
        ],
    );
    assert!(table.contains("pop") && table.contains("itemknn"), "{table}");
    assert!(d.join("scatter").read_dir().unwrap().count() > 0);

    // a checkpoint evaluated against a different split is refused
    assert_eq!(code(d, &["eval", "--model", "pop-l1i.json", "--split", "split-tem"]), 3);
    let info = ok(d, &["manifest", "pop-l1i.json"]);
    assert!(info.contains("split_digest"));
}

#[test]
fn run_twice_gives_the_same_digest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.json"), SMALL_RUN).unwrap();
    let first = ok(d, &["run", "--config", "exp.json", "--out", "a"]);
    let again = ok(d, &["run", "--config", "exp.json", "--out", "a"]);
    let fresh = ok(d, &["run", "--config", "exp.json", "--out", "b"]);
    assert_eq!(first.trim().len(), 64);
    assert_eq!(first, again);
    assert_eq!(first, fresh);
    assert!(d.join("a/compare/ndcg.txt").is_file());
    assert_ne!(ok(d, &["run", "--config", "exp.json", "--out", "c", "--seed", "4"]), first);
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let bad = SMALL_RUN.replace(r#"["l1i", "tem"]"#, r#"[{"tag": "tem", "test_ratio": 1.2}]"#);
    fs::write(d.join("bad.json"), bad).unwrap();
    let out = splitkit(d, &["run", "--config", "bad.json", "--check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_ratio"));

    assert_eq!(code(d, &["split", "data", "--strategy", "sideways", "--out", "x"]), 2);
    assert_eq!(code(d, &["split", "missing", "--strategy", "l1i", "--out", "x"]), 3);

    let diverging = SMALL_RUN.replace(
        r#"["pop", "itemknn"]"#,
        r#"[{"model": "mfbpr", "hyperparameters": {"learning_rate": 1e300, "epochs": 3}}]"#,
    );
    fs::write(d.join("diverge.json"), diverging).unwrap();
    assert_eq!(code(d, &["run", "--config", "diverge.json", "--out", "bundle"]), 4);
    assert!(
        fs::read_dir(d.join("bundle/runs"))
            .unwrap()
            .flat_map(|e| fs::read_dir(e.unwrap().path()).unwrap())
            .any(|e| e.unwrap().path().join("FAILED").is_file())
    );
}

#[test]
fn version_flag_prints_the_toolkit_version() {
    let tmp = tempfile::tempdir().unwrap();
    let v = ok(tmp.path(), &["--version"]);
    assert!(v.contains(env!("CARGO_PKG_VERSION")), "{v}");
}
