use std::path::Path;
use std::process::{Command, Output};

fn gridrec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridrec"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

/// Three taste groups of 20 users over 45 items, in `u.data` layout.
fn write_ratings(path: &Path) {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut out = String::new();
    for user in 1..=60u64 {
        for item in 1..=45u64 {
            let liked = (item - 1) / 15 == (user - 1) % 3;
            let roll = next() % 100;
            if (liked && roll < 70) || (!liked && roll < 8) {
                let rating = if liked {
                    3 + next() % 3
                } else {
                    1 + next() % 5
                };
                out.push_str(&format!(
                    "{user}\t{item}\t{rating}\t{}\n",
                    880_000_000 + user * 100 + item
                ));
            }
        }
    }
    std::fs::write(path, out).unwrap();
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gridrec(&["frobnicate"], dir.path()).status.code(), Some(2));
    let out = gridrec(&["train"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--grid"));
    assert_eq!(
        gridrec(&["recommend", "--model", "m.json"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gridrec(&["repro", "--help"], dir.path()).status.code(),
        Some(0)
    );
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridrec(&["ingest", "--ratings", "nope.data"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_by_stage_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_ratings(&d.join("u.data"));
    ok(&gridrec(
        &["ingest", "--ratings", "u.data", "--seed", "3"],
        d,
    ));
    ok(&gridrec(
        &[
            "bicluster",
            "--split",
            "split.json",
            "--n",
            "3",
            "--seed",
            "4",
        ],
        d,
    ));
    ok(&gridrec(
        &["map", "--biclusters", "biclusters.json", "--n", "3"],
        d,
    ));
    ok(&gridrec(
        &[
            "train",
            "--grid",
            "grid.json",
            "--episodes",
            "400",
            "--horizon",
            "15",
            "--curve",
            "curve.csv",
        ],
        d,
    ));
    let curve = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 401);
    assert!(curve.starts_with("episode,return,window_avg\n1,"));

    let rec = gridrec(
        &[
            "recommend",
            "--model",
            "model.json",
            "--profile",
            "1,2",
            "--n",
            "5",
        ],
        d,
    );
    ok(&rec);
    let rec: serde_json::Value = serde_json::from_slice(&rec.stdout).unwrap();
    let items = rec["items"].as_array().unwrap();
    assert!(!items.is_empty() && items.len() <= 5);
    assert!(items.iter().all(|i| i["item"] != 1 && i["item"] != 2));

    ok(&gridrec(
        &[
            "evaluate",
            "--model",
            "model.json",
            "--split",
            "split.json",
            "--top-n",
            "10",
        ],
        d,
    ));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["version"], 1);
    assert_eq!(report["top_n"], 10);
    let methods: Vec<&str> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(
        methods,
        ["Global-average", "User-based", "Item-based", "Proposed"]
    );

    // Same flags, same bytes.
    std::fs::rename(d.join("model.json"), d.join("model-a.json")).unwrap();
    ok(&gridrec(
        &[
            "train",
            "--grid",
            "grid.json",
            "--episodes",
            "400",
            "--horizon",
            "15",
        ],
        d,
    ));
    assert_eq!(
        std::fs::read(d.join("model.json")).unwrap(),
        std::fs::read(d.join("model-a.json")).unwrap()
    );
}

#[test]
fn corrupted_model_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_ratings(&d.join("u.data"));
    ok(&gridrec(&["ingest", "--ratings", "u.data"], d));
    ok(&gridrec(
        &["bicluster", "--split", "split.json", "--n", "2"],
        d,
    ));
    ok(&gridrec(
        &["map", "--biclusters", "biclusters.json", "--n", "2"],
        d,
    ));
    ok(&gridrec(
        &["train", "--grid", "grid.json", "--episodes", "50"],
        d,
    ));

    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    let first = doc["cells"][0].clone();
    doc["cells"][1] = first;
    std::fs::write(d.join("model.json"), doc.to_string()).unwrap();

    let out = gridrec(
        &["evaluate", "--model", "model.json", "--split", "split.json"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate_cell"));
}
