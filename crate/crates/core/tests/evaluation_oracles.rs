//! Baselines checked against straightforward set-based reimplementations,
//! plus whole-pipeline runs on a small planted dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use gridrec_core::evaluation::{
    baseline_global_average, baseline_item_cf, baseline_user_cf, evaluate_cold_start, EvalConfig,
    GLOBAL_AVERAGE, PROPOSED,
};
use gridrec_core::ingest::{BinaryMatrix, ColdStartSplit, RatingRecord, TestUser};
use gridrec_core::mdp_env::{GridEnv, GridState, RewardKind};
use gridrec_core::persistence::{model_to_json, popularity_of, to_canonical_json, GridModel};
use gridrec_core::pipeline::{run_repro, ReproConfig};
use gridrec_core::rl_trainer::{QTable, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Rows = BTreeMap<u32, BTreeSet<u32>>;

fn rows_of(m: &BinaryMatrix) -> Rows {
    m.user_ids()
        .iter()
        .enumerate()
        .map(|(u, &uid)| (uid, m.row(u).ones().map(|i| m.item_ids()[i]).collect()))
        .collect()
}

fn counts(rows: &Rows) -> HashMap<u32, usize> {
    let mut c = HashMap::new();
    for items in rows.values() {
        for &i in items {
            *c.entry(i).or_insert(0) += 1;
        }
    }
    c
}

fn rank(
    scores: &HashMap<u32, f64>,
    all: &[u32],
    pop: &HashMap<u32, usize>,
    profile: &BTreeSet<u32>,
    n: usize,
) -> Vec<u32> {
    let mut scored: Vec<u32> = scores
        .iter()
        .filter(|(i, &s)| s > 0.0 && !profile.contains(i))
        .map(|(&i, _)| i)
        .collect();
    scored.sort_by(|a, b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(b)));
    scored.truncate(n);
    let mut by_pop: Vec<u32> = all.to_vec();
    by_pop.sort_by_key(|i| (std::cmp::Reverse(pop.get(i).copied().unwrap_or(0)), *i));
    for i in by_pop {
        if scored.len() >= n {
            break;
        }
        if !profile.contains(&i) && !scored.contains(&i) {
            scored.push(i);
        }
    }
    scored
}

fn oracle_user_cf(
    rows: &Rows,
    all: &[u32],
    profile: &BTreeSet<u32>,
    n: usize,
    k: usize,
) -> Vec<u32> {
    let mut sims: Vec<(f64, u32)> = rows
        .iter()
        .map(|(&u, items)| {
            let inter = items.intersection(profile).count() as f64;
            let union = items.union(profile).count() as f64;
            (inter / union, u)
        })
        .filter(|(s, _)| *s > 0.0)
        .collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut scores = HashMap::new();
    for (s, u) in sims.into_iter().take(k) {
        for &i in &rows[&u] {
            *scores.entry(i).or_insert(0.0) += s;
        }
    }
    rank(&scores, all, &counts(rows), profile, n)
}

fn oracle_item_cf(rows: &Rows, all: &[u32], profile: &BTreeSet<u32>, n: usize) -> Vec<u32> {
    let users_of = |i: u32| -> BTreeSet<u32> {
        rows.iter()
            .filter(|(_, s)| s.contains(&i))
            .map(|(&u, _)| u)
            .collect()
    };
    let mut scores = HashMap::new();
    for &j in profile {
        let uj = users_of(j);
        for &i in all {
            let ui = users_of(i);
            if i == j || ui.is_empty() || uj.is_empty() {
                continue;
            }
            let co = ui.intersection(&uj).count() as f64;
            *scores.entry(i).or_insert(0.0) += co / ((ui.len() * uj.len()) as f64).sqrt();
        }
    }
    rank(&scores, all, &counts(rows), profile, n)
}

fn matrix_from(bits: &[Vec<bool>]) -> BinaryMatrix {
    let n_items = bits.first().map_or(0, Vec::len) as u32;
    BinaryMatrix::from_pairs(
        1..=bits.len() as u32,
        1..=n_items,
        bits.iter().enumerate().flat_map(|(u, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(move |(i, _)| (u as u32 + 1, i as u32 + 1))
        }),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn baselines_match_set_oracles(
        bits in proptest::collection::vec(proptest::collection::vec(proptest::bool::weighted(0.3), 12), 2..10),
        profile in proptest::collection::btree_set(1u32..=14, 1..5),
        n in 1usize..12,
        k in 1usize..6,
    ) {
        let m = matrix_from(&bits);
        let rows = rows_of(&m);
        let all = m.item_ids().to_vec();
        let p: Vec<u32> = profile.iter().copied().collect();
        prop_assert_eq!(baseline_global_average(&m, &p, n), rank(&HashMap::new(), &all, &counts(&rows), &profile, n));
        prop_assert_eq!(baseline_user_cf(&m, &p, n, k), oracle_user_cf(&rows, &all, &profile, n, k));
        prop_assert_eq!(baseline_item_cf(&m, &p, n, None).unwrap(), oracle_item_cf(&rows, &all, &profile, n));
    }
}

#[test]
fn global_average_examples() {
    // Item 3 dominates.
    let m = matrix_from(&[
        vec![false, false, true],
        vec![true, false, true],
        vec![false, true, true],
    ]);
    assert_eq!(baseline_global_average(&m, &[9], 1), vec![3]);
    assert_eq!(baseline_global_average(&m, &[3], 2), vec![1, 2]);
}

fn uniform_model(items: Vec<u32>, popularity: BTreeMap<u32, u32>) -> GridModel {
    let states = (0..4)
        .map(|u| GridState::new(vec![u + 1], items.clone()))
        .collect();
    let env = GridEnv::new(2, states, RewardKind::Similarity).unwrap();
    GridModel::new(
        env,
        QTable::new(2),
        TrainConfig::default(),
        BTreeMap::new(),
        popularity,
    )
}

#[test]
fn all_items_in_every_state_degenerates_to_popularity() {
    let m = matrix_from(&[
        vec![true, true, false, false, true],
        vec![true, false, false, true, true],
        vec![false, true, false, false, true],
        vec![true, false, true, false, true],
    ]);
    let model = uniform_model(m.item_ids().to_vec(), popularity_of(&m));
    let split = ColdStartSplit {
        train: m.clone(),
        test_users: vec![TestUser {
            user: 50,
            observed: vec![2],
            hidden: vec![1, 3],
        }],
        dropped_users: vec![],
    };
    let config = EvalConfig {
        n: 3,
        ..EvalConfig::default()
    };
    let report = evaluate_cold_start("toy", &split, &model, &config).unwrap();
    assert_eq!(
        report.score(PROPOSED),
        report
            .score(GLOBAL_AVERAGE)
            .map(|s| {
                let mut s = s.clone();
                s.method = PROPOSED.into();
                s
            })
            .as_ref()
    );
}

#[test]
fn single_user_whose_hidden_set_is_the_whole_list() {
    // Popularity order 5,1,4,... with item 2 observed; hidden = the top 3 of the rest.
    let m = matrix_from(&[
        vec![true, true, false, false, true],
        vec![true, false, false, true, true],
        vec![false, true, false, false, true],
        vec![true, false, true, true, true],
    ]);
    let hidden = baseline_global_average(&m, &[2], 30)[..3].to_vec();
    let model = uniform_model(m.item_ids().to_vec(), popularity_of(&m));
    let split = ColdStartSplit {
        train: m.clone(),
        test_users: vec![TestUser {
            user: 77,
            observed: vec![2],
            hidden: hidden.clone(),
        }],
        dropped_users: vec![],
    };
    let report = evaluate_cold_start("toy", &split, &model, &EvalConfig::default()).unwrap();
    let s = report.score(GLOBAL_AVERAGE).unwrap();
    assert_eq!(s.precision, hidden.len() as f64 / 30.0);
    assert_eq!(s.recall, 1.0);
}

/// 60 users in three taste groups over 45 items, with some noise.
fn planted_ratings(seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for user in 1..=60u32 {
        let group = (user - 1) % 3;
        for item in 1..=45u32 {
            let liked = (item - 1) / 15 == group;
            let p = if liked { 0.7 } else { 0.08 };
            if rng.gen_bool(p) {
                let rating = if liked {
                    rng.gen_range(3..=5)
                } else {
                    rng.gen_range(1..=5)
                };
                out.push(RatingRecord {
                    user_id: user,
                    item_id: item,
                    rating,
                    timestamp: i64::from(user * 1000 + item),
                });
            }
        }
    }
    out
}

#[test]
fn pipeline_on_planted_data_is_deterministic() {
    let records = planted_ratings(3);
    let mut config = ReproConfig::new("planted", 21);
    config.n = 4;
    config.train.episodes = 500;
    config.train.horizon = 20;
    let a = run_repro(&records, &config).unwrap();
    let b = run_repro(&records, &config).unwrap();
    assert_eq!(
        model_to_json(&a.model).unwrap(),
        model_to_json(&b.model).unwrap()
    );
    assert_eq!(
        to_canonical_json(&a.report).unwrap(),
        to_canonical_json(&b.report).unwrap()
    );
    assert_eq!(a.report.rows.len(), 4);
    for row in &a.report.rows {
        assert!(
            (0.0..=1.0).contains(&row.precision) && (0.0..=1.0).contains(&row.recall),
            "{row:?}"
        );
    }
    assert_eq!(a.biclusters.biclusters.len(), 16);
    assert_eq!(a.curve.returns.len(), 500);

    config.seed = 22;
    let c = run_repro(&records, &config).unwrap();
    assert_ne!(
        model_to_json(&a.model).unwrap(),
        model_to_json(&c.model).unwrap()
    );
}
