//! Cold-start top-N evaluation: P@N and R@N for the grid recommender and
//! three neighborhood/popularity baselines.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BinaryMatrix, ColdStartSplit};
use crate::persistence::{GridModel, SCHEMA_VERSION};
use crate::recommender::{walk_and_recommend, RecommendError, RecommendationRequest};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("N must be at least 1")]
    ZeroN,
    #[error("hidden set is empty")]
    EmptyHidden,
    #[error("profile is empty")]
    EmptyProfile,
    #[error("no evaluable users")]
    NoUsers,
    #[error("cannot average an empty list of reports")]
    NoReports,
    #[error(transparent)]
    Recommend(#[from] RecommendError),
}

/// Distinct hidden items among the first `n` recommendations.
pub fn hit_count(recommended: &[u32], hidden: &HashSet<u32>, n: usize) -> usize {
    let mut seen = HashSet::new();
    recommended
        .iter()
        .take(n)
        .filter(|i| hidden.contains(i) && seen.insert(**i))
        .count()
}

/// `|top-N ∩ hidden| / N`; the denominator is N even for shorter lists.
pub fn precision_at_n(recommended: &[u32], hidden: &[u32], n: usize) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroN);
    }
    let hidden: HashSet<u32> = hidden.iter().copied().collect();
    Ok(hit_count(recommended, &hidden, n) as f64 / n as f64)
}

/// `|top-N ∩ hidden| / |hidden|`.
pub fn recall_at_n(recommended: &[u32], hidden: &[u32], n: usize) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroN);
    }
    let hidden: HashSet<u32> = hidden.iter().copied().collect();
    if hidden.is_empty() {
        return Err(EvalError::EmptyHidden);
    }
    Ok(hit_count(recommended, &hidden, n) as f64 / hidden.len() as f64)
}

/// Baseline recommenders over a training matrix. Scored lists are padded
/// with the popularity ranking so every method returns N items when it can.
pub struct Baselines<'a> {
    train: &'a BinaryMatrix,
    counts: Vec<usize>,
    /// Dense item indices by descending positive count, then ascending id.
    by_popularity: Vec<usize>,
}

impl<'a> Baselines<'a> {
    pub fn new(train: &'a BinaryMatrix) -> Self {
        let counts = train.item_popularity();
        let mut by_popularity: Vec<usize> = (0..train.n_items()).collect();
        by_popularity.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), train.item_ids()[i]));
        Self {
            train,
            counts,
            by_popularity,
        }
    }

    fn profile_indices(&self, profile: &[u32]) -> Vec<usize> {
        let mut idx: Vec<usize> = profile
            .iter()
            .filter_map(|&i| self.train.item_index(i))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Ranks items with positive score (descending, then ascending raw id),
    /// skipping the profile, then pads with popularity.
    fn finish(&self, scores: &[f64], profile: &[u32], n: usize) -> Vec<u32> {
        let exclude: HashSet<u32> = profile.iter().copied().collect();
        let ids = self.train.item_ids();
        let mut scored: Vec<usize> = (0..scores.len())
            .filter(|&i| scores[i] > 0.0 && !exclude.contains(&ids[i]))
            .collect();
        scored.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
        let mut out: Vec<u32> = scored.into_iter().take(n).map(|i| ids[i]).collect();
        if out.len() < n {
            let taken: HashSet<u32> = out.iter().copied().collect();
            out.extend(
                self.by_popularity
                    .iter()
                    .map(|&i| ids[i])
                    .filter(|i| !exclude.contains(i) && !taken.contains(i))
                    .take(n - out.len()),
            );
        }
        out
    }

    /// Items by training positive count, excluding the profile.
    pub fn global_average(&self, profile: &[u32], n: usize) -> Vec<u32> {
        let scores: Vec<f64> = vec![0.0; self.counts.len()];
        self.finish(&scores, profile, n)
    }

    /// Jaccard user-kNN: the `neighbors` training users most similar to the
    /// profile vote for their items with their similarity.
    pub fn user_cf(&self, profile: &[u32], n: usize, neighbors: usize) -> Vec<u32> {
        let known = self.profile_indices(profile);
        let profile_len = profile.iter().collect::<HashSet<_>>().len();
        let mut sims: Vec<(f64, usize)> = self
            .train
            .rows()
            .iter()
            .enumerate()
            .filter_map(|(u, row)| {
                let inter = known.iter().filter(|&&i| row.contains(i)).count();
                if inter == 0 {
                    return None;
                }
                let union = profile_len + row.count() - inter;
                Some((inter as f64 / union as f64, u))
            })
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        sims.truncate(neighbors);
        let mut scores = vec![0.0; self.train.n_items()];
        for (sim, u) in sims {
            for i in self.train.row(u).ones() {
                scores[i] += sim;
            }
        }
        self.finish(&scores, profile, n)
    }

    /// Binary-cosine item-kNN: `score(i) = Σ_{j ∈ profile} cos(i, j)`, each
    /// profile item optionally contributing only its `similar_cap` nearest items.
    pub fn item_cf(
        &self,
        profile: &[u32],
        n: usize,
        similar_cap: Option<usize>,
    ) -> Result<Vec<u32>, EvalError> {
        if profile.is_empty() {
            return Err(EvalError::EmptyProfile);
        }
        let cols = self.train.cols();
        let mut scores = vec![0.0; self.train.n_items()];
        for j in self.profile_indices(profile) {
            if self.counts[j] == 0 {
                continue;
            }
            let mut sims: Vec<(f64, usize)> = (0..cols.len())
                .filter(|&i| i != j && self.counts[i] > 0)
                .filter_map(|i| {
                    let co = cols[i].and_count(&cols[j]);
                    (co > 0).then(|| {
                        (
                            co as f64 / ((self.counts[i] * self.counts[j]) as f64).sqrt(),
                            i,
                        )
                    })
                })
                .collect();
            if let Some(cap) = similar_cap {
                sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                sims.truncate(cap);
            }
            for (s, i) in sims {
                scores[i] += s;
            }
        }
        Ok(self.finish(&scores, profile, n))
    }
}

pub fn baseline_global_average(train: &BinaryMatrix, profile: &[u32], n: usize) -> Vec<u32> {
    Baselines::new(train).global_average(profile, n)
}

pub fn baseline_user_cf(
    train: &BinaryMatrix,
    profile: &[u32],
    n: usize,
    neighbors: usize,
) -> Vec<u32> {
    Baselines::new(train).user_cf(profile, n, neighbors)
}

pub fn baseline_item_cf(
    train: &BinaryMatrix,
    profile: &[u32],
    n: usize,
    similar_cap: Option<usize>,
) -> Result<Vec<u32>, EvalError> {
    Baselines::new(train).item_cf(profile, n, similar_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub neighbors: usize,
    pub similar_cap: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 30,
            k: RecommendationRequest::DEFAULT_K,
            epsilon: RecommendationRequest::DEFAULT_EPSILON,
            max_steps: RecommendationRequest::DEFAULT_MAX_STEPS,
            seed: 0,
            neighbors: 50,
            similar_cap: None,
        }
    }
}

pub const GLOBAL_AVERAGE: &str = "Global-average";
pub const USER_BASED: &str = "User-based";
pub const ITEM_BASED: &str = "Item-based";
pub const PROPOSED: &str = "Proposed";

/// Table row order.
pub const METHODS: [&str; 4] = [GLOBAL_AVERAGE, USER_BASED, ITEM_BASED, PROPOSED];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u64,
    pub dataset: String,
    pub top_n: usize,
    pub seeds: Vec<u64>,
    /// Evaluated users per seed.
    pub users_evaluated: Vec<usize>,
    pub rows: Vec<MethodScore>,
}

impl EvalReport {
    pub fn score(&self, method: &str) -> Option<&MethodScore> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Mean of per-seed reports for the same dataset and N.
    pub fn average(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
        let first = reports.first().ok_or(EvalError::NoReports)?;
        let k = reports.len() as f64;
        let rows = first
            .rows
            .iter()
            .map(|row| {
                let (p, r) = reports.iter().fold((0.0, 0.0), |(p, r), rep| {
                    let s = rep.score(&row.method).expect("reports share methods");
                    (p + s.precision, r + s.recall)
                });
                MethodScore {
                    method: row.method.clone(),
                    precision: p / k,
                    recall: r / k,
                }
            })
            .collect();
        Ok(EvalReport {
            version: SCHEMA_VERSION,
            dataset: first.dataset.clone(),
            top_n: first.top_n,
            seeds: reports
                .iter()
                .flat_map(|r| r.seeds.iter().copied())
                .collect(),
            users_evaluated: reports
                .iter()
                .flat_map(|r| r.users_evaluated.iter().copied())
                .collect(),
            rows,
        })
    }

    /// Plain-text table, one row per method.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>8}\n",
            "",
            format!("P@{}", self.top_n),
            format!("R@{}", self.top_n)
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>8.3} {:>8.3}\n",
                r.method, r.precision, r.recall
            ));
        }
        out
    }
}

fn user_seed(seed: u64, user: u32) -> u64 {
    seed ^ (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Evaluates every test user with a non-empty hidden set: each method sees
/// only the observed items and its top-N list is scored against the hidden ones.
pub fn evaluate_cold_start(
    dataset: &str,
    split: &ColdStartSplit,
    model: &GridModel,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if config.n == 0 {
        return Err(EvalError::ZeroN);
    }
    let users: Vec<_> = split
        .test_users
        .iter()
        .filter(|u| !u.hidden.is_empty() && !u.observed.is_empty())
        .collect();
    if users.is_empty() {
        return Err(EvalError::NoUsers);
    }
    let baselines = Baselines::new(&split.train);
    let mut sums = [(0.0, 0.0); 4];
    for user in &users {
        let request = RecommendationRequest {
            profile: user.observed.clone(),
            n: config.n,
            k: config.k,
            epsilon: config.epsilon,
            max_steps: config.max_steps,
            seed: user_seed(config.seed, user.user),
        };
        let lists = [
            baselines.global_average(&user.observed, config.n),
            baselines.user_cf(&user.observed, config.n, config.neighbors),
            baselines.item_cf(&user.observed, config.n, config.similar_cap)?,
            walk_and_recommend(model, &request)?.item_ids(),
        ];
        for (sum, list) in sums.iter_mut().zip(&lists) {
            sum.0 += precision_at_n(list, &user.hidden, config.n)?;
            sum.1 += recall_at_n(list, &user.hidden, config.n)?;
        }
    }
    let count = users.len() as f64;
    Ok(EvalReport {
        version: SCHEMA_VERSION,
        dataset: dataset.to_string(),
        top_n: config.n,
        seeds: vec![config.seed],
        users_evaluated: vec![users.len()],
        rows: METHODS
            .iter()
            .zip(sums)
            .map(|(m, (p, r))| MethodScore {
                method: m.to_string(),
                precision: p / count,
                recall: r / count,
            })
            .collect(),
    })
}
