//! Recommendation by walking the learned grid policy.
//!
//! The walk starts from the cells whose item sets best match the user's
//! profile, emits each visited cell's unseen items by popularity, and moves
//! with ε-greedy on the learned Q-table until enough items are collected.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::sorted_jaccard;
use crate::mdp_env::{Cell, EnvError};
use crate::persistence::GridModel;
use crate::rl_trainer::epsilon_greedy;

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("profile is empty")]
    EmptyProfile,
    #[error("list length N must be at least 1")]
    ZeroLength,
    #[error("k = {k} must lie in [1, {cells}]")]
    BadK { k: usize, cells: usize },
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("epsilon must lie in [0, 1], got {0}")]
    Epsilon(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRequest {
    /// Items the user already likes (raw ids).
    pub profile: Vec<u32>,
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl RecommendationRequest {
    pub const DEFAULT_K: usize = 3;
    pub const DEFAULT_EPSILON: f64 = 0.1;
    pub const DEFAULT_MAX_STEPS: usize = 100;

    pub fn new(profile: Vec<u32>, n: usize) -> Self {
        Self {
            profile,
            n,
            k: Self::DEFAULT_K,
            epsilon: Self::DEFAULT_EPSILON,
            max_steps: Self::DEFAULT_MAX_STEPS,
            seed: 0,
        }
    }

    fn validate(&self, cells: usize) -> Result<(), RecommendError> {
        if self.profile.is_empty() {
            return Err(RecommendError::EmptyProfile);
        }
        if self.n == 0 {
            return Err(RecommendError::ZeroLength);
        }
        if self.k == 0 || self.k > cells {
            return Err(RecommendError::BadK { k: self.k, cells });
        }
        if self.max_steps == 0 {
            return Err(RecommendError::ZeroSteps);
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(RecommendError::Epsilon(self.epsilon));
        }
        Ok(())
    }
}

/// Why an item was recommended: the state it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub cell: Cell,
    pub user_set_size: usize,
    pub item_set_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub item: u32,
    pub cell: Cell,
    /// |U_s| of the source cell at recommendation time.
    pub users: usize,
    /// |I_s| of the source cell.
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Recommendation {
    pub items: Vec<RecommendedItem>,
    /// Every visited cell, walks concatenated in start-state order.
    pub trace: Vec<Cell>,
}

impl Recommendation {
    pub fn item_ids(&self) -> Vec<u32> {
        self.items.iter().map(|r| r.item).collect()
    }
}

/// The `k` cells whose item sets are most Jaccard-similar to the profile,
/// best first, ties in row-major order.
pub fn start_states(
    profile: &[u32],
    model: &GridModel,
    k: usize,
) -> Result<Vec<(Cell, f64)>, RecommendError> {
    if profile.is_empty() {
        return Err(RecommendError::EmptyProfile);
    }
    let cells = model.env().n_cells();
    if k == 0 || k > cells {
        return Err(RecommendError::BadK { k, cells });
    }
    let mut sorted = profile.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut scored: Vec<(Cell, f64)> = model
        .env()
        .cells()
        .map(|cell| {
            let items = &model.state(cell).expect("in-bounds").items;
            (cell, sorted_jaccard(&sorted, items))
        })
        .collect();
    // Stable sort keeps row-major order among equal scores.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored)
}

/// Walks the grid from each start state in turn, collecting up to `n` items.
///
/// A walk ends when `n` items are collected, after `max_steps` moves, or once
/// every eligible grid item has been emitted.
pub fn walk_and_recommend(
    model: &GridModel,
    request: &RecommendationRequest,
) -> Result<Recommendation, RecommendError> {
    request.validate(model.env().n_cells())?;
    if model.q.is_untrained() {
        log::warn!("recommending from an untrained (all-zero) Q-table");
    }
    let profile: HashSet<u32> = request.profile.iter().copied().collect();
    let eligible_total = model
        .env()
        .states()
        .iter()
        .flat_map(|s| s.items.iter())
        .filter(|i| !profile.contains(i))
        .collect::<HashSet<_>>()
        .len();

    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut emitted: HashSet<u32> = HashSet::new();
    let mut out = Recommendation::default();
    let starts = start_states(&request.profile, model, request.k)?;

    'walks: for (start, _) in starts {
        let mut cell = start;
        let mut steps = 0;
        loop {
            out.trace.push(cell);
            let state = model.state(cell)?;
            for &item in model.ranked_items(cell) {
                if profile.contains(&item) || !emitted.insert(item) {
                    continue;
                }
                out.items.push(RecommendedItem {
                    item,
                    cell,
                    users: state.users.len(),
                    items: state.items.len(),
                });
                if out.items.len() == request.n {
                    break 'walks;
                }
            }
            if emitted.len() == eligible_total {
                break 'walks;
            }
            if steps == request.max_steps {
                break;
            }
            let action = epsilon_greedy(&model.q, cell, request.epsilon, &mut rng);
            cell = model.env().transition(cell, action)?;
            steps += 1;
        }
    }
    Ok(out)
}

/// Current explanation record for a cell.
pub fn explain(model: &GridModel, cell: Cell) -> Result<Explanation, RecommendError> {
    let state = model.state(cell)?;
    Ok(Explanation {
        cell,
        user_set_size: state.users.len(),
        item_set_size: state.items.len(),
    })
}
