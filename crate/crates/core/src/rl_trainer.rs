//! Tabular Q-learning and SARSA over a [`GridEnv`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp_env::{Action, Cell, Dynamics, GridEnv};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("gamma must lie in (0, 1], got {0}")]
    Gamma(f64),
    #[error("epsilon must lie in [0, 1], got {0}")]
    Epsilon(f64),
    #[error("horizon must be at least 1")]
    Horizon,
    #[error("curve window must be at least 1")]
    Window,
    #[error("Q-table is for n = {table}, environment has n = {env}")]
    ShapeMismatch { table: usize, env: usize },
}

/// Action values indexed by (cell, action); actions leaving the grid hold −∞.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n: usize,
    values: Vec<f64>,
}

impl QTable {
    /// Zero for every valid action, −∞ for masked ones.
    pub fn new(n: usize) -> Self {
        let mut values = vec![f64::NEG_INFINITY; n * n * 4];
        for idx in 0..n * n {
            let cell = Cell::from_index(idx, n);
            for a in Action::ALL {
                if a.apply(cell, n).is_some() {
                    values[idx * 4 + a.index()] = 0.0;
                }
            }
        }
        Self { n, values }
    }

    /// Wraps raw row-major `(row, col, action)` values. Caller guarantees the mask.
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n * 4, "Q-table shape");
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, cell: Cell, action: Action) -> f64 {
        self.values[cell.index(self.n) * 4 + action.index()]
    }

    #[inline]
    pub fn set(&mut self, cell: Cell, action: Action, value: f64) {
        self.values[cell.index(self.n) * 4 + action.index()] = value;
    }

    #[inline]
    fn row(&self, cell_index: usize) -> &[f64] {
        &self.values[cell_index * 4..cell_index * 4 + 4]
    }

    /// Argmax over valid actions; ties go to the earliest of Up, Down, Left, Right.
    pub fn greedy_action(&self, cell: Cell) -> Action {
        greedy_index(self.row(cell.index(self.n)))
    }

    pub fn max_value(&self, cell: Cell) -> f64 {
        self.row(cell.index(self.n))
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action for every cell, row-major.
    pub fn greedy_policy(&self) -> Vec<Action> {
        (0..self.n * self.n)
            .map(|i| greedy_index(self.row(i)))
            .collect()
    }

    /// True when every valid entry is still zero.
    pub fn is_untrained(&self) -> bool {
        self.values
            .iter()
            .all(|&v| v == 0.0 || v == f64::NEG_INFINITY)
    }
}

#[inline]
fn greedy_index(row: &[f64]) -> Action {
    let mut best = 0;
    for a in 1..4 {
        if row[a] > row[best] {
            best = a;
        }
    }
    Action::ALL[best]
}

/// ε-greedy: with probability ε a uniformly random valid action, otherwise
/// the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q: &QTable,
    cell: Cell,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    let xi: f64 = rng.gen();
    if xi < epsilon {
        let row = q.row(cell.index(q.n));
        let valid = row.iter().filter(|v| v.is_finite()).count();
        let pick = rng.gen_range(0..valid);
        let (a, _) = row
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .nth(pick)
            .expect("pick < number of valid actions");
        Action::ALL[a]
    } else {
        q.greedy_action(cell)
    }
}

/// `Q(s,a) ← Q(s,a) + α (r + γ max_a' Q(s',a') − Q(s,a))`
pub fn q_learning_update(
    q: &mut QTable,
    s: Cell,
    a: Action,
    r: f64,
    s_next: Cell,
    alpha: f64,
    gamma: f64,
) {
    let target = r + gamma * q.max_value(s_next);
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (target - old));
}

/// `Q(s,a) ← Q(s,a) + α (r + γ Q(s',a') − Q(s,a))`
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    q: &mut QTable,
    s: Cell,
    a: Action,
    r: f64,
    s_next: Cell,
    a_next: Action,
    alpha: f64,
    gamma: f64,
) {
    let target = r + gamma * q.get(s_next, a_next);
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (target - old));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TdAlgorithm {
    #[default]
    #[serde(rename = "q")]
    QLearning,
    #[serde(rename = "sarsa")]
    Sarsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: TdAlgorithm,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: TdAlgorithm::QLearning,
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.1,
            episodes: 10_000,
            horizon: 50,
            seed: 0,
            window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TrainError::Alpha(self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Gamma(self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(TrainError::Epsilon(self.epsilon));
        }
        if self.horizon == 0 {
            return Err(TrainError::Horizon);
        }
        if self.window == 0 {
            return Err(TrainError::Window);
        }
        Ok(())
    }
}

/// Undiscounted return per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub returns: Vec<f64>,
    pub window: usize,
}

impl LearningCurve {
    /// Trailing mean over the last `window` episodes (fewer at the start).
    pub fn window_avg(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.returns.len());
        let mut sum = 0.0;
        for (i, r) in self.returns.iter().enumerate() {
            sum += r;
            if i >= self.window {
                sum -= self.returns[i - self.window];
            }
            out.push(sum / (i + 1).min(self.window) as f64);
        }
        out
    }

    /// Last trailing-window mean, or 0 for an empty curve.
    pub fn final_window_avg(&self) -> f64 {
        self.window_avg().last().copied().unwrap_or(0.0)
    }

    /// Mean return over the `q`-th quarter (0-based) of the episodes.
    pub fn quartile_mean(&self, q: usize) -> f64 {
        let len = self.returns.len();
        let (lo, hi) = (len * q / 4, len * (q + 1) / 4);
        if hi <= lo {
            return 0.0;
        }
        self.returns[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    }
}

/// Trains a fresh Q-table.
pub fn train(env: &GridEnv, config: &TrainConfig) -> Result<(QTable, LearningCurve), TrainError> {
    let mut q = QTable::new(env.n());
    let curve = continue_training(env, &mut q, config, config.episodes, config.seed)?;
    Ok((q, curve))
}

/// Runs `episodes` more episodes on an existing table against the
/// environment's current reward field.
pub fn continue_training(
    env: &GridEnv,
    q: &mut QTable,
    config: &TrainConfig,
    episodes: usize,
    seed: u64,
) -> Result<LearningCurve, TrainError> {
    config.validate()?;
    if q.n() != env.n() {
        return Err(TrainError::ShapeMismatch {
            table: q.n(),
            env: env.n(),
        });
    }
    let dynamics = env.dynamics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns = (0..episodes)
        .map(|_| run_episode(&dynamics, q, config, &mut rng))
        .collect();
    Ok(LearningCurve {
        returns,
        window: config.window,
    })
}

fn run_episode(
    dynamics: &Dynamics,
    q: &mut QTable,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = dynamics.n;
    let mut s = Cell::from_index(rng.gen_range(0..n * n), n);
    let mut total = 0.0;
    let mut a = epsilon_greedy(q, s, cfg.epsilon, rng);
    for _ in 0..cfg.horizon {
        let (next_idx, r) =
            dynamics.table[s.index(n)][a.index()].expect("greedy never picks a masked action");
        let s_next = Cell::from_index(next_idx, n);
        total += r;
        let a_next = epsilon_greedy(q, s_next, cfg.epsilon, rng);
        match cfg.algorithm {
            TdAlgorithm::QLearning => q_learning_update(q, s, a, r, s_next, cfg.alpha, cfg.gamma),
            TdAlgorithm::Sarsa => sarsa_update(q, s, a, r, s_next, a_next, cfg.alpha, cfg.gamma),
        }
        s = s_next;
        a = a_next;
    }
    total
}

/// Optimal action values by value iteration on the current reward field.
///
/// With `horizon = Some(h)` this is `h` steps of finite-horizon backup from
/// zero; with `None` it iterates the discounted backup until the largest
/// change falls below 1e-10.
pub fn optimal_q(env: &GridEnv, gamma: f64, horizon: Option<usize>) -> QTable {
    let dynamics = env.dynamics();
    let n = env.n();
    let cells = n * n;
    let mut v = vec![0.0; cells];
    let mut q = QTable::new(n);
    let backup = |v: &[f64], q: &mut QTable| -> f64 {
        let mut delta: f64 = 0.0;
        for (idx, row) in dynamics.table.iter().enumerate() {
            for (a, entry) in row.iter().enumerate() {
                if let Some((next, r)) = entry {
                    let value = r + gamma * v[*next];
                    let slot = &mut q.values[idx * 4 + a];
                    delta = delta.max((value - *slot).abs());
                    *slot = value;
                }
            }
        }
        delta
    };
    match horizon {
        Some(h) => {
            for _ in 0..h {
                backup(&v, &mut q);
                v = (0..cells)
                    .map(|i| q.max_value(Cell::from_index(i, n)))
                    .collect();
            }
        }
        None => loop {
            let delta = backup(&v, &mut q);
            v = (0..cells)
                .map(|i| q.max_value(Cell::from_index(i, n)))
                .collect();
            if delta < 1e-10 {
                break;
            }
        },
    }
    q
}

/// Optimal greedy action per cell (row-major). Values within 1e-9 of the
/// best count as ties and resolve to the earliest of Up, Down, Left, Right.
pub fn value_iteration_oracle(env: &GridEnv, gamma: f64, horizon: Option<usize>) -> Vec<Action> {
    let q = optimal_q(env, gamma, horizon);
    (0..env.n_cells())
        .map(|i| {
            let cell = Cell::from_index(i, env.n());
            let best = q.max_value(cell);
            Action::ALL
                .into_iter()
                .find(|&a| q.get(cell, a) >= best - 1e-9)
                .expect("every cell has a valid action")
        })
        .collect()
}
