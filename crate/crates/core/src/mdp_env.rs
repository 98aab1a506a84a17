//! The deterministic gridworld: every cell carries a bicluster's user and item
//! sets, the agent moves one cell up/down/left/right, and the reward for a move
//! is the Jaccard similarity of the two cells' user sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::sorted_jaccard;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("grid side n = {0} leaves no valid moves (need n >= 2)")]
    GridTooSmall(usize),
    #[error("cell ({row}, {col}) is outside the {n}x{n} grid")]
    OutOfBounds { row: usize, col: usize, n: usize },
    #[error("action {action:?} from ({row}, {col}) leaves the grid")]
    InvalidAction {
        row: usize,
        col: usize,
        action: Action,
    },
    #[error("expected {expected} cell states, got {got}")]
    StateCount { expected: usize, got: usize },
    #[error("cell {0} has an empty user or item set")]
    EmptyState(usize),
}

/// Grid coordinates; serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    #[inline]
    pub fn index(self, n: usize) -> usize {
        self.row * n + self.col
    }

    #[inline]
    pub fn from_index(index: usize, n: usize) -> Self {
        Self::new(index / n, index % n)
    }

    pub fn check(self, n: usize) -> Result<Self, EnvError> {
        if self.row < n && self.col < n {
            Ok(self)
        } else {
            Err(EnvError::OutOfBounds {
                row: self.row,
                col: self.col,
                n,
            })
        }
    }
}

impl From<[usize; 2]> for Cell {
    fn from([row, col]: [usize; 2]) -> Self {
        Self { row, col }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

/// Moves in tie-break order: `Up < Down < Left < Right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Self {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }

    /// Target cell, or `None` when the move would leave an `n`×`n` grid.
    #[inline]
    pub fn apply(self, cell: Cell, n: usize) -> Option<Cell> {
        let Cell { row, col } = cell;
        let target = match self {
            Action::Up => Cell::new(row.checked_sub(1)?, col),
            Action::Down => Cell::new(row + 1, col),
            Action::Left => Cell::new(row, col.checked_sub(1)?),
            Action::Right => Cell::new(row, col + 1),
        };
        (target.row < n && target.col < n).then_some(target)
    }
}

/// Actions that keep the agent inside the grid, in tie-break order.
pub fn valid_actions(cell: Cell, n: usize) -> Result<Vec<Action>, EnvError> {
    if n < 2 {
        return Err(EnvError::GridTooSmall(n));
    }
    cell.check(n)?;
    Ok(Action::ALL
        .into_iter()
        .filter(|a| a.apply(cell, n).is_some())
        .collect())
}

pub fn transition(cell: Cell, action: Action, n: usize) -> Result<Cell, EnvError> {
    cell.check(n)?;
    action.apply(cell, n).ok_or(EnvError::InvalidAction {
        row: cell.row,
        col: cell.col,
        action,
    })
}

/// A cell's bicluster, as ascending raw user and item ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GridState {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl GridState {
    pub fn new(mut users: Vec<u32>, mut items: Vec<u32>) -> Self {
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        Self { users, items }
    }

    /// Inserts `user`, returning whether it was new.
    pub fn add_user(&mut self, user: u32) -> bool {
        match self.users.binary_search(&user) {
            Ok(_) => false,
            Err(pos) => {
                self.users.insert(pos, user);
                true
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// `|U ∩ U'| / |U ∪ U'|`
    #[default]
    Similarity,
    /// `1 − |U ∩ U'| / |U ∪ U'|`
    Distance,
}

/// User-set intersection over union between two states.
pub fn reward(s: &GridState, s_next: &GridState) -> f64 {
    sorted_jaccard(&s.users, &s_next.users)
}

/// The gridworld. Holds only the cell states; rewards are derived from the
/// current user sets on every call.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEnv {
    n: usize,
    states: Vec<GridState>,
    reward_kind: RewardKind,
}

impl GridEnv {
    /// `states` are in row-major cell order.
    pub fn new(
        n: usize,
        states: Vec<GridState>,
        reward_kind: RewardKind,
    ) -> Result<Self, EnvError> {
        if n < 2 {
            return Err(EnvError::GridTooSmall(n));
        }
        if states.len() != n * n {
            return Err(EnvError::StateCount {
                expected: n * n,
                got: states.len(),
            });
        }
        if let Some(i) = states
            .iter()
            .position(|s| s.users.is_empty() || s.items.is_empty())
        {
            return Err(EnvError::EmptyState(i));
        }
        Ok(Self {
            n,
            states,
            reward_kind,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward_kind
    }

    pub fn states(&self) -> &[GridState] {
        &self.states
    }

    pub fn state(&self, cell: Cell) -> Result<&GridState, EnvError> {
        Ok(&self.states[cell.check(self.n)?.index(self.n)])
    }

    pub fn state_mut(&mut self, cell: Cell) -> Result<&mut GridState, EnvError> {
        let idx = cell.check(self.n)?.index(self.n);
        Ok(&mut self.states[idx])
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells()).map(|i| Cell::from_index(i, self.n))
    }

    pub fn valid_actions(&self, cell: Cell) -> Result<Vec<Action>, EnvError> {
        valid_actions(cell, self.n)
    }

    pub fn transition(&self, cell: Cell, action: Action) -> Result<Cell, EnvError> {
        transition(cell, action, self.n)
    }

    /// Reward for moving between two cells under the configured reward kind.
    pub fn reward_between(&self, from: Cell, to: Cell) -> Result<f64, EnvError> {
        let sim = reward(self.state(from)?, self.state(to)?);
        Ok(match self.reward_kind {
            RewardKind::Similarity => sim,
            RewardKind::Distance => 1.0 - sim,
        })
    }

    /// Applies `action` in `cell`: the next cell and the reward earned.
    pub fn step(&self, cell: Cell, action: Action) -> Result<(Cell, f64), EnvError> {
        let next = self.transition(cell, action)?;
        Ok((next, self.reward_between(cell, next)?))
    }

    /// Transitions and rewards for every (cell, action), row-major; `None` for
    /// moves that leave the grid. A snapshot of the current reward field.
    pub fn dynamics(&self) -> Dynamics {
        let n = self.n;
        let table = self
            .cells()
            .map(|cell| {
                Action::ALL.map(|a| {
                    a.apply(cell, n).map(|next| {
                        let r = self.reward_between(cell, next).expect("in-bounds cells");
                        (next.index(n), r)
                    })
                })
            })
            .collect();
        Dynamics { n, table }
    }
}

/// Precomputed `(next cell index, reward)` per cell and action.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub n: usize,
    pub table: Vec<[Option<(usize, f64)>; 4]>,
}
