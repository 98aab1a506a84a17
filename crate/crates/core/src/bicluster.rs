//! All-ones bicluster enumeration over a [`BinaryMatrix`].
//!
//! Two miners are provided:
//!
//! * [`bimax_enumerate`] returns every inclusion-maximal all-ones submatrix
//!   that meets the size thresholds. Maximal biclusters are exactly the closed
//!   item sets of the matrix paired with their supporting users, so the search
//!   walks sorted item prefixes depth-first and prunes any prefix whose closure
//!   would pull in a smaller item. Output comes out in lexicographic order of
//!   the sorted item set, which is also the order the enumeration cap cuts in.
//! * [`bibit_enumerate`] encodes rows as bit-vectors, ANDs every row pair into a
//!   pattern, and collects all rows that contain the pattern.
//!
//! [`brute_force_maximal_biclusters`] is an exhaustive oracle for small matrices.

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSet;
use crate::ingest::BinaryMatrix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BiclusterError {
    #[error("max_enumerate must be positive")]
    ZeroCap,
    #[error("min_rows and min_cols must be at least 1")]
    BadThreshold,
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("BiBit needs at least 2 rows, matrix has {0}")]
    TooFewRows(usize),
    #[error("brute-force oracle is limited to 16x16 matrices, got {users}x{items}")]
    TooLarge { users: usize, items: usize },
    #[error(
        "only {available} biclusters available but {requested} requested; \
         lower min_rows/min_cols or the grid size n"
    )]
    Insufficient { available: usize, requested: usize },
}

/// A user set × item set whose induced submatrix is all ones.
///
/// Indices are dense matrix indices, ascending. Field order gives the derived
/// ordering: by item set first, then by user set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bicluster {
    pub items: Vec<usize>,
    pub users: Vec<usize>,
}

impl Bicluster {
    pub fn new(mut users: Vec<usize>, mut items: Vec<usize>) -> Self {
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        Self { items, users }
    }

    pub fn area(&self) -> usize {
        self.users.len() * self.items.len()
    }

    pub fn is_all_ones(&self, matrix: &BinaryMatrix) -> bool {
        self.users
            .iter()
            .all(|&u| self.items.iter().all(|&i| matrix.get(u, i)))
    }

    /// No further row or column can be added while keeping all ones.
    pub fn is_maximal(&self, matrix: &BinaryMatrix) -> bool {
        let users = BitSet::from_indices(matrix.n_users(), self.users.iter().copied());
        let items = BitSet::from_indices(matrix.n_items(), self.items.iter().copied());
        closure_of_items(matrix, &items) == users && closure_of_users(matrix, &users) == items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bimax,
    Bibit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiclusterParams {
    pub algorithm: Algorithm,
    pub min_rows: usize,
    pub min_cols: usize,
    pub max_enumerate: usize,
}

impl BiclusterParams {
    pub const DEFAULT_MAX_ENUMERATE: usize = 100_000;

    pub fn new(algorithm: Algorithm, min_rows: usize, min_cols: usize) -> Self {
        Self {
            algorithm,
            min_rows,
            min_cols,
            max_enumerate: Self::DEFAULT_MAX_ENUMERATE,
        }
    }

    pub fn unbounded(mut self) -> Self {
        self.max_enumerate = usize::MAX;
        self
    }

    fn validate(&self, matrix: &BinaryMatrix) -> Result<(), BiclusterError> {
        if self.max_enumerate == 0 {
            return Err(BiclusterError::ZeroCap);
        }
        if self.min_rows == 0 || self.min_cols == 0 {
            return Err(BiclusterError::BadThreshold);
        }
        if matrix.n_users() == 0 || matrix.n_items() == 0 {
            return Err(BiclusterError::EmptyMatrix);
        }
        Ok(())
    }
}

/// Users holding every item of `items`.
fn closure_of_items(matrix: &BinaryMatrix, items: &BitSet) -> BitSet {
    let mut users = BitSet::full(matrix.n_users());
    for i in items.ones() {
        users.and_assign(matrix.col(i));
    }
    users
}

/// Items shared by every user of `users`.
fn closure_of_users(matrix: &BinaryMatrix, users: &BitSet) -> BitSet {
    let mut items = BitSet::full(matrix.n_items());
    for u in users.ones() {
        items.and_assign(matrix.row(u));
    }
    items
}

fn to_bicluster(users: &BitSet, items: &BitSet) -> Bicluster {
    Bicluster {
        items: items.ones().collect(),
        users: users.ones().collect(),
    }
}

/// Enumerates inclusion-maximal all-ones biclusters with at least
/// `min_rows` users and `min_cols` items, in lexicographic item-set order,
/// stopping after `max_enumerate` results.
pub fn bimax_enumerate(
    matrix: &BinaryMatrix,
    params: &BiclusterParams,
) -> Result<Vec<Bicluster>, BiclusterError> {
    params.validate(matrix)?;
    let mut search = ClosedSearch {
        matrix,
        min_rows: params.min_rows,
        min_cols: params.min_cols,
        cap: params.max_enumerate,
        out: Vec::new(),
    };
    let support = BitSet::full(matrix.n_users());
    let closure = closure_of_users(matrix, &support);
    search.visit(&BitSet::new(matrix.n_items()), 0, &support, &closure);
    Ok(search.out)
}

struct ClosedSearch<'a> {
    matrix: &'a BinaryMatrix,
    min_rows: usize,
    min_cols: usize,
    cap: usize,
    out: Vec<Bicluster>,
}

impl ClosedSearch<'_> {
    /// `prefix` is a sorted item prefix with smallest-unused candidate `start`;
    /// `closure` is the closed item set generated by `support`, the users of `prefix`.
    fn visit(&mut self, prefix: &BitSet, start: usize, support: &BitSet, closure: &BitSet) {
        if self.out.len() >= self.cap {
            return;
        }
        if closure == prefix && !prefix.is_empty() {
            let n_items = prefix.count();
            if n_items >= self.min_cols {
                self.out.push(to_bicluster(support, prefix));
                if self.out.len() >= self.cap {
                    return;
                }
            }
        }
        for j in start..self.matrix.n_items() {
            if prefix.contains(j) {
                continue;
            }
            let next_support = support.and(self.matrix.col(j));
            if next_support.count() < self.min_rows {
                continue;
            }
            let next_closure = closure_of_users(self.matrix, &next_support);
            // A closed set reachable below this prefix must not contain
            // items smaller than `j` that the prefix skipped.
            if next_closure.differs_below(prefix, j) {
                continue;
            }
            let mut next_prefix = prefix.clone();
            next_prefix.insert(j);
            self.visit(&next_prefix, j + 1, &next_support, &next_closure);
            if self.out.len() >= self.cap {
                return;
            }
        }
    }
}

/// BiBit: for each row pair `(i, j)`, `i < j`, in order, the pattern
/// `row_i AND row_j` (at least `min_cols` ones) collects every row containing
/// it. Each distinct pattern is emitted once, with its full row set, if that
/// set has at least `min_rows` rows.
pub fn bibit_enumerate(
    matrix: &BinaryMatrix,
    params: &BiclusterParams,
) -> Result<Vec<Bicluster>, BiclusterError> {
    params.validate(matrix)?;
    if matrix.n_users() < 2 {
        return Err(BiclusterError::TooFewRows(matrix.n_users()));
    }
    let rows = matrix.rows();
    let mut seen: HashSet<BitSet> = HashSet::new();
    let mut out = Vec::new();
    'pairs: for i in 0..rows.len() {
        if rows[i].count() < params.min_cols {
            continue;
        }
        for j in (i + 1)..rows.len() {
            if rows[i].and_count(&rows[j]) < params.min_cols {
                continue;
            }
            let pattern = rows[i].and(&rows[j]);
            if seen.contains(&pattern) {
                continue;
            }
            let members = closure_of_items(matrix, &pattern);
            if members.count() >= params.min_rows {
                out.push(to_bicluster(&members, &pattern));
                if out.len() >= params.max_enumerate {
                    break 'pairs;
                }
            }
            seen.insert(pattern);
        }
    }
    Ok(out)
}

/// Runs the configured algorithm.
pub fn enumerate(
    matrix: &BinaryMatrix,
    params: &BiclusterParams,
) -> Result<Vec<Bicluster>, BiclusterError> {
    match params.algorithm {
        Algorithm::Bimax => bimax_enumerate(matrix, params),
        Algorithm::Bibit => bibit_enumerate(matrix, params),
    }
}

/// Union of the enumerations for every `(min_rows, min_cols)` combination,
/// deduplicated and sorted.
pub fn enumerate_grid(
    matrix: &BinaryMatrix,
    algorithm: Algorithm,
    min_rows: &[usize],
    min_cols: &[usize],
    max_enumerate: usize,
) -> Result<Vec<Bicluster>, BiclusterError> {
    let mut all = BTreeSet::new();
    for &r in min_rows {
        for &c in min_cols {
            let params = BiclusterParams {
                algorithm,
                min_rows: r,
                min_cols: c,
                max_enumerate,
            };
            let found = enumerate(matrix, &params)?;
            log::debug!(
                "{algorithm:?} min_rows={r} min_cols={c}: {} biclusters",
                found.len()
            );
            all.extend(found);
        }
    }
    Ok(all.into_iter().collect())
}

/// Exhaustive oracle: closes every non-empty row subset and keeps the
/// resulting maximal biclusters that meet the thresholds. Sorted.
pub fn brute_force_maximal_biclusters(
    matrix: &BinaryMatrix,
    min_rows: usize,
    min_cols: usize,
) -> Result<Vec<Bicluster>, BiclusterError> {
    let (users, items) = (matrix.n_users(), matrix.n_items());
    if users > 16 || items > 16 {
        return Err(BiclusterError::TooLarge { users, items });
    }
    let mut found = BTreeSet::new();
    for mask in 1u32..(1u32 << users) {
        let subset = BitSet::from_indices(users, (0..users).filter(|u| mask & (1 << u) != 0));
        let common = closure_of_users(matrix, &subset);
        if common.is_empty() {
            continue;
        }
        let extent = closure_of_items(matrix, &common);
        if extent.count() >= min_rows && common.count() >= min_cols {
            found.insert(to_bicluster(&extent, &common));
        }
    }
    Ok(found.into_iter().collect())
}

/// Uniform sample of `count` biclusters without replacement, returned in
/// their original relative order.
pub fn sample_biclusters(
    biclusters: &[Bicluster],
    count: usize,
    seed: u64,
) -> Result<Vec<Bicluster>, BiclusterError> {
    if biclusters.len() < count {
        return Err(BiclusterError::Insufficient {
            available: biclusters.len(),
            requested: count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, biclusters.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| biclusters[i].clone()).collect())
}
