//! Placement of biclusters onto the n×n grid.
//!
//! Biclusters are embedded in the plane by classical (Torgerson) MDS on the
//! Jaccard distances between their user sets, the embedding is rescaled to the
//! grid's bounding box, and biclusters are then placed greedily, largest area
//! first, each on the nearest free cell.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::bicluster::Bicluster;
use crate::mdp_env::Cell;

#[derive(Debug, Error, PartialEq)]
pub enum GridMapError {
    #[error("bicluster {0} has an empty user set")]
    EmptyUserSet(usize),
    #[error("distance matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("distance matrix has non-zero diagonal at {0}")]
    NonZeroDiagonal(usize),
    #[error("expected n² = {expected} points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("grid side n must be at least 1")]
    ZeroSide,
}

/// Planar coordinates, one `[x, y]` per bicluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
}

/// Bijection from bicluster index to grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAssignment {
    pub n: usize,
    pub cell_of: Vec<Cell>,
}

impl GridAssignment {
    /// Bicluster index for each cell in row-major order.
    pub fn row_major(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n * self.n];
        for (b, cell) in self.cell_of.iter().enumerate() {
            out[cell.row * self.n + cell.col] = b;
        }
        out
    }
}

/// `1 − |Uᵢ ∩ Uⱼ| / |Uᵢ ∪ Uⱼ|` between the user sets of every pair.
pub fn user_jaccard_distance_matrix(
    biclusters: &[Bicluster],
) -> Result<DMatrix<f64>, GridMapError> {
    if let Some(i) = biclusters.iter().position(|b| b.users.is_empty()) {
        return Err(GridMapError::EmptyUserSet(i));
    }
    let k = biclusters.len();
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let sim = crate::bits::sorted_jaccard(&biclusters[i].users, &biclusters[j].users);
            d[(i, j)] = 1.0 - sim;
            d[(j, i)] = 1.0 - sim;
        }
    }
    Ok(d)
}

/// Classical MDS into two dimensions.
///
/// Axes follow descending eigenvalue (ties by eigenvector index); negative
/// eigenvalues are clamped to zero; each axis is flipped so that its
/// largest-magnitude coordinate is positive.
pub fn classical_mds_2d(distances: &DMatrix<f64>) -> Result<Embedding2D, GridMapError> {
    let (rows, cols) = distances.shape();
    if rows != cols {
        return Err(GridMapError::NotSquare { rows, cols });
    }
    let k = rows;
    let tol = 1e-12 * (1.0 + distances.amax());
    for i in 0..k {
        if distances[(i, i)].abs() > tol {
            return Err(GridMapError::NonZeroDiagonal(i));
        }
        for j in (i + 1)..k {
            if (distances[(i, j)] - distances[(j, i)]).abs() > tol {
                return Err(GridMapError::NotSymmetric(i, j));
            }
        }
    }
    if k == 0 {
        return Ok(Embedding2D { coords: Vec::new() });
    }

    // B = -1/2 · J D² J, J the centering matrix.
    let sq = distances.map(|d| d * d);
    let row_means: Vec<f64> = (0..k).map(|i| sq.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / k as f64;
    let mut gram = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand);
        }
    }
    // Exact symmetry for the eigensolver.
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut coords = vec![[0.0; 2]; k];
    for (axis, &e) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[e].max(0.0).sqrt();
        let v = eig.eigenvectors.column(e);
        let mut pivot = 0;
        for i in 1..k {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..k {
            coords[i][axis] = sign * v[i] * scale;
        }
    }
    Ok(Embedding2D { coords })
}

/// Rescales each axis to `[0, n−1]`; a constant axis maps to `(n−1)/2`.
pub fn scale_to_grid(embedding: &Embedding2D, n: usize) -> Vec<[f64; 2]> {
    let hi = (n.max(1) - 1) as f64;
    let mut out = embedding.coords.clone();
    for axis in 0..2 {
        let (lo_v, hi_v) = embedding
            .coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, h), c| {
                (lo.min(c[axis]), h.max(c[axis]))
            });
        let range = hi_v - lo_v;
        for (o, c) in out.iter_mut().zip(&embedding.coords) {
            o[axis] = if range > 1e-12 {
                (c[axis] - lo_v) / range * hi
            } else {
                hi / 2.0
            };
        }
    }
    out
}

/// Greedy nearest-free-cell placement.
///
/// Points are processed by descending `areas` (ties by index); each takes the
/// unoccupied cell closest to its scaled position, ties broken by row-major
/// cell index. The first coordinate is the row axis, the second the column axis.
pub fn greedy_assign(
    embedding: &Embedding2D,
    areas: &[usize],
    n: usize,
) -> Result<GridAssignment, GridMapError> {
    if n == 0 {
        return Err(GridMapError::ZeroSide);
    }
    let cells = n * n;
    let count = embedding.coords.len();
    if count != cells || areas.len() != cells {
        return Err(GridMapError::PointCount {
            expected: cells,
            got: if count != cells { count } else { areas.len() },
        });
    }
    let scaled = scale_to_grid(embedding, n);
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));

    let mut occupied = vec![false; cells];
    let mut cell_of = vec![Cell::new(0, 0); count];
    for b in order {
        let [x, y] = scaled[b];
        let mut best: Option<(f64, usize)> = None;
        for (idx, _) in occupied.iter().enumerate().filter(|(_, &o)| !o) {
            let (r, c) = ((idx / n) as f64, (idx % n) as f64);
            let d2 = (r - x).powi(2) + (c - y).powi(2);
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, idx));
            }
        }
        let (_, idx) = best.expect("a free cell remains while points remain");
        occupied[idx] = true;
        cell_of[b] = Cell::new(idx / n, idx % n);
    }
    Ok(GridAssignment { n, cell_of })
}

/// Distance matrix → MDS → greedy placement for exactly n² biclusters.
pub fn map_to_grid(biclusters: &[Bicluster], n: usize) -> Result<GridAssignment, GridMapError> {
    if biclusters.len() != n * n {
        return Err(GridMapError::PointCount {
            expected: n * n,
            got: biclusters.len(),
        });
    }
    let d = user_jaccard_distance_matrix(biclusters)?;
    let embedding = classical_mds_2d(&d)?;
    let areas: Vec<usize> = biclusters.iter().map(Bicluster::area).collect();
    greedy_assign(&embedding, &areas, n)
}
