//! Differentiable permutation learning: Birkhoff-polytope reparametrization,
//! the multiplier-weighted augmented Lagrangian, and stochastic legalization.

mod alm;
mod reparam;
mod spl;

pub use alm::{alm_loss, alm_loss_and_grad, dual_update, initial_rho, norm_gap, AlmState};
pub use reparam::{reparametrize, Reparametrized, DEFAULT_EPSILON};
pub use spl::{row_argmax, spl_legalize, SplConfig};

use crate::error::{PtcError, Result};
use crate::linalg::RMat;
use serde::{Deserialize, Serialize};

/// A legal permutation stored as `row -> column`: the matrix has a one at
/// `(i, perm[i])`, so `y = P x` gives `y[i] = x[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let k = map.len();
        let mut seen = vec![false; k];
        for &c in &map {
            if c >= k || seen[c] {
                return Err(PtcError::Domain(format!("{map:?} is not a permutation of 0..{k}")));
            }
            seen[c] = true;
        }
        Ok(Self(map))
    }

    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &c)| i == c)
    }

    /// Inversion count, i.e. the number of waveguide crossings needed to
    /// route this permutation with adjacent swaps.
    pub fn crossings(&self) -> usize {
        inversions(&self.0)
    }

    pub fn to_matrix(&self) -> RMat {
        let k = self.len();
        let mut m = RMat::zeros(k, k);
        for (i, &c) in self.0.iter().enumerate() {
            m[(i, c)] = 1.0;
        }
        m
    }

    /// Reads a permutation back from a 0/1 matrix, `None` if `m` is not one.
    pub fn from_matrix(m: &RMat, tol: f64) -> Option<Self> {
        if !is_permutation(m, tol) {
            return None;
        }
        let map = (0..m.nrows()).map(|i| row_argmax_of(m, i)).collect();
        Self::new(map).ok()
    }

    /// Legal permutation closest in ordering to a row-wise assignment that
    /// may collide: rows are ranked by their assigned column, ties by row.
    pub fn by_rank(assignment: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..assignment.len()).collect();
        order.sort_by_key(|&i| (assignment[i], i));
        let mut map = vec![0; assignment.len()];
        for (rank, &row) in order.iter().enumerate() {
            map[row] = rank;
        }
        Self(map)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = PtcError;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

pub(crate) fn inversions(map: &[usize]) -> usize {
    let mut count = 0;
    for i in 0..map.len() {
        for j in i + 1..map.len() {
            if map[i] > map[j] {
                count += 1;
            }
        }
    }
    count
}

fn row_argmax_of(m: &RMat, i: usize) -> usize {
    let mut best = 0;
    for j in 1..m.ncols() {
        if m[(i, j)] > m[(i, best)] {
            best = j;
        }
    }
    best
}

/// True iff every entry is within `tol` of 0 or 1 and every row and column
/// sums to 1 within `tol`.
pub fn is_permutation(m: &RMat, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let binary = m.iter().all(|&x| x.abs() <= tol || (x - 1.0).abs() <= tol);
    binary
        && m.row_iter().all(|r| (r.sum() - 1.0).abs() <= tol)
        && m.column_iter().all(|c| (c.sum() - 1.0).abs() <= tol)
}

/// `I (1/2 - 1/(2K-2)) + 1/(2K-2)`: diagonal one half, every entry positive
/// so gradients reach all of them.
pub fn init_smoothed_identity(k: usize) -> Result<RMat> {
    if k < 2 {
        return Err(PtcError::Domain(format!("smoothed identity needs k >= 2, got {k}")));
    }
    let off = 1.0 / (2.0 * k as f64 - 2.0);
    Ok(RMat::from_fn(k, k, |i, j| if i == j { 0.5 - off + off } else { off }))
}
