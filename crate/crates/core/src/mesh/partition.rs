use crate::error::{PtcError, Result};
use crate::linalg::{CMat, RMat};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Singular values of one tile, applied between `V` and `U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalScale {
    pub sigma: Vec<f64>,
}

impl DiagonalScale {
    pub fn new(sigma: Vec<f64>) -> Self {
        Self { sigma }
    }

    pub fn apply(&self, x: &CMat) -> CMat {
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= Complex64::new(self.sigma[i], 0.0);
        }
        y
    }
}

/// A `K x K` block `U diag(sigma) V`.
#[derive(Clone, Debug)]
pub struct Tile {
    pub u: CMat,
    pub sigma: DiagonalScale,
    pub v: CMat,
}

impl Tile {
    pub fn k(&self) -> usize {
        self.sigma.sigma.len()
    }

    pub fn matrix(&self) -> CMat {
        &self.u * self.sigma.apply(&self.v)
    }

    pub fn forward(&self, x: &CMat) -> CMat {
        &self.u * self.sigma.apply(&(&self.v * x))
    }
}

/// Number of tile rows and columns covering an `m x n` weight.
pub fn grid_dims(m: usize, n: usize, k: usize) -> (usize, usize) {
    (m.div_ceil(k), n.div_ceil(k))
}

/// Row-major grid of tiles covering an `m_rows x n_cols` weight, zero-padded at the edges.
#[derive(Clone, Debug)]
pub struct WeightPartition {
    pub m_rows: usize,
    pub n_cols: usize,
    pub k: usize,
    pub tiles: Vec<Tile>,
}

impl WeightPartition {
    pub fn new(m_rows: usize, n_cols: usize, k: usize, tiles: Vec<Tile>) -> Result<Self> {
        let (p, q) = grid_dims(m_rows, n_cols, k);
        if tiles.len() != p * q {
            return Err(PtcError::Dimension { expected: p * q, actual: tiles.len() });
        }
        if let Some(t) = tiles.iter().find(|t| t.k() != k || t.u.shape() != (k, k) || t.v.shape() != (k, k)) {
            return Err(PtcError::Dimension { expected: k, actual: t.k() });
        }
        Ok(Self { m_rows, n_cols, k, tiles })
    }

    pub fn grid(&self) -> (usize, usize) {
        grid_dims(self.m_rows, self.n_cols, self.k)
    }

    /// Dense `m_rows x n_cols` matrix, padding cropped.
    pub fn assemble(&self) -> CMat {
        let (p, q) = self.grid();
        let k = self.k;
        let mut full = CMat::zeros(p * k, q * k);
        for i in 0..p {
            for j in 0..q {
                full.view_mut((i * k, j * k), (k, k)).copy_from(&self.tiles[i * q + j].matrix());
            }
        }
        full.view((0, 0), (self.m_rows, self.n_cols)).into_owned()
    }

    /// Tile-wise `W x` for `x` with `n_cols` rows; returns `m_rows` rows.
    pub fn matmul(&self, x: &CMat) -> Result<CMat> {
        if x.nrows() != self.n_cols {
            return Err(PtcError::Dimension { expected: self.n_cols, actual: x.nrows() });
        }
        let (p, q) = self.grid();
        let k = self.k;
        let mut padded = CMat::zeros(q * k, x.ncols());
        padded.view_mut((0, 0), (self.n_cols, x.ncols())).copy_from(x);
        let mut out = CMat::zeros(p * k, x.ncols());
        for i in 0..p {
            let mut acc = CMat::zeros(k, x.ncols());
            for j in 0..q {
                acc += self.tiles[i * q + j].forward(&padded.rows(j * k, k).into_owned());
            }
            out.rows_mut(i * k, k).copy_from(&acc);
        }
        Ok(out.rows(0, self.m_rows).into_owned())
    }
}

/// Real-input convenience wrapper around [`WeightPartition::matmul`].
pub fn partition_matmul(w: &WeightPartition, x: &RMat) -> Result<CMat> {
    w.matmul(&crate::linalg::real_to_complex(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_sq, random_unitary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_partition(m: usize, n: usize, k: usize, seed: u64) -> WeightPartition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = grid_dims(m, n, k);
        let tiles = (0..p * q)
            .map(|_| Tile {
                u: random_unitary(k, &mut rng),
                sigma: DiagonalScale::new((0..k).map(|_| rng.random_range(-1.0..1.0)).collect()),
                v: random_unitary(k, &mut rng),
            })
            .collect();
        WeightPartition::new(m, n, k, tiles).unwrap()
    }

    #[test]
    fn grid_dims_round_up() {
        assert_eq!(grid_dims(12, 20, 8), (2, 3));
        assert_eq!(grid_dims(8, 8, 8), (1, 1));
        assert_eq!(grid_dims(1, 9, 8), (1, 2));
    }

    #[test]
    fn tiled_matmul_matches_dense() {
        let w = random_partition(12, 20, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = RMat::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
        let dense = w.assemble();
        assert_eq!(dense.shape(), (12, 20));
        let expect = &dense * crate::linalg::real_to_complex(&x);
        let got = partition_matmul(&w, &x).unwrap();
        assert!(frobenius_sq(&(got - expect)).sqrt() < 1e-10);
    }

    #[test]
    fn wrong_input_rows_rejected() {
        let w = random_partition(8, 8, 4, 5);
        assert!(w.matmul(&CMat::zeros(7, 1)).is_err());
        assert!(WeightPartition::new(8, 8, 4, w.tiles[..3].to_vec()).is_err());
    }
}
