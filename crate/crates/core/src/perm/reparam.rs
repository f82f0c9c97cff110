use crate::error::{PtcError, Result};
use crate::linalg::RMat;

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Forward result of the Birkhoff reparametrization plus what the backward
/// pass needs.
#[derive(Clone, Debug)]
pub struct Reparametrized {
    pub p_tilde: RMat,
    /// Rows hard-rounded by the soft projection; they carry no gradient.
    pub rounded_rows: Vec<bool>,
    sign: RMat,
    abs: RMat,
    col_sums: Vec<f64>,
    col_normalized: RMat,
    row_sums: Vec<f64>,
}

/// `|P|`, column-normalize, row-normalize, then round every row whose max is
/// at least `1 - epsilon`.
pub fn reparametrize(p_raw: &RMat, epsilon: f64) -> Result<Reparametrized> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(PtcError::Domain(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    let k = p_raw.nrows();
    let abs = p_raw.abs();
    let sign = p_raw.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    let col_sums: Vec<f64> = abs.column_iter().map(|c| c.sum()).collect();
    if let Some(j) = col_sums.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(PtcError::Degenerate(format!("column {j} of the relaxed permutation sums to zero")));
    }
    let col_normalized = RMat::from_fn(k, p_raw.ncols(), |i, j| abs[(i, j)] / col_sums[j]);
    let row_sums: Vec<f64> = col_normalized.row_iter().map(|r| r.sum()).collect();
    if let Some(i) = row_sums.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(PtcError::Degenerate(format!("row {i} of the relaxed permutation sums to zero")));
    }
    let mut p_tilde = RMat::from_fn(k, p_raw.ncols(), |i, j| col_normalized[(i, j)] / row_sums[i]);
    let mut rounded_rows = vec![false; k];
    for (i, rounded) in rounded_rows.iter_mut().enumerate() {
        let max = p_tilde.row(i).max();
        if max >= 1.0 - epsilon {
            *rounded = true;
            for j in 0..p_tilde.ncols() {
                p_tilde[(i, j)] = p_tilde[(i, j)].round();
            }
        }
    }
    Ok(Reparametrized { p_tilde, rounded_rows, sign, abs, col_sums, col_normalized, row_sums })
}

impl Reparametrized {
    /// `|P|` scaled to unit column sums, before the row normalization.
    pub fn col_normalized(&self) -> &RMat {
        &self.col_normalized
    }

    pub fn all_rounded(&self) -> bool {
        self.rounded_rows.iter().all(|&r| r)
    }

    /// Pulls a cotangent on `P~` back to the raw parameters.
    pub fn vjp(&self, grad_p_tilde: &RMat) -> RMat {
        let (k, n) = grad_p_tilde.shape();
        // through the row normalization; rounded rows are stopped
        let mut g_col = RMat::zeros(k, n);
        for i in 0..k {
            if self.rounded_rows[i] {
                continue;
            }
            let r = self.row_sums[i];
            let dot: f64 = (0..n).map(|j| grad_p_tilde[(i, j)] * self.col_normalized[(i, j)]).sum();
            for j in 0..n {
                g_col[(i, j)] = grad_p_tilde[(i, j)] / r - dot / (r * r);
            }
        }
        // through the column normalization and the absolute value
        let mut g_raw = RMat::zeros(k, n);
        for j in 0..n {
            let c = self.col_sums[j];
            let dot: f64 = (0..k).map(|i| g_col[(i, j)] * self.abs[(i, j)]).sum();
            for i in 0..k {
                g_raw[(i, j)] = self.sign[(i, j)] * (g_col[(i, j)] / c - dot / (c * c));
            }
        }
        g_raw
    }
}
