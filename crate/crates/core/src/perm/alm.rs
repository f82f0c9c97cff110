use crate::error::{PtcError, Result};
use crate::linalg::RMat;
use serde::{Deserialize, Serialize};

/// Multipliers and penalty schedule of the permutation augmented Lagrangian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlmState {
    /// `[block][row]`
    pub lambda_row: Vec<Vec<f64>>,
    /// `[block][column]`
    pub lambda_col: Vec<Vec<f64>>,
    pub rho: f64,
    pub rho0: f64,
    pub gamma: f64,
    pub step: usize,
}

/// Initial penalty coefficient for mesh size `k`.
pub fn initial_rho(k: usize) -> f64 {
    1e-7 * k as f64 / 8.0
}

/// Growth so that `rho` reaches `1e4 * rho0` after `budget` schedule steps.
const RHO_GROWTH: f64 = 1e4;

impl AlmState {
    pub fn new(blocks: usize, k: usize, rho0: f64, budget: usize) -> Result<Self> {
        if !(rho0 > 0.0) {
            return Err(PtcError::Domain(format!("rho0 must be positive, got {rho0}")));
        }
        let gamma = RHO_GROWTH.powf(1.0 / budget.max(1) as f64);
        Ok(Self {
            lambda_row: vec![vec![0.0; k]; blocks],
            lambda_col: vec![vec![0.0; k]; blocks],
            rho: rho0,
            rho0,
            gamma,
            step: 0,
        })
    }

    /// Advances the schedule by one step: `rho_t = rho0 * gamma^t`.
    pub fn rho_schedule(&mut self) -> f64 {
        self.step += 1;
        self.rho = self.rho0 * self.gamma.powi(self.step as i32);
        self.rho
    }

    pub fn mean_lambda(&self) -> f64 {
        let (sum, n) =
            self.lambda_row.iter().chain(&self.lambda_col).flatten().fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    fn check(&self, p_tildes: &[RMat]) -> Result<()> {
        if p_tildes.len() != self.lambda_row.len() {
            return Err(PtcError::Dimension { expected: self.lambda_row.len(), actual: p_tildes.len() });
        }
        Ok(())
    }
}

/// `||v||_1 - ||v||_2` for a row or column.
pub fn norm_gap<'a>(v: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let l1: f64 = v.clone().map(|x| x.abs()).sum();
    let l2: f64 = v.map(|x| x * x).sum::<f64>().sqrt();
    l1 - l2
}

fn gaps(p: &RMat) -> (Vec<f64>, Vec<f64>) {
    let rows = p.row_iter().map(|r| norm_gap(r.iter())).collect();
    let cols = p.column_iter().map(|c| norm_gap(c.iter())).collect();
    (rows, cols)
}

pub fn alm_loss(p_tildes: &[RMat], state: &AlmState) -> Result<f64> {
    alm_loss_and_grad(p_tildes, state).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every `P~`.
pub fn alm_loss_and_grad(p_tildes: &[RMat], state: &AlmState) -> Result<(f64, Vec<RMat>)> {
    state.check(p_tildes)?;
    let rho = state.rho;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(p_tildes.len());
    for (b, p) in p_tildes.iter().enumerate() {
        let (rows, cols) = gaps(p);
        let mut g = RMat::zeros(p.nrows(), p.ncols());
        for (i, &d) in rows.iter().enumerate() {
            let lam = state.lambda_row[b][i];
            loss += lam * d + 0.5 * rho * lam * d * d;
            let coef = lam * (1.0 + rho * d);
            let norm = p.row(i).norm();
            for j in 0..p.ncols() {
                g[(i, j)] += coef * gap_partial(p[(i, j)], norm);
            }
        }
        for (j, &d) in cols.iter().enumerate() {
            let lam = state.lambda_col[b][j];
            loss += lam * d + 0.5 * rho * lam * d * d;
            let coef = lam * (1.0 + rho * d);
            let norm = p.column(j).norm();
            for i in 0..p.nrows() {
                g[(i, j)] += coef * gap_partial(p[(i, j)], norm);
            }
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

fn gap_partial(x: f64, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    x.signum() * f64::from(x != 0.0) - x / l2
}

/// Multiplier ascent after a weight step. Increments are nonnegative, so the
/// multipliers never decrease.
pub fn dual_update(state: &mut AlmState, p_tildes: &[RMat]) -> Result<()> {
    state.check(p_tildes)?;
    let rho = state.rho;
    for (b, p) in p_tildes.iter().enumerate() {
        let (rows, cols) = gaps(p);
        for (lam, d) in state.lambda_row[b].iter_mut().zip(rows) {
            *lam += rho * (d + 0.5 * d * d);
        }
        for (lam, d) in state.lambda_col[b].iter_mut().zip(cols) {
            *lam += rho * (d + 0.5 * d * d);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::Permutation;

    fn state_with(blocks: usize, k: usize, lam: f64, rho: f64) -> AlmState {
        let mut s = AlmState::new(blocks, k, rho, 10).unwrap();
        for v in s.lambda_row.iter_mut().chain(s.lambda_col.iter_mut()) {
            v.iter_mut().for_each(|x| *x = lam);
        }
        s
    }

    #[test]
    fn zero_on_legal_permutations() {
        let ps = vec![Permutation::new(vec![2, 0, 1]).unwrap().to_matrix(), RMat::identity(3, 3)];
        let s = state_with(2, 3, 5.0, 0.3);
        assert_eq!(alm_loss(&ps, &s).unwrap(), 0.0);
    }

    #[test]
    fn half_half_row_gap() {
        let d = norm_gap([0.5, 0.5].iter());
        assert!((d - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
        assert!((d - 0.29289).abs() < 1e-5);
    }

    #[test]
    fn linear_in_lambda() {
        let p = vec![RMat::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7])];
        let l1 = alm_loss(&p, &state_with(1, 2, 1.0, 0.5)).unwrap();
        let l2 = alm_loss(&p, &state_with(1, 2, 2.0, 0.5)).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-14);
    }

    #[test]
    fn dual_update_increments() {
        // a 1x1 "row" can't have a gap, so use a constructed state directly
        let p = vec![RMat::from_element(2, 2, 0.5)];
        let mut s = state_with(1, 2, 0.0, 2.0);
        let d = 1.0 - 0.5f64.sqrt();
        dual_update(&mut s, &p).unwrap();
        let inc = 2.0 * (d + 0.5 * d * d);
        assert!((s.lambda_row[0][0] - inc).abs() < 1e-15);
        dual_update(&mut s, &p).unwrap();
        dual_update(&mut s, &p).unwrap();
        assert!((s.lambda_col[0][1] - 3.0 * inc).abs() < 1e-14);
        // unit gap with rho 2 adds 3
        assert_eq!(2.0 * (1.0 + 0.5 * 1.0 * 1.0), 3.0);
    }

    #[test]
    fn rho_schedule_reaches_1e4() {
        let mut s = AlmState::new(1, 8, initial_rho(8), 500).unwrap();
        assert_eq!(s.rho, 1e-7);
        for _ in 0..500 {
            s.rho_schedule();
        }
        let ratio = s.rho / s.rho0;
        assert!((0.5e4..=2e4).contains(&ratio), "{ratio}");
        assert!((initial_rho(16) - 2e-7).abs() < 1e-22);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let p = vec![RMat::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.2, 0.2, 0.6])];
        let mut s = state_with(1, 3, 0.0, 0.7);
        s.lambda_row[0] = vec![0.5, 1.5, 2.0];
        s.lambda_col[0] = vec![1.0, 0.25, 3.0];
        let (_, g) = alm_loss_and_grad(&p, &s).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut a = p.clone();
                a[0][(i, j)] += h;
                let mut b = p.clone();
                b[0][(i, j)] -= h;
                let fd = (alm_loss(&a, &s).unwrap() - alm_loss(&b, &s).unwrap()) / (2.0 * h);
                assert!((fd - g[0][(i, j)]).abs() < 1e-8);
            }
        }
    }
}
