use super::layers::{apply_couplers_linearized, apply_phases, couplers_linearized_vjp, cr_vjp, phases_vjp};
use crate::error::{PtcError, Result};
use crate::linalg::{identity, re_inner, real_to_complex, CMat, RMat};
use num_complex::Complex64;

/// One gated block as seen by the chain builder.
#[derive(Clone, Copy, Debug)]
pub struct BlockView<'a> {
    pub phases: &'a [f64],
    pub offset: usize,
    /// Binarized transmissions (or their surrogate continuation).
    pub t_q: &'a [f64],
    pub p_tilde: &'a RMat,
    /// `[skip, keep]` weights.
    pub gate: [f64; 2],
}

/// Activations recorded by [`build_unitary_taped`].
#[derive(Clone, Debug)]
pub struct UnitaryTape {
    inputs: Vec<CMat>,
    after_ps: Vec<CMat>,
    after_dc: Vec<CMat>,
    branch: Vec<CMat>,
}

#[derive(Clone, Debug)]
pub struct BlockGrad {
    pub phases: Vec<f64>,
    pub t_q: Vec<f64>,
    pub p_tilde: RMat,
    pub gate: [f64; 2],
}

fn check_block(k: usize, b: &BlockView<'_>) -> Result<()> {
    if b.phases.len() != k {
        return Err(PtcError::Dimension { expected: k, actual: b.phases.len() });
    }
    if b.p_tilde.shape() != (k, k) {
        return Err(PtcError::Dimension { expected: k, actual: b.p_tilde.nrows() });
    }
    let slots = super::CouplerColumn::slots(k, b.offset);
    if b.t_q.len() != slots {
        return Err(PtcError::Dimension { expected: slots, actual: b.t_q.len() });
    }
    Ok(())
}

/// Chains the blocks in signal order, each blended with identity by its
/// gate: `X <- m_skip X + m_keep P T R X`, starting from `I`.
pub fn build_unitary(k: usize, blocks: &[BlockView<'_>]) -> Result<CMat> {
    build_unitary_taped(k, blocks).map(|(u, _)| u)
}

pub fn build_unitary_taped(k: usize, blocks: &[BlockView<'_>]) -> Result<(CMat, UnitaryTape)> {
    if blocks.is_empty() {
        return Err(PtcError::Domain("a unitary needs at least one block".into()));
    }
    let mut tape = UnitaryTape {
        inputs: Vec::with_capacity(blocks.len()),
        after_ps: Vec::with_capacity(blocks.len()),
        after_dc: Vec::with_capacity(blocks.len()),
        branch: Vec::with_capacity(blocks.len()),
    };
    let mut x = identity(k);
    for b in blocks {
        check_block(k, b)?;
        let a = apply_phases(b.phases, &x);
        let d = apply_couplers_linearized(b.offset, b.t_q, &a);
        let z = real_to_complex(b.p_tilde) * &d;
        let out = &x * Complex64::new(b.gate[0], 0.0) + &z * Complex64::new(b.gate[1], 0.0);
        tape.inputs.push(std::mem::replace(&mut x, out));
        tape.after_ps.push(a);
        tape.after_dc.push(d);
        tape.branch.push(z);
    }
    Ok((x, tape))
}

/// Pulls `dL/dU` back to every block's parameters.
pub fn unitary_vjp(blocks: &[BlockView<'_>], tape: &UnitaryTape, grad_u: &CMat) -> Vec<BlockGrad> {
    let mut g = grad_u.clone();
    let mut grads = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate().rev() {
        let gate = [re_inner(&g, &tape.inputs[i]), re_inner(&g, &tape.branch[i])];
        let g_branch = &g * Complex64::new(b.gate[1], 0.0);
        let (g_dc, p_tilde) = cr_vjp(b.p_tilde, &tape.after_dc[i], &g_branch);
        let (g_ps, t_q) = couplers_linearized_vjp(b.offset, b.t_q, &tape.after_ps[i], &g_dc);
        let (g_in, phases) = phases_vjp(b.phases, &tape.after_ps[i], &g_ps);
        g = &g * Complex64::new(b.gate[0], 0.0) + g_in;
        grads.push(BlockGrad { phases, t_q, p_tilde, gate });
    }
    grads.reverse();
    grads
}

/// Which axis [`normalize_unitary`] scales to unit l2 norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Row,
    Column,
}

fn norms(u: &CMat, mode: NormMode) -> Vec<f64> {
    match mode {
        NormMode::Row => u.row_iter().map(|r| r.norm()).collect(),
        NormMode::Column => u.column_iter().map(|c| c.norm()).collect(),
    }
}

pub fn normalize_unitary(u: &CMat, mode: NormMode) -> Result<CMat> {
    let n = norms(u, mode);
    if let Some(i) = n.iter().position(|&x| !(x > 0.0)) {
        return Err(PtcError::Degenerate(format!("{mode:?} {i} has zero norm")));
    }
    let mut out = u.clone();
    for (i, &s) in n.iter().enumerate() {
        match mode {
            NormMode::Row => out.row_mut(i).unscale_mut(s),
            NormMode::Column => out.column_mut(i).unscale_mut(s),
        }
    }
    Ok(out)
}

pub fn normalize_vjp(u: &CMat, mode: NormMode, grad_y: &CMat) -> CMat {
    let n = norms(u, mode);
    let mut g = grad_y.clone();
    for (i, &r) in n.iter().enumerate() {
        let (src, gy) = match mode {
            NormMode::Row => (u.row(i).transpose(), grad_y.row(i).transpose()),
            NormMode::Column => (u.column(i).into_owned(), grad_y.column(i).into_owned()),
        };
        let a: f64 = gy.iter().zip(src.iter()).map(|(g, x)| (g.conj() * x).re).sum();
        let col = gy.unscale(r) - src * Complex64::new(a / (r * r * r), 0.0);
        match mode {
            NormMode::Row => g.row_mut(i).copy_from(&col.transpose()),
            NormMode::Column => g.column_mut(i).copy_from(&col),
        }
    }
    g
}
