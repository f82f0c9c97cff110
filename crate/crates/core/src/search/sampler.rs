use super::supermesh::SuperMesh;
use super::topology::Topology;
use crate::error::{PtcError, Result};
use crate::pdk::{block_area, FootprintConstraint, PdkSpec};
use rand::Rng;

/// Largest number of optional blocks searched exhaustively once sampling
/// and the greedy repair both fail.
const EXHAUSTIVE_LIMIT: usize = 20;

/// Draws a discrete design from the gate distribution whose exact
/// footprint lies inside `c`. Frozen blocks are always kept.
pub fn sample_submesh<R: Rng + ?Sized>(
    mesh: &SuperMesh,
    pdk: &PdkSpec,
    c: &FootprintConstraint,
    rng: &mut R,
    max_tries: usize,
) -> Result<Topology> {
    if !mesh.is_legalized() {
        return Err(PtcError::State("sampling requires legal permutations".into()));
    }
    let areas: Vec<f64> = mesh
        .blocks()
        .map(|b| block_area(mesh.k, b.couplers.count(), b.perm.legal.as_ref().map_or(0, |p| p.crossings()), pdk))
        .collect();
    let probs = mesh.keep_probs();
    let frozen: Vec<bool> = mesh.blocks().map(|b| b.gate.frozen).collect();
    let area = |keep: &[bool]| -> f64 { keep.iter().zip(&areas).filter(|(k, _)| **k).map(|(_, a)| a).sum() };

    for _ in 0..max_tries {
        let keep: Vec<bool> =
            probs.iter().zip(&frozen).map(|(&p, &f)| f || rng.random_bool(p.clamp(0.0, 1.0))).collect();
        if c.contains(area(&keep)) {
            return mesh.topology(&keep);
        }
    }

    if let Some(keep) = greedy(&probs, &frozen, &areas, c) {
        return mesh.topology(&keep);
    }

    let optional: Vec<usize> = (0..probs.len()).filter(|&i| !frozen[i]).collect();
    if optional.len() <= EXHAUSTIVE_LIMIT {
        let log_p = |i: usize, on: bool| {
            let p = if on { probs[i] } else { 1.0 - probs[i] };
            p.max(1e-300).ln()
        };
        let mut best: Option<(f64, Vec<bool>)> = None;
        for bits in 0u32..(1 << optional.len()) {
            let mut keep = frozen.clone();
            let mut lp = 0.0;
            for (j, &i) in optional.iter().enumerate() {
                keep[i] = bits >> j & 1 == 1;
                lp += log_p(i, keep[i]);
            }
            if c.contains(area(&keep)) && best.as_ref().is_none_or(|(b, _)| lp > *b) {
                best = Some((lp, keep));
            }
        }
        if let Some((_, keep)) = best {
            return mesh.topology(&keep);
        }
    }
    Err(PtcError::Infeasible(format!("no block selection of the mesh fits the window [{}, {}]", c.f_min, c.f_max)))
}

/// Starts from the most likely selection, then drops the least likely kept
/// blocks while above the window and adds the most likely dropped blocks
/// while below it.
fn greedy(probs: &[f64], frozen: &[bool], areas: &[f64], c: &FootprintConstraint) -> Option<Vec<bool>> {
    let mut keep: Vec<bool> = probs.iter().zip(frozen).map(|(&p, &f)| f || p >= 0.5).collect();
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| !frozen[i]).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let total = |keep: &[bool]| -> f64 { keep.iter().zip(areas).filter(|(k, _)| **k).map(|(_, a)| a).sum() };
    for &i in &order {
        if total(&keep) <= c.f_max {
            break;
        }
        keep[i] = false;
    }
    for &i in order.iter().rev() {
        if total(&keep) >= c.f_min {
            break;
        }
        if !keep[i] {
            keep[i] = true;
        }
    }
    c.contains(total(&keep)).then_some(keep)
}
