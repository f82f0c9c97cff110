use super::gate::{
    expected_keep_prob, gumbel_sample, gumbel_softmax, gumbel_softmax_vjp, keep_prob_vjp, SuperBlockGate,
};
use super::topology::{Topology, TopologyBlock};
use crate::error::{PtcError, Result};
use crate::linalg::{CMat, RMat};
use crate::mesh::{
    build_unitary_taped, grid_dims, normalize_unitary, normalize_vjp, quantize_coupler, ste_backward, unitary_vjp,
    BlockView, CouplerColumn, NormMode, PermutationLayer, RelaxedPerm, UnitaryTape, STE_SLOPE,
};
use crate::pdk::{
    block_area, expected_footprint, footprint_penalty, footprint_proxy, BlockFootprint, FootprintConstraint, PdkSpec,
    PenaltyConfig, ProxyFootprint,
};
use crate::perm::{
    alm_loss_and_grad, initial_rho, row_argmax, spl_legalize, AlmState, Permutation, SplConfig, DEFAULT_EPSILON,
};
use crate::train::task::{task_loss, Batch, Task};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Latent spread of freshly initialized coupler columns.
const COUPLER_INIT_SPREAD: f64 = 0.1;

/// Topology shared by every tile: couplers, crossings and the gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperBlock {
    pub couplers: CouplerColumn,
    pub perm: PermutationLayer,
    pub gate: SuperBlockGate,
}

impl SuperBlock {
    /// Crossing count of the legal permutation, or of the rank-ordered
    /// row argmax while still relaxed.
    pub fn crossings(&self, epsilon: f64) -> Result<usize> {
        Ok(match &self.perm.legal {
            Some(p) => p.crossings(),
            None => Permutation::by_rank(&row_argmax(&self.perm.p_tilde(epsilon)?.matrix().clone())).crossings(),
        })
    }
}

/// Per-tile trainables: one phase column per block of each unitary plus
/// the singular values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileWeights {
    pub phases_u: Vec<Vec<f64>>,
    pub phases_v: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub m_rows: usize,
    pub n_cols: usize,
    /// Row-major tile grid.
    pub tiles: Vec<TileWeights>,
}

impl LayerWeights {
    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|c| vec![0.0; c.len()]).collect();
        Self {
            m_rows: self.m_rows,
            n_cols: self.n_cols,
            tiles: self
                .tiles
                .iter()
                .map(|t| TileWeights {
                    phases_u: z(&t.phases_u),
                    phases_v: z(&t.phases_v),
                    sigma: vec![0.0; t.sigma.len()],
                })
                .collect(),
        }
    }
}

/// How coupler latents reach the transfer matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SteMode {
    /// Quantized forward, clipped straight-through backward.
    Binarized,
    /// Smooth linear continuation of the quantizer with the straight-through
    /// slope, used for finite-difference checks.
    Surrogate,
}

/// Linear map through `(-1, sqrt2/2)` and `(1, 1)` with the straight-through slope.
pub fn surrogate_transmission(t_latent: f64) -> f64 {
    STE_SLOPE * t_latent + (2.0 + SQRT_2) / 4.0
}

/// Gate weights for every block, in `U` then `V` order.
#[derive(Clone, Debug, PartialEq)]
pub struct GateDraw {
    pub m: Vec<[f64; 2]>,
    pub noise: Vec<[f64; 2]>,
    pub tau: f64,
}

/// Loss terms of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub task: f64,
    pub alm: f64,
    pub footprint: f64,
    pub expected_footprint: f64,
    pub proxy_footprint: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.task + self.alm + self.footprint
    }
}

/// Footprint-penalty inputs.
#[derive(Clone, Copy, Debug)]
pub struct FootprintTerms<'a> {
    pub pdk: &'a PdkSpec,
    pub constraint: &'a FootprintConstraint,
    pub penalty: &'a PenaltyConfig,
}

/// Which terms enter the total loss.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub ste: SteMode,
    pub alm: bool,
    pub footprint: Option<FootprintTerms<'a>>,
}

impl Objective<'_> {
    pub fn task_only(ste: SteMode) -> Self {
        Self { ste, alm: false, footprint: None }
    }
}

/// Gradient of the total loss for every trainable.
#[derive(Clone, Debug)]
pub struct MeshGrad {
    pub layers: Vec<LayerWeights>,
    pub t_latent: Vec<Vec<f64>>,
    /// `None` for legalized blocks.
    pub p_raw: Vec<Option<RMat>>,
    pub theta: Vec<[f64; 2]>,
}

/// The over-parameterized searchable mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperMesh {
    pub k: usize,
    pub u_blocks: Vec<SuperBlock>,
    pub v_blocks: Vec<SuperBlock>,
    pub layers: Vec<LayerWeights>,
    pub alm: AlmState,
    /// Soft-projection threshold of the permutation reparametrization.
    pub epsilon: f64,
}

fn random_layers<R: Rng + ?Sized>(
    k: usize,
    bu: usize,
    bv: usize,
    shapes: &[(usize, usize)],
    rng: &mut R,
) -> Result<Vec<LayerWeights>> {
    if shapes.is_empty() {
        return Err(PtcError::Domain("mesh needs at least one weight layer".into()));
    }
    let cols = |n: usize, rng: &mut R| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..k).map(|_| rng.random_range(-PI..PI)).collect()).collect()
    };
    shapes
        .iter()
        .map(|&(m, n)| {
            if m == 0 || n == 0 {
                return Err(PtcError::Domain(format!("empty {m}x{n} weight")));
            }
            let (p, q) = grid_dims(m, n, k);
            let tiles = (0..p * q)
                .map(|_| {
                    let phases_u = cols(bu, rng);
                    let phases_v = cols(bv, rng);
                    let sigma = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                    TileWeights { phases_u, phases_v, sigma }
                })
                .collect();
            Ok(LayerWeights { m_rows: m, n_cols: n, tiles })
        })
        .collect()
}

struct Prepared {
    t_q: Vec<Vec<f64>>,
    perms: Vec<RelaxedPerm>,
}

struct TileTape {
    u_raw: CMat,
    u: CMat,
    v_raw: CMat,
    v: CMat,
    tape_u: UnitaryTape,
    tape_v: UnitaryTape,
}

impl SuperMesh {
    /// Fresh mesh with `per_unitary` super blocks on each side, the last
    /// `frozen` of which are always on.
    pub fn new<R: Rng + ?Sized>(
        k: usize,
        per_unitary: usize,
        frozen: usize,
        layer_shapes: &[(usize, usize)],
        alm_budget: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k < 2 {
            return Err(PtcError::Domain(format!("mesh size must be at least 2, got {k}")));
        }
        if per_unitary == 0 || frozen > per_unitary {
            return Err(PtcError::Domain(format!("{frozen} frozen of {per_unitary} blocks per unitary")));
        }
        let side = |rng: &mut R| -> Result<Vec<SuperBlock>> {
            (0..per_unitary)
                .map(|i| {
                    let offset = CouplerColumn::offset_for_block(i);
                    Ok(SuperBlock {
                        couplers: CouplerColumn::random(k, offset, COUPLER_INIT_SPREAD, rng),
                        perm: PermutationLayer::smoothed_identity(k)?,
                        gate: if i + frozen >= per_unitary { SuperBlockGate::frozen() } else { SuperBlockGate::new() },
                    })
                })
                .collect()
        };
        let u_blocks = side(rng)?;
        let v_blocks = side(rng)?;
        let layers = random_layers(k, per_unitary, per_unitary, layer_shapes, rng)?;
        let alm = AlmState::new(2 * per_unitary, k, initial_rho(k), alm_budget)?;
        Ok(Self { k, u_blocks, v_blocks, layers, alm, epsilon: DEFAULT_EPSILON })
    }

    /// Fixed design: always-on gates, legal crossings, binarized couplers,
    /// freshly initialized phases and singular values.
    pub fn from_topology<R: Rng + ?Sized>(
        top: &Topology,
        layer_shapes: &[(usize, usize)],
        rng: &mut R,
    ) -> Result<Self> {
        top.validate()?;
        let side = |blocks: &[TopologyBlock]| -> Vec<SuperBlock> {
            blocks
                .iter()
                .map(|b| SuperBlock {
                    couplers: CouplerColumn::from_mask(b.offset, &b.couplers),
                    perm: PermutationLayer::fixed(b.perm.clone()),
                    gate: SuperBlockGate::frozen(),
                })
                .collect()
        };
        let u_blocks = side(&top.u);
        let v_blocks = side(&top.v);
        let layers = random_layers(top.k, u_blocks.len(), v_blocks.len(), layer_shapes, rng)?;
        let alm = AlmState::new(u_blocks.len() + v_blocks.len(), top.k, initial_rho(top.k), 1)?;
        Ok(Self { k: top.k, u_blocks, v_blocks, layers, alm, epsilon: DEFAULT_EPSILON })
    }

    pub fn num_blocks(&self) -> usize {
        self.u_blocks.len() + self.v_blocks.len()
    }

    /// `U` blocks then `V` blocks, each in signal order.
    pub fn blocks(&self) -> impl Iterator<Item = &SuperBlock> {
        self.u_blocks.iter().chain(&self.v_blocks)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut SuperBlock> {
        self.u_blocks.iter_mut().chain(self.v_blocks.iter_mut())
    }

    pub fn is_legalized(&self) -> bool {
        self.blocks().all(|b| b.perm.legal.is_some())
    }

    pub fn keep_probs(&self) -> Vec<f64> {
        self.blocks().map(|b| expected_keep_prob(&b.gate)).collect()
    }

    pub fn draw_gates<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Result<GateDraw> {
        let samples = self.blocks().map(|b| gumbel_sample(&b.gate, tau, rng)).collect::<Result<Vec<_>>>()?;
        Ok(GateDraw { m: samples.iter().map(|s| s.m).collect(), noise: samples.iter().map(|s| s.noise).collect(), tau })
    }

    /// Gate weights recomputed from stored noise at the current logits.
    pub fn gates_from_noise(&self, noise: &[[f64; 2]], tau: f64) -> Result<GateDraw> {
        if noise.len() != self.num_blocks() {
            return Err(PtcError::Dimension { expected: self.num_blocks(), actual: noise.len() });
        }
        let m = self.blocks().zip(noise).map(|(b, &g)| gumbel_softmax(&b.gate, g, tau)).collect::<Result<_>>()?;
        Ok(GateDraw { m, noise: noise.to_vec(), tau })
    }

    /// Every block fully present.
    pub fn certain_gates(&self) -> GateDraw {
        let n = self.num_blocks();
        GateDraw { m: vec![[0.0, 1.0]; n], noise: vec![[0.0; 2]; n], tau: 1.0 }
    }

    fn prepare(&self, ste: SteMode) -> Result<Prepared> {
        let t_q = self
            .blocks()
            .map(|b| {
                b.couplers
                    .t_latent
                    .iter()
                    .map(|&t| match ste {
                        SteMode::Binarized => quantize_coupler(t),
                        SteMode::Surrogate => surrogate_transmission(t),
                    })
                    .collect()
            })
            .collect();
        let perms = self.blocks().map(|b| b.perm.p_tilde(self.epsilon)).collect::<Result<_>>()?;
        Ok(Prepared { t_q, perms })
    }

    fn views<'a>(
        &'a self,
        prep: &'a Prepared,
        gates: &GateDraw,
        phases: &'a [Vec<f64>],
        first: usize,
    ) -> Vec<BlockView<'a>> {
        phases
            .iter()
            .enumerate()
            .map(|(i, ph)| {
                let g = first + i;
                let blk =
                    if g < self.u_blocks.len() { &self.u_blocks[g] } else { &self.v_blocks[g - self.u_blocks.len()] };
                BlockView {
                    phases: ph,
                    offset: blk.couplers.offset,
                    t_q: &prep.t_q[g],
                    p_tilde: prep.perms[g].matrix(),
                    gate: gates.m[g],
                }
            })
            .collect()
    }

    fn tile_forward(&self, prep: &Prepared, gates: &GateDraw, tile: &TileWeights) -> Result<(CMat, TileTape)> {
        let nu = self.u_blocks.len();
        let (u_raw, tape_u) = build_unitary_taped(self.k, &self.views(prep, gates, &tile.phases_u, 0))?;
        let (v_raw, tape_v) = build_unitary_taped(self.k, &self.views(prep, gates, &tile.phases_v, nu))?;
        let u = normalize_unitary(&u_raw, NormMode::Row)?;
        let v = normalize_unitary(&v_raw, NormMode::Column)?;
        let mut sv = v.clone();
        for (i, mut row) in sv.row_iter_mut().enumerate() {
            row *= Complex64::new(tile.sigma[i], 0.0);
        }
        let w = &u * sv;
        Ok((w, TileTape { u_raw, u, v_raw, v, tape_u, tape_v }))
    }

    fn check_gates(&self, gates: &GateDraw) -> Result<()> {
        if gates.m.len() != self.num_blocks() {
            return Err(PtcError::Dimension { expected: self.num_blocks(), actual: gates.m.len() });
        }
        Ok(())
    }

    fn forward(&self, prep: &Prepared, gates: &GateDraw) -> Result<(Vec<CMat>, Vec<Vec<TileTape>>)> {
        self.check_gates(gates)?;
        let k = self.k;
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (p, q) = grid_dims(layer.m_rows, layer.n_cols, k);
            let mut full = CMat::zeros(p * k, q * k);
            let mut lt = Vec::with_capacity(p * q);
            for (idx, tile) in layer.tiles.iter().enumerate() {
                let (w, tape) = self.tile_forward(prep, gates, tile)?;
                full.view_mut(((idx / q) * k, (idx % q) * k), (k, k)).copy_from(&w);
                lt.push(tape);
            }
            weights.push(full.view((0, 0), (layer.m_rows, layer.n_cols)).into_owned());
            tapes.push(lt);
        }
        Ok((weights, tapes))
    }

    /// Dense weights realized by the mesh under `gates`.
    pub fn assemble(&self, gates: &GateDraw, ste: SteMode) -> Result<Vec<CMat>> {
        let prep = self.prepare(ste)?;
        self.forward(&prep, gates).map(|(w, _)| w)
    }

    /// Dense weights with every block present and binarized couplers.
    pub fn assemble_certain(&self) -> Result<Vec<CMat>> {
        self.assemble(&self.certain_gates(), SteMode::Binarized)
    }

    fn block_footprints<'a>(&self, prep: &'a Prepared, keep: &[f64]) -> Result<Vec<BlockFootprint<'a>>> {
        self.blocks()
            .enumerate()
            .map(|(g, b)| {
                Ok(BlockFootprint {
                    keep_prob: keep[g],
                    t_q: &prep.t_q[g],
                    couplers: b.couplers.count(),
                    crossings: b.crossings(self.epsilon)?,
                    p_tilde: prep.perms[g].matrix(),
                })
            })
            .collect()
    }

    /// Keep-probability-weighted footprint with exact device counts.
    pub fn footprint_expected(&self, pdk: &PdkSpec) -> Result<f64> {
        let prep = self.prepare(SteMode::Binarized)?;
        Ok(expected_footprint(&self.block_footprints(&prep, &self.keep_probs())?, self.k, pdk))
    }

    /// Differentiable footprint with gradients per block.
    pub fn footprint_proxy(&self, pdk: &PdkSpec, penalty: &PenaltyConfig, ste: SteMode) -> Result<ProxyFootprint> {
        let prep = self.prepare(ste)?;
        Ok(footprint_proxy(&self.block_footprints(&prep, &self.keep_probs())?, self.k, pdk, penalty))
    }

    /// Exact footprint with every block present.
    pub fn footprint_exact_all(&self, pdk: &PdkSpec) -> Result<f64> {
        if !self.is_legalized() {
            return Err(PtcError::State("footprint of a mesh with relaxed permutations".into()));
        }
        Ok(self
            .blocks()
            .filter_map(|b| b.perm.legal.as_ref().map(|p| block_area(self.k, b.couplers.count(), p.crossings(), pdk)))
            .sum())
    }

    /// Current relaxed crossing matrices in block order.
    pub fn p_tildes(&self) -> Result<Vec<RMat>> {
        self.blocks().map(|b| Ok(b.perm.p_tilde(self.epsilon)?.matrix().clone())).collect()
    }

    /// Forces every relaxed permutation to a legal one.
    pub fn legalize<R: Rng + ?Sized>(&mut self, spl: &SplConfig, rng: &mut R) -> Result<()> {
        let eps = self.epsilon;
        for b in self.blocks_mut() {
            if b.perm.legal.is_none() {
                let p = b.perm.p_tilde(eps)?.matrix().clone();
                b.perm.legal = Some(spl_legalize(&p, spl, rng)?);
            }
        }
        Ok(())
    }

    /// Discrete design keeping the flagged blocks; phases come from the
    /// first tile of the first layer.
    pub fn topology(&self, keep: &[bool]) -> Result<Topology> {
        if keep.len() != self.num_blocks() {
            return Err(PtcError::Dimension { expected: self.num_blocks(), actual: keep.len() });
        }
        if !self.is_legalized() {
            return Err(PtcError::State("topology of a mesh with relaxed permutations".into()));
        }
        let tile = &self.layers[0].tiles[0];
        let nu = self.u_blocks.len();
        let pick = |blocks: &[SuperBlock], phases: &[Vec<f64>], first: usize| -> Vec<TopologyBlock> {
            blocks
                .iter()
                .enumerate()
                .filter(|(i, _)| keep[first + i])
                .map(|(i, b)| TopologyBlock {
                    offset: b.couplers.offset,
                    couplers: b.couplers.mask(),
                    perm: b.perm.legal.clone().expect("legalized"),
                    phases: phases[i].clone(),
                })
                .collect()
        };
        let top = Topology {
            k: self.k,
            u: pick(&self.u_blocks, &tile.phases_u, 0),
            v: pick(&self.v_blocks, &tile.phases_v, nu),
        };
        top.validate()?;
        Ok(top)
    }

    /// Loss terms only.
    pub fn loss(&self, task: &Task, batch: &Batch, gates: &GateDraw, obj: &Objective<'_>) -> Result<LossTerms> {
        self.loss_and_grad(task, batch, gates, obj).map(|(l, _)| l)
    }

    /// Total loss and its gradient with respect to every trainable.
    pub fn loss_and_grad(
        &self,
        task: &Task,
        batch: &Batch,
        gates: &GateDraw,
        obj: &Objective<'_>,
    ) -> Result<(LossTerms, MeshGrad)> {
        let prep = self.prepare(obj.ste)?;
        let (weights, tapes) = self.forward(&prep, gates)?;
        let (task_value, grad_w) = task_loss(task, &weights, batch)?;
        let n = self.num_blocks();
        let nu = self.u_blocks.len();
        let k = self.k;
        let mut d_t_q: Vec<Vec<f64>> = prep.t_q.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut d_p: Vec<RMat> = vec![RMat::zeros(k, k); n];
        let mut d_m = vec![[0.0; 2]; n];
        let mut d_keep = vec![0.0; n];
        let mut layers_grad: Vec<LayerWeights> = self.layers.iter().map(LayerWeights::zeros_like).collect();

        for (li, layer) in self.layers.iter().enumerate() {
            let (p, q) = grid_dims(layer.m_rows, layer.n_cols, k);
            let mut g_full = CMat::zeros(p * k, q * k);
            g_full.view_mut((0, 0), (layer.m_rows, layer.n_cols)).copy_from(&grad_w[li]);
            for (idx, tile) in layer.tiles.iter().enumerate() {
                let t = &tapes[li][idx];
                let g = g_full.view(((idx / q) * k, (idx % q) * k), (k, k)).into_owned();
                let mut sv = t.v.clone();
                let mut us = t.u.clone();
                for i in 0..k {
                    sv.row_mut(i).scale_mut(tile.sigma[i]);
                    us.column_mut(i).scale_mut(tile.sigma[i]);
                }
                let g_u = &g * sv.adjoint();
                let g_v = us.adjoint() * &g;
                let core = t.u.adjoint() * &g * t.v.adjoint();
                let tg = &mut layers_grad[li].tiles[idx];
                for i in 0..k {
                    tg.sigma[i] = core[(i, i)].re;
                }
                let g_u_raw = normalize_vjp(&t.u_raw, NormMode::Row, &g_u);
                let g_v_raw = normalize_vjp(&t.v_raw, NormMode::Column, &g_v);
                for (side, raw_g, tape, phases, first) in
                    [(0, &g_u_raw, &t.tape_u, &tile.phases_u, 0), (1, &g_v_raw, &t.tape_v, &tile.phases_v, nu)]
                {
                    let views = self.views(&prep, gates, phases, first);
                    for (i, bg) in unitary_vjp(&views, tape, raw_g).into_iter().enumerate() {
                        let gidx = first + i;
                        if side == 0 {
                            tg.phases_u[i] = bg.phases;
                        } else {
                            tg.phases_v[i] = bg.phases;
                        }
                        for (a, b) in d_t_q[gidx].iter_mut().zip(&bg.t_q) {
                            *a += b;
                        }
                        d_p[gidx] += bg.p_tilde;
                        d_m[gidx][0] += bg.gate[0];
                        d_m[gidx][1] += bg.gate[1];
                    }
                }
            }
        }

        let mut terms = LossTerms { task: task_value, ..Default::default() };
        if obj.alm {
            let p_tildes: Vec<RMat> = prep.perms.iter().map(|p| p.matrix().clone()).collect();
            let (l, g) = alm_loss_and_grad(&p_tildes, &self.alm)?;
            terms.alm = l;
            for (a, b) in d_p.iter_mut().zip(g) {
                *a += b;
            }
        }
        if let Some(f) = obj.footprint {
            let keep = self.keep_probs();
            let blocks = self.block_footprints(&prep, &keep)?;
            let exact = expected_footprint(&blocks, k, f.pdk);
            let proxy = footprint_proxy(&blocks, k, f.pdk, f.penalty);
            let (pen, dpen) = footprint_penalty(proxy.value, exact, f.constraint, f.penalty);
            terms.footprint = pen;
            terms.expected_footprint = exact;
            terms.proxy_footprint = proxy.value;
            for g in 0..n {
                d_keep[g] += dpen * proxy.d_keep[g];
                for (a, b) in d_t_q[g].iter_mut().zip(&proxy.d_t_q[g]) {
                    *a += dpen * b;
                }
                d_p[g] += &proxy.d_p_tilde[g] * dpen;
            }
        }
        if !terms.total().is_finite() {
            return Err(PtcError::Divergence { step: 0, what: "non-finite loss".into(), trace: vec![terms.total()] });
        }

        let mut t_latent = Vec::with_capacity(n);
        let mut p_raw = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        for (g, b) in self.blocks().enumerate() {
            t_latent.push(
                d_t_q[g]
                    .iter()
                    .map(|&d| match obj.ste {
                        SteMode::Binarized => ste_backward(d),
                        SteMode::Surrogate => d * STE_SLOPE,
                    })
                    .collect(),
            );
            p_raw.push(match &prep.perms[g] {
                RelaxedPerm::Legal(_) => None,
                RelaxedPerm::Relaxed(r) => Some(r.vjp(&d_p[g])),
            });
            let a = gumbel_softmax_vjp(&b.gate, gates.m[g], gates.tau, d_m[g]);
            let c = keep_prob_vjp(&b.gate, d_keep[g]);
            theta.push([a[0] + c[0], a[1] + c[1]]);
        }
        Ok((terms, MeshGrad { layers: layers_grad, t_latent, p_raw, theta }))
    }
}

/// Flat views used by the optimizers.
impl SuperMesh {
    pub fn weights_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_weights_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for layer in &mut self.layers {
            for t in &mut layer.tiles {
                for x in t.phases_u.iter_mut().chain(t.phases_v.iter_mut()).flatten().chain(t.sigma.iter_mut()) {
                    *x = it.next().expect("flat weight length");
                }
            }
        }
    }

    pub fn couplers_flat(&self) -> Vec<f64> {
        self.blocks().flat_map(|b| b.couplers.t_latent.iter().copied()).collect()
    }

    pub fn set_couplers_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for b in self.blocks_mut() {
            b.couplers.t_latent.iter_mut().for_each(|x| *x = it.next().expect("flat coupler length"));
        }
    }

    /// Raw entries of every still-relaxed permutation.
    pub fn perms_flat(&self) -> Vec<f64> {
        self.blocks().filter(|b| b.perm.legal.is_none()).flat_map(|b| b.perm.p_raw.iter().copied()).collect()
    }

    pub fn set_perms_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for b in self.blocks_mut().filter(|b| b.perm.legal.is_none()) {
            b.perm.p_raw.iter_mut().for_each(|x| *x = it.next().expect("flat permutation length"));
        }
    }

    /// Logits of every unfrozen gate.
    pub fn theta_flat(&self) -> Vec<f64> {
        self.blocks().filter(|b| !b.gate.frozen).flat_map(|b| b.gate.theta).collect()
    }

    pub fn set_theta_flat(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        for b in self.blocks_mut().filter(|b| !b.gate.frozen) {
            b.gate.theta.iter_mut().for_each(|x| *x = it.next().expect("flat logit length"));
        }
    }
}

pub(crate) fn flatten_layers(layers: &[LayerWeights]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| &l.tiles)
        .flat_map(|t| t.phases_u.iter().chain(&t.phases_v).flatten().chain(&t.sigma).copied())
        .collect()
}

impl MeshGrad {
    pub fn weights_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn couplers_flat(&self) -> Vec<f64> {
        self.t_latent.iter().flatten().copied().collect()
    }

    pub fn perms_flat(&self) -> Vec<f64> {
        self.p_raw.iter().flatten().flat_map(|m| m.iter().copied()).collect()
    }

    /// Gradients of unfrozen gates, matching [`SuperMesh::theta_flat`].
    pub fn theta_flat(&self, mesh: &SuperMesh) -> Vec<f64> {
        mesh.blocks().zip(&self.theta).filter(|(b, _)| !b.gate.frozen).flat_map(|(_, t)| *t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_sq, unitarity_error};
    use crate::train::task::MatrixFitTask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mesh(seed: u64) -> SuperMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SuperMesh::new(4, 3, 1, &[(4, 4)], 100, &mut rng).unwrap()
    }

    #[test]
    fn layout_and_gates() {
        let m = mesh(1);
        assert_eq!(m.num_blocks(), 6);
        let frozen: Vec<bool> = m.blocks().map(|b| b.gate.frozen).collect();
        assert_eq!(frozen, [false, false, true, false, false, true]);
        let offsets: Vec<usize> = m.u_blocks.iter().map(|b| b.couplers.offset).collect();
        assert_eq!(offsets, [0, 1, 0]);
        assert_eq!(m.keep_probs(), [0.5, 0.5, 1.0, 0.5, 0.5, 1.0]);
        assert_eq!(m.theta_flat().len(), 8);
    }

    #[test]
    fn legal_mesh_gives_unitary_factors() {
        let mut m = mesh(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        m.legalize(&SplConfig::default(), &mut rng).unwrap();
        for b in m.blocks_mut() {
            b.gate = SuperBlockGate::frozen();
        }
        m.layers[0].tiles[0].sigma = vec![1.0; 4];
        let w = m.assemble_certain().unwrap();
        assert!(unitarity_error(&w[0]) < 1e-10);
    }

    #[test]
    fn footprint_expected_at_certainty_matches_exact() {
        let mut m = mesh(4);
        m.legalize(&SplConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for b in m.blocks_mut() {
            b.gate = SuperBlockGate::frozen();
        }
        let pdk = PdkSpec::amf();
        assert!((m.footprint_expected(&pdk).unwrap() - m.footprint_exact_all(&pdk).unwrap()).abs() < 1e-9);
        let top = m.topology(&[true; 6]).unwrap();
        assert!((top.footprint_exact(&pdk) - m.footprint_exact_all(&pdk).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn relaxed_mesh_has_no_exact_footprint() {
        assert!(mesh(6).footprint_exact_all(&PdkSpec::amf()).is_err());
    }

    #[test]
    fn assembled_matches_task_view() {
        let m = mesh(7);
        let task = Task::MatrixFit(MatrixFitTask::new(vec![CMat::zeros(4, 4)]).unwrap());
        let gates = m.certain_gates();
        let l = m.loss(&task, &Batch::Full, &gates, &Objective::task_only(SteMode::Binarized)).unwrap();
        let w = m.assemble(&gates, SteMode::Binarized).unwrap();
        assert!((l.task - frobenius_sq(&w[0]) / 16.0).abs() < 1e-12);
    }
}
