use super::optim::Adam;
use super::sampler::sample_submesh;
use super::schedule::{Phase, SearchSchedule, Stage};
use super::supermesh::{FootprintTerms, GateDraw, LossTerms, Objective, SteMode, SuperMesh};
use super::topology::Topology;
use crate::error::{config_err, PtcError, Result};
use crate::pdk::{block_bounds, BlockBounds, FootprintConstraint, PdkSpec, PenaltyConfig};
use crate::perm::{dual_update, SplConfig, DEFAULT_EPSILON};
use crate::train::task::{Batch, Task};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Losses kept in a divergence report.
const TRACE_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub pdk: PdkSpec,
    pub constraint: FootprintConstraint,
    pub penalty: PenaltyConfig,
    pub schedule: SearchSchedule,
    pub spl: SplConfig,
    /// Bernoulli draws before the greedy SubMesh repair.
    pub sample_tries: usize,
    pub epsilon: f64,
}

impl SearchConfig {
    pub fn new(k: usize, pdk: PdkSpec, constraint: FootprintConstraint) -> Self {
        Self {
            k,
            pdk,
            constraint,
            penalty: PenaltyConfig::default(),
            schedule: SearchSchedule::default(),
            spl: SplConfig::default(),
            sample_tries: 1000,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<BlockBounds> {
        self.pdk.validate()?;
        self.constraint.validate()?;
        self.schedule.validate()?;
        if self.penalty.beta < 0.0 || self.penalty.beta_cr < 0.0 {
            return Err(config_err("penalty weights must be nonnegative"));
        }
        if !(self.spl.sigma > 0.0) || self.spl.max_attempts == 0 {
            return Err(config_err("spl needs sigma > 0 and max_attempts >= 1"));
        }
        if self.sample_tries == 0 {
            return Err(config_err("sample_tries must be positive"));
        }
        block_bounds(&self.pdk, self.k, &self.constraint)
    }
}

/// One Adam instance per parameter group.
#[derive(Clone, Debug)]
pub struct SearchOptimizer {
    weights: Adam,
    couplers: Adam,
    perms: Adam,
    arch: Adam,
}

impl SearchOptimizer {
    pub fn new(mesh: &SuperMesh, schedule: &SearchSchedule) -> Self {
        Self {
            weights: Adam::new(mesh.weights_flat().len(), schedule.weight_decay_weights),
            couplers: Adam::new(mesh.couplers_flat().len(), 0.0),
            perms: Adam::new(mesh.perms_flat().len(), 0.0),
            arch: Adam::new(mesh.theta_flat().len(), schedule.weight_decay_arch),
        }
    }

    /// Drops permutation state once the mesh is legalized.
    pub fn sync_perms(&mut self, mesh: &SuperMesh) {
        let n = mesh.perms_flat().len();
        if n != self.perms.len() {
            self.perms = Adam::new(n, 0.0);
        }
    }
}

/// One optimizer step on the group selected by `phase`.
///
/// Weights steps update phases, singular values, coupler latents and
/// relaxed permutations, then advance the multipliers and the penalty
/// schedule while any permutation is still relaxed. Arch steps update the
/// gate logits only.
#[allow(clippy::too_many_arguments)]
pub fn search_step(
    mesh: &mut SuperMesh,
    opt: &mut SearchOptimizer,
    task: &Task,
    batch: &Batch,
    gates: &GateDraw,
    phase: Phase,
    global_step: usize,
    config: &SearchConfig,
) -> Result<LossTerms> {
    let relaxed = !mesh.is_legalized();
    let obj = Objective {
        ste: SteMode::Binarized,
        alm: relaxed,
        footprint: Some(FootprintTerms { pdk: &config.pdk, constraint: &config.constraint, penalty: &config.penalty }),
    };
    let (terms, grad) = mesh.loss_and_grad(task, batch, gates, &obj)?;
    let s = &config.schedule;
    match phase {
        Phase::Weights => {
            let lr = s.lr(s.lr_weights, global_step);
            let mut w = mesh.weights_flat();
            opt.weights.step(&mut w, &grad.weights_flat(), lr);
            mesh.set_weights_flat(&w);
            let mut c = mesh.couplers_flat();
            opt.couplers.step(&mut c, &grad.couplers_flat(), lr);
            mesh.set_couplers_flat(&c);
            if relaxed {
                opt.sync_perms(mesh);
                let mut p = mesh.perms_flat();
                opt.perms.step(&mut p, &grad.perms_flat(), lr);
                mesh.set_perms_flat(&p);
                let p_tildes = mesh.p_tildes()?;
                dual_update(&mut mesh.alm, &p_tildes)?;
                mesh.alm.rho_schedule();
            }
        }
        Phase::Arch => {
            let lr = s.lr(s.lr_arch, global_step);
            let mut t = mesh.theta_flat();
            opt.arch.step(&mut t, &grad.theta_flat(mesh), lr);
            mesh.set_theta_flat(&t);
        }
    }
    Ok(terms)
}

/// Per-epoch log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Stage,
    pub task_loss: f64,
    pub alm_loss: f64,
    pub footprint_loss: f64,
    pub expected_footprint: f64,
    pub rho: f64,
    pub mean_lambda: f64,
    pub tau: f64,
    pub weight_steps: usize,
    pub arch_steps: usize,
}

/// Hooks into [`run_search`].
pub trait SearchObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Sees the relaxed mesh right before permutation legalization.
    fn before_legalize(&mut self, _mesh: &SuperMesh) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl SearchObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub mesh: SuperMesh,
    pub topology: Topology,
    pub bounds: BlockBounds,
    pub log: Vec<EpochRecord>,
}

/// Warmup, alternating search, legalization, post-legalization training
/// and SubMesh sampling.
pub fn run_search<R: Rng + ?Sized>(
    config: &SearchConfig,
    task: &Task,
    rng: &mut R,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    let bounds = config.validate()?;
    let s = &config.schedule;
    let mut mesh = SuperMesh::new(
        config.k,
        bounds.per_unitary_max(),
        bounds.per_unitary_min(),
        &task.layer_shapes(),
        s.alm_budget(),
        rng,
    )?;
    mesh.epsilon = config.epsilon;
    let mut opt = SearchOptimizer::new(&mesh, s);
    let mut log = Vec::with_capacity(s.total_epochs);
    let mut trace: Vec<f64> = Vec::with_capacity(TRACE_LEN);
    let mut global_step = 0;
    for epoch in 0..s.total_epochs {
        if epoch == s.spl_epoch {
            observer.before_legalize(&mesh)?;
            mesh.legalize(&config.spl, rng)?;
            opt.sync_perms(&mesh);
        }
        let tau = s.tau(epoch);
        let mut sums = LossTerms::default();
        let (mut nw, mut na) = (0, 0);
        for step in 0..s.steps_per_epoch {
            let phase = s.phase(epoch, step);
            let gates = mesh.draw_gates(tau, rng)?;
            let batch = task.sample_batch(s.batch_size, rng);
            let terms = match search_step(&mut mesh, &mut opt, task, &batch, &gates, phase, global_step, config) {
                Ok(t) => t,
                Err(PtcError::Divergence { what, trace: last, .. }) => {
                    trace.extend(last);
                    return Err(PtcError::Divergence { step: global_step, what, trace });
                }
                Err(e) => return Err(e),
            };
            if trace.len() == TRACE_LEN {
                trace.remove(0);
            }
            trace.push(terms.total());
            sums.task += terms.task;
            sums.alm += terms.alm;
            sums.footprint += terms.footprint;
            match phase {
                Phase::Weights => nw += 1,
                Phase::Arch => na += 1,
            }
            global_step += 1;
        }
        let n = s.steps_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            phase: s.stage(epoch),
            task_loss: sums.task / n,
            alm_loss: sums.alm / n,
            footprint_loss: sums.footprint / n,
            expected_footprint: mesh.footprint_expected(&config.pdk)?,
            rho: mesh.alm.rho,
            mean_lambda: mesh.alm.mean_lambda(),
            tau,
            weight_steps: nw,
            arch_steps: na,
        };
        observer.on_epoch(&record)?;
        log.push(record);
    }
    let topology = sample_submesh(&mesh, &config.pdk, &config.constraint, rng, config.sample_tries)?;
    topology.validate_against(&bounds, &config.constraint, &config.pdk)?;
    Ok(SearchOutcome { mesh, topology, bounds, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::task::MatrixFitTask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SearchConfig {
        let mut c = SearchConfig::new(4, PdkSpec::amf(), FootprintConstraint::new(80_000.0, 150_000.0).unwrap());
        c.schedule = SearchSchedule {
            warmup_epochs: 2,
            spl_epoch: 4,
            total_epochs: 6,
            steps_per_epoch: 8,
            lr_weights: 0.02,
            lr_arch: 0.05,
            ..Default::default()
        };
        c
    }

    fn task(seed: u64) -> Task {
        Task::MatrixFit(MatrixFitTask::random_unitaries(4, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
    }

    #[test]
    fn phases_touch_only_their_groups() {
        let cfg = small_config();
        let bounds = cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = task(1);
        let mut mesh =
            SuperMesh::new(4, bounds.per_unitary_max(), bounds.per_unitary_min(), &t.layer_shapes(), 10, &mut rng)
                .unwrap();
        for b in mesh.blocks_mut() {
            b.gate.theta = [0.1, -0.2];
        }
        let mut opt = SearchOptimizer::new(&mesh, &cfg.schedule);
        let gates = mesh.draw_gates(1.0, &mut rng).unwrap();
        let before = mesh.clone();
        search_step(&mut mesh, &mut opt, &t, &Batch::Full, &gates, Phase::Arch, 0, &cfg).unwrap();
        assert_eq!(mesh.weights_flat(), before.weights_flat());
        assert_eq!(mesh.couplers_flat(), before.couplers_flat());
        assert_eq!(mesh.perms_flat(), before.perms_flat());
        assert_eq!(mesh.alm, before.alm);
        let before = mesh.clone();
        search_step(&mut mesh, &mut opt, &t, &Batch::Full, &gates, Phase::Weights, 1, &cfg).unwrap();
        assert_eq!(mesh.theta_flat(), before.theta_flat());
        assert_ne!(mesh.weights_flat(), before.weights_flat());
        assert_eq!(mesh.alm.step, 1);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = task(2);
        let mut mesh = SuperMesh::new(4, 2, 1, &t.layer_shapes(), 10, &mut rng).unwrap();
        mesh.alm.lambda_row[0][0] = 1.0;
        let mut opt = SearchOptimizer::new(&mesh, &cfg.schedule);
        let gates = mesh.draw_gates(1.0, &mut rng).unwrap();
        let terms = search_step(&mut mesh, &mut opt, &t, &Batch::Full, &gates, Phase::Weights, 0, &cfg).unwrap();
        assert!((terms.task + terms.alm + terms.footprint - terms.total()).abs() <= 1e-10);
        assert!(terms.alm > 0.0);
    }

    #[test]
    fn search_is_deterministic_and_feasible() {
        let cfg = small_config();
        let run = |seed| run_search(&cfg, &task(9), &mut ChaCha8Rng::seed_from_u64(seed), &mut NoObserver).unwrap();
        let a = run(3);
        let b = run(3);
        assert_eq!(a.topology, b.topology);
        assert_eq!(a.log, b.log);
        assert!(cfg.constraint.contains(a.topology.footprint_exact(&cfg.pdk)));
        assert_eq!(a.log.len(), 6);
        assert!(a.log[5].rho > a.log[0].rho);
    }

    #[test]
    fn forced_window_keeps_all_blocks() {
        let mut cfg = small_config();
        cfg.constraint = FootprintConstraint::new(80_000.0, 150_000.0).unwrap();
        let bounds = cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = task(5);
        let mut mesh =
            SuperMesh::new(4, bounds.per_unitary_max(), bounds.per_unitary_min(), &t.layer_shapes(), 10, &mut rng)
                .unwrap();
        mesh.legalize(&cfg.spl, &mut rng).unwrap();
        let all = mesh.footprint_exact_all(&cfg.pdk).unwrap();
        let c = FootprintConstraint::with_margin(all - 0.5, all + 0.5, 0.0).unwrap();
        let top = sample_submesh(&mesh, &cfg.pdk, &c, &mut rng, 100).unwrap();
        assert_eq!(top.num_blocks(), mesh.num_blocks());
    }
}
