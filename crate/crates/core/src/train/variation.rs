use super::noise::{inject_phase_noise, NoiseModel};
use super::task::{task_metric, Task};
use crate::error::{PtcError, Result};
use crate::search::{Adam, Objective, SteMode, SuperMesh, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Retraining of phases and singular values on a fixed design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Noise draws averaged for the noisy metric.
    pub eval_trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, steps_per_epoch: 20, lr: 0.01, weight_decay: 1e-4, batch_size: 32, eval_trials: 20 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mesh: SuperMesh,
    pub clean_metric: f64,
    /// Mean metric over `eval_trials` noise draws at the training sigma.
    pub noisy_metric: f64,
    /// Mean training loss per epoch.
    pub trace: Vec<f64>,
}

/// Metric with every block present and no noise.
pub fn evaluate_clean(mesh: &SuperMesh, task: &Task) -> Result<f64> {
    task_metric(task, &mesh.assemble_certain()?)
}

/// Mean metric over `trials` independent phase-noise draws.
pub fn evaluate_noisy<R: Rng + ?Sized>(
    mesh: &SuperMesh,
    task: &Task,
    noise: &NoiseModel,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut sum = 0.0;
    for _ in 0..trials.max(1) {
        sum += evaluate_clean(&inject_phase_noise(mesh, noise, rng), task)?;
    }
    Ok(sum / trials.max(1) as f64)
}

/// Trains phases and singular values of `mesh` with a fresh noise draw
/// on every forward pass; gradients update the clean parameters.
pub fn train_weights<R: Rng + ?Sized>(
    mut mesh: SuperMesh,
    task: &Task,
    noise: &NoiseModel,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let mut opt = Adam::new(mesh.weights_flat().len(), cfg.weight_decay);
    let total = (cfg.epochs * cfg.steps_per_epoch).max(1) as f64;
    let obj = Objective::task_only(SteMode::Binarized);
    let gates = mesh.certain_gates();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let noisy = inject_phase_noise(&mesh, noise, rng);
            let batch = task.sample_batch(cfg.batch_size, rng);
            let (terms, grad) = match noisy.loss_and_grad(task, &batch, &gates, &obj) {
                Ok(r) => r,
                Err(PtcError::Divergence { what, .. }) => {
                    trace.push(f64::NAN);
                    return Err(PtcError::Divergence { step, what, trace });
                }
                Err(e) => return Err(e),
            };
            let lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total).cos());
            let mut w = mesh.weights_flat();
            opt.step(&mut w, &grad.weights_flat(), lr);
            mesh.set_weights_flat(&w);
            sum += terms.task;
            step += 1;
        }
        trace.push(sum / cfg.steps_per_epoch.max(1) as f64);
    }
    let clean_metric = evaluate_clean(&mesh, task)?;
    let noisy_metric = evaluate_noisy(&mesh, task, noise, cfg.eval_trials, rng)?;
    Ok(TrainOutcome { mesh, clean_metric, noisy_metric, trace })
}

/// Builds a mesh for `top`, then trains it under `noise`.
pub fn variation_aware_train<R: Rng + ?Sized>(
    top: &Topology,
    task: &Task,
    noise: &NoiseModel,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let mesh = SuperMesh::from_topology(top, &task.layer_shapes(), rng)?;
    train_weights(mesh, task, noise, cfg, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mean: f64,
    /// Sample standard deviation over trials.
    pub std: f64,
}

/// Metric statistics under `trials` noise draws for every sigma. Each
/// `(sigma, trial)` pair draws from its own stream of the seed.
pub fn robustness_sweep(
    mesh: &SuperMesh,
    task: &Task,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if trials < 2 {
        return Err(PtcError::Domain(format!("a sweep needs at least 2 trials, got {trials}")));
    }
    let models = sigmas.iter().map(|&s| NoiseModel::new(s)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|s| (0..trials).map(move |t| (s, t))).collect();
    let values = jobs
        .par_iter()
        .map(|&(s, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((s * trials + t) as u64);
            evaluate_clean(&inject_phase_noise(mesh, &models[s], &mut rng), task)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sigmas
        .iter()
        .zip(values.chunks(trials))
        .map(|(&sigma, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            SweepRow { sigma, mean, std: var.sqrt() }
        })
        .collect())
}
