use crate::error::{config_err, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Which parameter group a step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Weights,
    Arch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Warmup,
    Search,
    /// After permutation legalization.
    Legalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSchedule {
    pub warmup_epochs: usize,
    /// Weights steps per alternation cycle.
    pub weight_steps: usize,
    /// Architecture steps per alternation cycle.
    pub arch_steps: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub spl_epoch: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub lr_weights: f64,
    pub lr_arch: f64,
    pub weight_decay_weights: f64,
    pub weight_decay_arch: f64,
    /// Minibatch size for classification tasks.
    pub batch_size: usize,
}

impl Default for SearchSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 10,
            weight_steps: 3,
            arch_steps: 1,
            tau_start: 5.0,
            tau_end: 0.5,
            spl_epoch: 50,
            total_epochs: 90,
            steps_per_epoch: 20,
            lr_weights: 1e-3,
            lr_arch: 1e-3,
            weight_decay_weights: 1e-4,
            weight_decay_arch: 5e-4,
            batch_size: 32,
        }
    }
}

impl SearchSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_epochs < self.spl_epoch && self.spl_epoch < self.total_epochs) {
            return Err(config_err(format!(
                "schedule needs warmup_epochs < spl_epoch < total_epochs, got {} / {} / {}",
                self.warmup_epochs, self.spl_epoch, self.total_epochs
            )));
        }
        if self.weight_steps == 0 || self.arch_steps == 0 || self.steps_per_epoch == 0 {
            return Err(config_err("weight_steps, arch_steps and steps_per_epoch must be positive"));
        }
        if !(self.tau_start >= self.tau_end && self.tau_end > 0.0) {
            return Err(config_err("temperatures need tau_start >= tau_end > 0"));
        }
        for (name, v) in [
            ("lr_weights", self.lr_weights),
            ("lr_arch", self.lr_arch),
            ("weight_decay_weights", self.weight_decay_weights),
            ("weight_decay_arch", self.weight_decay_arch),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }

    /// Gumbel temperature for `epoch`, decaying geometrically from
    /// `tau_start` at epoch 0 to `tau_end` at the last epoch.
    pub fn tau(&self, epoch: usize) -> f64 {
        let last = self.total_epochs.saturating_sub(1);
        if epoch == 0 || last == 0 {
            return self.tau_start;
        }
        if epoch >= last {
            return self.tau_end;
        }
        self.tau_start * (self.tau_end / self.tau_start).powf(epoch as f64 / last as f64)
    }

    pub fn stage(&self, epoch: usize) -> Stage {
        if epoch < self.warmup_epochs {
            Stage::Warmup
        } else if epoch < self.spl_epoch {
            Stage::Search
        } else {
            Stage::Legalized
        }
    }

    pub fn phase(&self, epoch: usize, step_in_epoch: usize) -> Phase {
        if epoch < self.warmup_epochs {
            return Phase::Weights;
        }
        let s = (epoch - self.warmup_epochs) * self.steps_per_epoch + step_in_epoch;
        if s % (self.weight_steps + self.arch_steps) < self.weight_steps {
            Phase::Weights
        } else {
            Phase::Arch
        }
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    /// Weights steps before legalization; the penalty schedule spans these.
    pub fn alm_budget(&self) -> usize {
        (0..self.spl_epoch)
            .flat_map(|e| (0..self.steps_per_epoch).map(move |s| (e, s)))
            .filter(|&(e, s)| self.phase(e, s) == Phase::Weights)
            .count()
    }

    /// Cosine decay of `base` over the whole run.
    pub fn lr(&self, base: f64, global_step: usize) -> f64 {
        let t = global_step as f64 / self.total_steps().max(1) as f64;
        0.5 * base * (1.0 + (PI * t.min(1.0)).cos())
    }
}
