use crate::error::{PtcError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Index of the "block present" branch in gate weights and logits.
pub const KEEP: usize = 1;

/// Two-way choice between skipping a block (identity) and keeping it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuperBlockGate {
    /// `[skip, keep]` logits.
    pub theta: [f64; 2],
    /// Always-on blocks ignore `theta`.
    pub frozen: bool,
}

impl SuperBlockGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frozen() -> Self {
        Self { theta: [0.0; 2], frozen: true }
    }
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Standard Gumbel pair `-ln(-ln u)`.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let mut draw = || loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    };
    [draw(), draw()]
}

/// `softmax((theta + noise) / tau)`; frozen gates give `(0, 1)`.
pub fn gumbel_softmax(gate: &SuperBlockGate, noise: [f64; 2], tau: f64) -> Result<[f64; 2]> {
    if !(tau > 0.0) {
        return Err(PtcError::Domain(format!("temperature must be positive, got {tau}")));
    }
    if gate.frozen {
        return Ok([0.0, 1.0]);
    }
    Ok(softmax2([(gate.theta[0] + noise[0]) / tau, (gate.theta[1] + noise[1]) / tau]))
}

/// Relaxed gate sample with the noise that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateSample {
    pub m: [f64; 2],
    pub noise: [f64; 2],
}

pub fn gumbel_sample<R: Rng + ?Sized>(gate: &SuperBlockGate, tau: f64, rng: &mut R) -> Result<GateSample> {
    if gate.frozen {
        gumbel_softmax(gate, [0.0; 2], tau)?;
        return Ok(GateSample { m: [0.0, 1.0], noise: [0.0; 2] });
    }
    let noise = gumbel_noise(rng);
    Ok(GateSample { m: gumbel_softmax(gate, noise, tau)?, noise })
}

/// `dL/dtheta` given `dL/dm` at the sample `m`.
pub fn gumbel_softmax_vjp(gate: &SuperBlockGate, m: [f64; 2], tau: f64, grad_m: [f64; 2]) -> [f64; 2] {
    if gate.frozen {
        return [0.0; 2];
    }
    let dot = m[0] * grad_m[0] + m[1] * grad_m[1];
    [m[0] * (grad_m[0] - dot) / tau, m[1] * (grad_m[1] - dot) / tau]
}

/// Noise-free probability of keeping the block.
pub fn expected_keep_prob(gate: &SuperBlockGate) -> f64 {
    if gate.frozen {
        1.0
    } else {
        softmax2(gate.theta)[KEEP]
    }
}

/// `dL/dtheta` given `dL/d keep_prob`.
pub fn keep_prob_vjp(gate: &SuperBlockGate, grad_keep: f64) -> [f64; 2] {
    if gate.frozen {
        return [0.0; 2];
    }
    let p = expected_keep_prob(gate);
    let d = p * (1.0 - p) * grad_keep;
    [-d, d]
}
