//! Foundry device footprints and every area computation built on them:
//! exact device counting, the probability-weighted expectation, its
//! differentiable proxy, the constraint penalty and the block-count bounds.

use crate::error::{config_err, PtcError, Result};
use crate::linalg::RMat;
use crate::perm::{inversions, Permutation};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::path::Path;

/// Transmission of a placed 50:50 coupler.
pub const T_COUPLER: f64 = FRAC_1_SQRT_2;
/// Transmission of a bare waveguide (no coupler).
pub const T_BAR: f64 = 1.0;

/// Per-device areas in um^2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdkSpec {
    pub name: String,
    pub f_ps: f64,
    pub f_dc: f64,
    pub f_cr: f64,
}

#[derive(Deserialize)]
struct RawPdk {
    name: Option<String>,
    f_ps: Option<f64>,
    f_dc: Option<f64>,
    f_cr: Option<f64>,
}

impl PdkSpec {
    pub fn new(name: impl Into<String>, f_ps: f64, f_dc: f64, f_cr: f64) -> Result<Self> {
        let spec = Self { name: name.into(), f_ps, f_dc, f_cr };
        spec.validate()?;
        Ok(spec)
    }

    pub fn amf() -> Self {
        Self { name: "amf".into(), f_ps: 6800.0, f_dc: 1500.0, f_cr: 64.0 }
    }

    pub fn aim() -> Self {
        Self { name: "aim".into(), f_ps: 2500.0, f_dc: 4000.0, f_cr: 4900.0 }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "amf" => Some(Self::amf()),
            "aim" => Some(Self::aim()),
            _ => None,
        }
    }

    /// A builtin name, or a path to a TOML document.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return load_pdk(&std::fs::read_to_string(path)?);
        }
        Err(config_err(format!("unknown pdk `{name_or_path}` (expected amf, aim or a file)")))
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("f_ps", self.f_ps), ("f_dc", self.f_dc), ("f_cr", self.f_cr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{field} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parses a TOML document with keys `name`, `f_ps`, `f_dc`, `f_cr`.
pub fn load_pdk(source: &str) -> Result<PdkSpec> {
    let raw: RawPdk = toml::from_str(source).map_err(|e| config_err(format!("pdk document: {e}")))?;
    let name = raw.name.ok_or_else(|| config_err("missing field name"))?;
    let f_ps = raw.f_ps.ok_or_else(|| config_err("missing field f_ps"))?;
    let f_dc = raw.f_dc.ok_or_else(|| config_err("missing field f_dc"))?;
    let f_cr = raw.f_cr.ok_or_else(|| config_err("missing field f_cr"))?;
    PdkSpec::new(name, f_ps, f_dc, f_cr)
}

/// Target window `[f_min, f_max]` with a relative safety margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintConstraint {
    pub f_min: f64,
    pub f_max: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.05
}

impl FootprintConstraint {
    pub fn new(f_min: f64, f_max: f64) -> Result<Self> {
        Self::with_margin(f_min, f_max, default_margin())
    }

    pub fn with_margin(f_min: f64, f_max: f64, margin: f64) -> Result<Self> {
        let c = Self { f_min, f_max, margin };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max.is_finite()) {
            return Err(config_err(format!(
                "footprint window [{}, {}] must satisfy 0 < f_min < f_max",
                self.f_min, self.f_max
            )));
        }
        if !(0.0..1.0).contains(&self.margin) || self.f_hat_min() >= self.f_hat_max() {
            return Err(config_err(format!("margin {} leaves an empty window", self.margin)));
        }
        Ok(())
    }

    pub fn f_hat_min(&self) -> f64 {
        (1.0 + self.margin) * self.f_min
    }

    pub fn f_hat_max(&self) -> f64 {
        (1.0 - self.margin) * self.f_max
    }

    pub fn contains(&self, area: f64) -> bool {
        (self.f_min..=self.f_max).contains(&area)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    pub beta: f64,
    pub beta_cr: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { beta: 10.0, beta_cr: 100.0 }
    }
}

/// Total block-count bounds across both unitaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockBounds {
    pub b_min: usize,
    pub b_max: usize,
    /// Smallest possible block area: full PS column plus one coupler.
    pub f_block_min: f64,
    /// Largest possible block area: every coupler slot and every crossing.
    pub f_block_max: f64,
}

impl BlockBounds {
    /// Always-on blocks per unitary.
    pub fn per_unitary_min(&self) -> usize {
        self.b_min.div_ceil(2).max(1)
    }

    /// Super blocks per unitary.
    pub fn per_unitary_max(&self) -> usize {
        self.b_max.div_ceil(2).max(self.per_unitary_min())
    }
}

pub fn block_bounds(pdk: &PdkSpec, k: usize, c: &FootprintConstraint) -> Result<BlockBounds> {
    if k < 2 {
        return Err(PtcError::Domain(format!("mesh size must be at least 2, got {k}")));
    }
    let kf = k as f64;
    let f_block_min = kf * pdk.f_ps + pdk.f_dc;
    let f_block_max = f_block_min + kf * pdk.f_dc / 2.0 + kf * (kf - 1.0) * pdk.f_cr / 2.0;
    let b_max = (c.f_max / f_block_min).ceil() as usize;
    let b_min = ((c.f_min / f_block_max).floor() as usize).max(2);
    if b_min > b_max {
        return Err(PtcError::Infeasible(format!(
            "window [{}, {}] admits between {b_min} and {b_max} blocks",
            c.f_min, c.f_max
        )));
    }
    Ok(BlockBounds { b_min, b_max, f_block_min, f_block_max })
}

/// Waveguide crossings needed to realize `perm` (`row -> column`): the
/// inversion count, equal to the minimum number of adjacent swaps.
pub fn count_crossings(perm: &[usize]) -> Result<usize> {
    Permutation::new(perm.to_vec())?;
    Ok(inversions(perm))
}

fn is_coupler(t: f64) -> Option<bool> {
    const TOL: f64 = 1e-12;
    if (t - T_COUPLER).abs() <= TOL {
        Some(true)
    } else if (t - T_BAR).abs() <= TOL {
        Some(false)
    } else {
        None
    }
}

/// Couplers present in a binarized transmission column.
pub fn count_couplers(t_binarized: &[f64]) -> Result<usize> {
    t_binarized.iter().try_fold(0, |n, &t| match is_coupler(t) {
        Some(placed) => Ok(n + usize::from(placed)),
        None => Err(PtcError::Domain(format!("transmission {t} is not binarized"))),
    })
}

/// Smooth coupler count: exact on binarized entries, linear in `t` between.
pub fn coupler_count_soft(t_q: &[f64]) -> f64 {
    t_q.iter().map(|&t| 2.0 * t / (SQRT_2 - 2.0) + 2.0 / (2.0 - SQRT_2)).sum()
}

/// `d coupler_count_soft / d t` for every entry.
pub const COUPLER_COUNT_SLOPE: f64 = 2.0 / (SQRT_2 - 2.0);

/// Device tally of a legal design.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCounts {
    pub k: usize,
    pub blocks: usize,
    pub couplers: usize,
    pub crossings: usize,
}

impl DeviceCounts {
    pub fn phase_shifters(&self) -> usize {
        self.k * self.blocks
    }

    pub fn area(&self, pdk: &PdkSpec) -> f64 {
        self.phase_shifters() as f64 * pdk.f_ps + self.couplers as f64 * pdk.f_dc + self.crossings as f64 * pdk.f_cr
    }
}

/// Area of one block with the given device counts.
pub fn block_area(k: usize, couplers: usize, crossings: usize, pdk: &PdkSpec) -> f64 {
    k as f64 * pdk.f_ps + couplers as f64 * pdk.f_dc + crossings as f64 * pdk.f_cr
}

/// Footprint-relevant view of one super block.
#[derive(Clone, Debug)]
pub struct BlockFootprint<'a> {
    /// Selection probability of the "block present" branch.
    pub keep_prob: f64,
    /// Coupler transmissions as fed to the forward model.
    pub t_q: &'a [f64],
    /// Exact coupler count of the binarized column.
    pub couplers: usize,
    /// Exact (or rank-estimated, while relaxed) crossing count.
    pub crossings: usize,
    pub p_tilde: &'a RMat,
}

/// `sum_b keep_b * F_b` with exact per-block counts.
pub fn expected_footprint(blocks: &[BlockFootprint<'_>], k: usize, pdk: &PdkSpec) -> f64 {
    blocks.iter().map(|b| b.keep_prob * block_area(k, b.couplers, b.crossings, pdk)).sum()
}

/// Value and gradients of the expected proxy footprint.
#[derive(Clone, Debug)]
pub struct ProxyFootprint {
    pub value: f64,
    pub d_keep: Vec<f64>,
    pub d_t_q: Vec<Vec<f64>>,
    pub d_p_tilde: Vec<RMat>,
}

/// `sum_b keep_b * (K f_ps + #DC(t_q) f_dc + beta_cr ||P~ - I||_F^2 f_cr)`.
pub fn footprint_proxy(
    blocks: &[BlockFootprint<'_>],
    k: usize,
    pdk: &PdkSpec,
    penalty: &PenaltyConfig,
) -> ProxyFootprint {
    let mut value = 0.0;
    let mut d_keep = Vec::with_capacity(blocks.len());
    let mut d_t_q = Vec::with_capacity(blocks.len());
    let mut d_p_tilde = Vec::with_capacity(blocks.len());
    for b in blocks {
        let dev = b.p_tilde - RMat::identity(k, k);
        let cr_term = penalty.beta_cr * dev.norm_squared() * pdk.f_cr;
        let f_b = k as f64 * pdk.f_ps + coupler_count_soft(b.t_q) * pdk.f_dc + cr_term;
        value += b.keep_prob * f_b;
        d_keep.push(f_b);
        d_t_q.push(vec![b.keep_prob * COUPLER_COUNT_SLOPE * pdk.f_dc; b.t_q.len()]);
        d_p_tilde.push(dev * (2.0 * b.keep_prob * penalty.beta_cr * pdk.f_cr));
    }
    ProxyFootprint { value, d_keep, d_t_q, d_p_tilde }
}

/// Penalty and its derivative with respect to the proxy expectation. The
/// branch is chosen by the exact expectation.
pub fn footprint_penalty(
    expected_prox: f64,
    expected_exact: f64,
    c: &FootprintConstraint,
    penalty: &PenaltyConfig,
) -> (f64, f64) {
    if expected_exact > c.f_hat_max() {
        let d = penalty.beta / c.f_hat_max();
        (d * expected_prox, d)
    } else if expected_exact < c.f_hat_min() {
        let d = -penalty.beta / c.f_hat_min();
        (d * expected_prox, d)
    } else {
        (0.0, 0.0)
    }
}

/// Published device counts of the hand-designed reference meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Mzi,
    Fft,
}

impl std::str::FromStr for Baseline {
    type Err = PtcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mzi" => Ok(Self::Mzi),
            "fft" => Ok(Self::Fft),
            other => Err(config_err(format!("unknown baseline `{other}` (expected mzi or fft)"))),
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mzi => "mzi",
            Self::Fft => "fft",
        })
    }
}

impl Baseline {
    /// `(k, crossings, couplers, blocks)`
    const MZI: [(usize, usize, usize, usize); 3] = [(8, 0, 112, 32), (16, 0, 480, 64), (32, 0, 1984, 128)];
    const FFT: [(usize, usize, usize, usize); 3] = [(8, 16, 24, 6), (16, 88, 64, 8), (32, 416, 160, 10)];

    pub fn sizes() -> [usize; 3] {
        [8, 16, 32]
    }

    pub fn counts(self, k: usize) -> Result<DeviceCounts> {
        let table = match self {
            Self::Mzi => &Self::MZI,
            Self::Fft => &Self::FFT,
        };
        table
            .iter()
            .find(|row| row.0 == k)
            .map(|&(k, crossings, couplers, blocks)| DeviceCounts { k, blocks, couplers, crossings })
            .ok_or_else(|| config_err(format!("no {self} baseline for size {k} (have 8, 16, 32)")))
    }
}
