use crate::error::{PtcError, Result};
use crate::linalg::CMat;
use crate::mesh::{build_unitary, BlockView, CouplerColumn};
use crate::pdk::{BlockBounds, DeviceCounts, FootprintConstraint, PdkSpec};
use crate::pdk::{T_BAR, T_COUPLER};
use crate::perm::Permutation;
use serde::{Deserialize, Serialize};

/// One discrete block: couplers, crossing permutation and a phase snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyBlock {
    pub offset: usize,
    /// `true` where a coupler sits, one entry per slot.
    pub couplers: Vec<bool>,
    pub perm: Permutation,
    pub phases: Vec<f64>,
}

impl TopologyBlock {
    pub fn coupler_count(&self) -> usize {
        self.couplers.iter().filter(|&&c| c).count()
    }
}

/// A legalized design: block chains for `U` and `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub k: usize,
    pub u: Vec<TopologyBlock>,
    pub v: Vec<TopologyBlock>,
}

impl Topology {
    /// Interleaved blocks on both sides with every coupler slot filled
    /// (or empty) and identity crossings.
    pub fn brick(k: usize, per_unitary: usize, couplers: bool) -> Self {
        let side = || {
            (0..per_unitary)
                .map(|i| {
                    let offset = CouplerColumn::offset_for_block(i);
                    TopologyBlock {
                        offset,
                        couplers: vec![couplers; CouplerColumn::slots(k, offset)],
                        perm: Permutation::identity(k),
                        phases: vec![0.0; k],
                    }
                })
                .collect()
        };
        Self { k, u: side(), v: side() }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &TopologyBlock> {
        self.u.iter().chain(&self.v)
    }

    pub fn num_blocks(&self) -> usize {
        self.u.len() + self.v.len()
    }

    pub fn device_counts(&self) -> DeviceCounts {
        DeviceCounts {
            k: self.k,
            blocks: self.num_blocks(),
            couplers: self.blocks().map(TopologyBlock::coupler_count).sum(),
            crossings: self.blocks().map(|b| b.perm.crossings()).sum(),
        }
    }

    /// `sum_b (K f_ps + #DC_b f_dc + #CR_b f_cr)`.
    pub fn footprint_exact(&self, pdk: &PdkSpec) -> f64 {
        self.device_counts().area(pdk)
    }

    /// Transfer matrices `(U, V)` of the two block chains.
    pub fn unitaries(&self) -> Result<(CMat, CMat)> {
        self.validate()?;
        let chain = |blocks: &[TopologyBlock]| -> Result<CMat> {
            let t: Vec<Vec<f64>> = blocks
                .iter()
                .map(|b| b.couplers.iter().map(|&c| if c { T_COUPLER } else { T_BAR }).collect())
                .collect();
            let p: Vec<_> = blocks.iter().map(|b| b.perm.to_matrix()).collect();
            let views: Vec<BlockView<'_>> = blocks
                .iter()
                .enumerate()
                .map(|(i, b)| BlockView {
                    phases: &b.phases,
                    offset: b.offset,
                    t_q: &t[i],
                    p_tilde: &p[i],
                    gate: [0.0, 1.0],
                })
                .collect();
            build_unitary(self.k, &views)
        };
        Ok((chain(&self.u)?, chain(&self.v)?))
    }

    /// Structural checks: sizes, offsets and at least one block per side.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(PtcError::Domain(format!("mesh size must be at least 2, got {}", self.k)));
        }
        if self.u.is_empty() || self.v.is_empty() {
            return Err(PtcError::Domain("each unitary needs at least one block".into()));
        }
        for (i, b) in self.blocks().enumerate() {
            if b.offset > 1 {
                return Err(PtcError::Domain(format!("block {i}: coupler offset {} not in {{0, 1}}", b.offset)));
            }
            let slots = CouplerColumn::slots(self.k, b.offset);
            if b.couplers.len() != slots {
                return Err(PtcError::Dimension { expected: slots, actual: b.couplers.len() });
            }
            if b.perm.len() != self.k {
                return Err(PtcError::Dimension { expected: self.k, actual: b.perm.len() });
            }
            if b.phases.len() != self.k {
                return Err(PtcError::Dimension { expected: self.k, actual: b.phases.len() });
            }
        }
        Ok(())
    }

    /// Structural checks plus per-unitary block bounds and the footprint window.
    pub fn validate_against(&self, bounds: &BlockBounds, c: &FootprintConstraint, pdk: &PdkSpec) -> Result<()> {
        self.validate()?;
        let (lo, hi) = (bounds.per_unitary_min(), bounds.per_unitary_max());
        for (name, n) in [("U", self.u.len()), ("V", self.v.len())] {
            if n < lo || n > hi {
                return Err(PtcError::Infeasible(format!("{name} has {n} blocks, outside [{lo}, {hi}]")));
            }
        }
        let f = self.footprint_exact(pdk);
        if !c.contains(f) {
            return Err(PtcError::Infeasible(format!("footprint {f} outside [{}, {}]", c.f_min, c.f_max)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_are_unitary() {
        let mut t = Topology::brick(6, 4, true);
        t.u[1].perm = Permutation::new(vec![2, 0, 1, 5, 3, 4]).unwrap();
        t.v[2].couplers[0] = false;
        for (i, b) in t.u.iter_mut().chain(t.v.iter_mut()).enumerate() {
            b.phases = (0..6).map(|j| 0.3 * (i * 6 + j) as f64).collect();
        }
        let (u, v) = t.unitaries().unwrap();
        assert!(crate::linalg::unitarity_error(&u) < 1e-12);
        assert!(crate::linalg::unitarity_error(&v) < 1e-12);
    }

    #[test]
    fn brick_counts() {
        let t = Topology::brick(8, 3, true);
        let c = t.device_counts();
        assert_eq!((c.blocks, c.couplers, c.crossings), (6, 4 + 3 + 4 + 4 + 3 + 4, 0));
        t.validate().unwrap();
        let pdk = PdkSpec::amf();
        assert_eq!(t.footprint_exact(&pdk), 6.0 * 8.0 * 6800.0 + 22.0 * 1500.0);
    }

    #[test]
    fn crossings_are_counted() {
        let mut t = Topology::brick(4, 1, false);
        t.u[0].perm = Permutation::new(vec![3, 2, 1, 0]).unwrap();
        assert_eq!(t.device_counts().crossings, 6);
        t.v.clear();
        assert!(t.validate().is_err());
    }
}
