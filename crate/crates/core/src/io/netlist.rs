use super::write_atomic;
use crate::error::{PtcError, Result};
use crate::mesh::CouplerColumn;
use crate::pdk::{DeviceCounts, PdkSpec};
use crate::perm::Permutation;
use crate::search::{SearchSchedule, Topology, TopologyBlock};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const NETLIST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplerEntry {
    pub offset: usize,
    /// One character per slot, `1` where a coupler sits.
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    /// Phase per waveguide, radians.
    pub ps: Vec<f64>,
    pub dc: CouplerEntry,
    pub cr: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Unitaries {
    pub u: Vec<BlockEntry>,
    pub v: Vec<BlockEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintSummary {
    pub blocks: usize,
    pub couplers: usize,
    pub crossings: usize,
    pub phase_shifters: usize,
    pub area_um2: f64,
}

impl FootprintSummary {
    pub fn from_counts(c: &DeviceCounts, pdk: &PdkSpec) -> Self {
        Self {
            blocks: c.blocks,
            couplers: c.couplers,
            crossings: c.crossings,
            phase_shifters: c.phase_shifters(),
            area_um2: c.area(pdk),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub schedule: SearchSchedule,
    pub config_sha256: String,
}

/// Serialized legal design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistDocument {
    pub version: u32,
    pub k: usize,
    pub pdk: PdkSpec,
    pub unitaries: Unitaries,
    pub footprint: FootprintSummary,
    pub provenance: Provenance,
}

fn block_entry(b: &TopologyBlock) -> BlockEntry {
    BlockEntry {
        ps: b.phases.clone(),
        dc: CouplerEntry { offset: b.offset, mask: b.couplers.iter().map(|&c| if c { '1' } else { '0' }).collect() },
        cr: b.perm.as_slice().to_vec(),
    }
}

fn nl_err(side: &str, i: usize, what: impl std::fmt::Display) -> PtcError {
    PtcError::Netlist(format!("unitary {side} block {i}: {what}"))
}

fn topology_block(k: usize, side: &str, i: usize, e: &BlockEntry) -> Result<TopologyBlock> {
    if e.ps.len() != k {
        return Err(nl_err(side, i, format!("ps has {} phases, expected {k}", e.ps.len())));
    }
    if e.ps.iter().any(|p| !p.is_finite()) {
        return Err(nl_err(side, i, "ps contains a non-finite phase"));
    }
    if e.dc.offset > 1 {
        return Err(nl_err(side, i, format!("dc offset {} not in {{0, 1}}", e.dc.offset)));
    }
    let slots = CouplerColumn::slots(k, e.dc.offset);
    if e.dc.mask.chars().count() != slots {
        return Err(nl_err(side, i, format!("dc mask has {} slots, expected {slots}", e.dc.mask.len())));
    }
    let couplers =
        e.dc.mask
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(nl_err(side, i, format!("dc mask character `{c}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
    if e.cr.len() != k {
        return Err(nl_err(side, i, "cr not a permutation (wrong length)"));
    }
    let perm = Permutation::new(e.cr.clone()).map_err(|_| nl_err(side, i, "cr not a permutation"))?;
    Ok(TopologyBlock { offset: e.dc.offset, couplers, perm, phases: e.ps.clone() })
}

impl NetlistDocument {
    pub fn from_topology(top: &Topology, pdk: &PdkSpec, provenance: Provenance) -> Result<Self> {
        top.validate()?;
        Ok(Self {
            version: NETLIST_VERSION,
            k: top.k,
            pdk: pdk.clone(),
            unitaries: Unitaries {
                u: top.u.iter().map(block_entry).collect(),
                v: top.v.iter().map(block_entry).collect(),
            },
            footprint: FootprintSummary::from_counts(&top.device_counts(), pdk),
            provenance,
        })
    }

    /// Checks every invariant and rebuilds the design.
    pub fn topology(&self) -> Result<Topology> {
        if self.version != NETLIST_VERSION {
            return Err(PtcError::Netlist(format!("unsupported version {}", self.version)));
        }
        if self.k < 2 {
            return Err(PtcError::Netlist(format!("k must be at least 2, got {}", self.k)));
        }
        self.pdk.validate().map_err(|e| PtcError::Netlist(format!("pdk: {e}")))?;
        let side = |name: &str, blocks: &[BlockEntry]| -> Result<Vec<TopologyBlock>> {
            if blocks.is_empty() {
                return Err(PtcError::Netlist(format!("unitary {name} has no blocks")));
            }
            blocks.iter().enumerate().map(|(i, e)| topology_block(self.k, name, i, e)).collect()
        };
        let top = Topology { k: self.k, u: side("u", &self.unitaries.u)?, v: side("v", &self.unitaries.v)? };
        let expect = FootprintSummary::from_counts(&top.device_counts(), &self.pdk);
        if expect != self.footprint {
            return Err(PtcError::Netlist(format!(
                "footprint summary does not match the design (stored {:?}, recomputed {:?})",
                self.footprint, expect
            )));
        }
        Ok(top)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("netlist serializes");
        s.push('\n');
        s
    }

    /// Parses and validates.
    pub fn from_json(source: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(source).map_err(|e| PtcError::Parse {
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        doc.topology()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}
