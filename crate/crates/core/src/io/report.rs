use crate::error::{PtcError, Result};
use crate::pdk::{DeviceCounts, PdkSpec};
use crate::train::SweepRow;
use serde::{Deserialize, Serialize};

/// Area in units of 1000 um^2, rounded half away from zero.
pub fn footprint_kilo(area_um2: f64) -> u64 {
    (area_um2 / 1000.0).round() as u64
}

/// One line of a device-count table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub design: String,
    pub pdk: String,
    pub k: usize,
    pub crossings: usize,
    pub couplers: usize,
    pub blocks: usize,
    pub footprint_kilo_um2: u64,
}

impl CountsRow {
    pub fn new(design: impl Into<String>, counts: &DeviceCounts, pdk: &PdkSpec) -> Self {
        Self {
            design: design.into(),
            pdk: pdk.name.clone(),
            k: counts.k,
            crossings: counts.crossings,
            couplers: counts.couplers,
            blocks: counts.blocks,
            footprint_kilo_um2: footprint_kilo(counts.area(pdk)),
        }
    }
}

/// Fixed-width table; footprint in 1/1000 um^2.
pub fn counts_table(rows: &[CountsRow]) -> String {
    let mut out = format!(
        "{:<12} {:<5} {:>4} {:>6} {:>6} {:>6} {:>10}\n",
        "design", "pdk", "K", "#CR", "#DC", "#Blk", "footprint"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<5} {:>4} {:>6} {:>6} {:>6} {:>10}\n",
            r.design, r.pdk, r.k, r.crossings, r.couplers, r.blocks, r.footprint_kilo_um2
        ));
    }
    out
}

/// `sigma,mean,std` with a header; `metric` names the mean/std columns.
pub fn sweep_csv(metric: &str, rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PtcError::Io(std::io::Error::other(e));
    w.write_record(["sigma", &format!("{metric}_mean"), &format!("{metric}_std")]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.sigma.to_string(), r.mean.to_string(), r.std.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PtcError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
