//! Run configuration, netlist documents, reports and file plumbing.

mod config;
mod netlist;
mod report;

pub use config::{seeded_stream, streams, EvalConfig, RunConfig, TargetKind, TaskSpec};
pub use netlist::{
    BlockEntry, CouplerEntry, FootprintSummary, NetlistDocument, Provenance, Unitaries, NETLIST_VERSION,
};
pub use report::{counts_table, footprint_kilo, sweep_csv, CountsRow};

use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
