//! Subcommand implementations behind the `ptc` binary.

use anyhow::{anyhow, bail, Context};
use ptc_core::io::{
    counts_table, seeded_stream, streams, sweep_csv, write_atomic, CountsRow, NetlistDocument, Provenance, RunConfig,
};
use ptc_core::pdk::{Baseline, PdkSpec};
use ptc_core::search::{run_search, sample_submesh, EpochRecord, SearchObserver, SuperMesh};
use ptc_core::train::{robustness_sweep, variation_aware_train};
use ptc_core::{NoiseModel, PtcError, Result};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};

pub const NETLIST_FILE: &str = "netlist.json";
pub const REPORT_FILE: &str = "report.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "relaxed.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ERROR_FILE: &str = "error.json";

/// Machine-readable description of a failure.
pub fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let message = format!("{err:#}");
    match err.downcast_ref::<PtcError>() {
        Some(PtcError::Divergence { step, what, trace }) => {
            json!({"error": "divergence", "message": message, "step": step, "what": what, "trace": trace})
        }
        Some(PtcError::Legalization { attempts, best_effort }) => {
            json!({"error": "legalization", "message": message, "attempts": attempts, "best_effort": best_effort})
        }
        Some(e) => json!({"error": kind(e), "message": message}),
        None => json!({"error": "usage", "message": message}),
    }
}

fn kind(e: &PtcError) -> &'static str {
    match e {
        PtcError::Config(_) => "config",
        PtcError::Dimension { .. } => "dimension",
        PtcError::Domain(_) => "domain",
        PtcError::Degenerate(_) => "degenerate",
        PtcError::State(_) => "state",
        PtcError::Infeasible(_) => "infeasible",
        PtcError::Legalization { .. } => "legalization",
        PtcError::Divergence { .. } => "divergence",
        PtcError::Netlist(_) => "netlist",
        PtcError::Parse { .. } => "parse",
        PtcError::Io(_) => "io",
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_config(path: &Path, pdk_override: Option<&str>) -> anyhow::Result<(RunConfig, PdkSpec)> {
    let cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    let pdk = match pdk_override {
        Some(name) => PdkSpec::resolve(name)?,
        None => cfg.resolve_pdk(&base_dir(path))?,
    };
    Ok((cfg, pdk))
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("record serializes");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Collects epoch records and checkpoints the relaxed mesh.
struct RunRecorder {
    out: PathBuf,
    log: String,
}

impl SearchObserver for RunRecorder {
    fn on_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.log.push_str(&to_json_line(record));
        Ok(())
    }

    fn before_legalize(&mut self, mesh: &SuperMesh) -> Result<()> {
        write_text(&self.out.join(CHECKPOINT_FILE), &to_json_line(mesh))
    }
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    seed: u64,
    config_sha256: &'a str,
    pdk: &'a str,
    k: usize,
    window: [f64; 2],
    blocks_per_unitary: [usize; 2],
    final_epoch: Option<&'a EpochRecord>,
    counts: &'a CountsRow,
    footprint_um2: f64,
}

/// Runs the full search and writes the netlist, report, log and checkpoint
/// into `out`.
pub fn cmd_search(config: &Path, seed: u64, pdk: Option<&str>, out: &Path) -> anyhow::Result<NetlistDocument> {
    let (cfg, pdk) = load_config(config, pdk)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let task = cfg.task.build(cfg.k, seed, &base_dir(config))?;
    let search = cfg.search_config(pdk.clone());
    let mut rec = RunRecorder { out: out.to_path_buf(), log: String::new() };
    let result = run_search(&search, &task, &mut seeded_stream(seed, streams::SEARCH), &mut rec);
    write_text(&out.join(LOG_FILE), &rec.log)?;
    let outcome = result?;

    let digest = cfg.digest();
    let prov = Provenance { seed, schedule: cfg.schedule.clone(), config_sha256: digest.clone() };
    let doc = NetlistDocument::from_topology(&outcome.topology, &pdk, prov)?;
    doc.save(&out.join(NETLIST_FILE))?;

    let counts = outcome.topology.device_counts();
    let row = CountsRow::new("searched", &counts, &pdk);
    let summary = SearchSummary {
        seed,
        config_sha256: &digest,
        pdk: &pdk.name,
        k: cfg.k,
        window: [cfg.window.f_min, cfg.window.f_max],
        blocks_per_unitary: [outcome.topology.u.len(), outcome.topology.v.len()],
        final_epoch: outcome.log.last(),
        counts: &row,
        footprint_um2: doc.footprint.area_um2,
    };
    write_text(&out.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    let mut report = counts_table(&[row]);
    if let Some(last) = outcome.log.last() {
        report.push_str(&format!(
            "final losses: task {:.6e}, alm {:.6e}, footprint {:.6e}\n",
            last.task_loss, last.alm_loss, last.footprint_loss
        ));
    }
    report.push_str(&format!(
        "footprint {} um^2 in window [{}, {}]\n",
        doc.footprint.area_um2, cfg.window.f_min, cfg.window.f_max
    ));
    write_text(&out.join(REPORT_FILE), &report)?;
    Ok(doc)
}

/// Noise-aware retraining of a netlist followed by a robustness sweep;
/// writes the metric CSV and a device-count report into `out`.
pub fn cmd_eval(
    netlist: &Path,
    config: &Path,
    seed: u64,
    sigma_grid: Option<&[f64]>,
    trials: Option<usize>,
    out: &Path,
) -> anyhow::Result<String> {
    let doc = NetlistDocument::load(netlist).with_context(|| format!("loading {}", netlist.display()))?;
    let top = doc.topology()?;
    let cfg = RunConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    if cfg.k != doc.k {
        bail!(PtcError::Config(format!("config k = {} but the netlist has k = {}", cfg.k, doc.k)));
    }
    let task = cfg.task.build(cfg.k, seed, &base_dir(config))?;
    let grid = sigma_grid.map(<[f64]>::to_vec).unwrap_or_else(|| cfg.eval.sigma_grid.clone());
    let trials = trials.unwrap_or(cfg.eval.trials);
    let noise = NoiseModel::new(cfg.eval.noise)?;
    let trained = variation_aware_train(&top, &task, &noise, &cfg.train, &mut seeded_stream(seed, streams::TRAIN))?;
    let rows = robustness_sweep(&trained.mesh, &task, &grid, trials, seed ^ streams::SWEEP)?;
    let csv = sweep_csv(task.metric_name(), &rows)?;
    std::fs::create_dir_all(out)?;
    write_text(&out.join(METRICS_FILE), &csv)?;
    let table = counts_table(&[CountsRow::new("netlist", &top.device_counts(), &doc.pdk)]);
    write_text(&out.join(REPORT_FILE), &table)?;
    Ok(csv)
}

/// What `footprint` tabulates.
pub enum FootprintSource<'a> {
    Netlist(&'a Path),
    /// A baseline at one size, or every published size.
    Baseline(Baseline, Option<usize>),
}

/// Device counts and footprint (1/1000 um^2) under `pdk`; a netlist uses
/// its own PDK when none is given.
pub fn cmd_footprint(source: FootprintSource<'_>, pdk: Option<&str>) -> anyhow::Result<Vec<CountsRow>> {
    match source {
        FootprintSource::Netlist(path) => {
            let doc = NetlistDocument::load(path)?;
            let pdk = match pdk {
                Some(p) => PdkSpec::resolve(p)?,
                None => doc.pdk.clone(),
            };
            Ok(vec![CountsRow::new("netlist", &doc.topology()?.device_counts(), &pdk)])
        }
        FootprintSource::Baseline(b, k) => {
            let pdk = PdkSpec::resolve(pdk.ok_or_else(|| anyhow!(PtcError::Config("--pdk is required".into())))?)?;
            let sizes = match k {
                Some(k) => vec![k],
                None => Baseline::sizes().to_vec(),
            };
            sizes.into_iter().map(|k| Ok(CountsRow::new(b.to_string(), &b.counts(k)?, &pdk))).collect()
        }
    }
}

/// Legalizes the permutations of a relaxed checkpoint, then samples a
/// design inside the configured window.
pub fn cmd_legalize(
    checkpoint: &Path,
    config: &Path,
    seed: u64,
    pdk: Option<&str>,
    out: &Path,
) -> anyhow::Result<NetlistDocument> {
    let (cfg, pdk) = load_config(config, pdk)?;
    let text = std::fs::read_to_string(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let mut mesh: SuperMesh = serde_json::from_str(&text).map_err(|e| PtcError::Parse {
        location: format!("{} line {}", checkpoint.display(), e.line()),
        message: e.to_string(),
    })?;
    if mesh.k != cfg.k {
        bail!(PtcError::Config(format!("config k = {} but the checkpoint has k = {}", cfg.k, mesh.k)));
    }
    let search = cfg.search_config(pdk.clone());
    let bounds = search.validate()?;
    let mut rng = seeded_stream(seed, streams::LEGALIZE);
    mesh.legalize(&cfg.spl, &mut rng)?;
    let top = sample_submesh(&mesh, &pdk, &cfg.window, &mut rng, cfg.sample_tries)?;
    top.validate_against(&bounds, &cfg.window, &pdk)?;
    let prov = Provenance { seed, schedule: cfg.schedule.clone(), config_sha256: cfg.digest() };
    let doc = NetlistDocument::from_topology(&top, &pdk, prov)?;
    std::fs::create_dir_all(out)?;
    doc.save(&out.join(NETLIST_FILE))?;
    Ok(doc)
}

/// Device-count table for one or more netlists.
pub fn cmd_report(netlists: &[PathBuf]) -> anyhow::Result<String> {
    let rows = netlists
        .iter()
        .map(|p| {
            let doc = NetlistDocument::load(p).with_context(|| format!("loading {}", p.display()))?;
            // runs share the file name, so label them by directory
            let label = if p.file_name() == Some(NETLIST_FILE.as_ref()) {
                p.parent().and_then(Path::file_name)
            } else {
                p.file_stem()
            };
            let name = label.map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(CountsRow::new(name, &doc.topology()?.device_counts(), &doc.pdk))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(counts_table(&rows))
}

/// Parses `0,0.01,0.02`.
pub fn parse_sigma_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().with_context(|| format!("bad sigma `{t}`"))?;
            if !(v >= 0.0 && v.is_finite()) {
                bail!("sigma must be nonnegative, got {v}");
            }
            Ok(v)
        })
        .collect()
}
