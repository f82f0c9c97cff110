use clap::{Args, Parser, Subcommand};
use ptc_cli::{
    cmd_eval, cmd_footprint, cmd_legalize, cmd_report, cmd_search, error_record, parse_sigma_grid, FootprintSource,
    ERROR_FILE, REPORT_FILE,
};
use ptc_core::io::{counts_table, write_atomic};
use ptc_core::pdk::Baseline;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ptc", version, about = "Footprint-constrained photonic tensor-core topology search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Root seed for every random stream.
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Search a topology and write netlist, report and logs.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the PDK named in the config.
        #[arg(long)]
        pdk: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Retrain a netlist with phase noise and sweep noise levels.
    Eval {
        netlist: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated phase-noise levels.
        #[arg(long)]
        sigma_grid: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Footprint of a netlist or of a reference design.
    Footprint {
        /// Netlist path, or `mzi` / `fft`.
        target: String,
        /// Mesh size for a reference design; all sizes when omitted.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        pdk: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Legalize a relaxed checkpoint and sample a design.
    Legalize {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pdk: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Device-count table for netlists.
    Report {
        #[arg(required = true)]
        netlists: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search { config, pdk, out, common } => {
            let doc = cmd_search(&config, common.seed, pdk.as_deref(), &out).inspect_err(|e| write_error(e, &out))?;
            print!("{}", std::fs::read_to_string(out.join(REPORT_FILE))?);
            println!("blocks {} area {}", doc.footprint.blocks, doc.footprint.area_um2);
        }
        Command::Eval { netlist, config, out, sigma_grid, trials, common } => {
            let grid = sigma_grid.as_deref().map(parse_sigma_grid).transpose()?;
            let csv = cmd_eval(&netlist, &config, common.seed, grid.as_deref(), trials, &out)?;
            print!("{csv}");
        }
        Command::Footprint { target, k, pdk, common: _ } => {
            let source = match target.parse::<Baseline>() {
                Ok(b) => FootprintSource::Baseline(b, k),
                Err(_) => FootprintSource::Netlist(Path::new(&target)),
            };
            print!("{}", counts_table(&cmd_footprint(source, pdk.as_deref())?));
        }
        Command::Legalize { checkpoint, config, pdk, out, common } => {
            let doc = cmd_legalize(&checkpoint, &config, common.seed, pdk.as_deref(), &out)?;
            println!("blocks {} area {}", doc.footprint.blocks, doc.footprint.area_um2);
        }
        Command::Report { netlists, common: _ } => {
            print!("{}", cmd_report(&netlists)?);
        }
    }
    Ok(())
}

/// Leaves the error record next to the partial outputs.
fn write_error(e: &anyhow::Error, out: &Path) {
    if out.is_dir() {
        let _ = write_atomic(&out.join(ERROR_FILE), format!("{}\n", error_record(e)).as_bytes());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(2)
        }
    }
}
