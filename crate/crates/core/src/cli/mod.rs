//! Batch command line: `mpml <subcommand> --config <path>`.

pub mod config;
pub mod ingest;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use config::{Command, RunConfig};
pub use ingest::{ingest_dataset, Ingested};
pub use run::{exit_code_for, run, Overrides, RunOutcome, EXIT_CONFIG, EXIT_OK, EXIT_PRECISION};

#[derive(Debug, Parser)]
#[command(name = "mpml", version, about = "PML/MPML priors, conditional MLE and posterior-mean estimators")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the timestamp from report.json.
    #[arg(long)]
    deterministic: bool,
}

/// Parse arguments, run, print a one-line summary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let ov = Overrides {
        seed: args.seed,
        out: args.out,
        deterministic: args.deterministic,
    };
    match run(args.command, &args.config, &ov) {
        Ok(o) => {
            println!("{}", o.summary);
            if o.exit_code == EXIT_PRECISION {
                eprintln!("precision failure; see {}", o.out_dir.join("report.json").display());
            }
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
