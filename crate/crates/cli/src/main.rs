//! `cpa-ae` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpa_ae::commands::{
    analyze_from_path, gen_data_from_path, suite_from_path, train_from_path, AnalyzeKind, GenDataKind, Overrides,
};
use cpa_ae::Error;

#[derive(Parser)]
#[command(name = "cpa-ae", version, about = "Piecewise-affine autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (gen-data: output CSV file). Overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed. Overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration for `train.runs` seeds.
    Train(Common),
    /// Compare several regularizers over seeded runs.
    Suite {
        #[command(flatten)]
        common: Common,
        /// Runs executed in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Export partitions, surfaces, region counts and diagnostics of a model.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Model file. Overrides the config.
        #[arg(long)]
        model: Option<PathBuf>,
        /// partition2d, surface, ball_counts, biorthogonality or epsilon_trace.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Write a synthetic dataset CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// orbit_circle, orbit_blocks or control_chart.
        #[arg(long)]
        kind: Option<String>,
    },
}

fn overrides(c: &Common, workers: Option<usize>) -> Overrides {
    Overrides {
        out: c.out.clone(),
        seed: c.seed,
        workers,
    }
}

fn require_config(c: &Common) -> Result<&PathBuf, Error> {
    c.config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Train(c) => {
            let out = train_from_path(require_config(&c)?, &overrides(&c, None))?;
            let mse: Vec<f64> = out.records.iter().map(|r| r.final_test_mse).collect();
            Ok(format!("wrote {} (final test mse {mse:?})", out.dir.display()))
        }
        Command::Suite { common, workers } => {
            let result = suite_from_path(require_config(&common)?, &overrides(&common, Some(workers)))?;
            let rows: Vec<String> = result
                .rows
                .iter()
                .map(|r| format!("{}: {:.6e} ± {:.2e} ({} failed)", r.name, r.mean, r.std, r.failed))
                .collect();
            Ok(rows.join("\n"))
        }
        Command::Analyze { common, model, kind } => {
            let kind = kind.map(|k| k.parse::<AnalyzeKind>()).transpose()?;
            let path = analyze_from_path(
                require_config(&common)?,
                &overrides(&common, None),
                model.as_deref(),
                kind,
            )?;
            Ok(format!("wrote {}", path.display()))
        }
        Command::GenData { common, kind } => {
            let kind = kind.map(|k| k.parse::<GenDataKind>()).transpose()?;
            let path = gen_data_from_path(common.config.as_deref(), kind, &overrides(&common, None))?;
            Ok(format!("wrote {}", path.display()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let doc = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{doc}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
