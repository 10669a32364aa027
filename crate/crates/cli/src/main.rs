use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpstab_cli::config::{parse_checks, parse_seeds, Check, Overrides, ScenarioFile};
use vpstab_cli::report::merge;
use vpstab_cli::{run_batch, CliError};

#[derive(Parser)]
#[command(name = "vpstab", version, about = "Steady states, Hamiltonian perturbations and stability checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML); the bundled default scenario when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "VPSTAB_OUT_DIR", default_value = "vpstab-out")]
    out: PathBuf,
    /// Worker threads, shared by scenarios and the kernels inside them.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated family seeds replacing every seed list.
    #[arg(long)]
    seed_override: Option<String>,
    /// Per-axis refinement factor of the bulk, margin and stationarity clouds.
    #[arg(long)]
    resolution_scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of the file.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated checks replacing each scenario's list; may be empty.
        #[arg(long)]
        check: Option<String>,
    },
    /// Build the steady state and write its profiles.
    BuildSteady(Common),
    /// Determinant, reversibility and Gronwall checks of seeded flows.
    FlowTest(Common),
    /// The λ-sweep of the inequality chain.
    Verify(Common),
    /// Stationarity residuals of transported states in A_k.
    Scan(Common),
    /// Concatenate CSV reports that share a schema.
    ReportMerge {
        /// Merged file.
        #[arg(long)]
        output: PathBuf,
        inputs: Vec<PathBuf>,
    },
}

fn run(common: Common, checks: Option<Vec<Check>>) -> Result<ExitCode, CliError> {
    if let Some(f) = common.resolution_scale {
        if !(f > 0.0) {
            return Err(CliError::Config {
                origin: "--resolution-scale".into(),
                message: "must be positive".into(),
            });
        }
    }
    let mut file = match &common.config {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::bundled(),
    };
    let seeds = common
        .seed_override
        .as_deref()
        .map(parse_seeds)
        .transpose()
        .map_err(|message| CliError::Config {
            origin: "--seed-override".into(),
            message,
        })?;
    let overrides = Overrides {
        seeds,
        checks,
        resolution_scale: common.resolution_scale,
    };
    for sc in &mut file.scenarios {
        overrides.apply(sc);
    }
    file.validate("after command-line overrides")?;
    let threads = common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = run_batch(&file.scenarios, &common.out, threads)?;
    for r in &outcome.reports {
        print!("{}", vpstab_cli::runner::human_summary(r));
    }
    println!("wrote {} files under {}", outcome.written.len(), common.out.display());
    Ok(if outcome.failed() > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, check } => match check.as_deref().map(parse_checks).transpose() {
            Ok(checks) => run(common, checks),
            Err(message) => Err(CliError::Config {
                origin: "--check".into(),
                message,
            }),
        },
        Command::BuildSteady(c) => run(c, Some(vec![Check::Steady])),
        Command::FlowTest(c) => run(c, Some(vec![Check::Flow])),
        Command::Verify(c) => run(c, Some(vec![Check::Chain])),
        Command::Scan(c) => run(c, Some(vec![Check::Scan])),
        Command::ReportMerge { output, inputs } => merge(&inputs).and_then(|t| {
            let bytes = t.to_bytes()?;
            std::fs::write(&output, bytes).map_err(|source| CliError::Io { path: output.clone(), source })?;
            println!("merged {} rows into {}", t.rows.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
