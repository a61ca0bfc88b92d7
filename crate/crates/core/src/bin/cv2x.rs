use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cv2x::runner::{self, Overrides, RunManifest};

#[derive(Parser)]
#[command(version, about = "Sidelink SPS simulator and IPG tail model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep grid; writes ccdf.csv, prr.csv and metadata.json.
    Simulate(Common),
    /// Closed-form tail P(T > k); writes tail.csv.
    Analytic(Common),
    /// Compare analytic and simulated tail slopes; writes validation.csv.
    Validate(Common),
    /// Monte Carlo tail of the reselection process; writes oracle.csv.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: out/<config stem>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the manifest and CV2X_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u32>,
    /// Apply the manifest's [desk_scale] table.
    #[arg(long)]
    desk_scale: bool,
}

fn run(cli: Cli) -> cv2x::Result<()> {
    let (common, command) = match &cli.command {
        Command::Simulate(c) => (c, "simulate"),
        Command::Analytic(c) => (c, "analytic"),
        Command::Validate(c) => (c, "validate"),
        Command::Oracle(c) => (c, "oracle"),
    };
    let manifest = RunManifest::load(&common.config)?;
    let resolved = manifest.resolve(&Overrides {
        seed: common.seed,
        replications: common.replications,
        desk_scale: common.desk_scale,
    })?;
    let out = common.out.clone().unwrap_or_else(|| runner::default_out_dir(&common.config));
    match command {
        "simulate" => {
            let s = runner::simulate(&resolved, &out)?;
            println!("{} grid points written to {}", s.results.len(), out.display());
        }
        "analytic" => {
            let curve = runner::analytic(&resolved, &out)?;
            println!("P(T > {}) = {:.6e}", curve.k_max(), curve.values()[curve.k_max() as usize]);
        }
        "validate" => {
            for r in runner::validate(&resolved, &out)? {
                println!(
                    "{} VUE/km {} MHz one-shot {} {}: slope analytic {:.4} sim {:.4} gap {:.3}",
                    r.density,
                    r.bandwidth_mhz,
                    r.oneshot_cfg,
                    r.interferer_mode.as_str(),
                    r.slope_analytic,
                    r.slope_sim,
                    r.relative_gap
                );
            }
        }
        _ => {
            let curve = runner::oracle(&resolved, &out)?;
            println!("P(T > {}) = {:.6e}", curve.k_max(), curve.values()[curve.k_max() as usize]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
