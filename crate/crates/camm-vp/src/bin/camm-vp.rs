use camm_vp::harness::{parse_config, run_experiment, RunOptions, Verb};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

/// Numerical laboratory for anisotropic steady states of the spherically
/// symmetric gravitational Vlasov-Poisson system.
#[derive(Parser)]
#[command(name = "camm-vp", version)]
struct Cli {
    /// Experiment to run: steady, scaling, stability, checks or sim.
    verb: String,
    /// Path to a `section.key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Permit exponents outside 0 < k < l + 3/2.
    #[arg(long)]
    allow_out_of_range: bool,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "camm-vp-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verb = match Verb::parse(&cli.verb) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("camm-vp: {e}");
            return ExitCode::FAILURE;
        }
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("camm-vp: cannot read {}: {e}", cli.config.display());
            return ExitCode::FAILURE;
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("camm-vp: {e}");
            return ExitCode::FAILURE;
        }
    };
    let opts = RunOptions {
        out_dir: cli.out,
        seed: cli.seed,
        allow_out_of_range: cli.allow_out_of_range,
    };
    match run_experiment(verb, &cfg, &opts) {
        Ok(manifest) => {
            for a in &manifest.assertions {
                let status = if a.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {}", a.name, a.detail);
            }
            println!(
                "{} assertions, outputs in {}",
                manifest.assertions.len(),
                opts.out_dir.display()
            );
            if manifest.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("camm-vp: {e}");
            ExitCode::FAILURE
        }
    }
}
