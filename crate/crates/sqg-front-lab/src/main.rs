use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sqg_front_lab::runner::{self, Preset};

/// Verification laboratory for the SQG front equation.
#[derive(Parser, Debug)]
#[command(name = "sqg-front-lab", version, about)]
struct Cli {
    /// Experiment preset to run (see --list-presets).
    preset: Option<String>,

    /// Config file (TOML); when omitted the preset's tuned defaults apply.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory for the bundle (config echo, CSVs, summary).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Seed for randomized property probes (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    /// List the available presets and exit.
    #[arg(long)]
    list_presets: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.list_presets {
        for p in Preset::ALL {
            println!("{:<12} {}", p.name(), p.description());
        }
        return ExitCode::SUCCESS;
    }

    let Some(name) = cli.preset.as_deref() else {
        eprintln!("error: a preset is required (try --list-presets)");
        return ExitCode::from(2);
    };
    let Some(preset) = Preset::from_name(name) else {
        eprintln!("error: unknown preset `{name}` (try --list-presets)");
        return ExitCode::from(2);
    };

    let mut cfg = match &cli.config {
        Some(path) => match runner::parse_config(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => preset.default_config(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let out_dir = cli
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(preset.name()));

    match runner::run_experiment(preset, &cfg, &out_dir) {
        Ok(bundle) => {
            for c in &bundle.summary.criteria {
                println!("{}", c.line());
            }
            println!(
                "bundle written to {} ({})",
                bundle.path.display(),
                if bundle.summary.all_pass {
                    "all criteria met"
                } else {
                    "SOME CRITERIA FAILED"
                }
            );
            if bundle.summary.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
