use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geodepth_harness::{commands, HarnessConfig, HarnessError, Result};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "geodepth", version, about = "Geometry-preserving depth training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for the command's random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test scenes with a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the regressor on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train every (ratio, scheme, seed) cell and tabulate test metrics.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients of both losses through the regressor.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate disparity-shift distortions and write transformed loci as PLY.
    GeomDemo {
        #[command(flatten)]
        common: Common,
    },
    /// Left-right consistency mask and frame verdict for a disparity pair.
    MaskStereo {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn config(common: &Common, name: &str) -> Result<HarnessConfig> {
    let mut cfg = HarnessConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        commands::apply_seed(&mut cfg, name, seed);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Value> {
    let out = |c: &Common| -> PathBuf { c.out.clone() };
    match cli.command {
        Command::GenData { common } => commands::gen_data(&config(&common, "gen-data")?, &out(&common)),
        Command::Train { data, common } => {
            commands::train_cmd(&config(&common, "train")?, &data, &out(&common))
        }
        Command::Eval { model, data, common } => {
            config(&common, "eval")?;
            commands::eval(&model, &data, &out(&common))
        }
        Command::Ablate { data, common } => {
            Ok(commands::ablate(&config(&common, "ablate")?, &data, &out(&common))?.0)
        }
        Command::Gradcheck { common } => commands::gradcheck(&config(&common, "gradcheck")?, &out(&common)),
        Command::GeomDemo { common } => commands::geom_demo(&config(&common, "geom-demo")?, &out(&common)),
        Command::MaskStereo { left, right, common } => commands::mask_stereo(
            &config(&common, "mask-stereo")?,
            Path::new(&left),
            Path::new(&right),
            &out(&common),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = match e {
                HarnessError::Violation(_) => "violation",
                HarnessError::Config(_) => "config",
                HarnessError::MissingData(_) => "missing-data",
                _ => "error",
            };
            println!("{}", serde_json::json!({ "error": kind, "message": e.to_string() }));
            eprintln!("geodepth: {e}");
            ExitCode::FAILURE
        }
    }
}
