//! `msgnet`: dataset analysis, degradation, training, evaluation and
//! ablation from one declarative configuration.

mod commands;
mod config;
mod data;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_assignment, RunConfig};
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "msgnet", version, about = "Water-surface object detection workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand accepts.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set detector.use_pld=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Shorthand for `data.annotations`.
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Shorthand for `data.image_root`.
    #[arg(long, value_name = "DIR")]
    image_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics tables and offset limits.
    Analyze(Common),
    /// Paired degraded copies of an annotated set.
    Degrade(Common),
    /// Train the scene discriminator.
    TrainScene(Common),
    /// Train the enhancer on (degraded, clean) pairs.
    TrainEnhancer {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `data.pairs`.
        #[arg(long, value_name = "FILE")]
        pairs: Option<PathBuf>,
        /// Shorthand for `checkpoints.scene`.
        #[arg(long, value_name = "FILE")]
        scene_checkpoint: Option<PathBuf>,
    },
    /// Train the detector.
    TrainDetector {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `checkpoints.sgie`.
        #[arg(long, value_name = "FILE")]
        sgie_checkpoint: Option<PathBuf>,
    },
    /// mAP of a predictions file or of a detector checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `data.predictions`.
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        /// Shorthand for `checkpoints.detector`.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score every module on/off combination.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `checkpoints.sgie`.
        #[arg(long, value_name = "FILE")]
        sgie_checkpoint: Option<PathBuf>,
    },
    /// Render a synthetic annotated scene set.
    Synth(Common),
    /// Convert DarkLabel CSV annotations to JSON Lines.
    ConvertDarklabel {
        #[command(flatten)]
        common: Common,
        /// Shorthand for `darklabel.csv`.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut extra: Vec<(&str, Option<PathBuf>)> = Vec::new();
    let (name, common) = match cli.command {
        Command::Analyze(c) => ("analyze", c),
        Command::Degrade(c) => ("degrade", c),
        Command::TrainScene(c) => ("train-scene", c),
        Command::TrainEnhancer {
            common,
            pairs,
            scene_checkpoint,
        } => {
            extra.push(("data.pairs", pairs));
            extra.push(("checkpoints.scene", scene_checkpoint));
            ("train-enhancer", common)
        }
        Command::TrainDetector { common, sgie_checkpoint } => {
            extra.push(("checkpoints.sgie", sgie_checkpoint));
            ("train-detector", common)
        }
        Command::Eval {
            common,
            predictions,
            checkpoint,
        } => {
            extra.push(("data.predictions", predictions));
            extra.push(("checkpoints.detector", checkpoint));
            ("eval", common)
        }
        Command::Ablate { common, sgie_checkpoint } => {
            extra.push(("checkpoints.sgie", sgie_checkpoint));
            ("ablate", common)
        }
        Command::Synth(c) => ("synth", c),
        Command::ConvertDarklabel { common, csv } => {
            extra.push(("darklabel.csv", csv));
            ("convert-darklabel", common)
        }
    };

    let mut overrides = common
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), toml::Value::Integer(s as i64)));
    }
    extra.push(("output_dir", common.out));
    extra.push(("data.annotations", common.annotations));
    extra.push(("data.image_root", common.image_root));
    for (key, value) in extra {
        if let Some(p) = value {
            overrides.push((key.to_string(), path_value(&p)));
        }
    }

    let config = RunConfig::load(common.config.as_deref(), &overrides)?;
    let out = commands::output_dir(&config)?;
    match name {
        "analyze" => commands::analyze(&config, &out)?,
        "degrade" => commands::degrade(&config, &out)?,
        "train-scene" => commands::train_scene(&config, &out)?,
        "train-enhancer" => commands::train_enhancer_cmd(&config, &out)?,
        "train-detector" => commands::train_detector_cmd(&config, &out)?,
        "eval" => commands::eval(&config, &out)?,
        "ablate" => commands::ablate(&config, &out)?,
        "synth" => commands::synth(&config, &out)?,
        "convert-darklabel" => commands::convert_darklabel(&config, &out)?,
        _ => unreachable!("every subcommand is dispatched"),
    }
    let resolved = out.join("run_config.json");
    std::fs::write(&resolved, serde_json::to_string_pretty(&config)? + "\n")
        .map_err(|e| error::CliError::io(&resolved, e))?;
    manifest::write_manifest(&out, name, &config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors (unknown subcommand, bad flags) print clap's usage text
    // and exit with status 2.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(1)
        }
    }
}
