use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dexkit::geometry::ply;
use dexkit::kinematics::toy_hand;
use dexkit::pipeline::{evaluate_grasps_file, run_pipeline, toy, PipelineConfig, PipelineError, RunOptions, Stage};

/// Grasp and motion synthesis pipeline.
///
/// Stages run in pipeline order: calibrate, process, label, train-pose, gen,
/// select, train-motion, synth, eval. `all` selects every stage.
#[derive(Debug, Parser)]
#[command(name = "dexkit", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Stages to run.
    stages: Vec<String>,
    /// Pipeline config TOML; relative paths inside resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, bound to the config by its manifest.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes the synthetic toy dataset to DIR.
    MakeToy { dir: PathBuf },
    /// Evaluates a candidates file against one object mesh and prints the report.
    EvalGrasps {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEXKIT_LOG", "info"))
        .format(|buf, rec| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<PipelineConfig, PipelineError> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        config.apply_seed(s);
    }
    Ok(config)
}

fn parse_stages(names: &[String]) -> Result<Vec<Stage>, PipelineError> {
    if names.is_empty() {
        return Err(PipelineError::Config("no stage given".into()));
    }
    let mut out = Vec::new();
    for n in names {
        if n == "all" {
            out.extend(Stage::ALL);
        } else {
            out.push(n.parse()?);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Some(Command::MakeToy { dir }) => {
            toy::write_toy_dataset(&dir, &toy_hand())?;
            log::info!("toy dataset written to {}", dir.display());
        }
        Some(Command::EvalGrasps { candidates, mesh, config }) => {
            let config = load_config(config.as_ref(), None)?;
            let mesh = ply::read_mesh(&mesh)?;
            let report = evaluate_grasps_file(&candidates, &mesh, &config.hand_model()?, &config)?;
            let text = serde_json::to_string_pretty(&report).map_err(|source| PipelineError::Json { path: candidates, source })?;
            println!("{text}");
        }
        None => {
            let stages = parse_stages(&cli.stages)?;
            let config_path = cli.config.ok_or_else(|| PipelineError::Config("--config is required".into()))?;
            let run_dir = cli.run_dir.ok_or_else(|| PipelineError::Config("--run-dir is required".into()))?;
            let config = load_config(Some(&config_path), cli.seed)?;
            let manifest = run_pipeline(&stages, &config, &run_dir, RunOptions { workers: cli.workers })?;
            log::info!("run {} complete: {} stages recorded", run_dir.display(), manifest.stages.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
