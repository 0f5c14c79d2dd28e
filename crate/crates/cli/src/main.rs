use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skinsynth_core::config::RunConfig;
use skinsynth_core::pipeline::{exit_code, run_pipeline, run_stage, Stage};
use skinsynth_core::procedural::{write_demo, DemoOptions};
use skinsynth_core::Result;

/// Paste, blend and render skin lesions on textured body meshes.
#[derive(Parser, Debug)]
#[command(name = "skinsynth", version)]
struct Cli {
    /// YAML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Meshes processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Place lesions and paste them into each texture.
    Paste,
    /// Optimize the pasted textures.
    Blend,
    /// Render annotated views of the blended meshes.
    Render,
    /// Run paste, blend and render in sequence.
    Pipeline,
    /// Write a small procedural example run (sphere mesh, lesions, config).
    Demo {
        /// Directory to write into.
        dir: PathBuf,
    },
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Demo { dir } = &cli.command {
        let opts = DemoOptions {
            seed: cli.seed.unwrap_or(0),
            ..Default::default()
        };
        let path = write_demo(dir, &opts)?;
        println!("{}", path.display());
        return Ok(());
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| skinsynth_core::Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    log::info!("seed {}, output {}", cfg.seed, cfg.output.display());
    match &cli.command {
        Command::Paste => run_stage(&cfg, Stage::Paste, cli.jobs),
        Command::Blend => run_stage(&cfg, Stage::Blend, cli.jobs),
        Command::Render => run_stage(&cfg, Stage::Render, cli.jobs),
        Command::Pipeline => run_pipeline(&cfg, cli.jobs).map(drop),
        Command::Demo { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
