use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};
use refracta::fuse::FusionStrategy;
use refracta::parallel::with_threads;
use refracta_cli::config::ReconstructMethod;
use refracta_cli::{exit, Config, Overrides, RenderSource, Stage, Workspace};

/// Transparent shape reconstruction from a few calibrated views.
#[derive(Parser, Debug)]
#[command(name = "refracta", version, about)]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "REFRACTA_THREADS")]
    threads: Option<usize>,
    /// Run seed; also replaces the dataset seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Index of refraction: the generated one for `gen`, the assumed one otherwise.
    #[arg(long, global = true)]
    ior: Option<f64>,
    /// Number of views to generate.
    #[arg(long, global = true)]
    views: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scene bundles.
    Gen,
    /// Carve and polygonize the visual hull.
    Carve,
    /// Trace first and second surface normals of the hull.
    TraceNormals,
    /// Cost-volume search around the hull normals.
    Search,
    /// Gradient refinement of the searched normals.
    Refine,
    /// Fuse per-view normals onto hull samples.
    Fuse {
        #[arg(long)]
        strategy: Option<FusionStrategy>,
    },
    /// Recover the final mesh from the fused cloud.
    Reconstruct {
        #[arg(long)]
        method: Option<ReconstructMethod>,
    },
    /// Render normal maps (hull, search, refine, truth) or the reference tracer.
    Render {
        #[arg(long, default_value = "refine")]
        source: RenderSource,
    },
    /// Compare against ground truth and write metrics.json / metrics.csv.
    Eval,
    /// Run every stage, skipping those that are up to date.
    Pipeline {
        /// Re-run every stage.
        #[arg(long)]
        force: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Carve => "carve",
            Command::TraceNormals => "trace-normals",
            Command::Search => "search",
            Command::Refine => "refine",
            Command::Fuse { .. } => "fuse",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Render { .. } => "render",
            Command::Eval => "eval",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut o = Overrides {
        seed: cli.seed,
        ior: cli.ior,
        views: cli.views,
        threads: cli.threads,
    };
    if matches!(cli.command, Command::Gen) {
        if let Some(ior) = o.ior.take() {
            cfg.dataset.ior = ior;
        }
    }
    cfg.apply(&o);
    match &cli.command {
        Command::Fuse { strategy: Some(s) } => cfg.fuse.strategy = *s,
        Command::Reconstruct { method: Some(m) } => cfg.reconstruct.method = *m,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli, ws: &Workspace) -> Result<()> {
    let t = Instant::now();
    let stages = match &cli.command {
        Command::Pipeline { force } => ws.run_pipeline(*force)?,
        Command::Render { source } => {
            ws.cfg.validate(false)?;
            let dir = ws.render(*source)?;
            println!("{}", dir.display());
            Vec::new()
        }
        cmd => {
            let stage = Stage::ALL
                .into_iter()
                .find(|s| s.name() == cmd.name())
                .expect("every remaining command is a stage");
            ws.cfg.validate(stage == Stage::Gen)?;
            if stage != Stage::Gen {
                ws.scene_dir()?;
            }
            vec![ws.run_stage(stage)?]
        }
    };
    ws.write_run_record(cli.command.name(), stages, t.elapsed().as_secs_f64())?;
    if matches!(cli.command, Command::Pipeline { .. }) {
        println!("{}", ws.final_mesh().display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        let threads = cfg.threads;
        let ws = Workspace::new(cli.out.clone(), cfg);
        with_threads(threads, || run(&cli, &ws))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, line) = exit::diagnostic(&e);
            eprintln!("{line}");
            ExitCode::from(code as u8)
        }
    }
}
