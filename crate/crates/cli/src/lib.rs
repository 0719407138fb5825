//! `otcmm`: configuration loading, subcommand dispatch and artifact export.

pub mod commands;
pub mod output;
pub mod reproduce;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use otc_mm::config::{PolicyChoice, RunConfig};

use commands::{Overrides, SURFACE_CACHE};
use output::Run;
use reproduce::{Experiment, Stage};

#[derive(Debug, Parser)]
#[command(name = "otcmm", version, about = "Multi-asset RFQ market making: solve, quote, simulate, correct")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Top-level seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out`, or `out/<experiment>` for reproduce).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Monte Carlo paths for simulate and adjust.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Grid nodes per axis, `141` or `141,71`.
    #[arg(long, value_parser = commands::parse_grid)]
    pub grid: Option<commands::GridArg>,
    /// Solver time step in days.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of factors; 0 solves in inventory coordinates.
    #[arg(long)]
    pub factors: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            grid: self.grid.clone().map(|g| g.0),
            dt: self.dt,
            factors: self.factors,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the config, the covariance and the intensity hypotheses.
    Validate(Common),
    /// Eigen-analysis of the covariance.
    Factors(Common),
    /// Solve the value surface and cache it in the output directory.
    Solve(Common),
    /// Quote curves from the cached surface.
    Quotes(Common),
    /// Monte Carlo evaluation of the configured policy.
    Simulate(Common),
    /// Residual-risk correction at the configured inventory.
    Adjust(Common),
    /// Run a bundled experiment.
    Reproduce {
        experiment: Experiment,
        #[arg(long, value_enum, default_value_t = Stage::All)]
        stage: Stage,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common, bundled: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match (&common.config, bundled) {
        (Some(path), _) => RunConfig::from_path(path)?,
        (None, Some(text)) => RunConfig::from_toml_str(text)?,
        (None, None) => bail!("--config <file> is required for this subcommand"),
    };
    common.overrides().apply(&mut cfg);
    // surface early the range and unit errors, with the config path in context
    cfg.market().with_context(|| match &common.config {
        Some(p) => format!("invalid configuration {}", p.display()),
        None => "invalid bundled configuration".to_string(),
    })?;
    Ok(cfg)
}

/// Runs a parsed command; `Ok(false)` means the run completed but a check
/// failed (non-zero exit).
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Reproduce { experiment, stage, common } => {
            let cfg = load_config(&common, Some(experiment.bundled_config()))?;
            let dir = common.out_dir.clone().unwrap_or_else(|| commands::default_out_dir(Some(experiment.name())));
            let sub = format!("reproduce-{}-{}", experiment.name(), stage.name());
            let mut run = Run::start(&dir, &sub, &cfg.hash(), cfg.seed)?;
            reproduce::reproduce(experiment, stage, &cfg, &mut run)?;
            finish(run)?;
            Ok(true)
        }
        Command::Validate(c) => {
            // a config that fails to build is reported by load_config
            let cfg = load_config(&c, None)?;
            let mut run = start(&c, "validate", &cfg)?;
            let ok = commands::validate(&cfg, &mut run)?;
            finish(run)?;
            Ok(ok)
        }
        Command::Factors(c) => {
            let cfg = load_config(&c, None)?;
            let mut run = start(&c, "factors", &cfg)?;
            commands::factors(&cfg, &mut run)?;
            finish(run)?;
            Ok(true)
        }
        Command::Solve(c) => {
            let cfg = load_config(&c, None)?;
            let mut run = start(&c, "solve", &cfg)?;
            commands::solve_and_store(&cfg, &mut run, "surface")?;
            finish(run)?;
            Ok(true)
        }
        Command::Quotes(c) => {
            let cfg = load_config(&c, None)?;
            let mut run = start(&c, "quotes", &cfg)?;
            let s = cached(&c, &cfg, &mut run)?;
            commands::quotes(&cfg, &mut run, &s)?;
            finish(run)?;
            Ok(true)
        }
        Command::Simulate(c) => {
            let cfg = load_config(&c, None)?;
            let mut run = start(&c, "simulate", &cfg)?;
            let s = match cfg.simulation.policy {
                PolicyChoice::Surface => Some(cached(&c, &cfg, &mut run)?),
                PolicyChoice::Myopic => None,
            };
            commands::simulate_cmd(&cfg, &mut run, s)?;
            finish(run)?;
            Ok(true)
        }
        Command::Adjust(c) => {
            let cfg = load_config(&c, None)?;
            let mut run = start(&c, "adjust", &cfg)?;
            let s = cached(&c, &cfg, &mut run)?;
            commands::adjust_cmd(&cfg, &mut run, &s)?;
            finish(run)?;
            Ok(true)
        }
    }
}

fn out_dir(c: &Common) -> PathBuf {
    c.out_dir.clone().unwrap_or_else(|| commands::default_out_dir(None))
}

fn start(c: &Common, sub: &str, cfg: &RunConfig) -> Result<Run> {
    Run::start(&out_dir(c), sub, &cfg.hash(), cfg.seed)
}

fn cached(c: &Common, cfg: &RunConfig, run: &mut Run) -> Result<std::sync::Arc<otc_mm::solver::ValueSurface>> {
    let hint = commands::solve_hint(c.config.as_deref(), &out_dir(c));
    commands::load_cached(cfg, run, SURFACE_CACHE, &hint)
}

fn finish(run: Run) -> Result<()> {
    let dir: PathBuf = run.dir.clone();
    let m = run.finish()?;
    println!(
        "manifest {} ({} artifacts in {}, {:.2} s)",
        &m.manifest_hash[..16],
        m.artifacts.len(),
        display(&dir),
        m.wall_clock_seconds
    );
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
