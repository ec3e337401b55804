use clap::{Args, Parser, Subcommand};
use scglm_core::harness::{
    execute, parse_channel, parse_delta_grid, parse_design, parse_prior, parse_range, Command, ExperimentConfig,
};
use scglm_core::sensing::Backend;
use scglm_core::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "scglm", version, about = "Spatially coupled GAMP experiments for GLMs")]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Potential U(x; δ) over a grid with stationary points.
    Potential(Overrides),
    /// Block-wise state evolution.
    Se(Overrides),
    /// Monte-Carlo SC-GAMP trials.
    Run(Overrides),
    /// Potential landscapes for phase retrieval.
    Figure2(Overrides),
    /// Empirical and SE MSE versus δ, phase retrieval.
    Figure3(Overrides),
    /// Empirical and SE MSE versus δ, ReLU.
    Figure4(Overrides),
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML config; the desk preset of the command is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
    /// iid or omega_lambda:<omega>,<lambda>; repeatable.
    #[arg(long)]
    design: Vec<String>,
    #[arg(long, value_parser = ["dense", "dct"])]
    backend: Option<String>,
    /// phase_retrieval, relu, linear:<sigma2>, phase_retrieval_noisy:<sigma2>.
    #[arg(long)]
    channel: Option<String>,
    /// two_point:<alpha> or three_point:<alpha>.
    #[arg(long)]
    prior: Option<String>,
    /// Repeatable.
    #[arg(long, allow_negative_numbers = true)]
    delta: Vec<f64>,
    /// start:stop:step (inclusive).
    #[arg(long, conflicts_with = "delta")]
    delta_grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, conflicts_with = "n")]
    block_size: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// SE convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// a:b
    #[arg(long)]
    x_range: Option<String>,
    /// Recovery threshold MSE for `se`.
    #[arg(long)]
    threshold_mse: Option<f64>,
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    no_sign_flips: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    stem: Option<String>,
}

fn build_config(cmd: Command, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::preset(cmd),
    };
    if !o.design.is_empty() {
        cfg.designs = o.design.iter().map(|s| parse_design(s)).collect::<Result<_>>()?;
    }
    if let Some(b) = &o.backend {
        cfg.backend = if b == "dct" { Backend::Dct } else { Backend::Dense };
    }
    if let Some(c) = &o.channel {
        cfg.channel = parse_channel(c)?;
    }
    if let Some(p) = &o.prior {
        cfg.prior = parse_prior(p)?;
    }
    if !o.delta.is_empty() {
        cfg.deltas = o.delta.clone();
    }
    if let Some(g) = &o.delta_grid {
        cfg.deltas = parse_delta_grid(g)?;
    }
    if let Some(n) = o.n {
        cfg.n = Some(n);
        cfg.block_size = None;
    }
    if let Some(b) = o.block_size {
        cfg.block_size = Some(b);
        cfg.n = None;
    }
    if let Some(t) = o.trials {
        cfg.trials = t;
    }
    if let Some(t) = o.max_iter {
        cfg.max_iter = t;
        cfg.se.max_iter = t.max(cfg.se.max_iter);
    }
    if let Some(t) = o.rel_tol {
        cfg.rel_tol = t;
    }
    if let Some(t) = o.tol {
        cfg.se.tol = t;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(p) = o.grid_points {
        cfg.potential.points = p;
    }
    if let Some(r) = &o.x_range {
        let (a, b) = parse_range(r)?;
        cfg.potential.x_min = a;
        cfg.potential.x_max = b;
        cfg.potential.lower_limit = cfg.potential.lower_limit.min(a);
    }
    if let Some(t) = o.threshold_mse {
        cfg.se.threshold_mse = Some(t);
    }
    if o.trace {
        cfg.trace = true;
    }
    if o.no_sign_flips {
        cfg.sign_flips = false;
    }
    if let Some(d) = &o.out {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = &o.stem {
        cfg.output_stem = Some(s.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (cmd, o) = match &cli.cmd {
        Sub::Potential(o) => (Command::Potential, o),
        Sub::Se(o) => (Command::Se, o),
        Sub::Run(o) => (Command::Run, o),
        Sub::Figure2(o) => (Command::Figure2, o),
        Sub::Figure3(o) => (Command::Figure3, o),
        Sub::Figure4(o) => (Command::Figure4, o),
    };
    let cfg = build_config(cmd, o)?;
    if o.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let written = execute(cmd, &cfg, &|msg| eprintln!("{msg}"))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scglm: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
