//! Experiment orchestration: TOML configs, seeded trials, CSV + JSON sidecar output.

use crate::base_matrix::{adjusted_rows, BaseMatrix, DesignSpec};
use crate::channels::Channel;
use crate::error::{invalid, Error, Result};
use crate::gamp::{sample_problem, Gamp, GampOptions, StopReason, DEFAULT_MAX_ITER, DEFAULT_REL_TOL};
use crate::potential::{GridSpec, Potential, PotentialCurve};
use crate::priors::PriorSpec;
use crate::se::{bayes_se_run, recovery_threshold, SeOptions, SeTrace};
use crate::seeds::{child_seed, Domain};
use crate::sensing::{Backend, SensingOperator};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Dense operators above this size run their trials one at a time.
const PARALLEL_TRIAL_BYTES: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Potential,
    Se,
    Run,
    Figure2,
    Figure3,
    Figure4,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Potential => "potential",
            Command::Se => "se",
            Command::Run => "run",
            Command::Figure2 => "figure2",
            Command::Figure3 => "figure3",
            Command::Figure4 => "figure4",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// When set, `se` also reports the smallest δ of the grid with final MSE below this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_mse: Option<f64>,
}

impl Default for SeSettings {
    fn default() -> Self {
        let d = SeOptions::default();
        SeSettings {
            tol: d.tol,
            max_iter: d.max_iter,
            threshold_mse: None,
        }
    }
}

impl SeSettings {
    pub fn options(&self) -> SeOptions {
        SeOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorSpec,
    pub channel: Channel,
    pub deltas: Vec<f64>,
    pub designs: Vec<DesignSpec>,
    #[serde(default)]
    pub backend: Backend,
    /// Signal dimension; exactly one of `n` and `block_size` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Column-block size n/C, so n scales with the design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub sign_flips: bool,
    /// Write per-iteration traces (run / se).
    #[serde(default)]
    pub trace: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// File stem for outputs; defaults to the command name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_stem: Option<String>,
    #[serde(default)]
    pub potential: GridSpec,
    #[serde(default)]
    pub se: SeSettings,
}

fn default_trials() -> usize {
    20
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}
fn default_seed() -> u64 {
    2026
}
fn default_true() -> bool {
    true
}
fn default_output_dir() -> String {
    "out".to_string()
}

fn delta_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let k = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=k)
        .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
        .collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults for a command (n = 10000, 20 trials).
    pub fn preset(cmd: Command) -> Self {
        let pr = ExperimentConfig {
            prior: PriorSpec::TwoPoint { alpha: 0.6 },
            channel: Channel::PhaseRetrieval,
            deltas: vec![0.6],
            designs: vec![DesignSpec::Iid],
            backend: Backend::Dense,
            n: Some(10_000),
            block_size: None,
            trials: default_trials(),
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
            seed: default_seed(),
            sign_flips: true,
            trace: false,
            output_dir: default_output_dir(),
            output_stem: None,
            potential: GridSpec::default(),
            se: SeSettings::default(),
        };
        let sc = DesignSpec::OmegaLambda { omega: 6, lambda: 40 };
        match cmd {
            Command::Potential | Command::Run => pr,
            Command::Se => ExperimentConfig {
                designs: vec![DesignSpec::Iid, sc],
                ..pr
            },
            Command::Figure2 => ExperimentConfig {
                deltas: vec![0.2, 0.27, 0.5, 0.6, 0.9],
                ..pr
            },
            Command::Figure3 => ExperimentConfig {
                deltas: delta_grid(0.3, 1.0, 0.05),
                designs: vec![DesignSpec::Iid, sc],
                ..pr
            },
            Command::Figure4 => ExperimentConfig {
                prior: PriorSpec::ThreePoint { alpha: 0.5 },
                channel: Channel::Relu,
                deltas: delta_grid(0.4, 1.2, 0.05),
                designs: vec![sc, DesignSpec::OmegaLambda { omega: 20, lambda: 200 }],
                backend: Backend::Dct,
                n: None,
                block_size: Some(250),
                ..pr
            },
        }
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.deltas.is_empty() {
            return bad("deltas must not be empty".into());
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return bad(format!("deltas must be positive, got {d}"));
        }
        if self.designs.is_empty() {
            return bad("designs must not be empty".into());
        }
        match (self.n, self.block_size) {
            (Some(_), Some(_)) => return bad("give either n or block_size, not both".into()),
            (None, None) => return bad("one of n or block_size is required".into()),
            (Some(0), _) | (_, Some(0)) => return bad("n and block_size must be positive".into()),
            _ => {}
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be nonnegative, got {}", self.rel_tol));
        }
        self.prior.build().map_err(|e| Error::Config(format!("prior: {e}")))?;
        self.channel
            .validate()
            .map_err(|e| Error::Config(format!("channel: {e}")))?;
        self.potential
            .validate()
            .map_err(|e| Error::Config(format!("potential: {e}")))?;
        for d in &self.designs {
            let base = d
                .build()
                .map_err(|e| Error::Config(format!("design {}: {e}", d.label())))?;
            self.signal_dim(&base)?;
        }
        Ok(())
    }

    /// n for a given base matrix; must be divisible by C.
    pub fn signal_dim(&self, base: &BaseMatrix) -> Result<usize> {
        let n = match (self.n, self.block_size) {
            (Some(n), _) => n,
            (None, Some(b)) => b * base.cols(),
            (None, None) => return Err(Error::Config("one of n or block_size is required".into())),
        };
        if n % base.cols() != 0 {
            return Err(Error::Config(format!(
                "n = {n} is not divisible by the number of column blocks C = {}",
                base.cols()
            )));
        }
        Ok(n)
    }

    pub fn gamp_options(&self) -> GampOptions {
        GampOptions {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
        }
    }

    pub fn stem(&self, cmd: Command) -> String {
        self.output_stem.clone().unwrap_or_else(|| cmd.name().to_string())
    }

    /// All (design, δ) combinations with their adjusted dimensions.
    pub fn layouts(&self) -> Result<Vec<Layout>> {
        let mut out = Vec::new();
        for d in &self.designs {
            let base = d.build()?;
            let n = self.signal_dim(&base)?;
            for &delta in &self.deltas {
                let (m, effective_delta) = adjusted_rows(delta, n, base.rows());
                out.push(Layout {
                    design: *d,
                    label: d.label(),
                    delta,
                    n,
                    m,
                    effective_delta,
                    rows: base.rows(),
                    cols: base.cols(),
                });
            }
        }
        Ok(out)
    }
}

/// Dimensions actually used for one (design, δ) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Layout {
    #[serde(skip)]
    pub design: DesignSpec,
    pub label: String,
    pub delta: f64,
    pub n: usize,
    pub m: usize,
    pub effective_delta: f64,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub trial: usize,
    pub operator: u64,
    pub signal: u64,
    pub noise: u64,
}

/// Seeds of trial `k`. They do not depend on the design or δ, so every grid
/// point sees the same random draws.
pub fn trial_seeds(master: u64, trial: usize) -> TrialSeeds {
    let t = child_seed(master, Domain::MonteCarlo, trial as u64);
    TrialSeeds {
        trial,
        operator: child_seed(t, Domain::Operator, 0),
        signal: child_seed(t, Domain::Signal, 0),
        noise: child_seed(t, Domain::Noise, 0),
    }
}

// ---------------------------------------------------------------------------
// Potential

#[derive(Clone, Debug, Serialize)]
pub struct PotentialRow {
    pub delta: f64,
    pub x: f64,
    #[serde(rename = "U")]
    pub u: f64,
    pub is_stationary: bool,
    pub is_global_min: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialSummaryRow {
    pub delta: f64,
    pub global_min_x: f64,
    pub largest_stationary_x: f64,
    pub global_min_at_edge: bool,
    /// All stationary points, ';'-separated.
    pub stationary_x: String,
}

pub fn potential_scan(cfg: &ExperimentConfig) -> Result<Vec<PotentialCurve>> {
    let prior = cfg.prior.build()?;
    cfg.deltas
        .iter()
        .map(|&d| Potential::new(&prior, cfg.channel, d)?.curve(&cfg.potential))
        .collect()
}

/// Potential curves over the δ grid (noiseless phase retrieval in the presets).
pub fn figure2_scan(cfg: &ExperimentConfig) -> Result<Vec<PotentialCurve>> {
    potential_scan(cfg)
}

pub fn potential_rows(curves: &[PotentialCurve]) -> (Vec<PotentialRow>, Vec<PotentialSummaryRow>) {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for c in curves {
        for (i, (&x, &u)) in c.grid_x.iter().zip(&c.grid_u).enumerate() {
            rows.push(PotentialRow {
                delta: c.delta,
                x,
                u,
                is_stationary: c.is_stationary(i),
                is_global_min: i == c.global_min_index,
            });
        }
        summary.push(PotentialSummaryRow {
            delta: c.delta,
            global_min_x: c.global_minimizer,
            largest_stationary_x: c.largest_stationary,
            global_min_at_edge: c.minimizer_at_left_edge(),
            stationary_x: c
                .stationary_points
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        });
    }
    (rows, summary)
}

// ---------------------------------------------------------------------------
// State evolution

#[derive(Clone, Debug)]
pub struct SeResult {
    pub layout: Layout,
    pub trace: SeTrace,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeRow {
    pub delta: f64,
    pub iter: usize,
    pub block: usize,
    pub tau_q: Option<f64>,
    pub tau_p: Option<f64>,
    /// Column-block MSE.
    pub mse: Option<f64>,
    pub design: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeSummaryRow {
    pub delta: f64,
    pub design: String,
    pub effective_delta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_mse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdRow {
    pub design: String,
    pub mse_threshold: f64,
    pub threshold_delta: Option<f64>,
}

/// SE at the effective δ of every (design, δ) pair.
pub fn se_scan(cfg: &ExperimentConfig) -> Result<Vec<SeResult>> {
    let prior = cfg.prior.build()?;
    let opts = cfg.se.options();
    cfg.layouts()?
        .into_par_iter()
        .map(|layout| {
            let base = layout.design.build()?;
            let trace = bayes_se_run(&base, &prior, cfg.channel, layout.effective_delta, opts)?;
            Ok(SeResult { layout, trace })
        })
        .collect()
}

pub fn se_rows(results: &[SeResult]) -> (Vec<SeRow>, Vec<SeSummaryRow>) {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for r in results {
        let l = &r.layout;
        for it in &r.trace.iterates {
            for b in 0..l.rows.max(l.cols) {
                rows.push(SeRow {
                    delta: l.delta,
                    iter: it.t,
                    block: b,
                    tau_q: it.tau_q.get(b).copied(),
                    tau_p: it.tau_p.get(b).copied(),
                    mse: it.block_mse.get(b).copied(),
                    design: l.label.clone(),
                });
            }
        }
        summary.push(SeSummaryRow {
            delta: l.delta,
            design: l.label.clone(),
            effective_delta: l.effective_delta,
            iterations: r.trace.iterations(),
            converged: r.trace.converged,
            final_mse: r.trace.final_mse(),
        });
    }
    (rows, summary)
}

/// Recovery threshold per design over the configured δ grid (nominal δ).
pub fn se_thresholds(cfg: &ExperimentConfig, mse_threshold: f64) -> Result<Vec<ThresholdRow>> {
    let prior = cfg.prior.build()?;
    cfg.designs
        .par_iter()
        .map(|d| {
            let base = d.build()?;
            let t = recovery_threshold(&base, &prior, cfg.channel, &cfg.deltas, mse_threshold, cfg.se.options())?;
            Ok(ThresholdRow {
                design: d.label(),
                mse_threshold,
                threshold_delta: t,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Monte-Carlo trials

#[derive(Clone, Debug, Serialize)]
pub struct TrialResult {
    pub delta: f64,
    pub trial: usize,
    pub iters: usize,
    pub final_mse: f64,
    pub design: String,
    pub effective_delta: f64,
    pub m: usize,
    pub n: usize,
    pub stop_reason: StopReason,
    pub clamped: bool,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub mse_trace: Vec<f64>,
    #[serde(skip)]
    pub tau_p_mean_trace: Vec<f64>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub delta: f64,
    pub trial: usize,
    pub iter: usize,
    pub mse: f64,
    pub tau_p_mean: f64,
    pub design: String,
}

fn dense_bytes(base: &BaseMatrix, m: usize, n: usize) -> usize {
    let nz = base.entries().iter().filter(|w| **w != 0.0).count();
    nz * (m / base.rows()) * (n / base.cols()) * 4
}

/// One SC-GAMP trial on a fresh operator and signal.
pub fn run_trial(cfg: &ExperimentConfig, layout: &Layout, base: &BaseMatrix, seeds: TrialSeeds) -> Result<TrialResult> {
    let prior = cfg.prior.build()?;
    let op = SensingOperator::sample(cfg.backend, base, layout.m, layout.n, seeds.operator, cfg.sign_flips)?;
    let (x, y) = sample_problem(&op, &prior, &cfg.channel, seeds.signal, seeds.noise)?;
    let res = Gamp::new(&op, &prior, cfg.channel, &y)?.run(Some(&x), cfg.gamp_options())?;
    let tau_p_mean_trace = res
        .tau_p_hat
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Ok(TrialResult {
        delta: layout.delta,
        trial: seeds.trial,
        iters: res.iterations,
        final_mse: res.final_mse().unwrap_or(f64::NAN),
        design: layout.label.clone(),
        effective_delta: layout.effective_delta,
        m: layout.m,
        n: layout.n,
        stop_reason: res.stop_reason,
        clamped: res.clamped,
        wall_time_secs: res.wall_time_secs,
        mse_trace: res.mse,
        tau_p_mean_trace,
        warnings: res.warnings,
    })
}

/// All trials of all (design, δ) pairs, sorted by (design, δ, trial).
pub fn run_trials(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<TrialResult>> {
    let mut out = Vec::new();
    for layout in cfg.layouts()? {
        let base = layout.design.build()?;
        let seeds: Vec<TrialSeeds> = (0..cfg.trials).map(|k| trial_seeds(cfg.seed, k)).collect();
        let one = |s: &TrialSeeds| run_trial(cfg, &layout, &base, *s);
        let parallel = cfg.backend == Backend::Dct || dense_bytes(&base, layout.m, layout.n) <= PARALLEL_TRIAL_BYTES;
        let results: Vec<TrialResult> = if parallel {
            seeds.par_iter().map(one).collect::<Result<_>>()?
        } else {
            seeds.iter().map(one).collect::<Result<_>>()?
        };
        let (mean, std) = mean_std(&results.iter().map(|r| r.final_mse).collect::<Vec<_>>());
        log(&format!(
            "{} delta={} (m={}, n={}): mean MSE {mean:.4} ± {std:.4} over {} trials",
            layout.label, layout.delta, layout.m, layout.n, cfg.trials
        ));
        out.extend(results);
    }
    Ok(out)
}

pub fn trace_rows(results: &[TrialResult]) -> Vec<TraceRow> {
    results
        .iter()
        .flat_map(|r| {
            r.mse_trace
                .iter()
                .zip(&r.tau_p_mean_trace)
                .enumerate()
                .map(|(t, (&mse, &tp))| TraceRow {
                    delta: r.delta,
                    trial: r.trial,
                    iter: t,
                    mse,
                    tau_p_mean: tp,
                    design: r.design.clone(),
                })
        })
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// MSE-versus-δ figures

#[derive(Clone, Debug, Serialize)]
pub struct FigureRow {
    pub delta: f64,
    pub design: String,
    pub mean_mse: f64,
    /// Sample standard deviation over trials (the ±1 std error bar).
    pub std_mse: f64,
    pub se_mse: f64,
    /// Potential global minimizer; empty when the channel has no potential.
    pub global_min_mse: Option<f64>,
    pub largest_stationary_mse: Option<f64>,
    pub global_min_at_edge: Option<bool>,
    pub effective_delta: f64,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
}

pub fn mse_vs_delta(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<FigureRow>> {
    let prior = cfg.prior.build()?;
    let curves: Vec<Option<PotentialCurve>> = cfg
        .deltas
        .iter()
        .map(|&d| match Potential::new(&prior, cfg.channel, d) {
            Ok(p) => p.curve(&cfg.potential).map(Some),
            Err(Error::UnsupportedChannel { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let se = se_scan(cfg)?;
    let trials = run_trials(cfg, log)?;
    let mut rows = Vec::new();
    for s in &se {
        let l = &s.layout;
        let mses: Vec<f64> = trials
            .iter()
            .filter(|t| t.design == l.label && t.delta == l.delta)
            .map(|t| t.final_mse)
            .collect();
        let (mean_mse, std_mse) = mean_std(&mses);
        let di = cfg
            .deltas
            .iter()
            .position(|d| *d == l.delta)
            .expect("delta from the grid");
        let curve = curves[di].as_ref();
        rows.push(FigureRow {
            delta: l.delta,
            design: l.label.clone(),
            mean_mse,
            std_mse,
            se_mse: s.trace.final_mse(),
            global_min_mse: curve.map(|c| c.global_minimizer),
            largest_stationary_mse: curve.map(|c| c.largest_stationary),
            global_min_at_edge: curve.map(|c| c.minimizer_at_left_edge()),
            effective_delta: l.effective_delta,
            m: l.m,
            n: l.n,
            trials: mses.len(),
        });
    }
    Ok(rows)
}

pub fn figure3_experiment(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<FigureRow>> {
    mse_vs_delta(cfg, log)
}

/// Same as figure 3; large couplings need the DCT backend.
pub fn figure4_experiment(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<FigureRow>> {
    if cfg.backend == Backend::Dense {
        if let Some(d) = cfg
            .designs
            .iter()
            .find(|d| matches!(d, DesignSpec::OmegaLambda { lambda, .. } if *lambda >= 200))
        {
            return Err(Error::Config(format!(
                "design {} requires backend = \"dct\"",
                d.label()
            )));
        }
    }
    mse_vs_delta(cfg, log)
}

// ---------------------------------------------------------------------------
// Emission

#[derive(Clone, Debug, Serialize)]
pub struct Sidecar {
    pub command: Command,
    pub crate_version: String,
    pub git_describe: String,
    /// The exact config as TOML; parsing it reproduces `config`.
    pub config_toml: String,
    pub config: ExperimentConfig,
    pub seed_derivation: String,
    pub trial_seeds: Vec<TrialSeeds>,
    pub layouts: Vec<Layout>,
    pub outputs: Vec<String>,
}

pub fn git_describe() -> String {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = if dir.exists() {
        dir.to_path_buf()
    } else {
        PathBuf::from(".")
    };
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(dir)
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn sidecar(cfg: &ExperimentConfig, cmd: Command, outputs: &[PathBuf]) -> Result<Sidecar> {
    let uses_trials = matches!(cmd, Command::Run | Command::Figure3 | Command::Figure4);
    Ok(Sidecar {
        command: cmd,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        git_describe: git_describe(),
        config_toml: cfg.to_toml()?,
        config: cfg.clone(),
        seed_derivation: "trial k: t = child_seed(seed, MonteCarlo, k); operator/signal/noise = \
                          child_seed(t, Operator|Signal|Noise, 0); shared by all designs and deltas"
            .to_string(),
        trial_seeds: if uses_trials {
            (0..cfg.trials).map(|k| trial_seeds(cfg.seed, k)).collect()
        } else {
            vec![]
        },
        layouts: if matches!(cmd, Command::Potential | Command::Figure2) {
            vec![]
        } else {
            cfg.layouts()?
        },
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    })
}

/// Run `cmd` and write its CSVs plus `<stem>.json`. Returns the written paths.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir)?;
    let stem = cfg.stem(cmd);
    let path = |suffix: &str| dir.join(format!("{stem}{suffix}.csv"));
    let mut written = Vec::new();
    match cmd {
        Command::Potential | Command::Figure2 => {
            let curves = potential_scan(cfg)?;
            for c in &curves {
                log(&format!(
                    "delta={}: global minimizer {} stationary {:?}",
                    c.delta, c.global_minimizer, c.stationary_points
                ));
            }
            let (rows, summary) = potential_rows(&curves);
            written.push(path(""));
            write_csv(&path(""), &rows)?;
            written.push(path("_summary"));
            write_csv(&path("_summary"), &summary)?;
        }
        Command::Se => {
            let results = se_scan(cfg)?;
            let (rows, summary) = se_rows(&results);
            for s in &summary {
                log(&format!(
                    "{} delta={}: SE MSE {:.6} after {} iterations",
                    s.design, s.delta, s.final_mse, s.iterations
                ));
            }
            written.push(path(""));
            write_csv(&path(""), &rows)?;
            written.push(path("_summary"));
            write_csv(&path("_summary"), &summary)?;
            if let Some(thr) = cfg.se.threshold_mse {
                let t = se_thresholds(cfg, thr)?;
                written.push(path("_thresholds"));
                write_csv(&path("_thresholds"), &t)?;
            }
        }
        Command::Run => {
            let results = run_trials(cfg, log)?;
            let mut seen = std::collections::BTreeSet::new();
            for w in results.iter().flat_map(|r| &r.warnings) {
                if seen.insert(w.clone()) {
                    log(&format!("warning: {w}"));
                }
            }
            written.push(path(""));
            write_csv(&path(""), &results)?;
            if cfg.trace {
                written.push(path("_trace"));
                write_csv(&path("_trace"), &trace_rows(&results))?;
            }
        }
        Command::Figure3 | Command::Figure4 => {
            let rows = if cmd == Command::Figure3 {
                figure3_experiment(cfg, log)?
            } else {
                figure4_experiment(cfg, log)?
            };
            written.push(path(""));
            write_csv(&path(""), &rows)?;
        }
    }
    let side = dir.join(format!("{stem}.json"));
    let meta = sidecar(cfg, cmd, &written)?;
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(&side, json)?;
    written.push(side);
    Ok(written)
}

/// Parse "start:stop:step" into an inclusive grid.
pub fn parse_delta_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad delta grid '{s}', expected start:stop:step")))?;
    match parts[..] {
        [a, b, h] if h > 0.0 && b >= a => Ok(delta_grid(a, b, h)),
        _ => invalid(format!("bad delta grid '{s}', expected start:stop:step with step > 0")),
    }
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("bad number '{s}' in {what}")))
}

/// `phase_retrieval`, `relu`, `linear:<σ²>` or `phase_retrieval_noisy:<σ²>`.
pub fn parse_channel(s: &str) -> Result<Channel> {
    let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
    let ch = match (name.replace('-', "_").as_str(), arg) {
        ("phase_retrieval" | "pr", None) => Channel::PhaseRetrieval,
        ("relu", None) => Channel::Relu,
        ("linear", Some(v)) => Channel::Linear {
            sigma2: parse_num(v, s)?,
        },
        ("phase_retrieval_noisy", Some(v)) => Channel::PhaseRetrievalNoisy {
            sigma2: parse_num(v, s)?,
        },
        _ => return invalid(format!("unknown channel '{s}'")),
    };
    ch.validate()?;
    Ok(ch)
}

/// `two_point:<α>` or `three_point:<α>`.
pub fn parse_prior(s: &str) -> Result<PriorSpec> {
    let spec = match s.split_once(':') {
        Some((name, v)) => match name.replace('-', "_").as_str() {
            "two_point" => PriorSpec::TwoPoint {
                alpha: parse_num(v, s)?,
            },
            "three_point" => PriorSpec::ThreePoint {
                alpha: parse_num(v, s)?,
            },
            _ => return invalid(format!("unknown prior '{s}'")),
        },
        None => {
            return invalid(format!(
                "unknown prior '{s}', expected two_point:<alpha> or three_point:<alpha>"
            ))
        }
    };
    spec.build()?;
    Ok(spec)
}

/// `iid` or `omega_lambda:<ω>,<Λ>`.
pub fn parse_design(s: &str) -> Result<DesignSpec> {
    let spec = match s.split_once(':') {
        None if s == "iid" => DesignSpec::Iid,
        Some((name, v)) if name.replace('-', "_") == "omega_lambda" => {
            let nums: Vec<usize> = v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("bad design '{s}'")))?;
            match nums[..] {
                [omega, lambda] => DesignSpec::OmegaLambda { omega, lambda },
                _ => return invalid(format!("bad design '{s}', expected omega_lambda:<omega>,<lambda>")),
            }
        }
        _ => return invalid(format!("unknown design '{s}'")),
    };
    spec.build()?;
    Ok(spec)
}

/// Parse "a:b" into an x range.
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    match s.split_once(':') {
        Some((a, b)) => Ok((parse_num(a, s)?, parse_num(b, s)?)),
        None => invalid(format!("bad range '{s}', expected a:b")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cmd in [
            Command::Potential,
            Command::Se,
            Command::Run,
            Command::Figure2,
            Command::Figure3,
            Command::Figure4,
        ] {
            let cfg = ExperimentConfig::preset(cmd);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::parse_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let mut text = ExperimentConfig::preset(Command::Run).to_toml().unwrap();
        text = text.replace("designs = [{ type = \"iid\" }]", "");
        text.push_str("\n[[designs]]\ntype = \"omega_lambda\"\nomega_ = 6\nlambda = 40\n");
        let err = ExperimentConfig::parse_str(&text).unwrap_err().to_string();
        assert!(err.contains("omega_"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn top_level_unknown_key_is_named() {
        let text = ExperimentConfig::preset(Command::Run).to_toml().unwrap();
        let err = ExperimentConfig::parse_str(&format!("trails = 3\n{text}"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("trails") && err.contains("line 1"), "{err}");
    }

    #[test]
    fn m_adjustment_recorded() {
        let cfg = ExperimentConfig {
            deltas: vec![0.6],
            designs: vec![DesignSpec::OmegaLambda { omega: 6, lambda: 40 }],
            n: Some(20_000),
            ..ExperimentConfig::preset(Command::Run)
        };
        let l = &cfg.layouts().unwrap()[0];
        assert_eq!(l.m, 12015);
        assert!((l.effective_delta - 0.60075).abs() < 1e-12);
    }

    #[test]
    fn n_must_divide_into_blocks() {
        let cfg = ExperimentConfig {
            designs: vec![DesignSpec::OmegaLambda { omega: 6, lambda: 40 }],
            n: Some(10_001),
            ..ExperimentConfig::preset(Command::Run)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn block_size_scales_with_design() {
        let cfg = ExperimentConfig::preset(Command::Figure4);
        let ls = cfg.layouts().unwrap();
        assert!(ls.iter().any(|l| l.n == 10_000));
        assert!(ls.iter().any(|l| l.n == 50_000));
    }

    #[test]
    fn rejects_nonpositive_delta_and_missing_size() {
        let base = ExperimentConfig::preset(Command::Run);
        let c = ExperimentConfig {
            deltas: vec![0.5, -0.1],
            ..base.clone()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { n: None, ..base };
        assert!(c.validate().is_err());
    }

    #[test]
    fn mean_std_single_trial_has_zero_spread() {
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trial_seeds_distinct_and_stable() {
        let a = trial_seeds(7, 0);
        let b = trial_seeds(7, 1);
        assert_eq!(a, trial_seeds(7, 0));
        assert_ne!(a.operator, b.operator);
        assert_ne!(a.operator, a.signal);
        assert_ne!(a.signal, a.noise);
    }

    #[test]
    fn override_parsers() {
        assert_eq!(parse_channel("relu").unwrap(), Channel::Relu);
        assert_eq!(parse_channel("linear:0.25").unwrap(), Channel::Linear { sigma2: 0.25 });
        assert!(parse_channel("linear").is_err());
        assert!(parse_channel("probit").is_err());
        assert_eq!(
            parse_prior("two_point:0.6").unwrap(),
            PriorSpec::TwoPoint { alpha: 0.6 }
        );
        assert!(parse_prior("two_point:1.5").is_err());
        assert_eq!(parse_design("iid").unwrap(), DesignSpec::Iid);
        assert_eq!(
            parse_design("omega-lambda:6,40").unwrap(),
            DesignSpec::OmegaLambda { omega: 6, lambda: 40 }
        );
        assert!(parse_design("omega_lambda:6").is_err());
        assert_eq!(parse_range("0.01:0.99").unwrap(), (0.01, 0.99));
    }

    #[test]
    fn delta_grid_parsing() {
        assert_eq!(parse_delta_grid("0.4:0.5:0.05").unwrap(), vec![0.4, 0.45, 0.5]);
        assert!(parse_delta_grid("0.4:0.5").is_err());
        assert!(parse_delta_grid("0.5:0.4:0.1").is_err());
    }

    #[test]
    fn trials_deterministic_and_thread_independent() {
        let cfg = ExperimentConfig {
            channel: Channel::Linear { sigma2: 0.01 },
            deltas: vec![0.8],
            designs: vec![DesignSpec::OmegaLambda { omega: 2, lambda: 4 }],
            n: Some(400),
            trials: 3,
            max_iter: 50,
            ..ExperimentConfig::preset(Command::Run)
        };
        let a = run_trials(&cfg, &|_| {}).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_trials(&cfg, &|_| {}).unwrap());
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trial, y.trial);
            assert_eq!(x.final_mse.to_bits(), y.final_mse.to_bits());
        }
    }
}
