//! State evolution: the Bayes block recursion, the generic Monte-Carlo block
//! recursion for pluggable denoisers, the coupled scalar recursion and the
//! uncoupled fixed point.

use crate::base_matrix::BaseMatrix;
use crate::channels::{expected_neg_gout_prime, Channel, JointPZ};
use crate::error::{invalid, Error, Result};
use crate::priors::DiscretePrior;
use crate::seeds::{stream, Domain};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// Perfect-recovery floor on τ and x.
pub const TAU_FLOOR: f64 = 1e-12;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SeOptions {
    fn default() -> Self {
        SeOptions {
            tol: 1e-9,
            max_iter: 2000,
        }
    }
}

/// One state-evolution iteration. Column-block vectors are empty at t = 0.
#[derive(Clone, Debug, Serialize)]
pub struct SeIterate {
    pub t: usize,
    pub tau_q: Vec<f64>,
    pub mu_q: Vec<f64>,
    pub alpha_q: Vec<f64>,
    pub tau_p: Vec<f64>,
    pub mu_p: Vec<f64>,
    pub alpha_p: Vec<f64>,
    pub lambda: Vec<Mat2>,
    /// Per column block, mmse(1/τ^q_c).
    pub block_mse: Vec<f64>,
    pub mse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeTrace {
    pub delta: f64,
    pub delta_in: f64,
    /// E{Z_r²} per row block.
    pub z_second_moment: Vec<f64>,
    pub iterates: Vec<SeIterate>,
    pub converged: bool,
    pub perfect_recovery: bool,
}

impl SeTrace {
    pub fn last(&self) -> &SeIterate {
        self.iterates.last().expect("trace has at least the initial iterate")
    }
    pub fn final_mse(&self) -> f64 {
        self.last().mse
    }
    /// Number of update iterations performed.
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    Ok(())
}

/// Bayes state evolution for a given design, prior, channel and δ.
#[derive(Clone, Debug)]
pub struct BayesSe<'a> {
    pub base: &'a BaseMatrix,
    pub prior: &'a DiscretePrior,
    pub channel: Channel,
    pub delta: f64,
    pub delta_in: f64,
    pub z_second_moment: Vec<f64>,
}

impl<'a> BayesSe<'a> {
    pub fn new(base: &'a BaseMatrix, prior: &'a DiscretePrior, channel: Channel, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        channel.validate()?;
        let delta_in = base.inner_sampling_ratio(delta);
        Ok(BayesSe {
            base,
            prior,
            channel,
            delta,
            delta_in,
            z_second_moment: base.row_block_variance_profile(prior.second_moment(), delta_in),
        })
    }

    /// τ^p_r(0) = (Var(X)/δ_in) Σ_c W_rc.
    pub fn init(&self) -> SeIterate {
        let r = self.base.rows();
        let tau_p: Vec<f64> = self
            .base
            .row_sums()
            .iter()
            .map(|s| self.prior.variance() / self.delta_in * s)
            .collect();
        let lambda = (0..r)
            .map(|k| {
                let a = self.z_second_moment[k] - tau_p[k];
                [[a, a], [a, self.z_second_moment[k]]]
            })
            .collect();
        SeIterate {
            t: 0,
            tau_q: vec![],
            mu_q: vec![],
            alpha_q: vec![],
            alpha_p: vec![0.0; r],
            mu_p: vec![1.0; r],
            tau_p,
            lambda,
            block_mse: vec![],
            mse: self.prior.variance(),
        }
    }

    /// One τ^p → τ^q → τ^p update.
    pub fn step(&self, prev: &SeIterate) -> Result<SeIterate> {
        let t = prev.t + 1;
        let e: Vec<f64> = prev
            .tau_p
            .iter()
            .zip(&self.z_second_moment)
            .enumerate()
            .map(|(r, (&tp, &z2))| {
                let joint = JointPZ::new(tp.min(z2), z2)?;
                expected_neg_gout_prime(&self.channel, joint).map_err(|err| Error::Degenerate {
                    iteration: t,
                    block: r,
                    what: err.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        let inv_tq = self.base.mul_transpose_vec(&e);
        let tau_q: Vec<f64> = inv_tq.iter().map(|v| (1.0 / v).max(TAU_FLOOR)).collect();
        let block_mse: Vec<f64> = tau_q.iter().map(|tq| self.prior.mmse(1.0 / tq)).collect();
        let tau_p: Vec<f64> = self
            .base
            .mul_vec(&block_mse)
            .iter()
            .zip(&self.z_second_moment)
            .map(|(v, &z2)| (v / self.delta_in).clamp(TAU_FLOOR, z2))
            .collect();
        for (c, v) in tau_q.iter().chain(&tau_p).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    iteration: t,
                    block: c,
                    what: "state-evolution variance".into(),
                });
            }
        }
        let lambda = tau_p
            .iter()
            .zip(&self.z_second_moment)
            .map(|(&tp, &z2)| [[z2 - tp, z2 - tp], [z2 - tp, z2]])
            .collect();
        let mse = block_mse.iter().sum::<f64>() / block_mse.len() as f64;
        Ok(SeIterate {
            t,
            mu_q: vec![1.0; tau_q.len()],
            alpha_q: tau_q.clone(),
            mu_p: vec![1.0; tau_p.len()],
            alpha_p: tau_p.clone(),
            tau_q,
            tau_p,
            lambda,
            block_mse,
            mse,
        })
    }

    /// Iterate until max_c |Δτ^q_c|/τ^q_c < tol or max_iter updates.
    pub fn run(&self, opts: SeOptions) -> Result<SeTrace> {
        let mut iterates = vec![self.init()];
        let mut converged = false;
        while iterates.len() <= opts.max_iter {
            let next = self.step(iterates.last().unwrap())?;
            let prev = iterates.last().unwrap();
            let done = !prev.tau_q.is_empty()
                && prev
                    .tau_q
                    .iter()
                    .zip(&next.tau_q)
                    .all(|(a, b)| (b - a).abs() / a < opts.tol);
            iterates.push(next);
            if done {
                converged = true;
                break;
            }
        }
        let perfect_recovery = iterates.last().unwrap().tau_p.iter().all(|&v| v <= TAU_FLOOR);
        Ok(SeTrace {
            delta: self.delta,
            delta_in: self.delta_in,
            z_second_moment: self.z_second_moment.clone(),
            iterates,
            converged,
            perfect_recovery,
        })
    }
}

/// Convenience wrapper returning the full trace.
pub fn bayes_se_run(
    base: &BaseMatrix,
    prior: &DiscretePrior,
    channel: Channel,
    delta: f64,
    opts: SeOptions,
) -> Result<SeTrace> {
    BayesSe::new(base, prior, channel, delta)?.run(opts)
}

/// Smallest δ in `deltas` (scanned in increasing order) whose SE final MSE
/// is below `mse_threshold`.
pub fn recovery_threshold(
    base: &BaseMatrix,
    prior: &DiscretePrior,
    channel: Channel,
    deltas: &[f64],
    mse_threshold: f64,
    opts: SeOptions,
) -> Result<Option<f64>> {
    let mut sorted = deltas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    for d in sorted {
        if bayes_se_run(base, prior, channel, d, opts)?.final_mse() < mse_threshold {
            return Ok(Some(d));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Coupled scalar recursion and the uncoupled fixed point.

/// υ at τ^p = x/δ_in with E{Z²} = E{X²}/δ_in.
fn upsilon_uniform(prior: &DiscretePrior, channel: &Channel, delta_in: f64, x: f64) -> Result<f64> {
    let z2 = prior.second_moment() / delta_in;
    let tp = (x / delta_in).clamp(TAU_FLOOR, z2);
    Ok(tp * expected_neg_gout_prime(channel, JointPZ::new(tp, z2)?)?)
}

/// g(x) = −(δ_in/x)·υ(x).
pub fn scalar_g(prior: &DiscretePrior, channel: &Channel, delta_in: f64, x: f64) -> Result<f64> {
    let x = x.max(TAU_FLOOR);
    Ok(-delta_in / x * upsilon_uniform(prior, channel, delta_in, x)?)
}

/// f(y) = mmse(−y).
pub fn scalar_f(prior: &DiscretePrior, y: f64) -> f64 {
    prior.mmse(-y)
}

/// One step of the coupled recursion with the uniform E{Z²} = E{X²}/δ_in.
pub fn coupled_scalar_step(
    base: &BaseMatrix,
    prior: &DiscretePrior,
    channel: &Channel,
    delta_in: f64,
    xs: &[f64],
) -> Result<Vec<f64>> {
    if xs.len() != base.rows() {
        return invalid(format!("expected {} entries, got {}", base.rows(), xs.len()));
    }
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| scalar_g(prior, channel, delta_in, x))
        .collect::<Result<_>>()?;
    let s = base.mul_transpose_vec(&ys);
    let m: Vec<f64> = s.iter().map(|&v| scalar_f(prior, v)).collect();
    Ok(base.mul_vec(&m).into_iter().map(|v| v.max(TAU_FLOOR)).collect())
}

/// Trajectory x(0), x(1), ..., x(iters) from x_r(0) = Var(X).
pub fn coupled_scalar_run(
    base: &BaseMatrix,
    prior: &DiscretePrior,
    channel: &Channel,
    delta: f64,
    iters: usize,
) -> Result<Vec<Vec<f64>>> {
    check_delta(delta)?;
    let delta_in = base.inner_sampling_ratio(delta);
    let mut out = vec![vec![prior.variance(); base.rows()]];
    for _ in 0..iters {
        let next = coupled_scalar_step(base, prior, channel, delta_in, out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Largest solution of x = f(g(x)) by iterating down from Var(X).
pub fn uncoupled_fixed_point(
    prior: &DiscretePrior,
    channel: &Channel,
    delta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    check_delta(delta)?;
    let mut x = prior.variance();
    for _ in 0..max_iter {
        let next = scalar_f(prior, scalar_g(prior, channel, delta, x)?).max(TAU_FLOOR);
        if (next - x).abs() <= tol * x.max(TAU_FLOOR) || next <= TAU_FLOOR {
            return Ok(if next <= TAU_FLOOR { 0.0 } else { next });
        }
        x = next;
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Generic Monte-Carlo state evolution.

/// Blockwise denoisers for the generic recursion. The current SE variances
/// are passed in so Bayes denoisers can be expressed.
pub trait Denoisers: Sync {
    /// (g_in(q), ∂_q g_in).
    fn g_in(&self, q: f64, c: usize, tau_q: f64) -> (f64, f64);
    /// (g_out(p, y), ∂_p g_out).
    fn g_out(&self, p: f64, y: f64, r: usize, tau_p: f64) -> (f64, f64);
}

/// Posterior-mean input and output denoisers.
pub struct BayesDenoisers<'a> {
    pub prior: &'a DiscretePrior,
    pub channel: Channel,
}

impl Denoisers for BayesDenoisers<'_> {
    fn g_in(&self, q: f64, _c: usize, tau_q: f64) -> (f64, f64) {
        let (m, v) = self.prior.posterior(q, tau_q);
        (m, v / tau_q)
    }
    fn g_out(&self, p: f64, y: f64, _r: usize, tau_p: f64) -> (f64, f64) {
        self.channel.gout(p, y, tau_p)
    }
}

/// g_in(q) = q with the channel's Bayes output denoiser.
pub struct IdentityInput {
    pub channel: Channel,
}

impl Denoisers for IdentityInput {
    fn g_in(&self, q: f64, _c: usize, _tau_q: f64) -> (f64, f64) {
        (q, 1.0)
    }
    fn g_out(&self, p: f64, y: f64, _r: usize, tau_p: f64) -> (f64, f64) {
        self.channel.gout(p, y, tau_p)
    }
}

pub const DEFAULT_BATCHES: usize = 20;

#[derive(Clone, Debug)]
pub struct GenericSeConfig {
    /// Ξ_c per column block.
    pub xi: Vec<Mat2>,
    /// Total Monte-Carlo samples per block per iteration, split into `batches`.
    pub samples: usize,
    pub batches: usize,
    pub seed: u64,
}

impl GenericSeConfig {
    /// Ξ_c for the start x(0) = E{X}·1.
    pub fn prior_mean_start(prior: &DiscretePrior, cols: usize, samples: usize, seed: u64) -> Self {
        let m2 = prior.mean() * prior.mean();
        GenericSeConfig {
            xi: vec![[[m2, m2], [m2, prior.second_moment()]]; cols],
            samples,
            batches: DEFAULT_BATCHES,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GenericIterate {
    pub t: usize,
    pub tau_q: Vec<f64>,
    pub tau_q_se: Vec<f64>,
    pub mu_q: Vec<f64>,
    pub mu_q_se: Vec<f64>,
    pub alpha_q: Vec<f64>,
    /// Λ_r(t), τ^p_r(t), μ^p_r(t) and α^p_r(t).
    pub lambda: Vec<Mat2>,
    pub tau_p: Vec<f64>,
    pub mu_p: Vec<f64>,
    pub mu_p_se: Vec<f64>,
    pub alpha_p: Vec<f64>,
    /// E(g_in(Q_c) − X)² per column block.
    pub block_mse: Vec<f64>,
}

impl From<&SeIterate> for GenericIterate {
    /// A Bayes-SE state as a starting point for one generic step.
    fn from(s: &SeIterate) -> Self {
        GenericIterate {
            t: s.t,
            tau_q: s.tau_q.clone(),
            tau_q_se: vec![0.0; s.tau_q.len()],
            mu_q: s.mu_q.clone(),
            mu_q_se: vec![0.0; s.mu_q.len()],
            alpha_q: s.alpha_q.clone(),
            lambda: s.lambda.clone(),
            tau_p: s.tau_p.clone(),
            mu_p: s.mu_p.clone(),
            mu_p_se: vec![0.0; s.mu_p.len()],
            alpha_p: s.alpha_p.clone(),
            block_mse: s.block_mse.clone(),
        }
    }
}

pub struct GenericSe<'a, D: Denoisers> {
    pub base: &'a BaseMatrix,
    pub prior: &'a DiscretePrior,
    pub channel: Channel,
    pub denoisers: D,
    pub delta_in: f64,
    pub z_second_moment: Vec<f64>,
    pub config: GenericSeConfig,
}

/// Average per-block means over batches, optionally leaving one out.
fn pool<const K: usize>(batches: &[Vec<[f64; K]>], skip: Option<usize>) -> Vec<[f64; K]> {
    let used: Vec<&Vec<[f64; K]>> = batches
        .iter()
        .enumerate()
        .filter(|(b, _)| Some(*b) != skip)
        .map(|(_, v)| v)
        .collect();
    let n = used.len() as f64;
    (0..used[0].len())
        .map(|i| {
            let mut acc = [0.0; K];
            for v in &used {
                for k in 0..K {
                    acc[k] += v[i][k] / n;
                }
            }
            acc
        })
        .collect()
}

fn conditional(l: &Mat2) -> (f64, f64) {
    // (μ^p, τ^p) from Λ = Cov(P, Z)
    if l[0][0] <= 0.0 {
        (0.0, l[1][1])
    } else {
        let mu = l[0][1] / l[0][0];
        (mu, (l[1][1] - l[0][1] * l[0][1] / l[0][0]).max(TAU_FLOOR))
    }
}

impl<'a, D: Denoisers> GenericSe<'a, D> {
    pub fn new(
        base: &'a BaseMatrix,
        prior: &'a DiscretePrior,
        channel: Channel,
        denoisers: D,
        delta: f64,
        config: GenericSeConfig,
    ) -> Result<Self> {
        check_delta(delta)?;
        channel.validate()?;
        if config.xi.len() != base.cols() {
            return invalid(format!("need {} Xi matrices, got {}", base.cols(), config.xi.len()));
        }
        if config.batches < 2 || config.samples < 2 * config.batches {
            return invalid("need at least two batches of at least two Monte-Carlo samples");
        }
        for (c, x) in config.xi.iter().enumerate() {
            let det = x[0][0] * x[1][1] - x[0][1] * x[1][0];
            if x[0][1] != x[1][0] || x[0][0] < 0.0 || x[1][1] < 0.0 || det < -1e-12 {
                return invalid(format!(
                    "Xi for column block {} is not symmetric nonnegative definite",
                    c + 1
                ));
            }
            if (x[1][1] - prior.second_moment()).abs() > 1e-12 {
                return invalid(format!("Xi[1][1] for column block {} must equal E[X^2]", c + 1));
            }
        }
        let delta_in = base.inner_sampling_ratio(delta);
        Ok(GenericSe {
            base,
            prior,
            channel,
            denoisers,
            delta_in,
            z_second_moment: base.row_block_variance_profile(prior.second_moment(), delta_in),
            config,
        })
    }

    /// Λ_r(0) = (1/δ_in) Σ_c W_rc Ξ_c, α^p(0) = 0.
    pub fn init(&self) -> GenericIterate {
        let (rr, cc) = (self.base.rows(), self.base.cols());
        let lambda: Vec<Mat2> = (0..rr)
            .map(|r| {
                let mut l = [[0.0; 2]; 2];
                for c in 0..cc {
                    let w = self.base.get(r, c) / self.delta_in;
                    for i in 0..2 {
                        for j in 0..2 {
                            l[i][j] += w * self.config.xi[c][i][j];
                        }
                    }
                }
                l
            })
            .collect();
        let (mu_p, tau_p): (Vec<f64>, Vec<f64>) = lambda.iter().map(conditional).unzip();
        GenericIterate {
            t: 0,
            tau_q: vec![],
            tau_q_se: vec![],
            mu_q: vec![],
            mu_q_se: vec![],
            alpha_q: vec![],
            mu_p_se: vec![0.0; rr],
            alpha_p: vec![0.0; rr],
            lambda,
            tau_p,
            mu_p,
            block_mse: vec![],
        }
    }

    fn tag(t: usize, side: u64, b: usize, blk: usize) -> u64 {
        ((2 * t as u64 + side) << 32) | ((b as u64) << 16) | blk as u64
    }

    /// Output side of batch `b`: per row block, sample means of g², g′ and
    /// the Stein term g·(Z − μ^p P)/τ^p.
    fn output_means(&self, prev: &GenericIterate, t: usize, b: usize, ns: usize) -> Vec<[f64; 3]> {
        (0..self.base.rows())
            .map(|r| {
                let (mu, tp) = (prev.mu_p[r], prev.tau_p[r]);
                let sp = prev.lambda[r][0][0].max(0.0).sqrt();
                let st = tp.sqrt();
                let mut rng = stream(self.config.seed, Domain::MonteCarlo, Self::tag(t, 0, b, r));
                let mut acc = [0.0; 3];
                for _ in 0..ns {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let bb: f64 = StandardNormal.sample(&mut rng);
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let p = sp * a;
                    let z = mu * p + st * bb;
                    let (g, gp) = self.denoisers.g_out(p, self.channel.output(z, e), r, tp);
                    acc[0] += g * g;
                    acc[1] += gp;
                    acc[2] += g * (z - mu * p) / tp;
                }
                acc.map(|v| v / ns as f64)
            })
            .collect()
    }

    /// (τ^q, μ^q, α^q) per column block from output-side means.
    fn output_state(&self, t: usize, m: &[[f64; 3]]) -> Result<[Vec<f64>; 3]> {
        let cc = self.base.cols();
        let mut tau_q = vec![0.0; cc];
        let mut mu_q = vec![0.0; cc];
        let mut alpha_q = vec![0.0; cc];
        for c in 0..cc {
            let (mut sq, mut d, mut dz) = (0.0, 0.0, 0.0);
            for (r, mr) in m.iter().enumerate() {
                let w = self.base.get(r, c);
                sq += w * mr[0];
                d += w * mr[1];
                dz += w * mr[2];
            }
            if !(d.abs() > 1e-300) || !d.is_finite() {
                return Err(Error::Degenerate {
                    iteration: t,
                    block: c,
                    what: format!("sum of expected output-denoiser derivatives is {d}"),
                });
            }
            tau_q[c] = sq / (d * d);
            mu_q[c] = dz / -d;
            alpha_q[c] = -1.0 / d;
        }
        Ok([tau_q, mu_q, alpha_q])
    }

    /// Input side of batch `b` with Q_c = μ^q_c X + √τ^q_c G: means of
    /// g_in², X·g_in, g_in′ and (g_in − X)².
    fn input_means(&self, t: usize, b: usize, ns: usize, tau_q: &[f64], mu_q: &[f64]) -> Vec<[f64; 4]> {
        (0..self.base.cols())
            .map(|c| {
                let mut rng = stream(self.config.seed, Domain::MonteCarlo, Self::tag(t, 1, b, c));
                let sq = tau_q[c].max(0.0).sqrt();
                let mut acc = [0.0; 4];
                for _ in 0..ns {
                    let x = self.prior.sample(&mut rng);
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let q = mu_q[c] * x + sq * g;
                    let (v, dv) = self.denoisers.g_in(q, c, tau_q[c].max(TAU_FLOOR));
                    acc[0] += v * v;
                    acc[1] += x * v;
                    acc[2] += dv;
                    acc[3] += (v - x) * (v - x);
                }
                acc.map(|v| v / ns as f64)
            })
            .collect()
    }

    /// (Λ, μ^p, τ^p, α^p) per row block from input-side means.
    fn input_state(&self, m: &[[f64; 4]], alpha_q: &[f64]) -> (Vec<Mat2>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let rr = self.base.rows();
        let mut lambda = vec![[[0.0; 2]; 2]; rr];
        let mut mu_p = vec![0.0; rr];
        let mut tau_p = vec![0.0; rr];
        let mut alpha_p = vec![0.0; rr];
        for r in 0..rr {
            let (mut l11, mut l12, mut ap) = (0.0, 0.0, 0.0);
            for (c, mc) in m.iter().enumerate() {
                let w = self.base.get(r, c);
                l11 += w * mc[0];
                l12 += w * mc[1];
                ap += w * alpha_q[c] * mc[2];
            }
            l11 /= self.delta_in;
            l12 /= self.delta_in;
            lambda[r] = [[l11, l12], [l12, self.z_second_moment[r]]];
            (mu_p[r], tau_p[r]) = conditional(&lambda[r]);
            alpha_p[r] = ap / self.delta_in;
        }
        (lambda, mu_p, tau_p, alpha_p)
    }

    /// One state-evolution update. Estimates pool all samples. Standard
    /// errors are delete-one-batch jackknife estimates; each replicate
    /// recomputes the input side from its own output-side state, so output
    /// noise carried into μ^p is included. They are conditional on `prev`:
    /// error already present in `prev` is not counted.
    pub fn step(&self, prev: &GenericIterate) -> Result<GenericIterate> {
        let t = prev.t + 1;
        let nb = self.config.batches;
        let ns = self.config.samples / nb;
        let outs: Vec<Vec<[f64; 3]>> = (0..nb)
            .into_par_iter()
            .map(|b| self.output_means(prev, t, b, ns))
            .collect();
        let [tau_q, mu_q, alpha_q] = self.output_state(t, &pool(&outs, None))?;
        let ins: Vec<Vec<[f64; 4]>> = (0..nb)
            .into_par_iter()
            .map(|b| self.input_means(t, b, ns, &tau_q, &mu_q))
            .collect();
        let in_pooled = pool(&ins, None);
        let (lambda, mu_p, tau_p, alpha_p) = self.input_state(&in_pooled, &alpha_q);
        for v in tau_q.iter().chain(&tau_p) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    iteration: t,
                    block: 0,
                    what: "generic state-evolution variance".into(),
                });
            }
        }
        // Jackknife replicates: (τ^q, μ^q, μ^p) without batch l.
        let reps: Vec<[Vec<f64>; 3]> = (0..nb)
            .into_par_iter()
            .map(|l| {
                let [tq, mq, aq] = self.output_state(t, &pool(&outs, Some(l)))?;
                let ins_l: Vec<Vec<[f64; 4]>> = (0..nb)
                    .map(|b| {
                        if b == l {
                            vec![]
                        } else {
                            self.input_means(t, b, ns, &tq, &mq)
                        }
                    })
                    .collect();
                let (_, mp, _, _) = self.input_state(&pool(&ins_l, Some(l)), &aq);
                Ok([tq, mq, mp])
            })
            .collect::<Result<_>>()?;
        let jk = |k: usize| -> Vec<f64> {
            let n = nb as f64;
            (0..reps[0][k].len())
                .map(|i| {
                    let m = reps.iter().map(|r| r[k][i]).sum::<f64>() / n;
                    ((n - 1.0) / n * reps.iter().map(|r| (r[k][i] - m).powi(2)).sum::<f64>()).sqrt()
                })
                .collect()
        };
        Ok(GenericIterate {
            t,
            tau_q_se: jk(0),
            mu_q_se: jk(1),
            mu_p_se: jk(2),
            tau_q,
            mu_q,
            alpha_q,
            lambda,
            tau_p,
            mu_p,
            alpha_p,
            block_mse: in_pooled.iter().map(|m| m[3]).collect(),
        })
    }

    pub fn run(&self, iters: usize) -> Result<Vec<GenericIterate>> {
        let mut out = vec![self.init()];
        for _ in 0..iters {
            let next = self.step(out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }
}
