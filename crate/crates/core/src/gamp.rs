//! Bayes SC-GAMP with runtime estimates of the state-evolution variances.

use crate::channels::Channel;
use crate::error::{invalid, Error, Result};
use crate::priors::DiscretePrior;
use crate::seeds::{stream, Domain};
use crate::sensing::SensingOperator;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const TAU_HAT_FLOOR: f64 = 1e-12;
/// τ̂^q used when the estimated information Σ_r W_rc mean(−g_out*′) is not
/// positive; the input denoiser then returns (nearly) the prior mean.
pub const TAU_Q_HAT_CEIL: f64 = 1e12;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GampState {
    pub t: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub xhat: Vec<f64>,
    pub alpha_q: Vec<f64>,
    pub alpha_p: Vec<f64>,
    pub tau_q_hat: Vec<f64>,
    pub tau_p_hat: Vec<f64>,
    /// Set when an estimate was nonpositive and clamped.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GampOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for GampOptions {
    fn default() -> Self {
        GampOptions {
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    /// MSE(t) = ‖x − x̂(t)‖²/n for t = 0..=iterations; empty without ground truth.
    pub mse: Vec<f64>,
    /// τ̂^p(t) per iteration, t = 0..=iterations.
    pub tau_p_hat: Vec<Vec<f64>>,
    pub tau_q_hat: Vec<f64>,
    /// Final per-column-block MSE against the ground truth.
    pub block_mse: Vec<f64>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub wall_time_secs: f64,
    pub clamped: bool,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub xhat: Vec<f64>,
}

impl RunResult {
    pub fn final_mse(&self) -> Option<f64> {
        self.mse.last().copied()
    }
}

pub struct Gamp<'a> {
    pub op: &'a SensingOperator,
    pub prior: &'a DiscretePrior,
    pub channel: Channel,
    pub y: &'a [f64],
}

fn guard(v: &[f64], block_size: usize, t: usize, what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            iteration: t,
            block: i / block_size,
            what: format!("{what}[{i}] = {}", v[i]),
        }),
    }
}

impl<'a> Gamp<'a> {
    pub fn new(op: &'a SensingOperator, prior: &'a DiscretePrior, channel: Channel, y: &'a [f64]) -> Result<Self> {
        channel.validate()?;
        if y.len() != op.m() {
            return invalid(format!("y has length {}, operator has m = {}", y.len(), op.m()));
        }
        Ok(Gamp { op, prior, channel, y })
    }

    fn delta_in(&self) -> f64 {
        self.op.partition().delta_in()
    }

    /// Warnings about the start; a zero prior mean gives p(0) = 0.
    pub fn start_warnings(&self) -> Vec<String> {
        if self.prior.mean().abs() < 1e-12 {
            vec![
                "prior has zero mean: x(0) = 0 and p(0) = 0, a fixed point of the iteration \
                 for sign-symmetric channels; recovery needs a nonzero prior mean or a channel \
                 whose output is not even in z"
                    .into(),
            ]
        } else {
            vec![]
        }
    }

    /// x(0) = E{X}·1, p(0) = A x(0), τ̂^p_r(0) = (Var(X)/δ_in) Σ_c W_rc.
    pub fn initialize(&self) -> Result<GampState> {
        let n = self.op.n();
        let xhat = vec![self.prior.mean(); n];
        let p = self.op.apply(&xhat)?;
        let base = self.op.base();
        let tau_p_hat: Vec<f64> = base
            .row_sums()
            .iter()
            .map(|s| (self.prior.variance() / self.delta_in() * s).max(TAU_HAT_FLOOR))
            .collect();
        Ok(GampState {
            t: 0,
            q: vec![0.0; n],
            p,
            xhat,
            alpha_q: vec![0.0; base.cols()],
            alpha_p: vec![0.0; base.rows()],
            tau_q_hat: vec![0.0; base.cols()],
            tau_p_hat,
            clamped: false,
        })
    }

    /// ḡ_out(p, y) rowwise with its derivative.
    fn output_denoise(&self, p: &[f64], tau_p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let part = self.op.partition();
        let mut s = vec![0.0; p.len()];
        let mut d = vec![0.0; p.len()];
        for (r, &tau) in tau_p.iter().enumerate() {
            for i in part.row_range(r) {
                let (g, gp) = self.channel.gout(p[i], self.y[i], tau);
                s[i] = g;
                d[i] = gp;
            }
        }
        (s, d)
    }

    /// τ̂^q_c = [Σ_r W_rc mean_{i∈I_r}(−g_out*′_i)]⁻¹ from the output derivatives.
    /// A nonpositive sum (possible for phase retrieval, whose −g_out*′ has a
    /// heavy negative tail) is flagged and mapped to `TAU_Q_HAT_CEIL`.
    pub fn estimate_tau_q(&self, gout_prime: &[f64]) -> (Vec<f64>, bool) {
        let part = self.op.partition();
        let base = self.op.base();
        let means: Vec<f64> = (0..base.rows())
            .map(|r| {
                let rg = part.row_range(r);
                let len = rg.len() as f64;
                -gout_prime[rg].iter().sum::<f64>() / len
            })
            .collect();
        let mut clamped = false;
        let tau = (0..base.cols())
            .map(|c| {
                let s: f64 = (0..base.rows()).map(|r| base.get(r, c) * means[r]).sum();
                if !(s > 0.0) {
                    clamped = true;
                    return TAU_Q_HAT_CEIL;
                }
                (1.0 / s).clamp(TAU_HAT_FLOOR, TAU_Q_HAT_CEIL)
            })
            .collect();
        (tau, clamped)
    }

    /// τ̂^p_r = (1/δ_in) Σ_c W_rc τ̂^q_c mean_{j∈J_c} g_in*′(q_j), given the
    /// per-entry posterior variances τ̂^q_c·g_in*′.
    pub fn estimate_tau_p(&self, posterior_var: &[f64]) -> (Vec<f64>, bool) {
        let part = self.op.partition();
        let base = self.op.base();
        let means: Vec<f64> = (0..base.cols())
            .map(|c| {
                let rg = part.col_range(c);
                let len = rg.len() as f64;
                posterior_var[rg].iter().sum::<f64>() / len
            })
            .collect();
        let mut clamped = false;
        let tau = (0..base.rows())
            .map(|r| {
                let s: f64 = (0..base.cols()).map(|c| base.get(r, c) * means[c]).sum();
                let v = s / self.delta_in();
                if v > TAU_HAT_FLOOR {
                    v
                } else {
                    clamped |= !(v >= 0.0);
                    TAU_HAT_FLOOR
                }
            })
            .collect();
        (tau, clamped)
    }

    /// One iteration t → t+1.
    pub fn step(&self, st: &GampState) -> Result<GampState> {
        let t = st.t + 1;
        let part = self.op.partition();
        let (mr, nc) = (part.row_block_size(), part.col_block_size());
        let (s, d) = self.output_denoise(&st.p, &st.tau_p_hat);
        guard(&s, mr, t, "g_out")?;
        guard(&d, mr, t, "g_out'")?;
        let (tau_q_hat, c1) = self.estimate_tau_q(&d);
        let at_s = self.op.apply_transpose(&s)?;
        let mut q = vec![0.0; st.q.len()];
        for (c, &tq) in tau_q_hat.iter().enumerate() {
            for j in part.col_range(c) {
                q[j] = st.xhat[j] + tq * at_s[j];
            }
        }
        guard(&q, nc, t, "q")?;
        let mut xhat = vec![0.0; q.len()];
        let mut pv = vec![0.0; q.len()];
        for (c, &tq) in tau_q_hat.iter().enumerate() {
            for j in part.col_range(c) {
                let (m, v) = self.prior.posterior(q[j], tq);
                xhat[j] = m;
                pv[j] = v;
            }
        }
        guard(&xhat, nc, t, "xhat")?;
        let (tau_p_hat, c2) = self.estimate_tau_p(&pv);
        let mut p = self.op.apply(&xhat)?;
        for (r, &tp) in tau_p_hat.iter().enumerate() {
            for i in part.row_range(r) {
                p[i] -= tp * s[i];
            }
        }
        guard(&p, mr, t, "p")?;
        Ok(GampState {
            t,
            q,
            p,
            xhat,
            alpha_q: tau_q_hat.clone(),
            alpha_p: tau_p_hat.clone(),
            tau_q_hat,
            tau_p_hat,
            clamped: st.clamped || c1 || c2,
        })
    }

    /// Iterate until max_r |τ̂^p_r(t) − τ̂^p_r(t−1)|/τ̂^p_r(t−1) < rel_tol or max_iter.
    pub fn run(&self, truth: Option<&[f64]>, opts: GampOptions) -> Result<RunResult> {
        if let Some(x) = truth {
            if x.len() != self.op.n() {
                return invalid(format!("ground truth has length {}, expected {}", x.len(), self.op.n()));
            }
        }
        if opts.max_iter == 0 {
            return invalid("max_iter must be at least 1");
        }
        if !(opts.rel_tol >= 0.0) {
            return invalid(format!("rel_tol must be nonnegative, got {}", opts.rel_tol));
        }
        let start = Instant::now();
        let n = self.op.n() as f64;
        let mse_of = |xh: &[f64]| -> Option<f64> {
            truth.map(|x| x.iter().zip(xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
        };
        let mut st = self.initialize()?;
        let mut mse: Vec<f64> = mse_of(&st.xhat).into_iter().collect();
        let mut taus = vec![st.tau_p_hat.clone()];
        let mut stop = StopReason::MaxIter;
        for _ in 0..opts.max_iter {
            let next = self.step(&st)?;
            let change = next
                .tau_p_hat
                .iter()
                .zip(&st.tau_p_hat)
                .map(|(a, b)| (a - b).abs() / b)
                .fold(0.0, f64::max);
            st = next;
            mse.extend(mse_of(&st.xhat));
            taus.push(st.tau_p_hat.clone());
            if change < opts.rel_tol {
                stop = StopReason::Converged;
                break;
            }
        }
        let part = self.op.partition();
        let block_mse = match truth {
            Some(x) => (0..part.cols)
                .map(|c| {
                    let rg = part.col_range(c);
                    let len = rg.len() as f64;
                    rg.map(|j| (x[j] - st.xhat[j]).powi(2)).sum::<f64>() / len
                })
                .collect(),
            None => vec![],
        };
        Ok(RunResult {
            mse,
            tau_p_hat: taus,
            tau_q_hat: st.tau_q_hat.clone(),
            block_mse,
            stop_reason: stop,
            iterations: st.t,
            wall_time_secs: start.elapsed().as_secs_f64(),
            clamped: st.clamped,
            warnings: self.start_warnings(),
            xhat: st.xhat,
        })
    }
}

/// Ground truth x ~ P_X i.i.d. and y = φ(Ax, ε).
pub fn sample_problem(
    op: &SensingOperator,
    prior: &DiscretePrior,
    channel: &Channel,
    signal_seed: u64,
    noise_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rs = stream(signal_seed, Domain::Signal, 0);
    let x: Vec<f64> = (0..op.n()).map(|_| prior.sample(&mut rs)).collect();
    let z = op.apply(&x)?;
    let mut rn = stream(noise_seed, Domain::Noise, 0);
    let y = z.iter().map(|&zi| channel.sample_output(zi, &mut rn)).collect();
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_matrix::{BaseMatrix, CouplingParams};
    use crate::sensing::Backend;

    fn tp() -> DiscretePrior {
        DiscretePrior::two_point(0.6).unwrap()
    }

    #[test]
    fn initialization() {
        let p = tp();
        let iid = BaseMatrix::iid();
        let op = SensingOperator::sample_dense(&iid, 50, 100, 1).unwrap();
        let y = vec![0.0; 50];
        let g = Gamp::new(&op, &p, Channel::PhaseRetrieval, &y).unwrap();
        let st = g.initialize().unwrap();
        assert!(st.xhat.iter().all(|&v| (v - 0.2041241452319315).abs() < 1e-12));
        assert!((st.tau_p_hat[0] - p.variance() / 0.5).abs() < 1e-12);
        assert!(g.start_warnings().is_empty());
        let sym = DiscretePrior::three_point(0.5).unwrap();
        let g = Gamp::new(&op, &sym, Channel::PhaseRetrieval, &y).unwrap();
        assert!(g.initialize().unwrap().p.iter().all(|&v| v == 0.0));
        assert_eq!(g.start_warnings().len(), 1);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let p = tp();
        let op = SensingOperator::sample_dense(&BaseMatrix::iid(), 50, 100, 1).unwrap();
        let y = vec![0.0; 49];
        assert!(Gamp::new(&op, &p, Channel::Relu, &y).is_err());
    }

    /// Minimal GAMP on an explicit matrix, linear channel, 1×1 base.
    fn scalar_gamp_reference(
        a: &[f64],
        m: usize,
        n: usize,
        y: &[f64],
        prior: &DiscretePrior,
        s2: f64,
        iters: usize,
    ) -> Vec<f64> {
        let delta = m as f64 / n as f64;
        let mut xh = vec![prior.mean(); n];
        let mut p: Vec<f64> = (0..m).map(|i| (0..n).map(|j| a[i * n + j] * xh[j]).sum()).collect();
        let mut taup = prior.variance() / delta;
        for _ in 0..iters {
            let s: Vec<f64> = (0..m).map(|i| (y[i] - p[i]) / (taup + s2)).collect();
            let tauq = taup + s2;
            let q: Vec<f64> = (0..n)
                .map(|j| xh[j] + tauq * (0..m).map(|i| a[i * n + j] * s[i]).sum::<f64>())
                .collect();
            let post: Vec<(f64, f64)> = q.iter().map(|&qj| prior.posterior(qj, tauq)).collect();
            xh = post.iter().map(|v| v.0).collect();
            taup = post.iter().map(|v| v.1).sum::<f64>() / n as f64 / delta;
            p = (0..m)
                .map(|i| (0..n).map(|j| a[i * n + j] * xh[j]).sum::<f64>() - taup * s[i])
                .collect();
        }
        xh
    }

    #[test]
    fn linear_channel_matches_scalar_reference() {
        let p = tp();
        let s2 = 0.1;
        let ch = Channel::Linear { sigma2: s2 };
        let op = SensingOperator::sample_dense(&BaseMatrix::iid(), 60, 80, 3).unwrap();
        let (_, y) = sample_problem(&op, &p, &ch, 4, 5).unwrap();
        let a = op.materialize();
        let g = Gamp::new(&op, &p, ch, &y).unwrap();
        let mut st = g.initialize().unwrap();
        for _ in 0..2 {
            st = g.step(&st).unwrap();
        }
        let r = scalar_gamp_reference(&a, 60, 80, &y, &p, s2, 2);
        for (u, v) in st.xhat.iter().zip(&r) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn linear_tau_q_is_exact() {
        let p = tp();
        let s2 = 0.2;
        let ch = Channel::Linear { sigma2: s2 };
        let w = BaseMatrix::omega_lambda(CouplingParams { omega: 2, lambda: 3 }).unwrap();
        let op = SensingOperator::sample_dense(&w, 40, 60, 9).unwrap();
        let (_, y) = sample_problem(&op, &p, &ch, 1, 2).unwrap();
        let g = Gamp::new(&op, &p, ch, &y).unwrap();
        let st = g.initialize().unwrap();
        let next = g.step(&st).unwrap();
        for c in 0..3 {
            let s: f64 = (0..4).map(|r| w.get(r, c) / (st.tau_p_hat[r] + s2)).sum();
            assert!((next.tau_q_hat[c] - 1.0 / s).abs() < 1e-12);
        }
        assert_eq!(next.alpha_q, next.tau_q_hat);
        assert_eq!(next.alpha_p, next.tau_p_hat);
    }

    #[test]
    fn relu_all_zero_output_stays_finite() {
        let p = DiscretePrior::three_point(0.5).unwrap();
        let op = SensingOperator::sample_dense(&BaseMatrix::iid(), 300, 200, 11).unwrap();
        let y = vec![0.0; 300];
        let g = Gamp::new(&op, &p, Channel::Relu, &y).unwrap();
        let mut st = g.initialize().unwrap();
        // large p values push the Mills ratio into its asymptotic branch
        for v in st.p.iter_mut() {
            *v *= 1e3;
        }
        for _ in 0..10 {
            st = g.step(&st).unwrap();
            assert!(st.q.iter().chain(&st.p).chain(&st.xhat).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn negative_information_means_uninformative() {
        let p = tp();
        let op = SensingOperator::sample_dense(&BaseMatrix::iid(), 40, 50, 2).unwrap();
        let y = vec![1.0; 40];
        let g = Gamp::new(&op, &p, Channel::PhaseRetrieval, &y).unwrap();
        let (tq, flag) = g.estimate_tau_q(&vec![0.5; 40]);
        assert!(flag);
        assert_eq!(tq, vec![TAU_Q_HAT_CEIL]);
        let (tq, flag) = g.estimate_tau_q(&vec![-0.5; 40]);
        assert!(!flag);
        assert!((tq[0] - 2.0).abs() < 1e-15);
        let (m, _) = p.posterior(p.mean(), TAU_Q_HAT_CEIL);
        assert!((m - p.mean()).abs() < 1e-6);
    }

    #[test]
    fn infinite_rel_tol_runs_one_iteration() {
        let p = tp();
        let op = SensingOperator::sample_dense(&BaseMatrix::iid(), 60, 100, 2).unwrap();
        let (x, y) = sample_problem(&op, &p, &Channel::PhaseRetrieval, 1, 2).unwrap();
        let g = Gamp::new(&op, &p, Channel::PhaseRetrieval, &y).unwrap();
        let r = g
            .run(
                Some(&x),
                GampOptions {
                    max_iter: 300,
                    rel_tol: f64::INFINITY,
                },
            )
            .unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.stop_reason, StopReason::Converged);
        assert_eq!(r.mse.len(), 2);
    }

    #[test]
    fn xhat_within_atom_range_and_deterministic() {
        let p = tp();
        let w = BaseMatrix::omega_lambda(CouplingParams { omega: 2, lambda: 3 }).unwrap();
        let run = |backend| {
            let op = SensingOperator::sample(backend, &w, 120, 90, 7, true).unwrap();
            let (x, y) = sample_problem(&op, &p, &Channel::PhaseRetrieval, 8, 9).unwrap();
            let g = Gamp::new(&op, &p, Channel::PhaseRetrieval, &y).unwrap();
            g.run(
                Some(&x),
                GampOptions {
                    max_iter: 20,
                    rel_tol: 0.0,
                },
            )
            .unwrap()
        };
        for b in [Backend::Dense, Backend::Dct] {
            let r1 = run(b);
            let r2 = run(b);
            assert_eq!(r1.mse, r2.mse);
            assert_eq!(r1.xhat, r2.xhat);
            assert!(r1.xhat.iter().all(|&v| v >= p.min_atom() && v <= p.max_atom()));
            assert!(r1.tau_p_hat.iter().flatten().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn linear_channel_converges_to_se() {
        // δ = 0.8, σ² = 0.05, one block: empirical MSE tracks the scalar recursion
        let p = tp();
        let ch = Channel::Linear { sigma2: 0.05 };
        let op = SensingOperator::sample_dense(&BaseMatrix::iid(), 1600, 2000, 21).unwrap();
        let (x, y) = sample_problem(&op, &p, &ch, 22, 23).unwrap();
        let g = Gamp::new(&op, &p, ch, &y).unwrap();
        let r = g
            .run(
                Some(&x),
                GampOptions {
                    max_iter: 15,
                    rel_tol: 0.0,
                },
            )
            .unwrap();
        let se = crate::se::bayes_se_run(&BaseMatrix::iid(), &p, ch, 0.8, crate::se::SeOptions::default()).unwrap();
        let last = r.final_mse().unwrap();
        assert!((last - se.final_mse()).abs() < 0.03, "{last} vs {}", se.final_mse());
    }
}
