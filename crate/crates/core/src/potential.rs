//! Scalar potential U(x; δ) of the uncoupled recursion, its stationary points,
//! and the replica-symmetric potential f_RS used as a cross-check.

use crate::channels::{expected_neg_gout_prime, expected_neg_gout_prime_nested, Channel, JointPZ};
use crate::error::{invalid, Error, Result};
use crate::priors::DiscretePrior;
use crate::quad::{integrate, normal_expectation, std_normal_expectation, Tolerance};
use crate::special::log_sum_exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LOWER_LIMIT: f64 = 0.001;
pub const PLATEAU_TOL: f64 = 1e-10;

fn check(x: f64, delta: f64, m2: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    if !(x > 0.0) || x > m2 * (1.0 + 1e-12) {
        return invalid(format!("x must lie in (0, E[X^2] = {m2}], got {x}"));
    }
    Ok(())
}

fn potential_channel(channel: &Channel) -> Result<()> {
    channel.validate()?;
    if let Channel::PhaseRetrievalNoisy { .. } = channel {
        // its υ kernel is a Monte-Carlo estimate; the potential needs a smooth υ
        return Err(Error::UnsupportedChannel {
            op: "potential",
            channel: channel.name().into(),
        });
    }
    Ok(())
}

/// υ(x; δ) = (x/δ)·E{−g_out*′} at τ^p = x/δ, E{Z²} = E{X²}/δ.
pub fn upsilon(x: f64, delta: f64, channel: &Channel, prior_second_moment: f64) -> Result<f64> {
    check(x, delta, prior_second_moment)?;
    let tp = x / delta;
    Ok(tp * expected_neg_gout_prime(channel, JointPZ::new(tp, prior_second_moment / delta)?)?)
}

/// Same quantity through nested quadrature of g_out*′ over (P, Z), bypassing
/// the reduced one-dimensional forms. Noiseless channels only.
pub fn upsilon_nested(x: f64, delta: f64, channel: &Channel, prior_second_moment: f64) -> Result<f64> {
    check(x, delta, prior_second_moment)?;
    let tp = x / delta;
    Ok(tp * expected_neg_gout_prime_nested(channel, JointPZ::new(tp, prior_second_moment / delta)?)?)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub points: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Lower limit of the integral term.
    pub lower_limit: f64,
    /// Log-spaced trapezoid sub-intervals between neighbouring grid points.
    pub substeps: usize,
    /// Log-spaced trapezoid intervals on [lower_limit, x_min].
    pub lead_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 200,
            x_min: 0.005,
            x_max: 0.995,
            lower_limit: DEFAULT_LOWER_LIMIT,
            substeps: 8,
            lead_steps: 100,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 3 {
            return invalid("potential grid needs at least 3 points");
        }
        if !(self.x_min > 0.0 && self.x_max > self.x_min) {
            return invalid(format!("bad x range [{}, {}]", self.x_min, self.x_max));
        }
        if !(self.lower_limit > 0.0 && self.lower_limit <= self.x_min) {
            return invalid(format!("lower limit must lie in (0, x_min], got {}", self.lower_limit));
        }
        if self.substeps == 0 || self.lead_steps == 0 {
            return invalid("substeps and lead_steps must be positive");
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<f64> {
        let n = self.points - 1;
        (0..=n)
            .map(|i| self.x_min + (self.x_max - self.x_min) * i as f64 / n as f64)
            .collect()
    }

    pub fn step(&self) -> f64 {
        (self.x_max - self.x_min) / (self.points - 1) as f64
    }
}

fn log_space(a: f64, b: f64, steps: usize) -> impl Iterator<Item = f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..steps).map(move |i| (la + (lb - la) * i as f64 / steps as f64).exp())
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialCurve {
    pub delta: f64,
    pub grid_x: Vec<f64>,
    pub grid_u: Vec<f64>,
    /// υ at each grid point.
    pub upsilon: Vec<f64>,
    pub stationary_indices: Vec<usize>,
    pub stationary_points: Vec<f64>,
    pub global_min_index: usize,
    pub global_minimizer: f64,
    pub largest_stationary: f64,
}

impl PotentialCurve {
    /// Annotate precomputed values. `xs` must be strictly increasing.
    pub fn from_values(delta: f64, xs: Vec<f64>, us: Vec<f64>, upsilon: Vec<f64>) -> Result<Self> {
        if xs.len() < 3 || xs.len() != us.len() {
            return invalid("potential curve needs at least 3 matching (x, U) values");
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("potential grid must be strictly increasing");
        }
        if let Some(i) = us.iter().position(|u| !u.is_finite()) {
            return Err(Error::NonFinite {
                iteration: 0,
                block: i,
                what: format!("U at x = {}", xs[i]),
            });
        }
        let idx = stationary_points(&us, PLATEAU_TOL);
        let gmin = us
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let pts: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        Ok(PotentialCurve {
            delta,
            global_minimizer: xs[gmin],
            global_min_index: gmin,
            largest_stationary: *pts.last().unwrap_or(&xs[gmin]),
            stationary_points: pts,
            stationary_indices: idx,
            grid_x: xs,
            grid_u: us,
            upsilon,
        })
    }

    pub fn is_stationary(&self, i: usize) -> bool {
        self.stationary_indices.binary_search(&i).is_ok()
    }

    /// True when the global minimizer sits on the first grid point, i.e. the
    /// true minimizer is only known to be ≤ grid_x[0].
    pub fn minimizer_at_left_edge(&self) -> bool {
        self.global_min_index == 0
    }
}

/// Indices of discrete stationary points of `us`: sign changes of the first
/// differences (differences within `plateau_tol` count as zero), flat runs
/// between equal signs, and end points at which the curve rises away
/// (boundary minima). Plateaus report their middle index.
pub fn stationary_points(us: &[f64], plateau_tol: f64) -> Vec<usize> {
    let n = us.len();
    if n < 2 {
        return (0..n).collect();
    }
    let sign: Vec<i8> = us
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d.abs() <= plateau_tol {
                0
            } else if d > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    let mut out = Vec::new();
    // (sign, index of that difference)
    let mut last: Option<(i8, usize)> = None;
    for (i, &s) in sign.iter().enumerate() {
        if s == 0 {
            continue;
        }
        match last {
            None => {
                if s > 0 {
                    out.push(i / 2);
                }
            }
            Some((ls, j)) => {
                // point indices j+1 ..= i lie between the two nonzero differences
                if ls != s || i > j + 1 {
                    out.push((j + 1 + i) / 2);
                }
            }
        }
        last = Some((s, i));
    }
    match last {
        None => out.push(0),
        Some((s, j)) => {
            if s < 0 {
                out.push((j + 1 + n - 1) / 2);
            }
        }
    }
    out.dedup();
    out
}

/// Evaluator for U(x; δ) = −δυ(x) + ∫_{lower}^x (δ/z)υ(z) dz + 2I(X; √s X + G), s = δυ(x)/x.
pub struct Potential<'a> {
    pub prior: &'a DiscretePrior,
    pub channel: Channel,
    pub delta: f64,
}

impl<'a> Potential<'a> {
    pub fn new(prior: &'a DiscretePrior, channel: Channel, delta: f64) -> Result<Self> {
        potential_channel(&channel)?;
        if !(delta > 0.0) || !delta.is_finite() {
            return invalid(format!("delta must be positive, got {delta}"));
        }
        Ok(Potential { prior, channel, delta })
    }

    pub fn upsilon(&self, x: f64) -> Result<f64> {
        upsilon(x, self.delta, &self.channel, self.prior.second_moment())
    }

    /// The three terms of U at x apart from the integral: −δυ + 2I(δυ/x).
    fn local_terms(&self, x: f64, ups: f64) -> f64 {
        -self.delta * ups + 2.0 * self.prior.mutual_information(self.delta * ups / x)
    }

    /// U(x) with the integral term by adaptive quadrature in ln z.
    pub fn value(&self, x: f64, lower_limit: f64) -> Result<f64> {
        if !(lower_limit > 0.0) {
            return invalid(format!("lower limit must be positive, got {lower_limit}"));
        }
        Ok(self.local_terms(x, self.upsilon(x)?) + self.integral(lower_limit, x)?)
    }

    /// ∫_a^b (δ/z)υ(z) dz by adaptive Gauss–Kronrod in ln z.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        self.upsilon(a.max(b))?;
        self.upsilon(a.min(b))?;
        let d = self.delta;
        let m2 = self.prior.second_moment();
        let ch = self.channel;
        Ok(integrate(
            |l| d * upsilon(l.exp(), d, &ch, m2).unwrap_or(f64::NAN),
            a.ln(),
            b.ln(),
            &[],
            Tolerance::new(1e-12, 1e-10),
        ))
    }

    /// U on the grid with the integral term by the trapezoid rule in ln z.
    /// The trapezoid nodes above `x_min` depend only on the evaluation grid,
    /// so changing `lower_limit` shifts every value by the same constant.
    pub fn curve(&self, grid: &GridSpec) -> Result<PotentialCurve> {
        grid.validate()?;
        let xs = grid.xs();
        let mut nodes: Vec<f64> = log_space(grid.lower_limit, xs[0], grid.lead_steps).collect();
        if grid.lower_limit == xs[0] {
            nodes.clear();
        }
        let mut at_grid = Vec::with_capacity(xs.len());
        for w in xs.windows(2) {
            at_grid.push(nodes.len());
            nodes.extend(log_space(w[0], w[1], grid.substeps));
        }
        at_grid.push(nodes.len());
        nodes.push(*xs.last().unwrap());
        let ups: Vec<f64> = nodes.par_iter().map(|&z| self.upsilon(z)).collect::<Result<_>>()?;
        let mut cum = vec![0.0; nodes.len()];
        for i in 1..nodes.len() {
            let h = (nodes[i] / nodes[i - 1]).ln();
            cum[i] = cum[i - 1] + 0.5 * h * self.delta * (ups[i] + ups[i - 1]);
        }
        let grid_ups: Vec<f64> = at_grid.iter().map(|&k| ups[k]).collect();
        let us: Vec<f64> = xs
            .par_iter()
            .zip(&at_grid)
            .map(|(&x, &k)| self.local_terms(x, ups[k]) + cum[k])
            .collect();
        PotentialCurve::from_values(self.delta, xs, us, grid_ups)
    }
}

// ---------------------------------------------------------------------------
// Replica-symmetric potential.

/// ψ_in(r) = E_{X₀,G₀} ln E_X exp(r X X₀ + √r X G₀ − r X²/2).
pub fn psi_in(prior: &DiscretePrior, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return invalid(format!("r must be nonnegative, got {r}"));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let atoms = prior.atoms();
    let lp: Vec<f64> = prior.probs().iter().map(|p| p.ln()).collect();
    let rs = r.sqrt();
    let mut buf = vec![0.0; atoms.len()];
    let mut total = 0.0;
    for (&x0, &p0) in atoms.iter().zip(prior.probs()) {
        if p0 == 0.0 {
            continue;
        }
        // dominant atom switches where the exponents of neighbours meet
        let mut breaks = Vec::new();
        for w in atoms.windows(2) {
            let g = (0.5 * (w[0] + w[1]) - x0) * rs;
            breaks.extend_from_slice(&[g - 4.0 / rs, g, g + 4.0 / rs]);
        }
        let v = std_normal_expectation(
            |g| {
                for (k, &x) in atoms.iter().enumerate() {
                    buf[k] = lp[k] + r * x * x0 + rs * x * g - 0.5 * r * x * x;
                }
                log_sum_exp(&buf)
            },
            &breaks,
            Tolerance::new(1e-14, 1e-12),
        );
        total += p0 * v;
    }
    Ok(total)
}

/// ψ_out(q; δ) = E_V ∫ p(y|v) ln p(y|v) dy with p(y|v) = E_G P_out(y | a v + b G),
/// a = √(q/δ), b = √((ρ − q)/δ), ρ = E{X²}. Needs a channel with a density.
pub fn psi_out(channel: &Channel, q: f64, delta: f64, rho: f64) -> Result<f64> {
    channel.validate()?;
    if channel.log_density(0.0, 0.0).is_none() {
        return Err(Error::UnsupportedChannel {
            op: "psi_out",
            channel: channel.name().into(),
        });
    }
    if !(delta > 0.0) || !(q >= 0.0) || q > rho * (1.0 + 1e-12) {
        return invalid(format!(
            "need delta > 0 and 0 <= q <= rho, got q = {q}, rho = {rho}, delta = {delta}"
        ));
    }
    let a = (q / delta).sqrt();
    let b = ((rho - q).max(0.0) / delta).sqrt();
    let ch = *channel;
    let tol = Tolerance::new(1e-13, 1e-11);
    let noise_sd = match ch {
        Channel::Linear { sigma2 } | Channel::PhaseRetrievalNoisy { sigma2 } => sigma2.sqrt(),
        _ => unreachable!(),
    };
    let density = |y: f64, v: f64| -> f64 {
        let m = a * v;
        if b == 0.0 {
            return ch.log_density(y, m).unwrap().exp();
        }
        let mut br = vec![-m / b];
        if let Channel::PhaseRetrievalNoisy { .. } = ch {
            if y > 0.0 {
                let s = y.sqrt();
                br.extend_from_slice(&[(s - m) / b, (-s - m) / b]);
            }
        }
        std_normal_expectation(|g| ch.log_density(y, m + b * g).unwrap().exp(), &br, tol)
    };
    let entropy_term = |v: f64| -> f64 {
        let m = a * v;
        let (lo, hi, br) = match ch {
            Channel::Linear { .. } => {
                let s = (b * b + noise_sd * noise_sd).sqrt();
                (
                    m - 13.0 * s,
                    m + 13.0 * s,
                    vec![m, m - s, m + s, m - 4.0 * s, m + 4.0 * s],
                )
            }
            _ => {
                let zmax = m.abs() + 13.0 * b;
                let top = zmax * zmax + 13.0 * noise_sd;
                (-13.0 * noise_sd, top, vec![0.0, m * m, noise_sd, 4.0 * noise_sd])
            }
        };
        let br: Vec<f64> = br.into_iter().filter(|&x| x > lo && x < hi).collect();
        integrate(
            |y| {
                let p = density(y, v);
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            },
            lo,
            hi,
            &br,
            tol,
        )
    };
    let v = if a == 0.0 {
        entropy_term(0.0)
    } else {
        normal_expectation(entropy_term, 0.0, 1.0, &[], tol)
    };
    if !v.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            block: 0,
            what: format!("psi_out at q = {q}"),
        });
    }
    Ok(v)
}

/// ψ_out for the linear Gaussian channel in closed form.
pub fn psi_out_linear_exact(sigma2: f64, q: f64, delta: f64, rho: f64) -> f64 {
    let v = (rho - q) / delta + sigma2;
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReplicaPotential {
    pub q: f64,
    pub r: f64,
    pub value: f64,
}

/// f_RS(q, r) = ψ_in(r) + δψ_out(q; δ) − rq/2.
pub fn replica_frs(q: f64, r: f64, delta: f64, prior: &DiscretePrior, channel: &Channel) -> Result<ReplicaPotential> {
    let rho = prior.second_moment();
    let m2 = prior.mean() * prior.mean();
    if q < m2 * (1.0 - 1e-12) || q > rho * (1.0 + 1e-12) {
        return invalid(format!("q must lie in [(E X)^2, E X^2] = [{m2}, {rho}], got {q}"));
    }
    if !(r > 0.0) {
        return invalid(format!("r must be positive, got {r}"));
    }
    let value = psi_in(prior, r)? + delta * psi_out(channel, q, delta, rho)? - 0.5 * r * q;
    Ok(ReplicaPotential { q, r, value })
}

/// The replica point paired with x: q = ρ − x, r = δυ(x)/x.
pub fn replica_point(pot: &Potential, x: f64) -> Result<(f64, f64)> {
    let rho = pot.prior.second_moment();
    Ok((rho - x, pot.delta * pot.upsilon(x)? / x))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReplicaCheck {
    pub x1: f64,
    pub x2: f64,
    pub u_difference: f64,
    pub replica_difference: f64,
}

impl ReplicaCheck {
    pub fn error(&self) -> f64 {
        (self.u_difference - self.replica_difference).abs()
    }
}

/// Compare U(x₁) − U(x₂) with −2[f_RS(q(x₁), r(x₁)) − f_RS(q(x₂), r(x₂))].
pub fn replica_check(pot: &Potential, x1: f64, x2: f64) -> Result<ReplicaCheck> {
    let u1 = pot.local_terms(x1, pot.upsilon(x1)?);
    let u2 = pot.local_terms(x2, pot.upsilon(x2)?);
    let du = u1 - u2 - pot.integral(x1, x2)?;
    let (q1, r1) = replica_point(pot, x1)?;
    let (q2, r2) = replica_point(pot, x2)?;
    let f1 = replica_frs(q1, r1, pot.delta, pot.prior, &pot.channel)?.value;
    let f2 = replica_frs(q2, r2, pot.delta, pot.prior, &pot.channel)?.value;
    Ok(ReplicaCheck {
        x1,
        x2,
        u_difference: du,
        replica_difference: -2.0 * (f1 - f2),
    })
}
