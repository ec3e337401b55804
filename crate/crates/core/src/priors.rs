//! Discrete signal priors, the posterior-mean denoiser and the scalar
//! Gaussian-channel mmse / mutual information.

use crate::error::{invalid, Result};
use crate::quad::{std_normal_expectation, Tolerance};
use crate::special::{log_sum_exp, sech2};
use serde::{Deserialize, Serialize};

/// Above this SNR the atoms are separated by many noise widths and mmse is 0.
pub const MMSE_SNR_CUTOFF: f64 = 1e8;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePrior {
    atoms: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    mean: f64,
    second_moment: f64,
    variance: f64,
}

/// Config-level description of a prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    TwoPoint { alpha: f64 },
    ThreePoint { alpha: f64 },
    Custom { atoms: Vec<f64>, probs: Vec<f64> },
}

impl PriorSpec {
    pub fn build(&self) -> Result<DiscretePrior> {
        match self {
            PriorSpec::TwoPoint { alpha } => DiscretePrior::two_point(*alpha),
            PriorSpec::ThreePoint { alpha } => DiscretePrior::three_point(*alpha),
            PriorSpec::Custom { atoms, probs } => DiscretePrior::new(atoms.clone(), probs.clone()),
        }
    }
}

impl DiscretePrior {
    /// Atoms are sorted on construction; zero-probability atoms are kept.
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.len() != probs.len() {
            return invalid(format!(
                "prior has {} atoms but {} probabilities",
                atoms.len(),
                probs.len()
            ));
        }
        if atoms.iter().chain(probs.iter()).any(|v| !v.is_finite()) {
            return invalid("prior atoms and probabilities must be finite");
        }
        if probs.iter().any(|&p| p < 0.0) {
            return invalid("prior probabilities must be nonnegative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("prior probabilities sum to {total}, not 1"));
        }
        if probs.iter().filter(|&&p| p > 0.0).count() < 2 {
            return invalid("prior needs at least two atoms with positive probability");
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return invalid(format!("duplicate prior atom {}", w[0].0));
            }
        }
        let atoms: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let probs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mean: f64 = atoms.iter().zip(&probs).map(|(a, p)| a * p).sum();
        let second_moment: f64 = atoms.iter().zip(&probs).map(|(a, p)| a * a * p).sum();
        let variance: f64 = atoms.iter().zip(&probs).map(|(a, p)| (a - mean).powi(2) * p).sum();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(DiscretePrior {
            atoms,
            probs,
            log_probs,
            mean,
            second_moment,
            variance,
        })
    }

    /// {+a w.p. α, −a w.p. 1−α} with a chosen so that Var(X) = 1.
    pub fn two_point(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("two-point alpha must lie in (0, 1), got {alpha}"));
        }
        let a = (1.0 / (1.0 - (2.0 * alpha - 1.0).powi(2))).sqrt();
        DiscretePrior::new(vec![a, -a], vec![alpha, 1.0 - alpha])
    }

    /// {−b, 0, +b} with probabilities {α/2, 1−α, α/2}, b = √(1/α).
    pub fn three_point(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("three-point alpha must lie in (0, 1), got {alpha}"));
        }
        let b = (1.0 / alpha).sqrt();
        DiscretePrior::new(vec![-b, 0.0, b], vec![alpha / 2.0, 1.0 - alpha, alpha / 2.0])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }
    pub fn variance(&self) -> f64 {
        self.variance
    }
    pub fn min_atom(&self) -> f64 {
        self.atoms[0]
    }
    pub fn max_atom(&self) -> f64 {
        self.atoms[self.atoms.len() - 1]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
    }

    /// Draw one value.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in self.atoms.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *a;
            }
        }
        self.max_atom()
    }

    /// Posterior mean and variance of X given q = X + √τ·G. `tau` must be
    /// positive; no check is made (hot path).
    #[inline]
    pub fn posterior(&self, q: f64, tau: f64) -> (f64, f64) {
        if self.atoms.len() == 2 {
            let (a1, a2) = (self.atoms[0], self.atoms[1]);
            let llr = self.log_probs[1] - self.log_probs[0] + (a2 - a1) * (2.0 * q - a1 - a2) / (2.0 * tau);
            let half = 0.5 * (a2 - a1);
            let mean = 0.5 * (a1 + a2) + half * (0.5 * llr).tanh();
            let var = half * half * sech2(0.5 * llr);
            return (mean, var);
        }
        let mut lw = [0.0f64; 16];
        let mut lw_vec;
        let lw: &mut [f64] = if self.atoms.len() <= 16 {
            &mut lw[..self.atoms.len()]
        } else {
            lw_vec = vec![0.0; self.atoms.len()];
            &mut lw_vec
        };
        let mut max = f64::NEG_INFINITY;
        for (k, (&a, &lp)) in self.atoms.iter().zip(&self.log_probs).enumerate() {
            lw[k] = lp + (q * a - 0.5 * a * a) / tau;
            max = max.max(lw[k]);
        }
        let mut z = 0.0;
        let mut s1 = 0.0;
        for (k, &a) in self.atoms.iter().enumerate() {
            let w = (lw[k] - max).exp();
            z += w;
            s1 += w * a;
        }
        let mean = s1 / z;
        let mut var = 0.0;
        for (k, &a) in self.atoms.iter().enumerate() {
            let w = (lw[k] - max).exp();
            var += w * (a - mean) * (a - mean);
        }
        (mean.clamp(self.min_atom(), self.max_atom()), var / z)
    }

    /// g_in*(q) = E{X | X + √τ G = q}.
    pub fn posterior_mean(&self, q: f64, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.posterior(q, tau).0)
    }

    /// ∂g_in*/∂q = Var(X | q)/τ.
    pub fn posterior_mean_derivative(&self, q: f64, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.posterior(q, tau).1 / tau)
    }

    /// Points in the G coordinate (for X = a_k, τ = 1/s) where the posterior
    /// switches between neighbouring atoms.
    fn transition_breaks(&self, k: usize, s: f64) -> Vec<f64> {
        let tau = 1.0 / s;
        let rs = s.sqrt();
        let ak = self.atoms[k];
        let mut out = Vec::new();
        for j in 0..self.atoms.len() - 1 {
            let (lo, hi) = (self.atoms[j], self.atoms[j + 1]);
            let qt = 0.5 * (lo + hi) + tau * (self.log_probs[j] - self.log_probs[j + 1]) / (hi - lo);
            if qt.is_finite() {
                let g = rs * (qt - ak);
                // transition width in g is ~1/(Δ√s)
                let w = 1.0 / ((hi - lo) * rs);
                out.extend_from_slice(&[g - 4.0 * w, g, g + 4.0 * w]);
            }
        }
        out
    }

    /// mmse(s) = E (X − E{X | √s X + G})².
    pub fn mmse(&self, s: f64) -> f64 {
        self.mmse_with(s, Tolerance::default())
    }

    pub fn mmse_with(&self, s: f64, tol: Tolerance) -> f64 {
        if !(s > 0.0) {
            return self.variance;
        }
        if s > MMSE_SNR_CUTOFF {
            return 0.0;
        }
        let tau = 1.0 / s;
        let sd = tau.sqrt();
        let mut total = 0.0;
        for (k, (&a, &p)) in self.atoms.iter().zip(&self.probs).enumerate() {
            if p == 0.0 {
                continue;
            }
            let breaks = self.transition_breaks(k, s);
            let v = std_normal_expectation(|g| self.posterior(a + sd * g, tau).1, &breaks, tol);
            total += p * v;
        }
        total.clamp(0.0, self.variance)
    }

    /// I(X; √s X + G) in nats.
    pub fn mutual_information(&self, s: f64) -> f64 {
        self.mutual_information_with(s, Tolerance::default())
    }

    pub fn mutual_information_with(&self, s: f64, tol: Tolerance) -> f64 {
        if !(s > 0.0) {
            return 0.0;
        }
        let rs = s.sqrt();
        let n = self.atoms.len();
        let mut total = 0.0;
        let mut buf = vec![0.0; n];
        for (k, (&ak, &pk)) in self.atoms.iter().zip(&self.probs).enumerate() {
            if pk == 0.0 {
                continue;
            }
            let breaks = self.transition_breaks(k, s);
            let v = std_normal_expectation(
                |g| {
                    for j in 0..n {
                        let d = ak - self.atoms[j];
                        buf[j] = self.log_probs[j] - rs * g * d - 0.5 * s * d * d;
                    }
                    log_sum_exp(&buf)
                },
                &breaks,
                tol,
            );
            total -= pk * v;
        }
        total.clamp(0.0, self.entropy())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return invalid(format!("noise variance must be positive and finite, got {tau}"));
    }
    Ok(())
}
