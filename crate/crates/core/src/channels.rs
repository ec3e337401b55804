//! Output channels y = φ(z, ε), their Bayes output denoisers g_out* and the
//! expectation kernels used by state evolution and the potential.

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate, normal_expectation, std_normal_expectation, Tolerance};
use crate::seeds::{stream, Domain};
use crate::special::{mills_excess, mills_ratio, normal_cdf, normal_pdf, sech2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Channel {
    /// y = z².
    PhaseRetrieval,
    /// y = z² + w, w ~ N(0, σ²).
    PhaseRetrievalNoisy { sigma2: f64 },
    /// y = max(z, 0).
    Relu,
    /// y = z + w, w ~ N(0, σ²).
    Linear { sigma2: f64 },
}

/// Default sample count for Monte-Carlo kernels of noisy phase retrieval,
/// whose denoiser itself needs a quadrature per sample.
pub const NOISY_KERNEL_SAMPLES: usize = 20_000;

impl Channel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Channel::PhaseRetrievalNoisy { sigma2 } | Channel::Linear { sigma2 } => {
                if !(sigma2 > 0.0) || !sigma2.is_finite() {
                    return invalid(format!("channel noise variance must be positive, got {sigma2}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Channel::PhaseRetrieval => "phase_retrieval",
            Channel::PhaseRetrievalNoisy { .. } => "phase_retrieval_noisy",
            Channel::Relu => "relu",
            Channel::Linear { .. } => "linear",
        }
    }

    pub fn is_noiseless(&self) -> bool {
        matches!(self, Channel::PhaseRetrieval | Channel::Relu)
    }

    /// y = φ(z, ε) with ε standard normal.
    #[inline]
    pub fn output(&self, z: f64, eps: f64) -> f64 {
        match *self {
            Channel::PhaseRetrieval => z * z,
            Channel::PhaseRetrievalNoisy { sigma2 } => z * z + sigma2.sqrt() * eps,
            Channel::Relu => z.max(0.0),
            Channel::Linear { sigma2 } => z + sigma2.sqrt() * eps,
        }
    }

    pub fn sample_output<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> f64 {
        let eps = if self.is_noiseless() {
            0.0
        } else {
            StandardNormal.sample(rng)
        };
        self.output(z, eps)
    }

    /// Conditional density P_out(y | z); only for channels with noise.
    pub fn log_density(&self, y: f64, z: f64) -> Option<f64> {
        match *self {
            Channel::Linear { sigma2 } => Some(log_normal_pdf(y, z, sigma2)),
            Channel::PhaseRetrievalNoisy { sigma2 } => Some(log_normal_pdf(y, z * z, sigma2)),
            _ => None,
        }
    }

    /// (g_out*(p, y), ∂_p g_out*) at prior variance τ^p. No argument checks.
    #[inline]
    pub fn gout(&self, p: f64, y: f64, tau: f64) -> (f64, f64) {
        match *self {
            Channel::PhaseRetrieval => pr_gout(p, y, tau),
            Channel::Relu => relu_gout(p, y, tau),
            Channel::Linear { sigma2 } => {
                let v = tau + sigma2;
                ((y - p) / v, -1.0 / v)
            }
            Channel::PhaseRetrievalNoisy { sigma2 } => {
                let (m, var) = noisy_pr_posterior(p, y, tau, sigma2);
                ((m - p) / tau, (var / tau - 1.0) / tau)
            }
        }
    }
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

#[inline]
fn pr_gout(p: f64, y: f64, tau: f64) -> (f64, f64) {
    if y > 0.0 {
        let sy = y.sqrt();
        let u = p * sy / tau;
        ((sy * u.tanh() - p) / tau, -(1.0 - (y / tau) * sech2(u)) / tau)
    } else {
        (-p / tau, -1.0 / tau)
    }
}

#[inline]
fn relu_gout(p: f64, y: f64, tau: f64) -> (f64, f64) {
    if y > 0.0 {
        ((y - p) / tau, -1.0 / tau)
    } else {
        let st = tau.sqrt();
        let u = p / st;
        let m = mills_ratio(u);
        (-m / st, -m * mills_excess(u) / tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return invalid(format!("tau_p must be positive and finite, got {tau}"));
    }
    Ok(())
}

/// (1/τ)(√y tanh(p√y/τ) H(y) − p), H(0) = 0.
pub fn gout_phase_retrieval(p: f64, y: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pr_gout(p, y, tau).0)
}

pub fn gout_phase_retrieval_derivative(p: f64, y: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pr_gout(p, y, tau).1)
}

pub fn gout_relu(p: f64, y: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if y < 0.0 {
        return invalid(format!("ReLU output must be nonnegative, got {y}"));
    }
    Ok(relu_gout(p, y, tau).0)
}

pub fn gout_relu_derivative(p: f64, y: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if y < 0.0 {
        return invalid(format!("ReLU output must be nonnegative, got {y}"));
    }
    Ok(relu_gout(p, y, tau).1)
}

pub fn gout_linear(p: f64, y: f64, tau: f64, sigma2: f64) -> Result<f64> {
    check_tau(tau)?;
    Channel::Linear { sigma2 }.validate()?;
    Ok((y - p) / (tau + sigma2))
}

pub fn gout_linear_derivative(tau: f64, sigma2: f64) -> Result<f64> {
    check_tau(tau)?;
    Channel::Linear { sigma2 }.validate()?;
    Ok(-1.0 / (tau + sigma2))
}

/// Posterior mean and variance of Z ~ N(p, τ) given y = Z² + N(0, σ²), by
/// adaptive quadrature over z.
pub fn noisy_pr_posterior(p: f64, y: f64, tau: f64, sigma2: f64) -> (f64, f64) {
    let st = tau.sqrt();
    let sig = sigma2.sqrt();
    let logw = |z: f64| -(z - p) * (z - p) / (2.0 * tau) - (y - z * z) * (y - z * z) / (2.0 * sigma2);
    let mut lo = p - 13.0 * st;
    let mut hi = p + 13.0 * st;
    let mut breaks = vec![p];
    if y > 0.0 {
        let r = y.sqrt();
        // likelihood width in z around ±√y
        let w = (sig / (2.0 * r)).min(r.max(sig.sqrt()));
        for c in [-r, r] {
            for k in [-16.0, -4.0, -1.0, 0.0, 1.0, 4.0, 16.0] {
                breaks.push(c + k * w);
            }
        }
        lo = lo.min(-r - 16.0 * w);
        hi = hi.max(r + 16.0 * w);
    }
    let mut refl = f64::NEG_INFINITY;
    for i in 0..=400 {
        refl = refl.max(logw(lo + (hi - lo) * i as f64 / 400.0));
    }
    for &b in &breaks {
        refl = refl.max(logw(b));
    }
    let tol = Tolerance::new(0.0, 1e-11);
    let w = |z: f64| (logw(z) - refl).exp();
    let z0 = integrate(w, lo, hi, &breaks, tol);
    let m = integrate(|z| z * w(z), lo, hi, &breaks, tol) / z0;
    let v = integrate(|z| (z - m) * (z - m) * w(z), lo, hi, &breaks, tol) / z0;
    (m, v)
}

/// Law of (P, Z): P ~ N(0, E{Z²} − τ^p), Z = P + √τ^p G.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointPZ {
    pub tau_p: f64,
    pub z_second_moment: f64,
}

impl JointPZ {
    pub fn new(tau_p: f64, z_second_moment: f64) -> Result<Self> {
        if !(tau_p > 0.0) || !(z_second_moment > 0.0) || tau_p > z_second_moment * (1.0 + 1e-12) {
            return invalid(format!(
                "need 0 < tau_p <= E[Z^2], got tau_p = {tau_p}, E[Z^2] = {z_second_moment}"
            ));
        }
        Ok(JointPZ {
            tau_p: tau_p.min(z_second_moment),
            z_second_moment,
        })
    }

    /// ρ = τ^p / E{Z²}.
    pub fn rho(&self) -> f64 {
        self.tau_p / self.z_second_moment
    }

    pub fn p_variance(&self) -> f64 {
        (self.z_second_moment - self.tau_p).max(0.0)
    }
}

/// υ(ρ) = τ^p·E{−g_out*′} for noiseless phase retrieval, a function of
/// ρ = τ^p/E{Z²} alone. Reduced to w = Z/√τ^p, x = P/√τ^p.
pub fn upsilon_phase_retrieval(rho: f64) -> f64 {
    let rho = rho.clamp(0.0, 1.0);
    if rho <= 0.0 {
        return 1.0;
    }
    let v = 1.0 - rho;
    let sd = v.sqrt();
    let inner_tol = Tolerance::new(1e-15, 1e-12);
    let h = |w: f64| -> f64 {
        if v < 1e-300 {
            return 1.0;
        }
        let mean = w * v;
        let s = 1.0 / w.max(1e-300);
        normal_expectation(
            |x| sech2(w * x),
            mean,
            sd,
            &[0.0, -4.0 * s, 4.0 * s, -16.0 * s, 16.0 * s],
            inner_tol,
        )
    };
    let wsd = 1.0 / rho.sqrt();
    let top = 13.0 * wsd;
    let mut breaks = Vec::new();
    let mut b = 0.25;
    while b < top {
        breaks.push(b);
        b *= 2.0;
    }
    let e = 2.0
        * integrate(
            |w| w * w * normal_pdf(w / wsd) / wsd * h(w),
            0.0,
            top,
            &breaks,
            Tolerance::new(1e-14, 1e-12),
        );
    (1.0 - e).clamp(0.0, 1.0)
}

/// k(u) = Φ(u) + φ(u)(M(u) − u): conditional τ^p·E{−g_out*′ | P} for ReLU
/// at u = P/√τ^p.
fn relu_k(u: f64) -> f64 {
    normal_cdf(u) + normal_pdf(u) * mills_excess(u)
}

/// υ(ρ) for noiseless ReLU.
pub fn upsilon_relu(rho: f64) -> f64 {
    let rho = rho.clamp(0.0, 1.0);
    if rho <= 0.0 {
        return 1.0;
    }
    let s = ((1.0 - rho) / rho).sqrt();
    if s < 1e-12 {
        return relu_k(0.0);
    }
    let l = (13.0 * s).min(40.0);
    let v = 0.5
        + integrate(
            |u| {
                let step = if u > 0.0 { 1.0 } else { 0.0 };
                (relu_k(u) - step) * normal_pdf(u / s) / s
            },
            -l,
            l,
            &[0.0, -s, s, -4.0 * s, 4.0 * s],
            Tolerance::new(1e-15, 1e-12),
        );
    v.clamp(0.0, 1.0)
}

/// E{f(P, Z)} under the joint law, by nested adaptive quadrature with break
/// points where noiseless outputs change branch (z = 0).
pub fn pz_expectation<F: Fn(f64, f64) -> f64>(joint: JointPZ, f: F, tol: Tolerance) -> f64 {
    let st = joint.tau_p.sqrt();
    let sp = joint.p_variance().sqrt();
    let inner = |p: f64| std_normal_expectation(|g| f(p, p + st * g), &[-p / st], tol);
    if sp == 0.0 {
        return inner(0.0);
    }
    normal_expectation(
        inner,
        0.0,
        sp,
        &[-st, st, -4.0 * st, 4.0 * st, -16.0 * st, 16.0 * st],
        tol,
    )
}

/// E{−g_out*′(P, Y)} by direct nested quadrature over (P, G); noiseless
/// channels only. Used to cross-check the reduced forms.
pub fn expected_neg_gout_prime_nested(channel: &Channel, joint: JointPZ) -> Result<f64> {
    if !channel.is_noiseless() {
        return Err(Error::UnsupportedChannel {
            op: "nested quadrature kernel",
            channel: channel.name().into(),
        });
    }
    let tau = joint.tau_p;
    Ok(pz_expectation(
        joint,
        |p, z| -channel.gout(p, channel.output(z, 0.0), tau).1,
        Tolerance::new(1e-13, 1e-10),
    ))
}

/// E{−g_out*′(P, Y, τ^p)} under `joint`.
pub fn expected_neg_gout_prime(channel: &Channel, joint: JointPZ) -> Result<f64> {
    channel.validate()?;
    let tau = joint.tau_p;
    let v = match *channel {
        Channel::Linear { sigma2 } => 1.0 / (tau + sigma2),
        Channel::PhaseRetrieval => upsilon_phase_retrieval(joint.rho()) / tau,
        Channel::Relu => upsilon_relu(joint.rho()) / tau,
        Channel::PhaseRetrievalNoisy { .. } => {
            identity_suite_mc(channel, joint, NOISY_KERNEL_SAMPLES, 0x5eed)?
                .neg_gout_prime
                .mean
        }
    };
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Degenerate {
            iteration: 0,
            block: 0,
            what: format!("E[-g_out'] = {v} at tau_p = {tau}"),
        });
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimates of E{g²}, E{−g′} and E{∂_z g}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityEstimates {
    pub gout_sq: Estimate,
    pub neg_gout_prime: Estimate,
    pub dz_gout: Estimate,
}

struct Acc {
    n: usize,
    s1: f64,
    s2: f64,
}

impl Acc {
    fn new() -> Self {
        Acc { n: 0, s1: 0.0, s2: 0.0 }
    }
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.s1 += x;
        self.s2 += x * x;
    }
    fn finish(&self) -> Estimate {
        let n = self.n as f64;
        let mean = self.s1 / n;
        let var = (self.s2 / n - mean * mean).max(0.0);
        Estimate {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Seeded Monte Carlo over (P, G, ε). ∂_z g uses a central difference in z
/// with ε held fixed; its step is 0.05√τ^p so that the ReLU kink at z = 0
/// (a jump in g) is resolved as a smoothed point mass.
pub fn identity_suite_mc(channel: &Channel, joint: JointPZ, samples: usize, seed: u64) -> Result<IdentityEstimates> {
    channel.validate()?;
    if samples < 2 {
        return invalid("need at least two Monte-Carlo samples");
    }
    let mut rng = stream(seed, Domain::MonteCarlo, 0);
    let tau = joint.tau_p;
    let sp = joint.p_variance().sqrt();
    let st = tau.sqrt();
    let h = 0.05 * st;
    let (mut a, mut b, mut c) = (Acc::new(), Acc::new(), Acc::new());
    for _ in 0..samples {
        let gp: f64 = StandardNormal.sample(&mut rng);
        let gz: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let p = sp * gp;
        let z = p + st * gz;
        let (g, gprime) = channel.gout(p, channel.output(z, eps), tau);
        a.push(g * g);
        b.push(-gprime);
        let gplus = channel.gout(p, channel.output(z + h, eps), tau).0;
        let gminus = channel.gout(p, channel.output(z - h, eps), tau).0;
        c.push((gplus - gminus) / (2.0 * h));
    }
    Ok(IdentityEstimates {
        gout_sq: a.finish(),
        neg_gout_prime: b.finish(),
        dz_gout: c.finish(),
    })
}

/// Quadrature versions of the three identity-suite expectations for
/// noiseless channels; E{∂_z g} is taken in Stein form E{g·(Z − P)}/τ^p.
pub fn identity_suite_quadrature(channel: &Channel, joint: JointPZ) -> Result<(f64, f64, f64)> {
    if !channel.is_noiseless() {
        return Err(Error::UnsupportedChannel {
            op: "quadrature identity suite",
            channel: channel.name().into(),
        });
    }
    let tau = joint.tau_p;
    let tol = Tolerance::new(1e-13, 1e-10);
    let g = |p: f64, z: f64| channel.gout(p, channel.output(z, 0.0), tau);
    let e_sq = pz_expectation(joint, |p, z| g(p, z).0.powi(2), tol);
    let e_neg = pz_expectation(joint, |p, z| -g(p, z).1, tol);
    let e_dz = pz_expectation(joint, |p, z| g(p, z).0 * (z - p) / tau, tol);
    Ok((e_sq, e_neg, e_dz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sampling_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Channel::Relu.sample_output(-1.3, &mut rng), 0.0);
        assert_eq!(Channel::PhaseRetrieval.sample_output(2.0, &mut rng), 4.0);
        let ch = Channel::Linear { sigma2: 0.1 };
        let n = 1_000_000;
        let mut s2 = 0.0;
        for _ in 0..n {
            let y = ch.sample_output(0.0, &mut rng);
            s2 += y * y;
        }
        assert!((s2 / n as f64 / 0.1 - 1.0).abs() < 0.01);
    }

    #[test]
    fn pr_examples() {
        assert_eq!(gout_phase_retrieval(0.8, 0.0, 0.5).unwrap(), -0.8 / 0.5);
        assert_eq!(gout_phase_retrieval(0.0, 2.0, 0.5).unwrap(), 0.0);
        assert_eq!(gout_phase_retrieval_derivative(0.3, 0.0, 0.5).unwrap(), -2.0);
        assert!(gout_phase_retrieval_derivative(0.0, 0.4, 0.4).unwrap().abs() < 1e-15);
        assert!(gout_phase_retrieval(0.0, 1.0, 0.0).is_err());
        let (p, y, tau) = (0.7, 2.0, 0.4);
        let d = gout_phase_retrieval_derivative(p, y, tau).unwrap();
        let f = fd(|p| gout_phase_retrieval(p, y, tau).unwrap(), p);
        assert!(((d - f) / d).abs() < 1e-6);
    }

    #[test]
    fn pr_is_noiseless_limit_of_quadrature_posterior() {
        let (p, y, tau) = (1.0, 4.0, 0.5);
        let (m, _) = noisy_pr_posterior(p, y, tau, 1e-8);
        let g = (m - p) / tau;
        assert!((g - gout_phase_retrieval(p, y, tau).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(gout_relu(0.3, 1.0, 0.5).unwrap(), 0.7 / 0.5);
        assert_eq!(gout_relu_derivative(0.3, 1.0, 0.5).unwrap(), -2.0);
        for tau in [0.25f64, 1.0, 3.0] {
            let g = gout_relu(0.0, 0.0, tau).unwrap();
            assert!((g + 0.797_884_560_802_865_4 / tau.sqrt()).abs() < 1e-14);
        }
        assert!(gout_relu(0.0, -1.0, 1.0).is_err());
        let d = gout_relu_derivative(-0.4, 0.0, 0.9).unwrap();
        let f = fd(|p| gout_relu(p, 0.0, 0.9).unwrap(), -0.4);
        assert!(((d - f) / d).abs() < 1e-6);
        assert!(gout_relu_derivative(-10.0, 0.0, 1.0).unwrap().abs() < 1e-6);
        assert!(gout_relu_derivative(-10.0, 0.0, 1.0).unwrap() < 0.0);
    }

    // Asymptotic Mills series 1/R(u), R(u) = (1/u)Σ(−1)^k (2k−1)!!/u^{2k}.
    #[test]
    fn relu_far_tail_matches_asymptotic() {
        let u: f64 = 8.0;
        let mut term = 1.0 / u;
        let mut r = term;
        for k in 1..12 {
            term *= -(2.0 * k as f64 - 1.0) / (u * u);
            r += term;
        }
        let oracle = -1.0 / r;
        let g = gout_relu(8.0, 0.0, 1.0).unwrap();
        assert!(((g - oracle) / oracle).abs() < 1e-8, "{g} vs {oracle}");
    }

    #[test]
    fn linear_examples() {
        assert_eq!(gout_linear(0.4, 0.4, 0.5, 0.3).unwrap(), 0.0);
        assert!(gout_linear(0.0, 1.0, 0.5, 1e300).unwrap().abs() < 1e-299);
        assert!(gout_linear(0.0, 1.0, 0.5, 0.0).is_err());
        // generic quadrature posterior over P_out(y|z) N(z; p, τ)
        let (p, y, tau, s2) = (0.2f64, 1.1f64, 0.5f64, 0.3f64);
        let ch = Channel::Linear { sigma2: s2 };
        let w = |z: f64| (ch.log_density(y, z).unwrap() + log_normal_pdf(z, p, tau)).exp();
        let t = Tolerance::new(0.0, 1e-13);
        let z0 = integrate(w, p - 15.0, p + 15.0, &[p, y], t);
        let z1 = integrate(|z| z * w(z), p - 15.0, p + 15.0, &[p, y], t);
        let oracle = (z1 / z0 - p) / tau;
        assert!((gout_linear(p, y, tau, s2).unwrap() - oracle).abs() < 1e-10);
        assert_eq!(gout_linear_derivative(0.5, 0.3).unwrap(), -1.0 / 0.8);
    }

    #[test]
    fn linear_kernel_is_exact() {
        let j = JointPZ::new(0.3, 1.0).unwrap();
        let v = expected_neg_gout_prime(&Channel::Linear { sigma2: 0.2 }, j).unwrap();
        assert_eq!(v, 1.0 / 0.5);
        assert!(JointPZ::new(1.5, 1.0).is_err());
    }

    #[test]
    fn reduced_forms_match_nested_quadrature() {
        for ch in [Channel::PhaseRetrieval, Channel::Relu] {
            for &(tau, ez) in &[(0.1, 1.0), (0.5, 1.0), (0.9, 1.0), (0.5 / 0.6, 1.0 / 0.6), (0.02, 2.0)] {
                let j = JointPZ::new(tau, ez).unwrap();
                let a = expected_neg_gout_prime(&ch, j).unwrap();
                let b = expected_neg_gout_prime_nested(&ch, j).unwrap();
                assert!(((a - b) / b).abs() < 1e-7, "{ch:?} tau={tau}: {a} vs {b}");
            }
        }
    }

    // Values frozen from a two-dimensional adaptive quadrature of the
    // unreduced (P, G) integral at E{Z²} = 1.
    #[test]
    fn upsilon_reference_values() {
        let cases = [
            (0.9, 0.149_366_418_167_15),
            (0.5, 0.493_173_406_595_54),
            (0.1, 0.801_342_048_181),
            (0.01, 0.938_674_200_26),
            (0.001, 0.980_652_147_91),
        ];
        for (rho, v) in cases {
            let got = upsilon_phase_retrieval(rho);
            assert!((got - v).abs() < 1e-9, "rho={rho}: {got} vs {v}");
        }
        assert!(upsilon_phase_retrieval(1.0).abs() < 1e-15);
        assert!((upsilon_relu(1.0) - 0.818_309_886_183_790_7).abs() < 1e-14);
    }

    #[test]
    fn identity_suite_quadrature_agrees() {
        for ch in [Channel::PhaseRetrieval, Channel::Relu] {
            for frac in [0.1, 0.5, 0.9] {
                let j = JointPZ::new(frac * 1.3, 1.3).unwrap();
                let (a, b, c) = identity_suite_quadrature(&ch, j).unwrap();
                assert!(((a - b) / b).abs() < 1e-6, "{ch:?} {frac}: {a} {b}");
                assert!(((c - b) / b).abs() < 1e-6, "{ch:?} {frac}: {c} {b}");
                // E Var(Z|P,Y) < τ^p
                assert!(b > 0.0 && b < 1.0 / j.tau_p);
            }
        }
    }

    #[test]
    fn noisy_pr_kernel_consistent() {
        let ch = Channel::PhaseRetrievalNoisy { sigma2: 0.05 };
        let j = JointPZ::new(0.4, 1.0).unwrap();
        let e = identity_suite_mc(&ch, j, 20_000, 3).unwrap();
        let a = e.gout_sq.mean;
        let b = e.neg_gout_prime.mean;
        assert!((a - b).abs() < 4.0 * (e.gout_sq.std_error + e.neg_gout_prime.std_error));
    }

    proptest! {
        #[test]
        fn derivative_closed_forms(p in -4.0f64..4.0, y in 0.01f64..6.0, tau in 0.05f64..3.0) {
            let d = gout_phase_retrieval_derivative(p, y, tau).unwrap();
            let f = fd(|p| gout_phase_retrieval(p, y, tau).unwrap(), p);
            prop_assert!((d - f).abs() <= 1e-6 * d.abs().max(1e-3));
            let d = gout_relu_derivative(p, 0.0, tau).unwrap();
            let f = fd(|p| gout_relu(p, 0.0, tau).unwrap(), p);
            prop_assert!((d - f).abs() <= 1e-6 * d.abs().max(1e-3));
        }
    }
}
