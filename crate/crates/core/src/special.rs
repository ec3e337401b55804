//! Normal density/CDF helpers and the Mills ratio.

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Above this argument the Mills ratio switches to the continued fraction.
pub const MILLS_SWITCH: f64 = 6.0;

/// Standard normal PDF φ(x).
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF Φ(x).
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail Φ(−x), accurate for large positive x.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// M(u) − u, where M(u) = φ(u)/Φ(−u).
///
/// For u > 6 this evaluates the continued fraction
/// 1/(u + 2/(u + 3/(u + ...))) directly, so the difference never suffers
/// cancellation.
pub fn mills_excess(u: f64) -> f64 {
    if u > MILLS_SWITCH {
        let mut t = u;
        for k in (2..=90).rev() {
            t = u + k as f64 / t;
        }
        1.0 / t
    } else {
        normal_pdf(u) / normal_sf(u) - u
    }
}

/// Inverse Mills ratio M(u) = φ(u)/Φ(−u).
pub fn mills_ratio(u: f64) -> f64 {
    if u > MILLS_SWITCH {
        u + mills_excess(u)
    } else {
        normal_pdf(u) / normal_sf(u)
    }
}

/// Scaled complementary error function exp(x²)·erfc(x).
pub fn erfcx(x: f64) -> f64 {
    let u = SQRT_2 * x;
    if u > MILLS_SWITCH {
        (2.0 / std::f64::consts::PI).sqrt() / mills_ratio(u)
    } else {
        (x * x).exp() * libm::erfc(x)
    }
}

/// sech²(z) without overflow for large |z|.
#[inline]
pub fn sech2(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
