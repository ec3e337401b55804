//! Deterministic one-dimensional quadrature: adaptive Gauss–Kronrod (21-point)
//! with user-supplied break points, plus a Gaussian-expectation wrapper.
//!
//! Nested calls give the two- and three-dimensional integrals used by the
//! channel kernels and the replica potential.

use crate::special::normal_pdf;

// Kronrod abscissae/weights on [-1, 1] (QUADPACK qk21); the odd entries are
// the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_353_226,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Half-width, in standard deviations, of the window used for Gaussian
/// expectations. φ(13) ≈ 8e-38.
pub const GAUSS_HALF_WIDTH: f64 = 13.0;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_segments: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-14,
            rel: 1e-12,
            max_segments: 500,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * h;
    let resabs = resabs * h.abs();
    let resasc = resasc * h.abs();
    let mut error = ((resk - resg) * h).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Segment { a, b, value, error }
}

/// Integrate `f` over [points[0], points[last]], starting from the segments
/// delimited by `points` (which must be sorted; duplicates are ignored).
pub fn integrate_points<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: Tolerance) -> f64 {
    let mut segs: Vec<Segment> = Vec::with_capacity(64);
    for w in points.windows(2) {
        if w[1] > w[0] {
            segs.push(gk21(&mut f, w[0], w[1]));
        }
    }
    if segs.is_empty() {
        return 0.0;
    }
    loop {
        let total: f64 = segs.iter().map(|s| s.value).sum();
        let err: f64 = segs.iter().map(|s| s.error).sum();
        if err <= tol.abs.max(tol.rel * total.abs()) || segs.len() >= tol.max_segments {
            return total;
        }
        let (idx, worst) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, s)| (i, *s))
            .unwrap();
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // interval exhausted at machine precision
            segs[idx].error = 0.0;
            continue;
        }
        segs[idx] = gk21(&mut f, worst.a, mid);
        segs.push(gk21(&mut f, mid, worst.b));
    }
}

/// Integrate `f` over [a, b] with optional interior break points.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> f64 {
    if b == a {
        return 0.0;
    }
    let (lo, hi, sign) = if b > a { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts = Vec::with_capacity(breaks.len() + 2);
    pts.push(lo);
    pts.extend(breaks.iter().cloned().filter(|&x| x > lo && x < hi));
    pts.push(hi);
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    sign * integrate_points(f, &pts, tol)
}

/// E f(G) for G ~ N(0, 1); `breaks` are locations in the G coordinate where
/// `f` changes quickly or has a kink.
pub fn std_normal_expectation<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], tol: Tolerance) -> f64 {
    let l = GAUSS_HALF_WIDTH;
    let mut b: Vec<f64> = Vec::with_capacity(breaks.len() + 1);
    b.push(0.0);
    b.extend_from_slice(breaks);
    integrate(|g| f(g) * normal_pdf(g), -l, l, &b, tol)
}

/// E f(mean + sd·G); `breaks` are given in the original x coordinate.
pub fn normal_expectation<F: FnMut(f64) -> f64>(mut f: F, mean: f64, sd: f64, breaks: &[f64], tol: Tolerance) -> f64 {
    if sd == 0.0 {
        return f(mean);
    }
    let gb: Vec<f64> = breaks.iter().map(|&x| (x - mean) / sd).collect();
    std_normal_expectation(|g| f(mean + sd * g), &gb, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_exact_on_degree_30() {
        let v = integrate(|x| x.powi(30), -1.0, 1.0, &[], Tolerance::default());
        assert!((v - 2.0 / 31.0).abs() < 1e-15);
        let s = gk21(&mut |x: f64| x.powi(18), -1.0, 1.0);
        assert!((s.value - 2.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_moments() {
        let t = Tolerance::default();
        let m0 = std_normal_expectation(|_| 1.0, &[], t);
        let m2 = std_normal_expectation(|g| g * g, &[], t);
        let m4 = std_normal_expectation(|g| g.powi(4), &[], t);
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-13);
        assert!((m4 - 3.0).abs() < 1e-12);
        let e = normal_expectation(|x| x * x, 2.0, 0.5, &[], t);
        assert!((e - 4.25).abs() < 1e-12);
    }

    #[test]
    fn handles_kinks_and_reversed_limits() {
        let t = Tolerance::default();
        let v = integrate(|x: f64| x.abs(), -1.0, 2.0, &[0.0], t);
        assert!((v - 2.5).abs() < 1e-14);
        let r = integrate(|x: f64| x, 1.0, 0.0, &[], t);
        assert!((r + 0.5).abs() < 1e-15);
        // E[1{G > 0.3}] = Φ(-0.3)
        let p = std_normal_expectation(|g| if g > 0.3 { 1.0 } else { 0.0 }, &[0.3], t);
        assert!((p - crate::special::normal_sf(0.3)).abs() < 1e-13);
    }

    #[test]
    fn sharp_logistic_step() {
        // ∫ sigmoid(k x) over [-1, 1] = 1 by symmetry, for any k
        let t = Tolerance::default();
        let v = integrate(|x: f64| 1.0 / (1.0 + (-2000.0 * x).exp()), -1.0, 1.0, &[], t);
        assert!((v - 1.0).abs() < 1e-12);
    }
}
