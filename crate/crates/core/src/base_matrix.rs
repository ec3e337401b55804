//! Base matrices (block variance profiles) and the block partition of [m]×[n].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

const COLUMN_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BaseMatrix {
    rows: usize,
    cols: usize,
    /// Row-major R×C.
    w: Vec<f64>,
    kappa1: f64,
    kappa2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CouplingParams {
    pub omega: usize,
    pub lambda: usize,
}

/// Config-level description of a design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    Iid,
    OmegaLambda { omega: usize, lambda: usize },
}

impl DesignSpec {
    pub fn build(&self) -> Result<BaseMatrix> {
        match *self {
            DesignSpec::Iid => Ok(BaseMatrix::iid()),
            DesignSpec::OmegaLambda { omega, lambda } => BaseMatrix::omega_lambda(CouplingParams { omega, lambda }),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DesignSpec::Iid => "iid".to_string(),
            DesignSpec::OmegaLambda { omega, lambda } => format!("sc({omega},{lambda})"),
        }
    }
}

impl BaseMatrix {
    /// The trivial 1×1 base matrix [1].
    pub fn iid() -> Self {
        BaseMatrix {
            rows: 1,
            cols: 1,
            w: vec![1.0],
            kappa1: 1.0,
            kappa2: 1.0,
        }
    }

    /// Band matrix with W_rc = 1/ω for c ≤ r ≤ c+ω−1 (1-based), of size
    /// (Λ+ω−1)×Λ.
    pub fn omega_lambda(p: CouplingParams) -> Result<Self> {
        if p.omega < 1 {
            return Err(Error::BaseMatrix("omega must be at least 1".into()));
        }
        if p.lambda + 1 < 2 * p.omega {
            return Err(Error::BaseMatrix(format!(
                "lambda = {} must be at least 2*omega - 1 = {}",
                p.lambda,
                2 * p.omega - 1
            )));
        }
        let rows = p.lambda + p.omega - 1;
        let cols = p.lambda;
        let mut w = vec![0.0; rows * cols];
        let v = 1.0 / p.omega as f64;
        for c in 0..cols {
            for r in c..c + p.omega {
                w[r * cols + c] = v;
            }
        }
        Self::validate(rows, cols, w, None)
    }

    /// Validate a raw row-major matrix. `kappa_bounds`, when given, is
    /// enforced on the row sums.
    pub fn validate(rows: usize, cols: usize, w: Vec<f64>, kappa_bounds: Option<(f64, f64)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::BaseMatrix("base matrix must be nonempty".into()));
        }
        if w.len() != rows * cols {
            return Err(Error::BaseMatrix(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                w.len()
            )));
        }
        for (k, &v) in w.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::BaseMatrix(format!(
                    "entry ({}, {}) = {v} is not a nonnegative finite number",
                    k / cols + 1,
                    k % cols + 1
                )));
            }
        }
        for c in 0..cols {
            let s: f64 = (0..rows).map(|r| w[r * cols + c]).sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::BaseMatrix(format!("column {} sums to {s}, not 1", c + 1)));
            }
        }
        let row_sums: Vec<f64> = (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().sum()).collect();
        for (r, &s) in row_sums.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::BaseMatrix(format!("row {} is identically zero", r + 1)));
            }
        }
        let kappa1 = row_sums.iter().cloned().fold(f64::INFINITY, f64::min);
        let kappa2 = row_sums.iter().cloned().fold(0.0, f64::max);
        if let Some((lo, hi)) = kappa_bounds {
            for (r, &s) in row_sums.iter().enumerate() {
                if s < lo || s > hi {
                    return Err(Error::BaseMatrix(format!(
                        "row {} sums to {s}, outside [{lo}, {hi}]",
                        r + 1
                    )));
                }
            }
        }
        Ok(BaseMatrix {
            rows,
            cols,
            w,
            kappa1,
            kappa2,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        if rows.iter().any(|v| v.len() != c) {
            return Err(Error::BaseMatrix("ragged rows".into()));
        }
        Self::validate(r, c, rows.concat(), None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.w[r * self.cols + c]
    }
    pub fn entries(&self) -> &[f64] {
        &self.w
    }
    /// Smallest row sum.
    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }
    /// Largest row sum.
    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.w[r * self.cols..(r + 1) * self.cols].iter().sum())
            .collect()
    }

    /// δ_in = δ·C/R.
    pub fn inner_sampling_ratio(&self, delta: f64) -> f64 {
        delta * self.cols as f64 / self.rows as f64
    }

    /// E{Z_r²} = (E{X²}/δ_in) Σ_c W_rc for each row block.
    pub fn row_block_variance_profile(&self, prior_second_moment: f64, delta_in: f64) -> Vec<f64> {
        self.row_sums()
            .into_iter()
            .map(|s| prior_second_moment / delta_in * s)
            .collect()
    }

    /// W·v for a C-vector v.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    /// Wᵀ·u for an R-vector u.
    pub fn mul_transpose_vec(&self, u: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c) * u[r]).sum())
            .collect()
    }

    /// Plain-text dense format: one row per line, whitespace-separated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| format!("{:?}", self.get(r, c))).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| Error::BaseMatrix(format!("line {}: {e}", i + 1)))?);
        }
        Self::from_rows(&rows)
    }
}

/// Contiguous row/column blocks of an m×n operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    pub m: usize,
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockPartition {
    pub fn new(base: &BaseMatrix, m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::BaseMatrix("m and n must be positive".into()));
        }
        if !m.is_multiple_of(base.rows()) {
            return Err(Error::BaseMatrix(format!(
                "R = {} does not divide m = {m}",
                base.rows()
            )));
        }
        if !n.is_multiple_of(base.cols()) {
            return Err(Error::BaseMatrix(format!(
                "C = {} does not divide n = {n}",
                base.cols()
            )));
        }
        Ok(BlockPartition {
            m,
            n,
            rows: base.rows(),
            cols: base.cols(),
        })
    }

    /// m/R.
    pub fn row_block_size(&self) -> usize {
        self.m / self.rows
    }
    /// n/C.
    pub fn col_block_size(&self) -> usize {
        self.n / self.cols
    }
    pub fn row_block(&self, i: usize) -> usize {
        i / self.row_block_size()
    }
    pub fn col_block(&self, j: usize) -> usize {
        j / self.col_block_size()
    }
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        let s = self.row_block_size();
        r * s..(r + 1) * s
    }
    pub fn col_range(&self, c: usize) -> std::ops::Range<usize> {
        let s = self.col_block_size();
        c * s..(c + 1) * s
    }
    /// Actual δ_in = (m/R)/(n/C).
    pub fn delta_in(&self) -> f64 {
        self.row_block_size() as f64 / self.col_block_size() as f64
    }
}

/// m = R·round(δn/R); returns (m, effective δ).
pub fn adjusted_rows(delta: f64, n: usize, rows: usize) -> (usize, f64) {
    let k = (delta * n as f64 / rows as f64).round().max(1.0) as usize;
    let m = k * rows;
    (m, m as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ol(omega: usize, lambda: usize) -> BaseMatrix {
        BaseMatrix::omega_lambda(CouplingParams { omega, lambda }).unwrap()
    }

    #[test]
    fn omega3_lambda7_band() {
        let w = ol(3, 7);
        assert_eq!((w.rows(), w.cols()), (9, 7));
        for c in 0..7 {
            let nz: Vec<usize> = (0..9).filter(|&r| w.get(r, c) > 0.0).collect();
            assert_eq!(nz, vec![c, c + 1, c + 2]);
            assert!(nz.iter().all(|&r| w.get(r, c) == 1.0 / 3.0));
        }
        // row sums enumerate to 1/3, 2/3, 1, ..., 1, 2/3, 1/3
        let rs = w.row_sums();
        let expect = [1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0];
        for (a, b) in rs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w.kappa1() - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.kappa2() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trivial_and_large_designs() {
        let w = ol(1, 1);
        assert_eq!(w, BaseMatrix::iid());
        assert_eq!(w.entries(), &[1.0]);
        let w = ol(6, 40);
        assert_eq!((w.rows(), w.cols()), (45, 40));
        assert!((w.kappa1() - 1.0 / 6.0).abs() < 1e-15);
        assert!((w.kappa2() - 1.0).abs() < 1e-12);
        assert!(BaseMatrix::omega_lambda(CouplingParams { omega: 3, lambda: 4 }).is_err());
    }

    #[test]
    fn sampling_ratio_examples() {
        assert!((ol(6, 40).inner_sampling_ratio(0.6) - 8.0 / 15.0).abs() < 1e-15);
        assert_eq!(BaseMatrix::iid().inner_sampling_ratio(0.37), 0.37);
        assert!((ol(20, 200).inner_sampling_ratio(0.8) - 0.730_594).abs() < 1e-6);
        let mut prev = 0.0;
        for lambda in 11..200 {
            let d = ol(6, lambda).inner_sampling_ratio(0.6);
            assert!(d > prev && d < 0.6);
            prev = d;
        }
    }

    #[test]
    fn variance_profile() {
        let w = ol(6, 40);
        let din = w.inner_sampling_ratio(0.6);
        let ez = w.row_block_variance_profile(2.0, din);
        assert!((ez[0] - 2.0 / din / 6.0).abs() < 1e-14);
        for r in 5..40 {
            assert!((ez[r] - 2.0 / din).abs() < 1e-12);
        }
        let mean: f64 = ez.iter().sum::<f64>() / ez.len() as f64;
        assert!((mean - 2.0 / 0.6).abs() < 1e-12);
        let iid = BaseMatrix::iid().row_block_variance_profile(2.0, 0.5);
        assert_eq!(iid, vec![4.0]);
    }

    #[test]
    fn validation_diagnostics() {
        assert!(BaseMatrix::from_rows(&[vec![1.0]]).is_ok());
        let e = BaseMatrix::from_rows(&[vec![0.5], vec![0.6]]).unwrap_err().to_string();
        assert!(e.contains("column 1") && e.contains("1.1"), "{e}");
        let e = BaseMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]])
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 2"), "{e}");
        let e = BaseMatrix::validate(1, 1, vec![1.0], Some((0.1, 0.5)))
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 1"), "{e}");
        let e = BlockPartition::new(&ol(3, 7), 91, 70).unwrap_err().to_string();
        assert!(e.contains("does not divide m"), "{e}");
    }

    #[test]
    fn text_round_trip() {
        let w = ol(3, 7);
        let back = BaseMatrix::from_text(&w.to_text()).unwrap();
        assert_eq!(w, back);
        assert!(BaseMatrix::from_text("1 x\n").is_err());
    }

    #[test]
    fn partition_blocks() {
        let p = BlockPartition::new(&ol(3, 7), 90, 70).unwrap();
        assert_eq!(p.row_block_size(), 10);
        assert_eq!(p.col_block_size(), 10);
        assert_eq!(p.row_block(19), 1);
        assert_eq!(p.col_range(4), 40..50);
    }

    #[test]
    fn m_adjustment() {
        let (m, d) = adjusted_rows(0.6, 20000, 45);
        assert_eq!(m, 12015);
        assert!((d - 0.60075).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn band_invariants(omega in 1usize..12, extra in 0usize..60) {
            let lambda = 2 * omega - 1 + extra;
            let w = ol(omega, lambda);
            prop_assert_eq!(w.rows(), lambda + omega - 1);
            for c in 0..w.cols() {
                let s: f64 = (0..w.rows()).map(|r| w.get(r, c)).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            for s in w.row_sums() {
                prop_assert!(s >= 1.0 / omega as f64 - 1e-15 && s <= 1.0 + 1e-12);
            }
        }
    }
}
