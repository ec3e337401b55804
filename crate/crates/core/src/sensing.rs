//! Spatially coupled sensing operators: dense Gaussian blocks and
//! subsampled-DCT blocks, with forward and transpose application.

use crate::base_matrix::{BaseMatrix, BlockPartition};
use crate::error::{invalid, Result};
use crate::seeds::{stream, Domain};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Dense,
    Dct,
}

/// Index sets and scaling of one nonzero DCT block.
#[derive(Clone, Debug)]
pub struct DctBlock {
    /// Selected DCT frequencies (one per row of the block).
    pub rows: Vec<usize>,
    /// Selected DCT positions (one per column of the block).
    pub cols: Vec<usize>,
    pub signs: Vec<f64>,
    pub scale: f64,
}

enum Kind {
    /// R·C blocks, each (m/R)×(n/C) row-major; f32 storage with f64
    /// accumulation.
    Dense(Vec<Option<Vec<f32>>>),
    Dct {
        size: usize,
        plan: Arc<dyn TransformType2And3<f64>>,
        blocks: Vec<Option<DctBlock>>,
    },
}

pub struct SensingOperator {
    part: BlockPartition,
    base: BaseMatrix,
    seed: u64,
    kind: Kind,
}

impl std::fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SensingOperator")
            .field("m", &self.part.m)
            .field("n", &self.part.n)
            .field("backend", &self.backend())
            .field("seed", &self.seed)
            .finish()
    }
}

/// Orthonormal DCT-II row normalisation c_k.
#[inline]
fn dct_norm(k: usize, size: usize) -> f64 {
    if k == 0 {
        (1.0 / size as f64).sqrt()
    } else {
        (2.0 / size as f64).sqrt()
    }
}

impl SensingOperator {
    pub fn sample(
        backend: Backend,
        base: &BaseMatrix,
        m: usize,
        n: usize,
        seed: u64,
        sign_flips: bool,
    ) -> Result<Self> {
        match backend {
            Backend::Dense => Self::sample_dense(base, m, n, seed),
            Backend::Dct => Self::sample_dct(base, m, n, seed, sign_flips),
        }
    }

    /// Entries of block (r, c) i.i.d. N(0, W_rc/(m/R)); zero blocks are not stored.
    pub fn sample_dense(base: &BaseMatrix, m: usize, n: usize, seed: u64) -> Result<Self> {
        let part = BlockPartition::new(base, m, n)?;
        let (mr, nc) = (part.row_block_size(), part.col_block_size());
        let cols = base.cols();
        let blocks: Vec<Option<Vec<f32>>> = (0..base.rows() * cols)
            .into_par_iter()
            .map(|k| {
                let w = base.get(k / cols, k % cols);
                if w == 0.0 {
                    return None;
                }
                let sd = (w / mr as f64).sqrt();
                let mut rng = stream(seed, Domain::Block, k as u64);
                Some(
                    (0..mr * nc)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            (sd * g) as f32
                        })
                        .collect(),
                )
            })
            .collect();
        Ok(SensingOperator {
            part,
            base: base.clone(),
            seed,
            kind: Kind::Dense(blocks),
        })
    }

    /// Each nonzero block keeps m/R rows and n/C columns of an orthonormal
    /// DCT of size N_b (smallest power of two ≥ 2·max(m/R, n/C)), drawn
    /// without replacement, optionally with random column signs, scaled by
    /// √(W_rc·N_b/(m/R)).
    pub fn sample_dct(base: &BaseMatrix, m: usize, n: usize, seed: u64, sign_flips: bool) -> Result<Self> {
        let part = BlockPartition::new(base, m, n)?;
        let (mr, nc) = (part.row_block_size(), part.col_block_size());
        let size = (2 * mr.max(nc)).next_power_of_two();
        let cols = base.cols();
        let blocks = (0..base.rows() * cols)
            .map(|k| {
                let w = base.get(k / cols, k % cols);
                if w == 0.0 {
                    return None;
                }
                let mut rng = stream(seed, Domain::Block, k as u64);
                let rows = sample_indices(&mut rng, size, mr).into_vec();
                let cols = sample_indices(&mut rng, size, nc).into_vec();
                let signs = (0..nc)
                    .map(|_| if sign_flips && rng.random::<bool>() { -1.0 } else { 1.0 })
                    .collect();
                Some(DctBlock {
                    rows,
                    cols,
                    signs,
                    scale: (w * size as f64 / mr as f64).sqrt(),
                })
            })
            .collect();
        let plan = DctPlanner::new().plan_dct2(size);
        Ok(SensingOperator {
            part,
            base: base.clone(),
            seed,
            kind: Kind::Dct { size, plan, blocks },
        })
    }

    pub fn m(&self) -> usize {
        self.part.m
    }
    pub fn n(&self) -> usize {
        self.part.n
    }
    pub fn partition(&self) -> &BlockPartition {
        &self.part
    }
    pub fn base(&self) -> &BaseMatrix {
        &self.base
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn backend(&self) -> Backend {
        match self.kind {
            Kind::Dense(_) => Backend::Dense,
            Kind::Dct { .. } => Backend::Dct,
        }
    }

    /// Master DCT size, for the dct backend.
    pub fn dct_size(&self) -> Option<usize> {
        match self.kind {
            Kind::Dct { size, .. } => Some(size),
            Kind::Dense(_) => None,
        }
    }

    pub fn dct_block(&self, r: usize, c: usize) -> Option<&DctBlock> {
        match &self.kind {
            Kind::Dct { blocks, .. } => blocks[r * self.base.cols() + c].as_ref(),
            Kind::Dense(_) => None,
        }
    }

    pub fn block_is_zero(&self, r: usize, c: usize) -> bool {
        let k = r * self.base.cols() + c;
        match &self.kind {
            Kind::Dense(b) => b[k].is_none(),
            Kind::Dct { blocks, .. } => blocks[k].is_none(),
        }
    }

    /// A·x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.part.n {
            return invalid(format!("apply: expected length {}, got {}", self.part.n, x.len()));
        }
        let mut out = vec![0.0; self.part.m];
        match &self.kind {
            Kind::Dense(blocks) => self.dense_apply(blocks, x, &mut out),
            Kind::Dct { size, plan, blocks } => self.dct_apply(*size, plan, blocks, x, &mut out),
        }
        Ok(out)
    }

    /// Aᵀ·v.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.part.m {
            return invalid(format!(
                "apply_transpose: expected length {}, got {}",
                self.part.m,
                v.len()
            ));
        }
        let mut out = vec![0.0; self.part.n];
        match &self.kind {
            Kind::Dense(blocks) => self.dense_apply_t(blocks, v, &mut out),
            Kind::Dct { size, plan, blocks } => self.dct_apply_t(*size, plan, blocks, v, &mut out),
        }
        Ok(out)
    }

    fn dense_apply(&self, blocks: &[Option<Vec<f32>>], x: &[f64], out: &mut [f64]) {
        let (mr, nc) = (self.part.row_block_size(), self.part.col_block_size());
        let cols = self.base.cols();
        out.par_chunks_mut(mr).enumerate().for_each(|(r, zr)| {
            for c in 0..cols {
                let Some(b) = &blocks[r * cols + c] else { continue };
                let xc = &x[c * nc..(c + 1) * nc];
                for (i, zi) in zr.iter_mut().enumerate() {
                    *zi += dot(&b[i * nc..(i + 1) * nc], xc);
                }
            }
        });
    }

    fn dense_apply_t(&self, blocks: &[Option<Vec<f32>>], v: &[f64], out: &mut [f64]) {
        let (mr, nc) = (self.part.row_block_size(), self.part.col_block_size());
        let (rows, cols) = (self.base.rows(), self.base.cols());
        const CHUNK: usize = 512;
        // split each column block into chunks so single-block designs still parallelise
        let tasks: Vec<(usize, &mut [f64])> = out
            .chunks_mut(nc)
            .enumerate()
            .flat_map(|(c, oc)| {
                oc.chunks_mut(CHUNK)
                    .enumerate()
                    .map(move |(k, o)| (c * nc + k * CHUNK, o))
            })
            .collect();
        tasks.into_par_iter().for_each(|(start, o)| {
            let c = start / nc;
            let off = start - c * nc;
            for r in 0..rows {
                let Some(b) = &blocks[r * cols + c] else { continue };
                let vr = &v[r * mr..(r + 1) * mr];
                for (i, &vi) in vr.iter().enumerate() {
                    let row = &b[i * nc + off..i * nc + off + o.len()];
                    for (oj, &a) in o.iter_mut().zip(row) {
                        *oj += vi * a as f64;
                    }
                }
            }
        });
    }

    fn dct_apply(
        &self,
        size: usize,
        plan: &Arc<dyn TransformType2And3<f64>>,
        blocks: &[Option<DctBlock>],
        x: &[f64],
        out: &mut [f64],
    ) {
        let (mr, nc) = (self.part.row_block_size(), self.part.col_block_size());
        let cols = self.base.cols();
        out.par_chunks_mut(mr).enumerate().for_each(|(r, zr)| {
            let mut buf = vec![0.0; size];
            let mut scratch = vec![0.0; plan.get_scratch_len()];
            for c in 0..cols {
                let Some(b) = &blocks[r * cols + c] else { continue };
                buf.iter_mut().for_each(|v| *v = 0.0);
                let xc = &x[c * nc..(c + 1) * nc];
                for j in 0..nc {
                    buf[b.cols[j]] = b.signs[j] * xc[j];
                }
                plan.process_dct2_with_scratch(&mut buf, &mut scratch);
                for (i, zi) in zr.iter_mut().enumerate() {
                    let k = b.rows[i];
                    *zi += b.scale * dct_norm(k, size) * buf[k];
                }
            }
        });
    }

    fn dct_apply_t(
        &self,
        size: usize,
        plan: &Arc<dyn TransformType2And3<f64>>,
        blocks: &[Option<DctBlock>],
        v: &[f64],
        out: &mut [f64],
    ) {
        let (mr, nc) = (self.part.row_block_size(), self.part.col_block_size());
        let (rows, cols) = (self.base.rows(), self.base.cols());
        out.par_chunks_mut(nc).enumerate().for_each(|(c, oc)| {
            let mut buf = vec![0.0; size];
            let mut scratch = vec![0.0; plan.get_scratch_len()];
            for r in 0..rows {
                let Some(b) = &blocks[r * cols + c] else { continue };
                buf.iter_mut().for_each(|v| *v = 0.0);
                let vr = &v[r * mr..(r + 1) * mr];
                for i in 0..mr {
                    let k = b.rows[i];
                    // DCT-III halves the k = 0 term
                    let w = if k == 0 { 2.0 } else { 1.0 };
                    buf[k] = w * b.scale * dct_norm(k, size) * vr[i];
                }
                plan.process_dct3_with_scratch(&mut buf, &mut scratch);
                for j in 0..nc {
                    oc[j] += b.signs[j] * buf[b.cols[j]];
                }
            }
        });
    }

    /// Dense row-major m×n copy of the operator; DCT entries are computed
    /// from the cosine formula, not by applying the transform.
    pub fn materialize(&self) -> Vec<f64> {
        let (m, n) = (self.part.m, self.part.n);
        let (mr, nc) = (self.part.row_block_size(), self.part.col_block_size());
        let cols = self.base.cols();
        let mut a = vec![0.0; m * n];
        for r in 0..self.base.rows() {
            for c in 0..cols {
                match &self.kind {
                    Kind::Dense(blocks) => {
                        if let Some(b) = &blocks[r * cols + c] {
                            for i in 0..mr {
                                for j in 0..nc {
                                    a[(r * mr + i) * n + c * nc + j] = b[i * nc + j] as f64;
                                }
                            }
                        }
                    }
                    Kind::Dct { size, blocks, .. } => {
                        if let Some(b) = &blocks[r * cols + c] {
                            let nb = *size as f64;
                            for i in 0..mr {
                                let k = b.rows[i];
                                for j in 0..nc {
                                    let t = b.cols[j] as f64;
                                    let d = dct_norm(k, *size)
                                        * (std::f64::consts::PI * k as f64 * (2.0 * t + 1.0) / (2.0 * nb)).cos();
                                    a[(r * mr + i) * n + c * nc + j] = b.scale * b.signs[j] * d;
                                }
                            }
                        }
                    }
                }
            }
        }
        a
    }

    /// Plain-text dump (one row per line) for debugging small operators.
    pub fn to_text(&self) -> String {
        let a = self.materialize();
        let n = self.part.n;
        a.chunks(n)
            .map(|row| row.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

#[inline]
fn dot(a: &[f32], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] as f64 * x[i];
        acc[1] += a[i + 1] as f64 * x[i + 1];
        acc[2] += a[i + 2] as f64 * x[i + 2];
        acc[3] += a[i + 3] as f64 * x[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] as f64 * x[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_matrix::CouplingParams;
    use rand::SeedableRng;

    fn ol(omega: usize, lambda: usize) -> BaseMatrix {
        BaseMatrix::omega_lambda(CouplingParams { omega, lambda }).unwrap()
    }

    fn randvec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn naive(a: &[f64], m: usize, n: usize, x: &[f64]) -> Vec<f64> {
        (0..m).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect()
    }

    #[test]
    fn iid_small_is_reproducible() {
        let a = SensingOperator::sample_dense(&BaseMatrix::iid(), 4, 4, 9).unwrap();
        let b = SensingOperator::sample_dense(&BaseMatrix::iid(), 4, 4, 9).unwrap();
        assert_eq!(a.materialize(), b.materialize());
        let c = SensingOperator::sample_dense(&BaseMatrix::iid(), 4, 4, 10).unwrap();
        assert_ne!(a.materialize(), c.materialize());
        assert!(a.materialize().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn zero_blocks_are_zero() {
        for backend in [Backend::Dense, Backend::Dct] {
            let op = SensingOperator::sample(backend, &ol(3, 7), 90, 70, 1, true).unwrap();
            assert!(op.block_is_zero(0, 4));
            let a = op.materialize();
            for i in 0..10 {
                for j in 40..50 {
                    assert_eq!(a[i * 70 + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn dense_matches_naive_product() {
        let op = SensingOperator::sample_dense(&ol(3, 7), 90, 70, 4).unwrap();
        let a = op.materialize();
        let x = randvec(70, 1);
        let z = op.apply(&x).unwrap();
        for (u, v) in z.iter().zip(naive(&a, 90, 70, &x)) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_matches_materialized() {
        let op = SensingOperator::sample_dct(&ol(3, 7), 360, 280, 5, true).unwrap();
        assert_eq!(op.dct_size(), Some(128));
        let a = op.materialize();
        let x = randvec(280, 2);
        let z = op.apply(&x).unwrap();
        for (u, v) in z.iter().zip(naive(&a, 360, 280, &x)) {
            assert!((u - v).abs() < 1e-10);
        }
        let v = randvec(360, 3);
        let t = op.apply_transpose(&v).unwrap();
        for j in 0..280 {
            let s: f64 = (0..360).map(|i| a[i * 280 + j] * v[i]).sum();
            assert!((t[j] - s).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_identity_both_backends() {
        for backend in [Backend::Dense, Backend::Dct] {
            let op = SensingOperator::sample(backend, &ol(3, 7), 450, 350, 6, true).unwrap();
            let x = randvec(350, 7);
            let v = randvec(450, 8);
            let lhs: f64 = v.iter().zip(op.apply(&x).unwrap()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(op.apply_transpose(&v).unwrap()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{backend:?}");
            assert!(op.apply(&vec![0.0; 350]).unwrap().iter().all(|&z| z == 0.0));
            assert!(op.apply(&[1.0]).is_err());
            assert!(op.apply_transpose(&[1.0]).is_err());
        }
    }

    #[test]
    fn dct_columns_have_unit_expected_norm() {
        let op = SensingOperator::sample_dct(&ol(3, 7), 900, 700, 11, false).unwrap();
        let a = op.materialize();
        let mean: f64 = (0..700)
            .map(|j| (0..900).map(|i| a[i * 700 + j].powi(2)).sum::<f64>())
            .sum::<f64>()
            / 700.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn dense_column_norms_concentrate() {
        let op = SensingOperator::sample_dense(&ol(3, 7), 9000, 7000, 12).unwrap();
        // Σ_j ‖A e_j‖² = ‖Aᵀ‖_F², estimated from block entries
        let a = match &op.kind {
            Kind::Dense(b) => b
                .iter()
                .flatten()
                .map(|blk| blk.iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
                .sum::<f64>(),
            _ => unreachable!(),
        };
        let mean = a / 7000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}
