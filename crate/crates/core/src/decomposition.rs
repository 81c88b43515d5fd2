//! Lazy pivoted Cholesky decomposition.
//!
//! Only the diagonal of the kernel matrix and one column per step are ever
//! evaluated: a rank-M run on N points costs `N + Σ_{m=1}^{M} (N - m)` kernel
//! evaluations and `O(NM)` memory.
//!
//! Row `m` of the factor belongs to the point `permutation[m]`; the factor is
//! stored column-major in that permuted order so the per-step Schur update
//! works on contiguous columns. Use [`unpermute`] for original point order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{eval_column, eval_diag, Kernel, PointSet};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionConfig {
    /// Upper bound on the rank; values above N are clamped to N.
    pub max_rank: usize,
    /// Absolute threshold on the largest remaining residual diagonal.
    pub tolerance: f64,
    /// Clamp residual diagonals at zero after each update.
    pub clamp_negative: bool,
}

impl DecompositionConfig {
    pub fn new(max_rank: usize) -> Self {
        Self { max_rank, tolerance: DEFAULT_TOLERANCE, clamp_negative: true }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_clamp(mut self, clamp_negative: bool) -> Self {
        self.clamp_negative = clamp_negative;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be finite and nonnegative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    ReachedMaxRank,
    ToleranceMet,
}

/// Low-rank factor `K[π, π] ≈ L Lᵀ` in permuted row order.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub(crate) l: DMatrix<f64>,
    pub(crate) permutation: Vec<usize>,
    pub(crate) residual_diag: Vec<f64>,
    pub(crate) stop_reason: StopReason,
    pub(crate) tolerance: f64,
}

impl CholeskyFactor {
    pub fn from_parts(
        l: DMatrix<f64>,
        permutation: Vec<usize>,
        residual_diag: Vec<f64>,
        stop_reason: StopReason,
        tolerance: f64,
    ) -> Result<Self> {
        let n = permutation.len();
        if l.nrows() != n || residual_diag.len() != n || l.ncols() > n {
            return Err(Error::InvalidArgument(format!(
                "inconsistent factor shape: L is {}x{}, permutation {}, residuals {}",
                l.nrows(),
                l.ncols(),
                n,
                residual_diag.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("permutation is not a bijection on 0..n".into()));
            }
        }
        Ok(Self { l, permutation, residual_diag, stop_reason, tolerance })
    }

    /// Number of points.
    pub fn n(&self) -> usize {
        self.permutation.len()
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    /// N×rank factor, rows in permuted order.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Original indices of the selected points, in selection order.
    pub fn pivots(&self) -> &[usize] {
        &self.permutation[..self.rank()]
    }

    /// Full permutation: position `m` holds original index `π_m`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Residual diagonal in permuted order. Consumed pivot slots hold 0.
    pub fn residual_diag(&self) -> &[f64] {
        &self.residual_diag
    }

    pub fn residual_trace(&self) -> f64 {
        self.residual_diag.iter().sum()
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop_reason
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Inverse of the permutation: `positions()[original] = permuted position`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.n()];
        for (m, &p) in self.permutation.iter().enumerate() {
            pos[p] = m;
        }
        pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: usize,
    pub pivot_index: usize,
    /// Residual diagonal of the pivot before normalization.
    pub pivot_value: f64,
    /// Σ d after the step.
    pub residual_trace: f64,
    /// Pair evaluations performed so far (excludes the N diagonal evaluations).
    pub pair_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub n: usize,
    pub initial_trace: f64,
    pub steps: Vec<StepRecord>,
}

impl DecompositionTrace {
    /// Diagonal plus pair evaluations over the whole run.
    pub fn total_evals(&self) -> u64 {
        self.n as u64 + self.steps.last().map_or(0, |s| s.pair_evals)
    }
}

/// `N + N·M - M(M+1)/2`: evaluations of a completed rank-M run on N points.
pub fn expected_evals(n: usize, rank: usize) -> u64 {
    let (n, m) = (n as u64, rank as u64);
    n + n * m - m * (m + 1) / 2
}

/// Step-by-step driver of the decomposition.
///
/// Between calls to [`LazyCholesky::step`] the state is the exact state of
/// the algorithm after that many steps, which lets callers inspect every
/// intermediate factor.
pub struct LazyCholesky<'a, K: ?Sized> {
    kernel: &'a K,
    points: &'a PointSet,
    config: DecompositionConfig,
    max_rank: usize,
    l: DMatrix<f64>,
    permutation: Vec<usize>,
    d: Vec<f64>,
    rank: usize,
    stop: Option<StopReason>,
    trace: DecompositionTrace,
}

impl<'a, K: Kernel + ?Sized> LazyCholesky<'a, K> {
    pub fn new(kernel: &'a K, points: &'a PointSet, config: DecompositionConfig) -> Result<Self> {
        config.validate()?;
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty point set".into()));
        }
        let d = eval_diag(kernel, points);
        if let Some((index, &value)) = d.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidKernel { index, value });
        }
        let max_rank = config.max_rank.min(n);
        let initial_trace = d.iter().sum();
        Ok(Self {
            kernel,
            points,
            config,
            max_rank,
            l: DMatrix::zeros(n, max_rank),
            permutation: (0..n).collect(),
            d,
            rank: 0,
            stop: None,
            trace: DecompositionTrace { n, initial_trace, steps: Vec::with_capacity(max_rank) },
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Current residual diagonal, permuted order.
    pub fn residual_diag(&self) -> &[f64] {
        &self.d
    }

    pub fn trace(&self) -> &DecompositionTrace {
        &self.trace
    }

    /// Runs one step. Returns `None` once the run has stopped.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.stop.is_some() {
            return Ok(None);
        }
        let m = self.rank;
        let n = self.d.len();
        if m == self.max_rank {
            self.stop = Some(StopReason::ReachedMaxRank);
            return Ok(None);
        }

        // first occurrence of the maximum
        let mut best = m;
        for j in (m + 1)..n {
            if self.d[j] > self.d[best] {
                best = j;
            }
        }
        if best != m {
            self.permutation.swap(m, best);
            self.d.swap(m, best);
            for j in 0..m {
                self.l.swap((m, j), (best, j));
            }
        }

        let pivot = self.d[m];
        if pivot < self.config.tolerance || pivot == 0.0 {
            self.stop = Some(StopReason::ToleranceMet);
            return Ok(None);
        }
        if !pivot.is_finite() {
            return Err(Error::Numeric(format!("non-finite pivot {pivot} at step {}", m + 1)));
        }

        let diag = pivot.sqrt();
        self.l[(m, m)] = diag;

        let mut col = eval_column(self.kernel, self.points, &self.permutation[m + 1..], self.permutation[m]);
        for j in 0..m {
            let coef = self.l[(m, j)];
            let prev = &self.l.as_slice()[j * n + m + 1..(j + 1) * n];
            for (c, &p) in col.iter_mut().zip(prev) {
                *c -= p * coef;
            }
        }

        let clamp = self.config.clamp_negative;
        let out = &mut self.l.as_mut_slice()[m * n + m + 1..(m + 1) * n];
        for ((o, c), r) in out.iter_mut().zip(&col).zip(&mut self.d[m + 1..]) {
            let v = c / diag;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite factor entry at step {}", m + 1)));
            }
            *o = v;
            *r -= v * v;
            if clamp && *r < 0.0 {
                *r = 0.0;
            }
        }
        self.d[m] = 0.0;
        self.rank += 1;

        let pair_evals = self.trace.steps.last().map_or(0, |s| s.pair_evals) + (n - m - 1) as u64;
        let record = StepRecord {
            step: m + 1,
            pivot_index: self.permutation[m],
            pivot_value: pivot,
            residual_trace: self.d.iter().sum(),
            pair_evals,
        };
        self.trace.steps.push(record);
        Ok(Some(record))
    }

    /// The factor after the steps taken so far. Before the run has stopped
    /// the reported stop reason is `ReachedMaxRank` (rank = steps taken).
    pub fn snapshot(&self) -> CholeskyFactor {
        CholeskyFactor {
            l: self.l.columns(0, self.rank).into_owned(),
            permutation: self.permutation.clone(),
            residual_diag: self.d.clone(),
            stop_reason: self.stop.unwrap_or(StopReason::ReachedMaxRank),
            tolerance: self.config.tolerance,
        }
    }

    /// Runs to completion.
    pub fn finish(mut self) -> Result<(CholeskyFactor, DecompositionTrace)> {
        while self.step()?.is_some() {}
        let rank = self.rank;
        let l = if rank == self.l.ncols() { self.l } else { self.l.columns(0, rank).into_owned() };
        let factor = CholeskyFactor {
            l,
            permutation: self.permutation,
            residual_diag: self.d,
            stop_reason: self.stop.unwrap_or(StopReason::ReachedMaxRank),
            tolerance: self.config.tolerance,
        };
        Ok((factor, self.trace))
    }
}

pub fn pivoted_cholesky<K: Kernel + ?Sized>(
    kernel: &K,
    points: &PointSet,
    config: DecompositionConfig,
) -> Result<(CholeskyFactor, DecompositionTrace)> {
    LazyCholesky::new(kernel, points, config)?.finish()
}

/// Row-wise squared norms of L (permuted order): the energy of each point
/// explained by the selected subspace.
pub fn factor_times_transpose_diag(factor: &CholeskyFactor) -> Vec<f64> {
    let l = factor.l();
    (0..l.nrows()).map(|i| l.row(i).iter().map(|v| v * v).sum()).collect()
}

/// L with rows moved back to original point order: output row `π_m` is L row `m`.
pub fn unpermute(factor: &CholeskyFactor) -> DMatrix<f64> {
    let l = factor.l();
    let mut out = DMatrix::zeros(l.nrows(), l.ncols());
    for (m, &orig) in factor.permutation().iter().enumerate() {
        out.row_mut(orig).copy_from(&l.row(m));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{CountingKernel, KernelSpec};

    #[test]
    fn single_point_linear() {
        let x = PointSet::from_rows(&[[2.0]]).unwrap();
        let (f, trace) = pivoted_cholesky(&KernelSpec::linear(1.0), &x, DecompositionConfig::new(1)).unwrap();
        assert_eq!(f.l().as_slice(), &[2.0]);
        assert_eq!(f.pivots(), &[0]);
        assert_eq!(f.stop_reason(), StopReason::ReachedMaxRank);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].pivot_value, 4.0);
    }

    #[test]
    fn identical_points_stop_at_rank_one() {
        let x = PointSet::from_rows(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]).unwrap();
        let (f, trace) = pivoted_cholesky(&KernelSpec::rbf(1.0, 1.0), &x, DecompositionConfig::new(3)).unwrap();
        assert_eq!(f.rank(), 1);
        assert_eq!(f.l().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(f.stop_reason(), StopReason::ToleranceMet);
        assert_eq!(f.residual_diag(), &[0.0, 0.0, 0.0]);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(factor_times_transpose_diag(&f), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_zero_factor() {
        let x = PointSet::from_rows(&[[0.0], [1.0]]).unwrap();
        let (f, trace) = pivoted_cholesky(&KernelSpec::rbf(1.0, 1.0), &x, DecompositionConfig::new(0)).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(f.stop_reason(), StopReason::ReachedMaxRank);
        assert_eq!(factor_times_transpose_diag(&f), vec![0.0, 0.0]);
        assert_eq!(trace.initial_trace, 2.0);
        assert!(trace.steps.is_empty());
        assert_eq!(unpermute(&f).shape(), (2, 0));
    }

    #[test]
    fn eval_counts_match_closed_form() {
        let rows: Vec<[f64; 1]> = (0..10).map(|i| [i as f64 * 0.37]).collect();
        let x = PointSet::from_rows(&rows).unwrap();
        let k = CountingKernel::new(KernelSpec::rbf(1.0, 1.0));
        let (f, trace) = pivoted_cholesky(&k, &x, DecompositionConfig::new(3).with_tolerance(0.0)).unwrap();
        assert_eq!(f.rank(), 3);
        assert_eq!(k.counter().diag_evals(), 10);
        assert_eq!(k.counter().pair_evals(), 9 + 8 + 7);
        assert_eq!(trace.steps.last().unwrap().pair_evals, 24);
        assert_eq!(trace.total_evals(), expected_evals(10, 3));
    }

    #[test]
    fn max_rank_clamped_to_n() {
        let x = PointSet::from_rows(&[[0.0], [3.0]]).unwrap();
        let (f, _) = pivoted_cholesky(&KernelSpec::rbf(1.0, 1.0), &x, DecompositionConfig::new(10)).unwrap();
        assert_eq!(f.rank(), 2);
        assert_eq!(f.stop_reason(), StopReason::ReachedMaxRank);
    }

    #[test]
    fn larger_diagonal_pivots_first() {
        let x = PointSet::from_rows(&[[1.0, 0.0], [0.0, 3.0]]).unwrap();
        let (f, _) = pivoted_cholesky(&KernelSpec::linear(1.0), &x, DecompositionConfig::new(2)).unwrap();
        assert_eq!(f.pivots(), &[1, 0]);
        assert_eq!(f.l().as_slice(), &[3.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_tolerance_rejected() {
        let x = PointSet::from_rows(&[[0.0]]).unwrap();
        let cfg = DecompositionConfig::new(1).with_tolerance(-1.0);
        assert!(pivoted_cholesky(&KernelSpec::rbf(1.0, 1.0), &x, cfg).is_err());
    }

    struct NegativeDiag;
    impl Kernel for NegativeDiag {
        fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
            if x == y {
                -1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn negative_diagonal_is_invalid_kernel() {
        let x = PointSet::from_rows(&[[0.0], [1.0]]).unwrap();
        let err = pivoted_cholesky(&NegativeDiag, &x, DecompositionConfig::new(1)).unwrap_err();
        assert!(matches!(err, Error::InvalidKernel { index: 0, .. }));
    }

    #[test]
    fn unpermute_small_case() {
        // pivots [2, 0] on N = 3
        let l = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 3.0, 4.0, 5.0]);
        let f = CholeskyFactor::from_parts(l.clone(), vec![2, 0, 1], vec![0.0; 3], StopReason::ReachedMaxRank, 0.0)
            .unwrap();
        let u = unpermute(&f);
        assert_eq!(u.row(2), l.row(0));
        assert_eq!(u.row(0), l.row(1));
        assert_eq!(u.row(1), l.row(2));

        let id = CholeskyFactor::from_parts(l.clone(), vec![0, 1, 2], vec![0.0; 3], StopReason::ReachedMaxRank, 0.0)
            .unwrap();
        assert_eq!(unpermute(&id), l);
    }

    #[test]
    fn from_parts_rejects_bad_permutation() {
        let l = DMatrix::zeros(2, 1);
        assert!(CholeskyFactor::from_parts(l.clone(), vec![0, 0], vec![0.0; 2], StopReason::ToleranceMet, 0.0).is_err());
        assert!(CholeskyFactor::from_parts(l, vec![0, 2], vec![0.0; 2], StopReason::ToleranceMet, 0.0).is_err());
    }

    #[test]
    fn snapshots_grow_by_one_column() {
        let rows: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 * 0.3, (i * i) as f64 * 0.1]).collect();
        let x = PointSet::from_rows(&rows).unwrap();
        let spec = KernelSpec::rbf(0.5, 1.0);
        let mut run = LazyCholesky::new(&spec, &x, DecompositionConfig::new(4)).unwrap();
        let mut m = 0;
        while run.step().unwrap().is_some() {
            m += 1;
            let snap = run.snapshot();
            assert_eq!(snap.rank(), m);
            assert_eq!(snap.residual_diag()[m - 1], 0.0);
        }
        assert_eq!(run.stop_reason(), Some(StopReason::ReachedMaxRank));
    }
}
