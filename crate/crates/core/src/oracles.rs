//! Dense brute-force references for certifying the lazy decomposition on
//! small instances.
//!
//! Nothing here shares code with [`crate::decomposition`]: subspace distances
//! are recomputed from scratch with a fresh dense solve per candidate, the QR
//! identity uses Householder QR, and the projection check builds its basis by
//! explicit Gram–Schmidt on feature vectors. Solves are never regularized;
//! near-singular systems surface as [`Error::OracleDegenerate`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::decomposition::{CholeskyFactor, StopReason};
use crate::error::{Error, Result};
use crate::kernels::{eval_cross, Kernel, PointSet};

pub const DEFAULT_ORACLE_CAP: usize = 2000;

/// Relative eigenvalue floor below which a selected-block Gram matrix counts
/// as numerically singular.
const SINGULAR_RCOND: f64 = 1e-14;

/// Dense symmetric kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    k: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps a square matrix, averaging it with its transpose.
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::DimensionMismatch { expected: k.nrows(), found: k.ncols() });
        }
        let k = (&k + k.transpose()) * 0.5;
        Ok(Self { k })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn trace(&self) -> f64 {
        self.k.trace()
    }

    pub fn max_diag(&self) -> f64 {
        self.k.diagonal().max()
    }

    /// `K[S, S]` for the listed indices, in order.
    pub fn submatrix(&self, s: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(s.len(), s.len(), |a, b| self.k[(s[a], s[b])])
    }

    /// `K[π, π]`.
    pub fn permuted(&self, permutation: &[usize]) -> DMatrix<f64> {
        self.submatrix(permutation)
    }
}

pub fn dense_gram<K: Kernel + ?Sized>(kernel: &K, points: &PointSet, cap: usize) -> Result<GramMatrix> {
    if points.len() > cap {
        return Err(Error::OracleScale { n: points.len(), cap });
    }
    GramMatrix::from_matrix(eval_cross(kernel, points, points)?)
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Ordered selection with the squared distance at which each point was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotSequence {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Checks that `K[S, S]` is usable for exact projections.
fn check_selected_block(gram: &GramMatrix, selected: &[usize]) -> Result<()> {
    if selected.is_empty() {
        return Ok(());
    }
    let block = gram.submatrix(selected);
    let eig = SymmetricEigen::new(block).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > SINGULAR_RCOND * hi) {
        return Err(Error::OracleDegenerate(format!(
            "selected block {selected:?} is numerically singular (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    Ok(())
}

/// `K_ii - k_iS K_SS⁻¹ k_Si`, squared RKHS distance of point `i` to the span
/// of the selected feature vectors, via a fresh LU solve.
pub fn subspace_sq_distance(gram: &GramMatrix, selected: &[usize], i: usize) -> Result<f64> {
    let k = gram.matrix();
    if selected.is_empty() {
        return Ok(k[(i, i)]);
    }
    let kss = gram.submatrix(selected);
    let ks = DVector::from_iterator(selected.len(), selected.iter().map(|&s| k[(s, i)]));
    let coef = kss
        .lu()
        .solve(&ks)
        .ok_or_else(|| Error::OracleDegenerate(format!("singular selected block {selected:?}")))?;
    let dist = k[(i, i)] - ks.dot(&coef);
    if !dist.is_finite() {
        return Err(Error::OracleDegenerate(format!("non-finite distance for point {i}")));
    }
    Ok(dist)
}

/// All squared distances to the span of `selected`.
pub fn subspace_sq_distances(gram: &GramMatrix, selected: &[usize]) -> Result<Vec<f64>> {
    check_selected_block(gram, selected)?;
    (0..gram.n()).map(|i| subspace_sq_distance(gram, selected, i)).collect()
}

/// Greedy farthest-point sampling against the linear span of the selected
/// feature vectors. Ties go to the lowest index; stops when the best
/// distance is `< tolerance` (or exactly zero), like the decomposition.
pub fn subspace_fps(gram: &GramMatrix, max_rank: usize, tolerance: f64) -> Result<PivotSequence> {
    let n = gram.n();
    let mut seq = PivotSequence { indices: Vec::new(), distances: Vec::new() };
    let mut taken = vec![false; n];
    while seq.indices.len() < max_rank.min(n) {
        check_selected_block(gram, &seq.indices)?;
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let d = subspace_sq_distance(gram, &seq.indices, i)?;
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, d) = best.expect("at least one candidate remains");
        if d < tolerance || d <= 0.0 {
            break;
        }
        taken[i] = true;
        seq.indices.push(i);
        seq.distances.push(d);
    }
    Ok(seq)
}

/// Classic farthest-point sampling with the kernel metric
/// `‖φ(x) - φ(s)‖² = K_xx + K_ss - 2 K_xs`, maximizing the distance to the
/// nearest selected point. The seed's reported distance is `K_seed,seed`
/// (its squared distance to the origin). Ties go to the lowest index.
pub fn pointwise_fps(gram: &GramMatrix, max_rank: usize, seed_index: usize) -> Result<PivotSequence> {
    let n = gram.n();
    if seed_index >= n {
        return Err(Error::InvalidArgument(format!("seed index {seed_index} out of range for {n} points")));
    }
    let k = gram.matrix();
    let metric = |a: usize, b: usize| k[(a, a)] + k[(b, b)] - 2.0 * k[(a, b)];
    let mut seq = PivotSequence { indices: vec![seed_index], distances: vec![k[(seed_index, seed_index)]] };
    let mut taken = vec![false; n];
    taken[seed_index] = true;
    let mut nearest: Vec<f64> = (0..n).map(|i| metric(i, seed_index)).collect();
    while seq.indices.len() < max_rank.min(n) {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("at least one candidate remains");
        taken[b] = true;
        seq.indices.push(b);
        seq.distances.push(nearest[b]);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(metric(i, b));
        }
    }
    Ok(seq)
}

/// Textbook pivoted Cholesky on a materialized matrix, with the full
/// trailing Schur-complement update at each step. Same pivot, tolerance and
/// clamping rules as the lazy version.
pub fn dense_pivoted_cholesky(gram: &GramMatrix, max_rank: usize, tolerance: f64) -> Result<CholeskyFactor> {
    let n = gram.n();
    let max_rank = max_rank.min(n);
    let mut a = gram.matrix().clone();
    let mut l = DMatrix::zeros(n, max_rank);
    let mut perm: Vec<usize> = (0..n).collect();
    let floor = -1e-9 * gram.trace().abs();
    let mut rank = 0;
    let mut stop = StopReason::ReachedMaxRank;

    for m in 0..max_rank {
        let mut best = m;
        for j in (m + 1)..n {
            if a[(j, j)] > a[(best, best)] {
                best = j;
            }
        }
        if best != m {
            a.swap_rows(m, best);
            a.swap_columns(m, best);
            l.swap_rows(m, best);
            perm.swap(m, best);
        }
        let pivot = a[(m, m)];
        if pivot < floor {
            return Err(Error::NotPsd { step: m + 1, value: pivot });
        }
        if pivot < tolerance || pivot <= 0.0 {
            stop = StopReason::ToleranceMet;
            break;
        }
        let diag = pivot.sqrt();
        l[(m, m)] = diag;
        for i in (m + 1)..n {
            l[(i, m)] = a[(i, m)] / diag;
        }
        for j in (m + 1)..n {
            for i in (m + 1)..n {
                a[(i, j)] -= l[(i, m)] * l[(j, m)];
            }
            if a[(j, j)] < floor {
                return Err(Error::NotPsd { step: m + 1, value: a[(j, j)] });
            }
            if a[(j, j)] < 0.0 {
                a[(j, j)] = 0.0;
            }
        }
        a[(m, m)] = 0.0;
        rank += 1;
    }

    let residual: Vec<f64> = (0..n).map(|i| if i < rank { 0.0 } else { a[(i, i)] }).collect();
    CholeskyFactor::from_parts(l.columns(0, rank).into_owned(), perm, residual, stop, tolerance)
}

/// Householder QR of `Φᵀ` with columns ordered by `order` (pivots first),
/// returning the leading `rank` rows of R (`rank × N`) with positive diagonal.
/// Transposed, this is the Cholesky factor in permuted order.
pub fn qr_factor_oracle(features: &DMatrix<f64>, order: &[usize], rank: usize) -> Result<DMatrix<f64>> {
    let n = features.nrows();
    if order.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: order.len() });
    }
    let f = features.ncols();
    if rank > f.min(n) {
        return Err(Error::DegenerateFeature { step: f.min(n) + 1, norm: 0.0 });
    }
    if rank == 0 {
        return Ok(DMatrix::zeros(0, n));
    }
    let cols = DMatrix::from_fn(f, n, |r, c| features[(order[c], r)]);
    let r = cols.qr().r();
    let mut out = r.rows(0, rank).into_owned();
    for j in 0..rank {
        let d = out[(j, j)];
        if d.abs() < 1e-12 {
            return Err(Error::DegenerateFeature { step: j + 1, norm: d.abs() });
        }
        if d < 0.0 {
            out.row_mut(j).neg_mut();
        }
    }
    Ok(out)
}

/// `max |Rᵀ - L|` over the factor block.
pub fn qr_identity_deviation(r: &DMatrix<f64>, factor: &CholeskyFactor) -> f64 {
    max_abs_diff(&r.transpose(), factor.l())
}

/// Orthonormal basis `e_1..e_m` in feature space, stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    vectors: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Gram–Schmidt on the feature vectors of `pivots`, in order: the residual
    /// `r_m = φ_m - Σ_j ⟨φ_m, e_j⟩ e_j` is normalized to give `e_m`. One
    /// re-orthogonalization pass keeps the basis orthonormal to rounding.
    pub fn gram_schmidt(features: &DMatrix<f64>, pivots: &[usize]) -> Result<Self> {
        let f = features.ncols();
        let mut vectors = DMatrix::zeros(f, pivots.len());
        for (m, &p) in pivots.iter().enumerate() {
            let phi: DVector<f64> = features.row(p).transpose();
            let mut r = phi.clone();
            for _ in 0..2 {
                for j in 0..m {
                    let e = vectors.column(j);
                    let c = e.dot(&r);
                    r.axpy(-c, &e, 1.0);
                }
            }
            let norm = r.norm();
            if norm < 1e-12 {
                return Err(Error::DegenerateFeature { step: m + 1, norm });
            }
            vectors.set_column(m, &(r / norm));
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `max |⟨e_i, e_j⟩ - δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.vectors.transpose() * &self.vectors;
        max_abs_diff(&g, &DMatrix::identity(self.len(), self.len()))
    }
}

/// `max_{i,j} |L_ij - ⟨φ(x_{π_i}), e_j⟩|`.
pub fn projection_coefficient_check(
    features: &DMatrix<f64>,
    basis: &OrthonormalBasis,
    factor: &CholeskyFactor,
) -> Result<f64> {
    if basis.len() != factor.rank() {
        return Err(Error::DimensionMismatch { expected: factor.rank(), found: basis.len() });
    }
    let permuted = DMatrix::from_fn(factor.n(), features.ncols(), |i, c| features[(factor.permutation()[i], c)]);
    let coef = permuted * basis.vectors();
    Ok(max_abs_diff(&coef, factor.l()))
}

/// `max_i |d[i] - dist²(φ(x_i), span of pivots)|` with distances from the
/// dense Gram formula.
pub fn residual_identity_check(gram: &GramMatrix, factor: &CholeskyFactor) -> Result<f64> {
    let dist = subspace_sq_distances(gram, factor.pivots())?;
    let d = factor.residual_diag();
    Ok(factor.permutation().iter().enumerate().map(|(m, &orig)| (d[m] - dist[orig]).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualMetrics {
    /// trace(K - L Lᵀ)
    pub trace_error: f64,
    pub frobenius_error: f64,
    pub min_eigenvalue: f64,
}

/// Forms `E = K[π, π] - L Lᵀ` densely.
pub fn residual_matrix(gram: &GramMatrix, factor: &CholeskyFactor) -> DMatrix<f64> {
    let l = factor.l();
    gram.permuted(factor.permutation()) - l * l.transpose()
}

pub fn residual_matrix_metrics(gram: &GramMatrix, factor: &CholeskyFactor) -> ResidualMetrics {
    let e = residual_matrix(gram, factor);
    ResidualMetrics { trace_error: e.trace(), frobenius_error: e.norm(), min_eigenvalue: min_eigenvalue(&e) }
}

/// `(det K[S, S], Π_m L[m, m]²)` for the selected set.
pub fn volume_check(gram: &GramMatrix, factor: &CholeskyFactor) -> (f64, f64) {
    let det = gram.submatrix(factor.pivots()).lu().determinant();
    let l = factor.l();
    let prod = (0..factor.rank()).map(|m| l[(m, m)] * l[(m, m)]).product();
    (det, prod)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
