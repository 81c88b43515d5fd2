//! Low-rank-plus-diagonal preconditioning for conjugate-gradient solves of
//! `(K + σ²I) x = b`.
//!
//! The preconditioner is `P = L Lᵀ + σ²I` with L the decomposition factor in
//! original point order. Its inverse is applied through the M×M core
//! `C = σ²I + LᵀL`:
//!
//! ```text
//! P⁻¹ v = (v - L C⁻¹ Lᵀ v) / σ²
//! ```
//!
//! C is factored once (O(NM²)); each application costs O(NM).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{unpermute, CholeskyFactor};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, PointSet};

pub const DEFAULT_BLOCK_SIZE: usize = 256;

/// Iterations between true-residual recomputations in CG.
pub const RESIDUAL_REFRESH: usize = 50;

pub struct LowRankPlusDiagonal {
    l: DMatrix<f64>,
    sigma2: f64,
    core: Cholesky<f64, Dyn>,
}

impl LowRankPlusDiagonal {
    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Factor in original point order.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `P⁻¹ v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        if self.rank() == 0 {
            return (v / self.sigma2).data.into();
        }
        let inner = self.core.solve(&(self.l.tr_mul(&v)));
        let out = (v - &self.l * inner) / self.sigma2;
        out.data.into()
    }

    /// `P v = L Lᵀ v + σ² v`, for checking the inverse.
    pub fn apply_operator(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        let out = &self.l * self.l.tr_mul(&v) + &v * self.sigma2;
        out.data.into()
    }
}

pub fn build_preconditioner(factor: &CholeskyFactor, sigma2: f64) -> Result<LowRankPlusDiagonal> {
    build_from_matrix(unpermute(factor), sigma2)
}

/// Same as [`build_preconditioner`] from a factor already in original order.
pub fn build_from_matrix(l: DMatrix<f64>, sigma2: f64) -> Result<LowRankPlusDiagonal> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    let m = l.ncols();
    let core = l.tr_mul(&l) + DMatrix::identity(m, m) * sigma2;
    let core = Cholesky::new(core).ok_or_else(|| Error::Numeric("preconditioner core is not positive definite".into()))?;
    Ok(LowRankPlusDiagonal { l, sigma2, core })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Entry 0 is the initial residual `‖b‖` (x₀ = 0); entry k follows
    /// iteration k. Recurrence residuals, replaced by the true residual
    /// every [`RESIDUAL_REFRESH`] iterations and at convergence.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub preconditioned: bool,
    pub preconditioner_rank: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual<F: Fn(&[f64]) -> Vec<f64>>(matvec: &F, b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter().zip(matvec(x)).map(|(bi, ai)| bi - ai).collect()
}

/// Preconditioned conjugate gradients from `x₀ = 0`. Stops once
/// `‖b - A x‖₂ ≤ tol·‖b‖₂` (checked on the true residual) or after
/// `max_iter` iterations.
pub fn cg_solve<F>(
    matvec: F,
    b: &[f64],
    precond: Option<&LowRankPlusDiagonal>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = b.len();
    if let Some(p) = precond {
        if p.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p.n() });
        }
    }
    let apply = |r: &[f64]| match precond {
        Some(p) => p.apply(r),
        None => r.to_vec(),
    };

    let b_norm = norm(b);
    let target = tol * b_norm;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut report = SolveReport {
        iterations: 0,
        residual_norms: vec![b_norm],
        converged: b_norm == 0.0,
        preconditioned: precond.is_some(),
        preconditioner_rank: precond.map_or(0, |p| p.rank()),
    };
    if report.converged {
        return Ok((x, report));
    }

    let mut z = apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for k in 1..=max_iter {
        let ap = matvec(&p);
        let pap = dot(&p, &ap);
        let alpha = rz / pap;
        if !alpha.is_finite() {
            return Err(Error::Divergence { iteration: k, residual_norms: report.residual_norms });
        }
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let mut r_norm = norm(&r);
        if r_norm <= target || k % RESIDUAL_REFRESH == 0 {
            r = true_residual(&matvec, b, &x);
            r_norm = norm(&r);
        }
        if !r_norm.is_finite() {
            report.residual_norms.push(r_norm);
            return Err(Error::Divergence { iteration: k, residual_norms: report.residual_norms });
        }
        report.iterations = k;
        report.residual_norms.push(r_norm);
        if r_norm <= target {
            report.converged = true;
            break;
        }
        z = apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((x, report))
}

/// `K v + σ² v` without forming K. Rows are processed in blocks in parallel;
/// every row sums over columns in index order, so the result does not depend
/// on scheduling.
pub fn kernel_matvec<K: Kernel + ?Sized>(
    kernel: &K,
    points: &PointSet,
    sigma2: f64,
    v: &[f64],
    block_size: usize,
) -> Result<Vec<f64>> {
    let n = points.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: v.len() });
    }
    let block = block_size.max(1);
    let mut out = vec![0.0; n];
    out.par_chunks_mut(block).enumerate().for_each(|(bi, chunk)| {
        for (off, o) in chunk.iter_mut().enumerate() {
            let i = bi * block + off;
            let xi = points.row(i);
            let mut s = 0.0;
            for (j, xj) in points.rows().enumerate() {
                s += kernel.eval_unchecked(xi, xj) * v[j];
            }
            *o = s + sigma2 * v[i];
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::StopReason;
    use crate::kernels::KernelSpec;

    #[test]
    fn rank_zero_is_pure_diagonal() {
        let p = build_from_matrix(DMatrix::zeros(3, 0), 0.5).unwrap();
        assert_eq!(p.apply(&[1.0, -2.0, 4.0]), vec![2.0, -4.0, 8.0]);
    }

    #[test]
    fn unit_vector_factor() {
        let p = build_from_matrix(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), 1.0).unwrap();
        let a = p.apply(&[1.0, 0.0]);
        assert!((a[0] - 0.5).abs() < 1e-15 && a[1].abs() < 1e-15);
        let b = p.apply(&[0.0, 1.0]);
        assert!(b[0].abs() < 1e-15 && (b[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(build_from_matrix(DMatrix::zeros(2, 0), 0.0).is_err());
        assert!(build_from_matrix(DMatrix::zeros(2, 0), -1.0).is_err());
    }

    #[test]
    fn uses_original_order() {
        let l = DMatrix::from_column_slice(2, 1, &[2.0, 1.0]);
        let f = CholeskyFactor::from_parts(l, vec![1, 0], vec![0.0; 2], StopReason::ReachedMaxRank, 0.0).unwrap();
        let p = build_preconditioner(&f, 1.0).unwrap();
        assert_eq!(p.factor().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn identity_operator_converges_in_one_step() {
        let b = vec![1.0, -3.0, 0.5];
        let (x, rep) = cg_solve(|v: &[f64]| v.to_vec(), &b, None, 1e-10, 10).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert_eq!(x, b);
    }

    #[test]
    fn zero_rhs_is_immediately_converged() {
        let (x, rep) = cg_solve(|v: &[f64]| v.to_vec(), &[0.0, 0.0], None, 1e-10, 10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_operator_diverges() {
        let err = cg_solve(|v: &[f64]| v.iter().map(|_| f64::NAN).collect(), &[1.0], None, 1e-8, 5).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 1, ref residual_norms } if residual_norms.len() == 1));
    }

    #[test]
    fn matvec_trivial_cases() {
        let x = PointSet::from_rows(&[[0.2, 0.1]]).unwrap();
        let k = KernelSpec::linear(1.0);
        let out = kernel_matvec(&k, &x, 0.5, &[2.0], 4).unwrap();
        assert!((out[0] - (0.05 + 0.5) * 2.0).abs() < 1e-15);
        let x = PointSet::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        assert_eq!(kernel_matvec(&k, &x, 0.1, &[0.0; 3], 2).unwrap(), vec![0.0; 3]);
        assert!(kernel_matvec(&k, &x, 0.1, &[0.0; 2], 2).is_err());
    }
}
