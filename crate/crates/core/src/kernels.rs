//! Positive-semidefinite kernels and the point sets they act on.
//!
//! Every kernel exposes three evaluation surfaces: a single pair, a cross
//! matrix between two point sets, and the O(N) diagonal of a Gram matrix.
//! Stationary families compute squared distances as `Σ (x_i - y_i)²` so that
//! `k(x, y) == k(y, x)` holds bit for bit and distances are never negative.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N points in D dimensions, stored row-major so each point is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("point set must contain at least one point".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("points must have at least one coordinate".into()));
        }
        if data.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, found: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coordinate at point {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { n, dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false; a valid point set holds at least one point.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New point set holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!("row {i} out of range for {} points", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, data)
    }

    /// Largest Euclidean distance between any two points. O(N²).
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                best = best.max(sq_dist(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }

    /// Smallest Euclidean distance between two distinct rows. Infinite for N = 1.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                best = best.min(sq_dist(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Matern12,
    Matern32,
    Matern52,
    Linear,
    Polynomial,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Linear | KernelFamily::Polynomial)
    }

    pub fn has_explicit_features(self) -> bool {
        !self.is_stationary()
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" | "gaussian" | "se" => Ok(KernelFamily::Rbf),
            "matern12" | "exponential" => Ok(KernelFamily::Matern12),
            "matern32" => Ok(KernelFamily::Matern32),
            "matern52" => Ok(KernelFamily::Matern52),
            "linear" => Ok(KernelFamily::Linear),
            "polynomial" | "poly" => Ok(KernelFamily::Polynomial),
            other => Err(Error::InvalidArgument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Kernel family plus hyperparameters.
///
/// `variance` scales the whole kernel. Stationary families satisfy
/// `k(x, x) = variance`. `lengthscale` is ignored by Linear/Polynomial and
/// `degree`/`offset` only apply to Polynomial: `variance * (xᵀy + offset)^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub variance: f64,
    pub degree: u32,
    pub offset: f64,
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, variance: f64) -> Self {
        Self::stationary(KernelFamily::Rbf, lengthscale, variance)
    }

    pub fn matern12(lengthscale: f64, variance: f64) -> Self {
        Self::stationary(KernelFamily::Matern12, lengthscale, variance)
    }

    pub fn matern32(lengthscale: f64, variance: f64) -> Self {
        Self::stationary(KernelFamily::Matern32, lengthscale, variance)
    }

    pub fn matern52(lengthscale: f64, variance: f64) -> Self {
        Self::stationary(KernelFamily::Matern52, lengthscale, variance)
    }

    pub fn linear(variance: f64) -> Self {
        Self { family: KernelFamily::Linear, lengthscale: 1.0, variance, degree: 1, offset: 0.0 }
    }

    pub fn polynomial(degree: u32, offset: f64, variance: f64) -> Self {
        Self { family: KernelFamily::Polynomial, lengthscale: 1.0, variance, degree, offset }
    }

    fn stationary(family: KernelFamily, lengthscale: f64, variance: f64) -> Self {
        Self { family, lengthscale, variance, degree: 1, offset: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {}", self.variance)));
        }
        if self.family.is_stationary() && !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if self.family == KernelFamily::Polynomial {
            if self.degree < 1 {
                return Err(Error::InvalidArgument("polynomial degree must be at least 1".into()));
            }
            if !(self.offset >= 0.0 && self.offset.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "polynomial offset must be nonnegative, got {}",
                    self.offset
                )));
            }
        }
        Ok(())
    }

    /// Kernel value from a squared distance (stationary families) or an
    /// inner product (Linear/Polynomial).
    #[inline]
    fn eval_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        let ls = self.lengthscale;
        let v = self.variance;
        match self.family {
            KernelFamily::Rbf => v * (-sq_dist(x, y) / (2.0 * ls * ls)).exp(),
            KernelFamily::Matern12 => {
                let r = sq_dist(x, y).sqrt();
                v * (-r / ls).exp()
            }
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * sq_dist(x, y).sqrt() / ls;
                v * (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let r2 = sq_dist(x, y);
                let s = 5f64.sqrt() * r2.sqrt() / ls;
                v * (1.0 + s + 5.0 * r2 / (3.0 * ls * ls)) * (-s).exp()
            }
            KernelFamily::Linear => v * dot(x, y),
            KernelFamily::Polynomial => v * (dot(x, y) + self.offset).powi(self.degree as i32),
        }
    }
}

/// Anything that evaluates a PSD kernel on raw coordinate slices.
///
/// Implementors provide the unchecked scalar evaluation; dimension checks
/// and the batched surfaces live in the free functions below.
pub trait Kernel: Sync {
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64;

    /// `k(x, x)`. Counted separately from pair evaluations.
    fn eval_self(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x, x)
    }
}

impl Kernel for KernelSpec {
    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_raw(x, y)
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        (**self).eval_unchecked(x, y)
    }

    #[inline]
    fn eval_self(&self, x: &[f64]) -> f64 {
        (**self).eval_self(x)
    }
}

pub fn eval_pair<K: Kernel + ?Sized>(kernel: &K, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    Ok(kernel.eval_unchecked(x, y))
}

/// Diagonal of the Gram matrix without forming it.
pub fn eval_diag<K: Kernel + ?Sized>(kernel: &K, points: &PointSet) -> Vec<f64> {
    points.rows().map(|x| kernel.eval_self(x)).collect()
}

/// Cross matrix `K[i, j] = k(a_i, b_j)`, filled column by column in parallel.
pub fn eval_cross<K: Kernel + ?Sized>(kernel: &K, a: &PointSet, b: &PointSet) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let rows = a.len();
    let mut data = vec![0.0; rows * b.len()];
    data.par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
        let y = b.row(j);
        for (i, out) in col.iter_mut().enumerate() {
            *out = kernel.eval_unchecked(a.row(i), y);
        }
    });
    Ok(DMatrix::from_vec(rows, b.len(), data))
}

/// `k(x_{rows[i]}, x_pivot)` for each listed row; the lazily evaluated column
/// of the decomposition.
pub fn eval_column<K: Kernel + ?Sized>(kernel: &K, points: &PointSet, rows: &[usize], pivot: usize) -> Vec<f64> {
    let y = points.row(pivot);
    rows.iter().map(|&i| kernel.eval_unchecked(points.row(i), y)).collect()
}

/// Finite-dimensional feature matrix Φ (N×F) with `ΦΦᵀ` equal to the Gram matrix.
///
/// Linear gives `√variance · X`. Polynomial enumerates the monomials of `x`
/// with total degree `≤ degree` in graded lexicographic order; the monomial
/// `x^β` carries weight `√(variance · degree! / (β! (degree-|β|)!) · offset^(degree-|β|))`.
/// Monomials whose weight is zero (offset = 0, |β| < degree) are omitted.
pub fn explicit_features(spec: &KernelSpec, points: &PointSet) -> Result<DMatrix<f64>> {
    spec.validate()?;
    match spec.family {
        KernelFamily::Linear => {
            let s = spec.variance.sqrt();
            Ok(DMatrix::from_fn(points.len(), points.dim(), |i, j| s * points.row(i)[j]))
        }
        KernelFamily::Polynomial => {
            let p = spec.degree as usize;
            let mut terms = Vec::new();
            for total in 0..=p {
                let weight_base = spec.variance * factorial(p) / factorial(p - total)
                    * spec.offset.powi((p - total) as i32);
                if weight_base == 0.0 {
                    continue;
                }
                for exps in graded_exponents(points.dim(), total) {
                    let denom: f64 = exps.iter().map(|&e| factorial(e)).product();
                    terms.push(((weight_base / denom).sqrt(), exps));
                }
            }
            Ok(DMatrix::from_fn(points.len(), terms.len(), |i, f| {
                let (w, exps) = &terms[f];
                let x = points.row(i);
                w * exps.iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>()
            }))
        }
        family => Err(Error::UnsupportedFeatures(family)),
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Exponent vectors of length `dim` summing to `total`, lexicographically
/// descending (x1² before x1·x2 before x2²).
fn graded_exponents(dim: usize, total: usize) -> Vec<Vec<usize>> {
    fn rec(pos: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            out.push(cur.clone());
            return;
        }
        for e in (0..=remaining).rev() {
            cur[pos] = e;
            rec(pos + 1, remaining - e, cur, out);
        }
    }
    let mut out = Vec::new();
    rec(0, total, &mut vec![0; dim], &mut out);
    out
}

/// Exact counts of kernel evaluations made through a [`CountingKernel`].
#[derive(Debug, Default)]
pub struct EvalCounter {
    pair: AtomicU64,
    diag: AtomicU64,
}

impl EvalCounter {
    pub fn pair_evals(&self) -> u64 {
        self.pair.load(Ordering::Relaxed)
    }

    pub fn diag_evals(&self) -> u64 {
        self.diag.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.pair_evals() + self.diag_evals()
    }
}

/// Wraps a kernel and counts every scalar evaluation.
#[derive(Debug)]
pub struct CountingKernel<K> {
    inner: K,
    counter: EvalCounter,
}

impl<K: Kernel> CountingKernel<K> {
    pub fn new(inner: K) -> Self {
        Self { inner, counter: EvalCounter::default() }
    }

    pub fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    pub fn inner(&self) -> &K {
        &self.inner
    }
}

impl<K: Kernel> Kernel for CountingKernel<K> {
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.counter.pair.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_unchecked(x, y)
    }

    fn eval_self(&self, x: &[f64]) -> f64 {
        self.counter.diag.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_self(x)
    }
}
