//! Randomized verification battery: seeded instances, suite routing and the
//! named checks run against the dense oracles.
//!
//! Instances whose points are separated by at least `min_separation` go to
//! the equality suite, where lazy and oracle pivot sequences must agree
//! exactly. Instances with (near-)duplicate points go to the tie suite, which
//! only checks the tie-break rule and the residual identities, since the
//! argmax order among near-ties is rounding-dependent.

use serde::{Deserialize, Serialize};

use crate::data::Rng;
use crate::decomposition::{factor_times_transpose_diag, CholeskyFactor, DecompositionConfig, LazyCholesky};
use crate::error::{Error, Result};
use crate::kernels::{eval_diag, explicit_features, KernelFamily, KernelSpec, PointSet};
use crate::oracles::{
    dense_gram, dense_pivoted_cholesky, max_abs_diff, pointwise_fps, projection_coefficient_check,
    qr_factor_oracle, qr_identity_deviation, residual_identity_check, residual_matrix_metrics, subspace_fps,
    subspace_sq_distances, volume_check, GramMatrix, OrthonormalBasis, DEFAULT_ORACLE_CAP,
};

pub const LEMMA_TOL: f64 = 1e-8;
pub const FACTOR_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const PSD_TOL: f64 = 1e-8;
pub const QR_TOL: f64 = 1e-8;
pub const PROJECTION_TOL: f64 = 1e-8;
pub const ORTHONORMAL_TOL: f64 = 1e-10;
pub const VOLUME_TOL: f64 = 1e-8;
pub const VOLUME_MAX_RANK: usize = 12;
pub const MIN_SEPARATION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub max_n: usize,
    pub max_rank: usize,
    pub families: Vec<KernelFamily>,
    pub min_separation: f64,
    pub tolerance: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            max_n: 50,
            max_rank: 15,
            families: vec![
                KernelFamily::Rbf,
                KernelFamily::Matern12,
                KernelFamily::Matern32,
                KernelFamily::Matern52,
                KernelFamily::Linear,
                KernelFamily::Polynomial,
            ],
            min_separation: MIN_SEPARATION,
            tolerance: crate::decomposition::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstance {
    pub seed: u64,
    pub points: PointSet,
    pub spec: KernelSpec,
    pub max_rank: usize,
    pub tolerance: f64,
}

/// Seeded instance: N in `[2, max_n]`, D in `[1, 3]`, points uniform in the
/// unit cube and resampled until pairwise separation ≥ `min_separation`.
/// Stationary lengthscales are drawn in `[0.25, 1]` × data diameter.
pub fn random_instance(seed: u64, cfg: &InstanceConfig) -> Result<RandomInstance> {
    if cfg.max_n == 0 || cfg.families.is_empty() {
        return Err(Error::InvalidArgument("instance config needs max_n ≥ 1 and at least one family".into()));
    }
    let mut rng = Rng::new(seed);
    let n = rng.range(cfg.max_n.min(2), cfg.max_n);
    let dim = rng.range(1, 3);
    let family = cfg.families[rng.range(0, cfg.families.len() - 1)];
    let points = loop {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.uniform()).collect();
        let p = PointSet::new(n, dim, data)?;
        if p.min_pairwise_distance() >= cfg.min_separation {
            break p;
        }
    };
    let diameter = if n > 1 { points.diameter() } else { 1.0 };
    let lengthscale = diameter * (0.25 + 0.75 * rng.uniform());
    let variance = 0.5 + 1.5 * rng.uniform();
    let spec = match family {
        KernelFamily::Linear => KernelSpec::linear(variance),
        KernelFamily::Polynomial => {
            let degree = rng.range(1, 3) as u32;
            KernelSpec::polynomial(degree, rng.uniform(), variance)
        }
        f => KernelSpec { family: f, lengthscale, variance, degree: 1, offset: 0.0 },
    };
    let max_rank = rng.range(1, cfg.max_rank.max(1));
    Ok(RandomInstance { seed, points, spec, max_rank, tolerance: cfg.tolerance })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Equality,
    TieBreak,
    Fixture,
}

pub fn classify(points: &PointSet, min_separation: f64) -> Suite {
    if points.min_pairwise_distance() >= min_separation {
        Suite::Equality
    } else {
        Suite::TieBreak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instance_seed: u64,
    pub suite: Suite,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    fn new(name: &str, seed: u64, suite: Suite, deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instance_seed: seed,
            suite,
            deviation,
            tolerance,
            passed: deviation <= tolerance,
            detail: None,
        }
    }

    fn failed(name: &str, seed: u64, suite: Suite, detail: String) -> Self {
        Self {
            name: name.to_string(),
            instance_seed: seed,
            suite,
            deviation: f64::MAX,
            tolerance: 0.0,
            passed: false,
            detail: Some(detail),
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub instances: usize,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn from_checks(instances: usize, checks: Vec<CheckResult>) -> Self {
        Self { instances, passed: checks.iter().all(|c| c.passed), checks }
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Every intermediate factor of a run, rank 0 through the final rank.
pub fn factor_snapshots(spec: &KernelSpec, points: &PointSet, config: DecompositionConfig) -> Result<Vec<CholeskyFactor>> {
    let mut run = LazyCholesky::new(spec, points, config)?;
    let mut out = vec![run.snapshot()];
    while run.step()?.is_some() {
        out.push(run.snapshot());
    }
    let (last, _) = run.finish()?;
    *out.last_mut().expect("non-empty") = last;
    Ok(out)
}

/// Residual-identity, trace and PSD checks over every step of a run.
fn step_checks(gram: &GramMatrix, snaps: &[CholeskyFactor], seed: u64, suite: Suite) -> Vec<CheckResult> {
    let max_diag = gram.max_diag();
    let trace = gram.trace();
    let mut lemma = 0.0f64;
    let mut trace_dev = 0.0f64;
    let mut psd = 0.0f64;
    let mut explained = 0.0f64;
    for f in snaps {
        match residual_identity_check(gram, f) {
            Ok(d) => lemma = lemma.max(d),
            Err(e) => return vec![CheckResult::failed("lemma_residual_identity", seed, suite, e.to_string())],
        }
        let m = residual_matrix_metrics(gram, f);
        trace_dev = trace_dev.max((m.trace_error - f.residual_trace()).abs() / trace);
        psd = psd.max((-m.min_eigenvalue).max(0.0) / trace);
        let rows = factor_times_transpose_diag(f);
        let diag: Vec<f64> = f.permutation().iter().map(|&p| gram.matrix()[(p, p)]).collect();
        for ((d0, e), r) in diag.iter().zip(&rows).zip(f.residual_diag()) {
            explained = explained.max((d0 - e - r).abs() / max_diag);
        }
    }
    vec![
        CheckResult::new("lemma_residual_identity", seed, suite, lemma, LEMMA_TOL * max_diag),
        CheckResult::new("trace_identity", seed, suite, trace_dev, TRACE_TOL),
        CheckResult::new("psd_residual", seed, suite, psd, PSD_TOL),
        CheckResult::new("explained_energy", seed, suite, explained, 1e-10),
    ]
}

/// Runs the full battery on one instance.
pub fn check_instance(inst: &RandomInstance, min_separation: f64) -> Vec<CheckResult> {
    let suite = classify(&inst.points, min_separation);
    match check_instance_in(inst, suite) {
        Ok(c) => c,
        Err(e) => vec![CheckResult::failed("instance_setup", inst.seed, suite, e.to_string())],
    }
}

fn check_instance_in(inst: &RandomInstance, suite: Suite) -> Result<Vec<CheckResult>> {
    let seed = inst.seed;
    let config = DecompositionConfig::new(inst.max_rank).with_tolerance(inst.tolerance);
    let gram = dense_gram(&inst.spec, &inst.points, DEFAULT_ORACLE_CAP)?;
    let snaps = factor_snapshots(&inst.spec, &inst.points, config)?;
    let factor = snaps.last().expect("non-empty");
    let mut checks = step_checks(&gram, &snaps, seed, suite);

    let mut run = LazyCholesky::new(&inst.spec, &inst.points, config)?;
    let (_, trace) = {
        let mut tie_violation = None;
        loop {
            let m = run.rank();
            let d = run.residual_diag();
            let expected = if m < d.len() {
                let mut best = m;
                for j in (m + 1)..d.len() {
                    if d[j] > d[best] {
                        best = j;
                    }
                }
                Some(run.permutation()[best])
            } else {
                None
            };
            match run.step()? {
                Some(rec) => {
                    if Some(rec.pivot_index) != expected && tie_violation.is_none() {
                        tie_violation = Some(rec.step);
                    }
                }
                None => break,
            }
        }
        checks.push(
            CheckResult::new("tie_break_rule", seed, suite, tie_violation.map_or(0.0, |s| s as f64), 0.0)
                .with_detail(format!("rank {}", run.rank())),
        );
        run.finish()?
    };

    let monotone = trace.steps.windows(2).map(|w| (w[1].pivot_value - w[0].pivot_value).max(0.0)).fold(0.0, f64::max);
    checks.push(CheckResult::new("pivot_value_monotone", seed, suite, monotone, 0.0));

    if suite == Suite::Equality {
        let max_diag = gram.max_diag();
        match subspace_fps(&gram, inst.max_rank, inst.tolerance) {
            Ok(seq) => {
                let same = seq.indices == factor.pivots();
                checks.push(
                    CheckResult::new("theorem_pivot_sequence", seed, suite, if same { 0.0 } else { 1.0 }, 0.0)
                        .with_detail(format!("lazy {:?} oracle {:?}", factor.pivots(), seq.indices)),
                );
                if same {
                    let dev = seq
                        .distances
                        .iter()
                        .zip(&trace.steps)
                        .map(|(a, s)| (a - s.pivot_value).abs() / s.pivot_value.abs().max(max_diag))
                        .fold(0.0, f64::max);
                    checks.push(CheckResult::new("pivot_value_distance", seed, suite, dev, LEMMA_TOL));
                }
            }
            Err(e) => checks.push(CheckResult::failed("theorem_pivot_sequence", seed, suite, e.to_string())),
        }

        match dense_pivoted_cholesky(&gram, inst.max_rank, inst.tolerance) {
            Ok(dense) if dense.pivots() == factor.pivots() => {
                checks.push(CheckResult::new("dense_lazy_factor", seed, suite, max_abs_diff(dense.l(), factor.l()), FACTOR_TOL));
            }
            Ok(dense) => checks.push(CheckResult::failed(
                "dense_lazy_factor",
                seed,
                suite,
                format!("pivots differ: dense {:?} lazy {:?}", dense.pivots(), factor.pivots()),
            )),
            Err(e) => checks.push(CheckResult::failed("dense_lazy_factor", seed, suite, e.to_string())),
        }

        if factor.rank() <= VOLUME_MAX_RANK && factor.rank() > 0 {
            let (det, prod) = volume_check(&gram, factor);
            checks.push(CheckResult::new("volume_determinant", seed, suite, (det - prod).abs() / det.abs().max(prod.abs()), VOLUME_TOL));
        }

        if inst.spec.family.has_explicit_features() {
            checks.extend(feature_checks(inst, factor)?);
        }
    }
    Ok(checks)
}

fn feature_checks(inst: &RandomInstance, factor: &CholeskyFactor) -> Result<Vec<CheckResult>> {
    let seed = inst.seed;
    let suite = Suite::Equality;
    let phi = explicit_features(&inst.spec, &inst.points)?;
    let mut out = Vec::new();
    match qr_factor_oracle(&phi, factor.permutation(), factor.rank()) {
        Ok(r) => out.push(CheckResult::new("qr_factor_identity", seed, suite, qr_identity_deviation(&r, factor), QR_TOL)),
        Err(e) => out.push(CheckResult::failed("qr_factor_identity", seed, suite, e.to_string())),
    }
    match OrthonormalBasis::gram_schmidt(&phi, factor.pivots()) {
        Ok(basis) => {
            out.push(CheckResult::new("basis_orthonormality", seed, suite, basis.orthonormality_error(), ORTHONORMAL_TOL));
            let dev = projection_coefficient_check(&phi, &basis, factor)?;
            out.push(CheckResult::new("projection_coefficients", seed, suite, dev, PROJECTION_TOL));
        }
        Err(e) => out.push(CheckResult::failed("projection_coefficients", seed, suite, e.to_string())),
    }
    Ok(out)
}

/// Three points under the linear kernel: the third lies in the span of the
/// first two, far from each of them individually.
pub fn linear_dependence_fixture() -> (PointSet, KernelSpec) {
    let points = PointSet::from_rows(&[[2.0, 0.0], [0.0, 1.5], [1.0, 0.3]]).expect("valid fixture");
    (points, KernelSpec::linear(1.0))
}

/// Subspace and pointwise FPS must disagree on the linear-dependence fixture.
pub fn divergence_fixture_checks() -> Result<Vec<CheckResult>> {
    let (points, spec) = linear_dependence_fixture();
    let gram = dense_gram(&spec, &points, DEFAULT_ORACLE_CAP)?;
    let sub = subspace_fps(&gram, 3, crate::decomposition::DEFAULT_TOLERANCE)?;
    let point = pointwise_fps(&gram, 3, sub.indices[0])?;
    let residual = subspace_sq_distances(&gram, &[0, 1])?[2];
    let suite = Suite::Fixture;
    let differ = sub.indices != point.indices;
    Ok(vec![
        CheckResult::new("fixture_dependent_subspace_residual", 0, suite, residual.abs(), 1e-10),
        CheckResult {
            passed: point.distances.get(2).is_some_and(|&d| d > 0.1) && point.indices.get(2) == Some(&2),
            ..CheckResult::new("fixture_dependent_pointwise_distance", 0, suite, point.distances.get(2).copied().unwrap_or(0.0), 0.1)
        }
        .with_detail("passes when distance > tolerance".into()),
        CheckResult::new("fixture_sequences_differ", 0, suite, if differ { 0.0 } else { 1.0 }, 0.0)
            .with_detail(format!("subspace {:?} pointwise {:?}", sub.indices, point.indices)),
    ])
}

/// A tie-heavy instance: a random instance with one point duplicated.
pub fn duplicated_instance(seed: u64, cfg: &InstanceConfig) -> Result<RandomInstance> {
    let mut inst = random_instance(seed, cfg)?;
    let n = inst.points.len();
    let mut rows: Vec<usize> = (0..n).collect();
    rows.push(0);
    inst.points = inst.points.select(&rows)?;
    Ok(inst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryConfig {
    pub instances: usize,
    pub seed: u64,
    pub instance: InstanceConfig,
}

/// Runs `instances` seeded instances (seeds `seed, seed+1, …`), one
/// duplicated-point tie fixture and the linear-dependence fixture.
pub fn run_battery(cfg: &BatteryConfig) -> VerificationReport {
    let mut checks = Vec::new();
    for k in 0..cfg.instances {
        let seed = cfg.seed.wrapping_add(k as u64);
        match random_instance(seed, &cfg.instance) {
            Ok(inst) => checks.extend(check_instance(&inst, cfg.instance.min_separation)),
            Err(e) => checks.push(CheckResult::failed("instance_setup", seed, Suite::Equality, e.to_string())),
        }
    }
    match duplicated_instance(cfg.seed, &cfg.instance) {
        Ok(inst) => checks.extend(check_instance(&inst, cfg.instance.min_separation)),
        Err(e) => checks.push(CheckResult::failed("instance_setup", cfg.seed, Suite::TieBreak, e.to_string())),
    }
    match divergence_fixture_checks() {
        Ok(c) => checks.extend(c),
        Err(e) => checks.push(CheckResult::failed("fixture_setup", 0, Suite::Fixture, e.to_string())),
    }
    VerificationReport::from_checks(cfg.instances, checks)
}

/// Checks a stored factor against a fresh dense decomposition of the same
/// kernel and points.
pub fn verify_factor(spec: &KernelSpec, points: &PointSet, factor: &CholeskyFactor) -> VerificationReport {
    let suite = Suite::Fixture;
    let mut checks = Vec::new();
    if factor.n() != points.len() {
        checks.push(CheckResult::failed(
            "factor_shape",
            0,
            suite,
            format!("factor has {} rows, data has {} points", factor.n(), points.len()),
        ));
        return VerificationReport::from_checks(1, checks);
    }
    let gram = match dense_gram(spec, points, DEFAULT_ORACLE_CAP) {
        Ok(g) => g,
        Err(e) => {
            checks.push(CheckResult::failed("factor_gram", 0, suite, e.to_string()));
            return VerificationReport::from_checks(1, checks);
        }
    };
    // a tolerance stop swaps the rejected pivot into place before stopping
    let replay_rank = match factor.stop_reason() {
        crate::decomposition::StopReason::ToleranceMet => factor.rank() + 1,
        crate::decomposition::StopReason::ReachedMaxRank => factor.rank(),
    };
    match dense_pivoted_cholesky(&gram, replay_rank, factor.tolerance()) {
        Ok(dense) => {
            let same = dense.pivots() == factor.pivots() && dense.permutation() == factor.permutation();
            checks.push(CheckResult::new("factor_pivots", 0, suite, if same { 0.0 } else { 1.0 }, 0.0));
            if same && dense.rank() == factor.rank() {
                checks.push(CheckResult::new("factor_entries", 0, suite, max_abs_diff(dense.l(), factor.l()), FACTOR_TOL));
            }
        }
        Err(e) => checks.push(CheckResult::failed("factor_pivots", 0, suite, e.to_string())),
    }
    let diag = eval_diag(spec, points);
    let rows = factor_times_transpose_diag(factor);
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    let dev = factor
        .permutation()
        .iter()
        .enumerate()
        .map(|(m, &p)| (diag[p] - rows[m] - factor.residual_diag()[m]).abs())
        .fold(0.0, f64::max);
    checks.push(CheckResult::new("factor_residual_diag", 0, suite, dev, 1e-10 * max_diag.max(1.0)));
    VerificationReport::from_checks(1, checks)
}
