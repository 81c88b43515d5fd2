use std::path::{Path, PathBuf};

use clap::Args;
use pivchol::battery::{run_battery, verify_factor, BatteryConfig, InstanceConfig, VerificationReport};
use pivchol::data::{fmt_f64, generate_rhs, load_points, read_vector_csv};
use pivchol::decomposition::{expected_evals, DEFAULT_TOLERANCE};
use pivchol::io::{factor_matrix_csv, matrix_path_for, read_factor, trace_csv, FactorHeader};
use pivchol::oracles::{dense_gram, pointwise_fps, DEFAULT_ORACLE_CAP};
use pivchol::preconditioner::{build_preconditioner, cg_solve, kernel_matvec, SolveReport, DEFAULT_BLOCK_SIZE};
use pivchol::{pivoted_cholesky, CountingKernel, DecompositionConfig, Error, PointSet};
use serde::Serialize;
use serde_json::json;

use crate::args::{DatasetArgs, KernelArgs};
use crate::output::{sibling, write_atomic, write_json, CliError, CliResult, RunManifest, Timer, EXIT_DIVERGED, EXIT_VERIFY};

fn load(data: &DatasetArgs, timer: &mut Timer) -> CliResult<(pivchol::data::DatasetSource, PointSet)> {
    let source = data.source()?;
    let points = timer.time("load", || load_points(&source))?;
    if points.is_empty() {
        return Err(CliError::usage("dataset has no points"));
    }
    Ok((source, points))
}

fn manifest_path(explicit: &Option<PathBuf>, primary: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| sibling(primary, "manifest.json"))
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub data: DatasetArgs,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Maximum rank; 0 gives an empty factor.
    #[arg(long)]
    pub rank: usize,

    /// Stop when the largest remaining residual diagonal falls below this.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,

    /// Factor header; the matrix goes to the same path with a .csv extension.
    #[arg(long, default_value = "factor.json")]
    pub out_factor: PathBuf,

    /// Defaults to `<out-factor stem>.trace.csv`.
    #[arg(long)]
    pub out_trace: Option<PathBuf>,

    /// Defaults to `<out-factor stem>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn decompose(args: &DecomposeArgs) -> CliResult<i32> {
    let mut timer = Timer::default();
    let spec = args.kernel.spec()?;
    let (source, points) = load(&args.data, &mut timer)?;
    let config = DecompositionConfig::new(args.rank).with_tolerance(args.tol);
    config.validate()?;

    let counting = CountingKernel::new(spec);
    let (factor, trace) = timer.time("decompose", || pivoted_cholesky(&counting, &points, config))?;

    let matrix_path = matrix_path_for(&args.out_factor);
    let trace_path = args.out_trace.clone().unwrap_or_else(|| sibling(&args.out_factor, "trace.csv"));
    let manifest_path = manifest_path(&args.manifest, &args.out_factor);
    let matrix_name = matrix_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    timer.time("write", || -> CliResult<()> {
        write_atomic(&matrix_path, factor_matrix_csv(&factor).as_bytes())?;
        write_json(&args.out_factor, &FactorHeader::new(&factor, &spec, matrix_name))?;
        write_atomic(&trace_path, trace_csv(&trace).as_bytes())
    })?;

    let n = points.len();
    let counter = counting.counter();
    let mut manifest = RunManifest::new(
        "decompose",
        Some(source),
        Some(spec),
        json!({ "max_rank": args.rank, "tolerance": args.tol, "clamp_negative": config.clamp_negative }),
    );
    manifest.results = json!({
        "n": n,
        "dim": points.dim(),
        "rank": factor.rank(),
        "stop_reason": factor.stop_reason(),
        "initial_trace": trace.initial_trace,
        "residual_trace": factor.residual_trace(),
        "kernel_evals": {
            "diagonal": counter.diag_evals(),
            "pair": counter.pair_evals(),
            "total": counter.total(),
            "closed_form": expected_evals(n, factor.rank()),
        },
    });
    manifest.output("factor", &args.out_factor);
    manifest.output("factor_matrix", &matrix_path);
    manifest.output("trace", &trace_path);
    manifest.write(&manifest_path, timer)?;
    eprintln!(
        "rank {} ({:?}), residual trace {}, wrote {}",
        factor.rank(),
        factor.stop_reason(),
        fmt_f64(factor.residual_trace()),
        args.out_factor.display()
    );
    Ok(0)
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,

    #[arg(long, default_value_t = 50)]
    pub max_n: usize,

    #[arg(long, default_value_t = 15)]
    pub max_rank: usize,

    /// First instance seed; instance k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "verify_report.json")]
    pub report: PathBuf,

    /// Check a stored factor against the points it was computed from
    /// (the kernel is taken from the factor header) instead of running the
    /// randomized battery.
    #[arg(long)]
    pub factor: Option<PathBuf>,

    #[command(flatten)]
    pub data: DatasetArgs,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn verify(args: &VerifyArgs) -> CliResult<i32> {
    let mut timer = Timer::default();
    let (report, manifest) = match &args.factor {
        Some(path) => {
            let (source, points) = load(&args.data, &mut timer)?;
            let (factor, header) = timer.time("read_factor", || read_factor(path))?;
            let report = timer.time("verify", || verify_factor(&header.kernel, &points, &factor));
            let manifest = RunManifest::new("verify", Some(source), Some(header.kernel), json!({ "factor": path }));
            (report, manifest)
        }
        None => {
            if args.max_n < 2 {
                return Err(CliError::usage("--max-n must be at least 2"));
            }
            if args.max_rank < 1 {
                return Err(CliError::usage("--max-rank must be at least 1"));
            }
            let cfg = BatteryConfig {
                instances: args.instances,
                seed: args.seed,
                instance: InstanceConfig { max_n: args.max_n, max_rank: args.max_rank, ..InstanceConfig::default() },
            };
            let report = timer.time("verify", || run_battery(&cfg));
            let manifest = RunManifest::new(
                "verify",
                None,
                None,
                json!({
                    "instances": args.instances,
                    "max_n": args.max_n,
                    "max_rank": args.max_rank,
                    "seed": args.seed,
                    "families": cfg.instance.families,
                    "min_separation": cfg.instance.min_separation,
                    "tolerance": cfg.instance.tolerance,
                }),
            );
            (report, manifest)
        }
    };
    write_json(&args.report, &report)?;
    let mut manifest = manifest;
    manifest.results = json!({ "checks": report.checks.len(), "passed": report.passed });
    manifest.output("report", &args.report);
    manifest.write(&manifest_path(&args.manifest, &args.report), timer)?;
    finish_verification(&report)
}

fn finish_verification(report: &VerificationReport) -> CliResult<i32> {
    match report.first_failure() {
        None => {
            eprintln!("all {} checks passed", report.checks.len());
            Ok(0)
        }
        Some(c) => {
            eprintln!(
                "verification failed: check '{}' on instance seed {} (deviation {}, tolerance {}){}",
                c.name,
                c.instance_seed,
                fmt_f64(c.deviation),
                fmt_f64(c.tolerance),
                c.detail.as_ref().map_or(String::new(), |d| format!(": {d}"))
            );
            Ok(EXIT_VERIFY)
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub data: DatasetArgs,

    #[command(flatten)]
    pub kernel: KernelArgs,

    /// Observation noise σ² added to the diagonal.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-2)]
    pub noise: f64,

    /// Preconditioner rank; 0 disables preconditioning.
    #[arg(long, default_value_t = 0)]
    pub precond_rank: usize,

    /// Decomposition tolerance for the preconditioner factor.
    #[arg(long, default_value_t = 0.0)]
    pub precond_tol: f64,

    /// Relative residual target ‖b - Ax‖ ≤ tol·‖b‖.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,

    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,

    /// Seed for a standard-normal right-hand side.
    #[arg(long, default_value_t = 0, conflicts_with = "rhs_file")]
    pub rhs_seed: u64,

    /// Right-hand side as a one-column CSV.
    #[arg(long)]
    pub rhs_file: Option<PathBuf>,

    /// Also solve without the preconditioner.
    #[arg(long)]
    pub compare: bool,

    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,

    #[arg(long, default_value = "solve_report.json")]
    pub report: PathBuf,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SolveOutput {
    n: usize,
    noise: f64,
    tol: f64,
    precond_rank_requested: usize,
    iterations_preconditioned: Option<usize>,
    iterations_unpreconditioned: Option<usize>,
    preconditioned: Option<SolveReport>,
    unpreconditioned: Option<SolveReport>,
}

pub fn solve(args: &SolveArgs) -> CliResult<i32> {
    let mut timer = Timer::default();
    let spec = args.kernel.spec()?;
    let (source, points) = load(&args.data, &mut timer)?;
    let n = points.len();
    let b = match &args.rhs_file {
        Some(path) => read_vector_csv(path)?,
        None => generate_rhs(n, args.rhs_seed)?,
    };
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() }.into());
    }
    let sigma2 = args.noise;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(CliError::usage(format!("--noise must be positive, got {sigma2}")));
    }
    let block = args.block_size;
    let matvec = |v: &[f64]| kernel_matvec(&spec, &points, sigma2, v, block).expect("length checked");

    let precond = if args.precond_rank > 0 {
        let config = DecompositionConfig::new(args.precond_rank).with_tolerance(args.precond_tol);
        config.validate()?;
        let (factor, _) = timer.time("factor", || pivoted_cholesky(&spec, &points, config))?;
        Some(timer.time("precondition", || build_preconditioner(&factor, sigma2))?)
    } else {
        None
    };

    let mut out = SolveOutput {
        n,
        noise: sigma2,
        tol: args.tol,
        precond_rank_requested: args.precond_rank,
        iterations_preconditioned: None,
        iterations_unpreconditioned: None,
        preconditioned: None,
        unpreconditioned: None,
    };
    let run = |p: Option<&pivchol::preconditioner::LowRankPlusDiagonal>, label: &str, timer: &mut Timer| {
        timer.time(label, || cg_solve(matvec, &b, p, args.tol, args.max_iter)).map_err(|e| divergence(e, &args.report, label))
    };
    match &precond {
        Some(p) => {
            let (_, rep) = run(Some(p), "solve_preconditioned", &mut timer)?;
            out.iterations_preconditioned = Some(rep.iterations);
            out.preconditioned = Some(rep);
            if args.compare {
                let (_, rep) = run(None, "solve_unpreconditioned", &mut timer)?;
                out.iterations_unpreconditioned = Some(rep.iterations);
                out.unpreconditioned = Some(rep);
            }
        }
        None => {
            let (_, rep) = run(None, "solve_unpreconditioned", &mut timer)?;
            out.iterations_unpreconditioned = Some(rep.iterations);
            out.unpreconditioned = Some(rep);
        }
    }
    write_json(&args.report, &out)?;

    let mut manifest = RunManifest::new(
        "solve",
        Some(source),
        Some(spec),
        json!({
            "noise": sigma2,
            "precond_rank": args.precond_rank,
            "precond_tol": args.precond_tol,
            "tol": args.tol,
            "max_iter": args.max_iter,
            "rhs": match &args.rhs_file {
                Some(p) => json!({ "file": p }),
                None => json!({ "seed": args.rhs_seed }),
            },
            "compare": args.compare,
            "block_size": args.block_size,
        }),
    );
    let converged = [&out.preconditioned, &out.unpreconditioned].iter().filter_map(|r| r.as_ref()).all(|r| r.converged);
    manifest.results = json!({
        "iterations_preconditioned": out.iterations_preconditioned,
        "iterations_unpreconditioned": out.iterations_unpreconditioned,
        "preconditioner_rank": precond.as_ref().map(|p| p.rank()),
        "converged": converged,
    });
    manifest.output("report", &args.report);
    manifest.write(&manifest_path(&args.manifest, &args.report), timer)?;
    eprintln!(
        "iterations: preconditioned {}, unpreconditioned {}",
        out.iterations_preconditioned.map_or("-".into(), |v| v.to_string()),
        out.iterations_unpreconditioned.map_or("-".into(), |v| v.to_string())
    );
    Ok(0)
}

/// On divergence, writes the residual history next to the report and
/// returns an error naming it.
fn divergence(e: Error, report: &Path, label: &str) -> CliError {
    match e {
        Error::Divergence { iteration, residual_norms } => {
            let path = sibling(report, &format!("{label}.divergence.csv"));
            let mut csv = String::from("iteration,residual_norm\n");
            for (k, r) in residual_norms.iter().enumerate() {
                csv.push_str(&format!("{k},{}\n", fmt_f64(*r)));
            }
            if let Err(w) = write_atomic(&path, csv.as_bytes()) {
                return w;
            }
            CliError::new(
                EXIT_DIVERGED,
                format!("solver diverged at iteration {iteration}; iteration trace written to {}", path.display()),
            )
        }
        other => other.into(),
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DatasetArgs,

    #[command(flatten)]
    pub kernel: KernelArgs,

    #[arg(long)]
    pub rank: usize,

    /// First point of pointwise FPS; defaults to the decomposition's first pivot.
    #[arg(long)]
    pub seed_index: Option<usize>,

    /// Decomposition tolerance for the subspace sequence.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,

    /// Largest N for which the dense Gram matrix is formed.
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    pub oracle_cap: usize,

    #[arg(long, default_value = "compare_report.json")]
    pub report: PathBuf,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Sequence {
    pivots: Vec<usize>,
    distances: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct CompareOutput {
    n: usize,
    requested_rank: usize,
    seed_index: usize,
    subspace: Sequence,
    pointwise: Sequence,
    common_prefix: usize,
    overlap_fraction: f64,
    /// 1-based step at which the sequences first differ (including one
    /// sequence ending earlier); null when identical.
    divergence_step: Option<usize>,
    /// Pointwise picks whose distance was exactly zero (duplicates of a
    /// selected point).
    zero_distance_picks: Vec<usize>,
}

pub fn compare_sampling(args: &CompareArgs) -> CliResult<i32> {
    let mut timer = Timer::default();
    let spec = args.kernel.spec()?;
    let (source, points) = load(&args.data, &mut timer)?;
    let n = points.len();
    if n > args.oracle_cap {
        return Err(Error::OracleScale { n, cap: args.oracle_cap }.into());
    }
    let config = DecompositionConfig::new(args.rank).with_tolerance(args.tol);
    config.validate()?;
    let (factor, trace) = timer.time("decompose", || pivoted_cholesky(&spec, &points, config))?;
    let gram = timer.time("gram", || dense_gram(&spec, &points, args.oracle_cap))?;

    let seed_index = match args.seed_index {
        Some(s) if s >= n => return Err(CliError::usage(format!("--seed-index {s} out of range for {n} points"))),
        Some(s) => s,
        None => factor.pivots().first().copied().unwrap_or(0),
    };
    let point = timer.time("pointwise", || pointwise_fps(&gram, args.rank.min(n), seed_index))?;

    let sub = Sequence {
        pivots: factor.pivots().to_vec(),
        distances: trace.steps.iter().map(|s| s.pivot_value).collect(),
    };
    let common_prefix = sub.pivots.iter().zip(&point.indices).take_while(|(a, b)| a == b).count();
    let overlap = sub.pivots.iter().filter(|p| point.indices.contains(p)).count();
    let longest = sub.pivots.len().max(point.indices.len());
    let out = CompareOutput {
        n,
        requested_rank: args.rank,
        seed_index,
        common_prefix,
        overlap_fraction: if longest == 0 { 1.0 } else { overlap as f64 / longest as f64 },
        divergence_step: (common_prefix < longest).then_some(common_prefix + 1),
        zero_distance_picks: point
            .indices
            .iter()
            .zip(&point.distances)
            .filter(|(_, d)| **d == 0.0)
            .map(|(i, _)| *i)
            .collect(),
        subspace: sub,
        pointwise: Sequence { pivots: point.indices, distances: point.distances },
    };
    write_json(&args.report, &out)?;

    let mut manifest = RunManifest::new(
        "compare-sampling",
        Some(source),
        Some(spec),
        json!({ "rank": args.rank, "seed_index": args.seed_index, "tolerance": args.tol, "oracle_cap": args.oracle_cap }),
    );
    manifest.results = json!({
        "common_prefix": out.common_prefix,
        "overlap_fraction": out.overlap_fraction,
        "divergence_step": out.divergence_step,
    });
    manifest.output("report", &args.report);
    manifest.write(&manifest_path(&args.manifest, &args.report), timer)?;
    eprintln!(
        "common prefix {}, overlap {:.3}, divergence step {}",
        out.common_prefix,
        out.overlap_fraction,
        out.divergence_step.map_or("none".into(), |s| s.to_string())
    );
    Ok(0)
}
