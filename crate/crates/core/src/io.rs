//! On-disk formats for factors and decomposition traces.
//!
//! A factor is a JSON header plus a CSV matrix: N rows (permuted order) by
//! `rank` columns, every value printed with 17 significant digits. A rank-0
//! factor has an empty matrix file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::decomposition::{CholeskyFactor, DecompositionTrace, StopReason};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorHeader {
    pub n: usize,
    pub rank: usize,
    pub pivots: Vec<usize>,
    pub stop_reason: StopReason,
    pub tolerance: f64,
    pub kernel: KernelSpec,
    pub permutation: Vec<usize>,
    pub residual_diag: Vec<f64>,
    /// Matrix CSV, relative to the header's directory.
    pub matrix_file: String,
}

impl FactorHeader {
    pub fn new(factor: &CholeskyFactor, kernel: &KernelSpec, matrix_file: impl Into<String>) -> Self {
        Self {
            n: factor.n(),
            rank: factor.rank(),
            pivots: factor.pivots().to_vec(),
            stop_reason: factor.stop_reason(),
            tolerance: factor.tolerance(),
            kernel: *kernel,
            permutation: factor.permutation().to_vec(),
            residual_diag: factor.residual_diag().to_vec(),
            matrix_file: matrix_file.into(),
        }
    }
}

/// Sibling path holding the matrix for a header at `header_path`.
pub fn matrix_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("csv")
}

pub fn factor_matrix_csv(factor: &CholeskyFactor) -> String {
    let l = factor.l();
    let mut out = String::new();
    if l.ncols() == 0 {
        return out;
    }
    for i in 0..l.nrows() {
        for j in 0..l.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(l[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_factor_matrix(text: &str, n: usize, rank: usize) -> Result<DMatrix<f64>> {
    let mut l = DMatrix::zeros(n, rank);
    if rank == 0 {
        if text.trim().is_empty() {
            return Ok(l);
        }
        return Err(Error::Parse { row: 1, column: 1, message: "rank-0 factor must have an empty matrix".into() });
    }
    let mut rows = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        if i >= n {
            return Err(Error::Parse { row: i + 1, column: 1, message: format!("more than {n} rows") });
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != rank {
            return Err(Error::Parse {
                row: i + 1,
                column: cells.len().min(rank) + 1,
                message: format!("expected {rank} columns, found {}", cells.len()),
            });
        }
        for (j, c) in cells.iter().enumerate() {
            l[(i, j)] = c.trim().parse::<f64>().map_err(|_| Error::Parse {
                row: i + 1,
                column: j + 1,
                message: format!("non-numeric cell '{c}'"),
            })?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse { row: rows + 1, column: 1, message: format!("expected {n} rows, found {rows}") });
    }
    Ok(l)
}

/// Rebuilds a factor from its header and matrix text, checking the header's
/// internal consistency.
pub fn parse_factor(header_json: &str, matrix_csv: &str) -> Result<(CholeskyFactor, FactorHeader)> {
    let header: FactorHeader = serde_json::from_str(header_json)?;
    if header.rank > header.n
        || header.pivots.len() != header.rank
        || header.permutation.len() != header.n
        || header.pivots[..] != header.permutation[..header.rank]
    {
        return Err(Error::InvalidArgument("factor header is inconsistent (rank, pivots, permutation)".into()));
    }
    header.kernel.validate()?;
    let l = parse_factor_matrix(matrix_csv, header.n, header.rank)?;
    let factor = CholeskyFactor::from_parts(
        l,
        header.permutation.clone(),
        header.residual_diag.clone(),
        header.stop_reason,
        header.tolerance,
    )?;
    Ok((factor, header))
}

pub fn read_factor(header_path: &Path) -> Result<(CholeskyFactor, FactorHeader)> {
    let header_text = std::fs::read_to_string(header_path)?;
    let header: FactorHeader = serde_json::from_str(&header_text)?;
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let matrix = std::fs::read_to_string(dir.join(&header.matrix_file))?;
    parse_factor(&header_text, &matrix)
}

pub const TRACE_CSV_HEADER: &str = "step,pivot_index,pivot_value,residual_trace,kernel_evals";

/// One row per completed step. `kernel_evals` counts diagonal plus pair
/// evaluations so far. A run with no steps gets a single baseline row
/// (step 0, empty pivot fields, initial trace, N evaluations).
pub fn trace_csv(trace: &DecompositionTrace) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    if trace.steps.is_empty() {
        let _ = writeln!(out, "0,,,{},{}", fmt_f64(trace.initial_trace), trace.n);
    }
    for s in &trace.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.step,
            s.pivot_index,
            fmt_f64(s.pivot_value),
            fmt_f64(s.residual_trace),
            trace.n as u64 + s.pair_evals
        );
    }
    out
}
