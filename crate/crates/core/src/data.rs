//! Dataset ingestion and reproducible synthetic generators.
//!
//! All randomness comes from xoshiro256++ seeded through SplitMix64 (the
//! reference `seed_from_u64` construction). Derived draws are fixed so other
//! implementations can reproduce them bit for bit:
//!
//! * uniform on `[0, 1)`: `(next_u64 >> 11) · 2⁻⁵³`
//! * standard normal: Box–Muller from two uniforms `u1, u2`, returning
//!   `√(-2 ln(1 - u1)) · cos(2π u2)`; the sine branch is discarded.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::PointSet;

pub struct Rng(Xoshiro256PlusPlus);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `[lo, hi]` by rejection-free modulo (bias is
    /// negligible for the small ranges used here).
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticRecipe {
    /// Uniform in `[0, 1)^dim`.
    UniformCube { n: usize, dim: usize, seed: u64 },
    /// Cluster centers uniform in `[0, 1)^dim`; point `i` belongs to cluster
    /// `i mod clusters` and is offset by `spread · N(0, I)`. Centers are drawn
    /// first, then points in order.
    GaussianClusters { n: usize, dim: usize, seed: u64, clusters: usize, spread: f64 },
    /// First `n` nodes of the regular lattice with `side = ⌈n^(1/dim)⌉` nodes
    /// per axis spanning `[0, extent]`, enumerated with the last axis fastest.
    Grid { n: usize, dim: usize, extent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv { path: PathBuf },
    Synthetic { recipe: SyntheticRecipe },
}

pub fn load_points(source: &DatasetSource) -> Result<PointSet> {
    match source {
        DatasetSource::Csv { path } => read_points_csv(path),
        DatasetSource::Synthetic { recipe } => generate(recipe),
    }
}

pub fn generate(recipe: &SyntheticRecipe) -> Result<PointSet> {
    match *recipe {
        SyntheticRecipe::UniformCube { n, dim, seed } => {
            check_shape(n, dim)?;
            let mut rng = Rng::new(seed);
            let data = (0..n * dim).map(|_| rng.uniform()).collect();
            PointSet::new(n, dim, data)
        }
        SyntheticRecipe::GaussianClusters { n, dim, seed, clusters, spread } => {
            check_shape(n, dim)?;
            if clusters == 0 {
                return Err(Error::InvalidArgument("cluster count must be positive".into()));
            }
            if !(spread >= 0.0 && spread.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid cluster spread {spread}")));
            }
            let mut rng = Rng::new(seed);
            let centers: Vec<f64> = (0..clusters * dim).map(|_| rng.uniform()).collect();
            let mut data = Vec::with_capacity(n * dim);
            for i in 0..n {
                let c = &centers[(i % clusters) * dim..(i % clusters + 1) * dim];
                for &cj in c {
                    data.push(cj + spread * rng.normal());
                }
            }
            PointSet::new(n, dim, data)
        }
        SyntheticRecipe::Grid { n, dim, extent } => {
            check_shape(n, dim)?;
            if !(extent > 0.0 && extent.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid grid extent {extent}")));
            }
            let mut side = 1usize;
            while side.checked_pow(dim as u32).is_some_and(|c| c < n) {
                side += 1;
            }
            let step = if side > 1 { extent / (side - 1) as f64 } else { 0.0 };
            let mut data = Vec::with_capacity(n * dim);
            for i in 0..n {
                let mut rem = i;
                let mut coords = vec![0.0; dim];
                for c in coords.iter_mut().rev() {
                    *c = (rem % side) as f64 * step;
                    rem /= side;
                }
                data.extend(coords);
            }
            PointSet::new(n, dim, data)
        }
    }
}

fn check_shape(n: usize, dim: usize) -> Result<()> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!("synthetic data needs n ≥ 1 and dim ≥ 1, got n={n}, dim={dim}")));
    }
    Ok(())
}

/// Seeded standard-normal right-hand side.
pub fn generate_rhs(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("right-hand side length must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    Ok((0..n).map(|_| rng.normal()).collect())
}

pub fn read_points_csv(path: &Path) -> Result<PointSet> {
    parse_points_csv(std::fs::File::open(path)?)
}

/// Parses a rectangular numeric table. The first row is treated as a header
/// when any of its cells fails to parse as a number.
pub fn parse_points_csv<R: Read>(reader: R) -> Result<PointSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(row + 1, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(|c| c.parse::<f64>()).collect();
        if row == 0 && parsed.iter().any(|p| p.is_err()) {
            continue;
        }
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                row: row + 1,
                column: record.len().min(expected) + 1,
                message: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        for (col, value) in parsed.into_iter().enumerate() {
            let v = value.map_err(|_| Error::Parse {
                row: row + 1,
                column: col + 1,
                message: format!("non-numeric cell '{}'", &record[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: row + 1, column: col + 1, message: format!("non-finite value {v}") });
            }
            data.push(v);
        }
        n += 1;
    }
    match dim {
        Some(d) if n > 0 => PointSet::new(n, d, data),
        _ => Err(Error::Parse { row: 0, column: 0, message: "no data rows".into() }),
    }
}

/// Formats a value with 17 significant digits; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn points_to_csv(points: &PointSet) -> String {
    let mut out = String::new();
    for row in points.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_points_csv<W: Write>(points: &PointSet, mut writer: W) -> Result<()> {
    writer.write_all(points_to_csv(points).as_bytes())?;
    Ok(())
}

pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let points = read_points_csv(path)?;
    if points.dim() != 1 {
        return Err(Error::Parse {
            row: 1,
            column: 2,
            message: format!("vector file must have one column, found {}", points.dim()),
        });
    }
    Ok(points.as_slice().to_vec())
}
