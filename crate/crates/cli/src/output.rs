use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pivchol::data::DatasetSource;
use pivchol::{Error, KernelSpec};
use serde::Serialize;
use serde_json::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidKernel { .. }
            | Error::NotPsd { .. }
            | Error::DegenerateFeature { .. }
            | Error::Numeric(_)
            | Error::OracleDegenerate(_) => EXIT_NUMERIC,
            Error::Divergence { .. } => EXIT_DIVERGED,
            _ => EXIT_USAGE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(format!("I/O error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::usage(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `<stem>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Wall-clock seconds per named phase, in the order recorded.
#[derive(Debug, Default)]
pub struct Timer {
    phases: Vec<(String, f64)>,
}

impl Timer {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

#[derive(Debug, Serialize)]
pub struct Runtime {
    pub threads: usize,
    pub timing_seconds: BTreeMap<String, f64>,
}

/// Everything needed to repeat a run. Only `runtime` varies between
/// identical invocations.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub dataset: Option<DatasetSource>,
    pub kernel: Option<KernelSpec>,
    pub config: Value,
    pub results: Value,
    pub outputs: BTreeMap<String, String>,
    pub runtime: Runtime,
}

impl RunManifest {
    pub fn new(command: &'static str, dataset: Option<DatasetSource>, kernel: Option<KernelSpec>, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            dataset,
            kernel,
            config,
            results: Value::Null,
            outputs: BTreeMap::new(),
            runtime: Runtime { threads: rayon::current_num_threads(), timing_seconds: BTreeMap::new() },
        }
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.to_string(), path.display().to_string());
    }

    pub fn write(mut self, path: &Path, timer: Timer) -> CliResult<()> {
        self.runtime.timing_seconds = timer.phases.into_iter().collect();
        write_json(path, &self)
    }
}
