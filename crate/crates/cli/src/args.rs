use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pivchol::data::{DatasetSource, SyntheticRecipe};
use pivchol::{KernelFamily, KernelSpec};

use crate::output::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SyntheticKind {
    UniformCube,
    GaussianClusters,
    Grid,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// CSV file with one point per row.
    #[arg(long, conflicts_with = "synthetic")]
    pub points: Option<PathBuf>,

    /// Generate points instead of reading them.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticKind>,

    #[arg(long, default_value_t = 100)]
    pub n: usize,

    #[arg(long, default_value_t = 2)]
    pub dim: usize,

    /// Seed for synthetic data.
    #[arg(long = "data-seed", default_value_t = 0)]
    pub data_seed: u64,

    #[arg(long, default_value_t = 3)]
    pub clusters: usize,

    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,

    /// Grid side length.
    #[arg(long, default_value_t = 1.0)]
    pub extent: f64,
}

impl DatasetArgs {
    pub fn source(&self) -> Result<DatasetSource, CliError> {
        match (&self.points, self.synthetic) {
            (Some(path), None) => Ok(DatasetSource::Csv { path: path.clone() }),
            (None, Some(kind)) => {
                let recipe = match kind {
                    SyntheticKind::UniformCube => {
                        SyntheticRecipe::UniformCube { n: self.n, dim: self.dim, seed: self.data_seed }
                    }
                    SyntheticKind::GaussianClusters => SyntheticRecipe::GaussianClusters {
                        n: self.n,
                        dim: self.dim,
                        seed: self.data_seed,
                        clusters: self.clusters,
                        spread: self.spread,
                    },
                    SyntheticKind::Grid => SyntheticRecipe::Grid { n: self.n, dim: self.dim, extent: self.extent },
                };
                Ok(DatasetSource::Synthetic { recipe })
            }
            _ => Err(CliError::usage("exactly one of --points or --synthetic is required")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// rbf, matern12, matern32, matern52, linear or polynomial.
    #[arg(long, default_value = "rbf")]
    pub kernel: KernelFamily,

    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub lengthscale: f64,

    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub variance: f64,

    /// Polynomial degree.
    #[arg(long, default_value_t = 2)]
    pub degree: u32,

    /// Polynomial offset.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub offset: f64,
}

impl KernelArgs {
    pub fn spec(&self) -> Result<KernelSpec, CliError> {
        let spec = match self.kernel {
            KernelFamily::Rbf => KernelSpec::rbf(self.lengthscale, self.variance),
            KernelFamily::Matern12 => KernelSpec::matern12(self.lengthscale, self.variance),
            KernelFamily::Matern32 => KernelSpec::matern32(self.lengthscale, self.variance),
            KernelFamily::Matern52 => KernelSpec::matern52(self.lengthscale, self.variance),
            KernelFamily::Linear => KernelSpec::linear(self.variance),
            KernelFamily::Polynomial => KernelSpec::polynomial(self.degree, self.offset, self.variance),
        };
        spec.validate()?;
        Ok(spec)
    }
}
