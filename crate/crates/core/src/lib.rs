//! Lazy pivoted Cholesky decomposition of kernel matrices.
//!
//! The decomposition evaluates the kernel only on demand: the diagonal once,
//! then one column per selected pivot. Each pivot is the point whose feature
//! vector lies farthest from the span of the points selected so far, so the
//! pivot sequence is a greedy farthest-point sampling in feature space.
//!
//! * [`kernels`]: kernel families, point sets and evaluation counting.
//! * [`decomposition`]: the lazy factorization itself.
//! * [`oracles`]: dense reference computations used to certify it.
//! * [`battery`]: randomized verification runs over the oracles.
//! * [`preconditioner`]: low-rank preconditioned conjugate gradients.
//! * [`data`]: CSV ingestion and seeded synthetic data.
//! * [`io`]: factor and trace file formats.

pub mod battery;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod io;
pub mod kernels;
pub mod oracles;
pub mod preconditioner;

pub use decomposition::{
    pivoted_cholesky, CholeskyFactor, DecompositionConfig, DecompositionTrace, LazyCholesky, StopReason,
};
pub use error::{Error, Result};
pub use kernels::{CountingKernel, Kernel, KernelFamily, KernelSpec, PointSet};
