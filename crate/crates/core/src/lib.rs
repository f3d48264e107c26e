//! Model-based optoacoustic tomography for circular detection arcs.
//!
//! The crate builds the discrete forward operator `M` that maps a 2D absorption
//! image onto detector time signals, simulates and degrades projection data, and
//! reconstructs images with LSQR, Tikhonov, TV-L1 and adaptive anisotropic TV
//! (A²TV) regularization. The regularized problems are solved with an
//! accelerated first-order primal-dual scheme.
//!
//! Hot loops (matrix assembly, sparse products, pixelwise operators) run on
//! rayon when the `parallel` feature is enabled; every entry point also takes
//! or defaults an [`Exec`] so both paths can be compared at runtime.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod phantom;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use forward::{build_model_matrix, normalize_matrix, SparseModelMatrix, LIPSCHITZ_TARGET};
pub use geometry::{default_time_axis, detector_positions, DetectionGeometry, GridSpec, ImageGrid2D, Sinogram, TimeAxis};
pub use operators::{GradientField2D, Shape};
pub use tensor::{StructureTensorField, TensorField2D};
