//! Unsupervised hyperspectral super-resolution from synthetic abundances.
//!
//! The pipeline: synthesize dead-leaves abundance maps ([`deadleaves`]),
//! degrade them with a simulated PSF ([`degrade`]), train a residual-dense
//! network on the pairs ([`srnet`]), super-resolve real low-resolution
//! abundances, recombine them with endmembers ([`mix`]) and score the result
//! ([`metrics`]). Tensors travel between stages as HTF files ([`htf`]).

// `!(x > 0.0)` is written on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod deadleaves;
pub mod degrade;
mod error;
pub mod htf;
pub mod metrics;
pub mod mix;
pub mod srnet;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{validate_abundance, AbundanceMap, AbundanceReport, EndmemberMatrix, Tensor3, ASC_TOLERANCE};
