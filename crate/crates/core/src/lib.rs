//! Curate image-patch training corpora.
//!
//! Patches are featurized, hashed into binary codes with kernelized
//! locality-sensitive hashing, grouped into buckets by code prefix, and
//! thinned per bucket by a level-order scan of a balanced binary search tree
//! that stops once the kept prefix preserves enough of the bucket's variance.
//!
//! The pipeline is split by stage:
//!
//! - [`dataset`]: patch packs, manifests, PGM/PPM ingestion, feature extraction
//! - [`kernels`]: RBF, Laplacian and polynomial kernels
//! - [`linalg`]: Jacobi eigensolver and PSD inverse square root
//! - [`klsh`]: hash family construction and hashing
//! - [`hashindex`]: prefix-keyed bucket table
//! - [`sampler`]: tree sampler, cap baseline, target-count search
//! - [`metrics`]: variance retention, Hamming separation, CSV emitters

pub mod dataset;
pub mod error;
pub mod hashindex;
pub mod kernels;
pub mod klsh;
pub mod linalg;
pub mod metrics;
pub mod sampler;

mod fmt;

pub use error::{Error, Result};
pub use fmt::{format_f64, parse_f64};
