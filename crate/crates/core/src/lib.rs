//! Reconstruction of transparent shapes from a handful of calibrated views
//! and a known, distant environment map.
//!
//! The pipeline runs in stages that mirror the modules of this crate:
//!
//! 1. [`hull`]: carve a visual hull from the silhouettes, polygonize it and
//!    trace the hull's first and second surface normals for every view.
//! 2. [`costvol`]: score a small set of normal hypotheses around the hull
//!    normals with the two-bounce rendering layer of [`optics`].
//! 3. [`refine`]: polish the per-view normals by projected gradient descent
//!    on the rendering loss.
//! 4. [`fuse`]: map per-view predictions onto points sampled from the hull.
//! 5. [`surface`]: recover the final mesh from the fused oriented cloud.
//! 6. [`metrics`]: compare against ground truth.
//!
//! [`synth`] generates synthetic scenes and hosts an independent path tracer
//! used as the reference for the rendering layer.

pub mod costvol;
pub mod fuse;
pub mod geom;
pub mod hull;
pub mod metrics;
pub mod optics;
pub mod parallel;
pub mod refine;
pub mod surface;
pub mod synth;

pub use geom::{Mat3, Vec3};

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at byte {offset}: expected {expected}")]
    Parse { offset: usize, expected: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("empty hull: no voxel survives carving")]
    EmptyHull,
    #[error("non-manifold mesh: {0}")]
    NonManifold(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("no surface: {0}")]
    EmptySurface(String),
    #[error("conjugate gradients did not converge after {} iterations (final relative residual {:.3e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    CgNonConvergence { residuals: Vec<f64> },
    #[error("optimization diverged: {0}")]
    Divergence(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: usize, expected: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            expected: expected.into(),
        }
    }
}
