//! Quantum statistical imaging: simulate confocal scans of single-photon
//! emitters with coincidence counting, and recover per-emitter images,
//! positions and dipole axes from them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimation;
pub mod format;
pub mod grid;
pub mod model;
pub mod pipeline;
pub mod reconstruction;
pub mod rng;
pub mod roots;
pub mod simulator;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use estimation::{FitReport, Gaussian2DFit};
pub use grid::{Grid, ScanGrid};
pub use model::{Detector, Emitter, Psf, Scene};
pub use reconstruction::{reconstruct, EmitterImages, PixelFlag};
pub use simulator::{simulate_scan, G2Histogram, ScanData};
