//! Parametric image multiplexing: a χ⁽²⁾ crystal in the Fourier plane copies
//! one object image into three wavelengths with different quantum noise, and
//! a measurement-reduction step recombines the noisy sensor readouts.

pub mod error;
pub mod experiment;
pub mod expm;
pub mod image;
pub mod measurement;
pub mod optics;
pub mod par;
pub mod reduction;
pub mod stats;

pub use error::{Error, Result};
pub use image::{Dims, Image};
pub use optics::{Arm, CrystalParams, OpticalGeometry, TransferMatrix};
pub use par::Exec;
pub use stats::{CovarianceModel, ObjectImage, StatsOptions};
