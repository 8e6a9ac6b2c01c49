//! Frequency-domain seismic inversion on 2D grids: full-waveform inversion,
//! source-focusing wavefield reconstruction inversion, and its sketched
//! low-rank variant solved with the Woodbury identity.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which the inversion drivers use.

pub mod covariance;
pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod io;
pub mod linalg;
pub mod objectives;
pub mod optimizer;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type Grid2D64 = grid::Grid2D<f64>;
pub type VelocityModel64 = grid::VelocityModel<f64>;
pub type SlownessSqModel64 = grid::SlownessSqModel<f64>;
pub type Acquisition64 = grid::Acquisition<f64>;
pub type GaussianLensSpec64 = grid::GaussianLensSpec<f64>;
pub type BoundaryLayer64 = helmholtz::BoundaryLayer<f64>;
pub type Wavefield64 = helmholtz::Wavefield<f64>;
pub type ShotData64 = helmholtz::ShotData<f64>;
pub type DataCovariance64 = covariance::DataCovariance<f64>;
pub type SourceCovarianceSpec64 = covariance::SourceCovarianceSpec<f64>;
pub type VarianceField64 = covariance::VarianceField<f64>;
pub type Sketch64 = covariance::Sketch<f64>;
pub type WaveProblem64 = objectives::WaveProblem<f64>;
pub type ObjectiveReport64 = objectives::ObjectiveReport<f64>;
pub type AndersonConfig64 = optimizer::AndersonConfig<f64>;
pub type IterationLog64 = optimizer::IterationLog<f64>;

pub type Grid2D32 = grid::Grid2D<f32>;
pub type SlownessSqModel32 = grid::SlownessSqModel<f32>;
pub type Wavefield32 = helmholtz::Wavefield<f32>;
pub type ShotData32 = helmholtz::ShotData<f32>;
