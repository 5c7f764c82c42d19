pub mod error;
pub mod field;
pub mod gaussmath;
pub mod ingest;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod oracle;
pub mod quadrature;
pub mod sblue;
pub mod scalar;
pub mod select;
pub mod sensors;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Location64 = field::Location<f64>;
pub type Location32 = field::Location<f32>;
pub type KernelSpec64 = field::KernelSpec<f64>;
pub type KernelSpec32 = field::KernelSpec<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Deployment64 = sensors::SensorDeployment<f64>;
pub type Deployment32 = sensors::SensorDeployment<f32>;
pub type Observations64 = sensors::ObservationVector<f64>;
pub type Observations32 = sensors::ObservationVector<f32>;
pub type MomentSet64 = moments::MomentSet<f64>;
pub type MomentSet32 = moments::MomentSet<f32>;
pub type Prediction64 = sblue::Prediction<f64>;
pub type Prediction32 = sblue::Prediction<f32>;
pub type Grid64 = sblue::ReconstructionGrid<f64>;
pub type Grid32 = sblue::ReconstructionGrid<f32>;
pub type Query64 = select::Query<f64>;
pub type Query32 = select::Query<f32>;
