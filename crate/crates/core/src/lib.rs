pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod cplx;
pub mod dataset;
pub mod decoder;
pub mod scenario;
pub mod selftest;
pub mod sweep;
pub mod train;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod model;
pub mod qos;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use cplx::{CMatrix, CTensor};
pub use scenario::{sample_instance, ChannelInstance, ScenarioConfig};
pub use qos::Beamformer;
