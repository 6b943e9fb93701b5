pub mod calibration;
pub mod dataio;
pub mod error;
pub mod lsmc;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod scoring;
pub mod trading;

pub use error::{Error, Result};
