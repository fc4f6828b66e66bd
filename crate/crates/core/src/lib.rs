pub mod backbone;
pub mod diagnostics;
pub mod dkg;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod label;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod report;
pub mod style;
pub mod synthdata;
pub mod trainer;
pub mod whitening;

pub use error::{Error, Result};
