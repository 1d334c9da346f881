pub mod backbone;
pub mod checkpoint;
pub mod dlc;
pub mod duc;
pub mod error;
pub mod guided;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use labels::LabelMap;
pub use rng::SplitMix64;
pub use tensor::{Distribution, Shape4, Tensor4};
