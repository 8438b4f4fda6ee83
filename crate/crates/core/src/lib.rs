//! Dyadic tree classifiers under covariate shift.

pub mod bench;
pub mod data;
pub mod dyadic;
pub mod error;
pub mod exponent;
pub mod ici;
pub mod measure;
pub mod scalar;
pub mod select;
pub mod synth;

pub use data::{Dataset, LabeledSample, Origin, SplitRule};
pub use dyadic::{CellId, CellStats, TreeIndex, TreeKind};
pub use error::{Error, Result};
pub use ici::{IciConfig, IciTrace, StopReason, WidthConstant};
pub use scalar::Scalar;

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Sample64 = LabeledSample<f64>;
pub type IciConfig64 = IciConfig<f64>;
