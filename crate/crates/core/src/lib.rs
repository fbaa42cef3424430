pub mod config;
pub mod embed;
pub mod error;
pub mod flow;
pub mod losses;
pub mod math;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use math::{ParamId, ParamStore, RmsProp, Tape, Tensor};
