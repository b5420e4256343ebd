pub mod corpus;
pub mod error;
pub mod experiments;
pub mod heads;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod ssl;
pub mod synth;
pub mod segmenter;
pub mod textio;
pub mod units;

pub use error::{Error, Result};
