pub mod adversary;
pub mod baselines;
pub mod biohash;
pub mod channel;
pub mod dolev_yao;
pub mod error;
pub mod metrics;
pub mod primitives;
pub mod protocol;
pub mod registry;

pub use error::{Error, Result};
