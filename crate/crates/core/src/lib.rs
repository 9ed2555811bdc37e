//! Simulation and analysis of hybrid optical-fiber frequency-comparison
//! links: noise synthesis, a noise-compensated link plus a two-way fiber,
//! Π/Λ counting, Allan statistics and thermal error decomposition.

pub mod bundle;
pub mod combiners;
pub mod counters;
pub mod error;
pub mod link;
pub mod noise;
pub mod pipeline;
pub mod regression;
pub mod scenario;
pub mod series;
pub mod stability;

pub use error::{Error, Result};
