//! Soil humidity estimation from LoRa uplink signal strength.
//!
//! The crate covers the whole pipeline: uplink telemetry ingestion and
//! storage, a seeded channel simulator, fading decomposition and dataset
//! construction, an ε-SVR and a stacked LSTM regressor, an evaluation and
//! sweep harness, and a duty-cycle battery lifetime model.

pub mod energy;
pub mod error;
pub mod harness;
pub mod lstm;
pub mod preprocess;
pub mod rng;
pub mod simulator;
pub mod svr;
pub mod telemetry;

pub use error::{Error, Result};
