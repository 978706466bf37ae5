//! Interpretable assortment-pricing rules: search, evaluation and allocation.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod dsl;
pub mod evo;
pub mod fitness;
pub mod fusion;
pub mod fingerprint;
pub mod grammar;
pub mod ingest;
pub mod pairs;
pub mod pipeline;
pub mod proposer;
pub mod rl;
pub mod search;
pub mod sim;
