//! Local origin and cache simulator with configurable nonce behaviour.
//!
//! Every scenario is served as its own site under `<name>.sim.test`. The
//! server is meant to be used as an HTTP proxy, so a scanner can resolve the
//! virtual hosts without DNS.

pub mod scenario;
pub mod server;

pub use scenario::{
    CacheMode, CacheStatusHeader, CspDelivery, GroundTruth, NonceAlphabet, NonceMode, SIM_DOMAIN, Scenario, ScenarioFile,
    Topology, builtin_matrix, crawl_scenarios, ground_truth,
};
pub use server::{LogEntry, RequestInfo, SimResponse, SimState, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario {0}")]
    Scenario(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: String, message: String },
}
