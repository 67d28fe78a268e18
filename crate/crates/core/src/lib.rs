//! Deterministic simulator for federated learning with FedAvg and PDMM
//! under Byzantine attacks, in centralized (star) and decentralized (peer
//! graph) settings.

pub mod adversary;
pub mod data;
pub mod error;
pub mod harness;
pub mod localsolve;
pub mod model;
pub mod protocols;
pub mod seed;
pub mod topology;

pub use error::{Error, ErrorCategory, Result};
pub use model::ParamVector;
pub use seed::SeedStreams;
pub use topology::{NodeId, Topology};
