//! Agents holding a private binary opinion declare it or its negation,
//! steered by Pólya-urn counters of agreement and disagreement with their
//! neighbours. This crate simulates the process, estimates the hidden
//! opinion share from the declared stream, integrates the mean-field ODE and
//! enumerates tiny instances exactly.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod meanfield;
pub mod model;
pub mod oracle;
pub mod replicas;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{validate_config, GraphSpec, InherentOpinions, Model, ModelConfig};
