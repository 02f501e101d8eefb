//! Explainable session-based recommendation by reinforcement-learned path
//! reasoning over a product knowledge graph.

pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod infer;
pub mod ingest;
pub mod kg;
pub mod linalg;
pub mod mdp;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod transe;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use kg::{EntityId, EntityKind, KnowledgeGraph, Relation};
