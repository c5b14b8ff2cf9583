//! Stance detection on social media with a heterophily-aware social context
//! encoder, plus the surrounding corpus, graph, agreement and hesitancy
//! tooling.

pub mod corpus;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod graph;
pub mod hesitancy;
pub mod linalg;
pub mod model;
pub mod synthetic;

pub use error::{Error, Result};
