//! Fixed-size observations, compositional action embeddings and the
//! normalized latent action space with exact cosine k-NN decoding.

mod action;
mod compactness;
pub mod hash;
mod observation;
mod space;

pub use action::{ActionEmbedder, OSPF_DELTAS};
pub use compactness::compactness;
pub use hash::{feature_hash, HASH_DIM};
pub use observation::{build_observation, descriptors, pool_rows, Pooling, DESCRIPTORS};
pub use space::{knn_scan, LatentSpace, LatentStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("component {component} refers to node {id}, graph has {nodes}")]
    OutOfRange { component: String, id: usize, nodes: usize },
    #[error("action {0:?} does not match the action layout of this environment")]
    Arity(crate::envs::Action),
    #[error("missing embeddings for graph '{0}'")]
    MissingGraph(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dim { expected: usize, found: usize },
    #[error("need at least {needed} actions, have {have}")]
    TooFew { needed: usize, have: usize },
    #[error("latent space file: {0}")]
    Io(String),
}
