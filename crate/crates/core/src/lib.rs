//! Latent action spaces for reinforcement learning on graph combinatorial
//! optimization problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape and Adam.
//! - [`graph`]: typed attributed graphs, feature normalization and sparsification.
//! - [`envs`]: seven benchmark environments behind one sequential-decision interface.
//! - [`oracle`]: scenario generation and heuristic sweeps producing score bounds.
//! - [`gae`]: graph auto-encoder producing node embeddings.
//! - [`latent`]: observations, compositional action embeddings and k-NN decoding.
//! - [`agents`]: projection, iterative and discrete agents with PPO / fitted Q-iteration.
//! - [`eval`]: generalization protocol, robust statistics and scaling fits.
//! - [`pipeline`]: the end-to-end commands used by the CLI.

pub mod agents;
pub mod envs;
pub mod eval;
pub mod gae;
pub mod graph;
pub mod latent;
pub mod oracle;
pub mod parallel;
pub mod pipeline;
pub mod tensor;
