//! Neural tensor factorization: a time-aware recommender that factorizes a
//! sparse user × item × time-slot tensor with learned embeddings, an LSTM
//! over past slot embeddings and an MLP decoder.

pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{NtfError, Result};
