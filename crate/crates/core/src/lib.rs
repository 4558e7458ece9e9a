//! Interpretable sarcasm classification with semantic and sentiment
//! prototype layers over precomputed text embeddings.
//!
//! Inputs are embedding datasets ([`store`]); prototypes are initialized by
//! k-means ([`kmeans`]), scored with an RBF kernel ([`network`]), trained on a
//! composite objective ([`losses`], [`train`]) and finally projected onto real
//! training sentences to produce case-based explanations ([`explain`]).

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod explain;
pub mod kmeans;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod seed;
pub mod store;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
