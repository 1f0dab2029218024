//! Similarity-matrix distillation for text-video retrieval.
//!
//! Teachers are dual encoders trained on different caption embeddings. A
//! student is trained with a max-margin ranking loss plus a Huber penalty
//! pulling its batch similarity matrix towards the mean of the teachers'.

pub mod data;
pub mod denoise;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
