pub mod clustering;
pub mod data;
pub mod em;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod hmm;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod ssl;

pub use error::{Error, Result};
