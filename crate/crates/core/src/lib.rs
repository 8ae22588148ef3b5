//! Decoupled end-to-end speech recognition models with a replaceable
//! internal language model, at desk scale.

pub mod aed;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod eval;
pub mod lm;
pub mod nn;
pub mod search;
pub mod tensor;
pub mod train;
pub mod transducer;
pub mod vocab;

pub use error::{Error, Result};
