//! Idiomatic ↔ literal sentence paraphrasing.

pub mod backends;
pub mod corpus;
pub mod dataset;
pub mod dictionary;
pub mod error;
pub mod ibt;
pub mod metrics;
pub mod synth;
pub mod text;
pub mod ucd;

pub use error::{Error, Result};
