//! Additive-attention sentiment classification and comparison of machine
//! attention against human eye-tracking measures.

pub mod corpus;
pub mod error;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod multitask;
pub mod ndgraph;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
