//! Teacher-student alignment of a frame-level encoder to a frozen,
//! language-agnostic sentence-embedding space.
//!
//! The crate covers the full loop at desk scale: a seeded synthetic
//! multilingual corpus ([`corpus`]), the student encoder with exact gradients
//! ([`model`]), cosine-distance training ([`training`]), translation retrieval
//! with Recall@k ([`retrieval`]), frame-level attention analysis
//! ([`attention`]) and slot-filling error rates ([`metrics`]).

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod rng;
pub mod textio;
pub mod training;

pub use error::{Result, SenseError};
