//! Knowledge-guided evolutionary search for compiler pass sequences.
//!
//! An offline pipeline ([`knowledge::build_kb`]) distills a program corpus
//! into a [`knowledge::PassKnowledgeBase`]; the online tuner
//! ([`evolve::tune`]) uses it to find a pass sequence that minimizes the
//! instruction count of a new program.

pub mod backend;
pub mod cluster;
pub mod error;
pub mod evolve;
pub mod features;
pub mod harness;
pub mod knowledge;
pub mod model;
pub mod rng;

pub use error::{BackendError, Error, Result};
