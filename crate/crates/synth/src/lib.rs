//! Synthetic claims data for testing cohortforge.
//!
//! [`generate`] builds a normalized star schema with a seeded, integer-only
//! random source and records the events extraction should find. [`oracle`]
//! re-derives the same outputs straight from the CSV files with nested
//! loops and shares no code with the flatten and extract path.

pub mod config;
pub mod generate;
pub mod oracle;
pub mod rng;
pub mod star;

pub use config::SynthConfig;
pub use generate::{generate, Corpus, GeneratedTable, Truth};

pub(crate) use generate::parse_date;
