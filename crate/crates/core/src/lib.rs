//! Claims-data ETL and cohort analysis.
//!
//! The pipeline runs in stages: CSV tables of a star schema are flattened
//! into one wide columnar table ([`flatten`]), standardized patient events
//! are pulled out of it ([`extract`]), and the resulting cohorts are
//! combined, described and summarized ([`cohort`], [`stats`]) or exported as
//! dense tensors ([`features`]).

pub mod cohort;
pub mod config;
pub mod error;
pub mod extract;
pub mod finding;
pub mod features;
pub mod flatten;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod table;

pub use error::{Error, ErrorClass, Result};
pub use finding::{Finding, Severity};
pub use model::{Event, Gender, Patient, Timestamp};
