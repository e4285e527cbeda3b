//! Transition datasets, run configuration, and the dynamics expression
//! language used to generate benchmark data.

mod config;
mod dataset;
pub mod expr;

pub use config::{Configuration, Format, SampleSource, DEFAULT_OPTIMISER};
pub use dataset::{read_csv_matrix, sample_transitions, write_csv_matrix, Dataset, DynamicsModel};
