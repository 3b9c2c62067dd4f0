//! Quote ingestion, synthetic data, run configuration and report files.

pub mod config;
pub mod quotes;
pub mod report;
pub mod synthetic;

pub use config::{DataSource, RunConfig};
pub use quotes::{preprocess_quotes, read_quotes, read_quotes_file, write_quotes, write_quotes_file, Quote, QuoteSet};
pub use report::emit_report;
pub use synthetic::{synthetic_ladder, SYNTHETIC_MATURITIES, SYNTHETIC_RATE, SYNTHETIC_SPOT};
