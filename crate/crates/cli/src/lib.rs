//! File formats and command implementations behind the `dcmatch` binary.
//!
//! Everything algorithmic lives in `dcmatch-core`; this crate adds the JSON
//! lines dataset format, gazetteer and POS-lexicon files, the binary
//! checkpoint format, run configuration, and the seven pipeline commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;

pub use error::CliError;
