//! Library surface of the CLI: configuration handling, CSV ingestion, and
//! the command implementations behind the `stlmm` binary.

pub mod commands;
pub mod config;
pub mod ingest;
