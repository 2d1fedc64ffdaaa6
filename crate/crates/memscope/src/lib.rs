//! IO, configuration, adapter client, orchestration and reports on top of
//! `memscope-core`.

pub mod adapter;
pub mod cli;
pub mod config;
pub mod io;
pub mod report;
pub mod runner;
