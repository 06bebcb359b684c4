//! Batch experiment driver for the sequential neural likelihood
//! benchmarks: configuration, orchestration, persistence and metrics.

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod files;
pub mod observe;
