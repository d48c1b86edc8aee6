//! Command-line front end: configuration, subcommands and report files.

pub mod app;
pub mod config;
pub mod error;
pub mod report;
