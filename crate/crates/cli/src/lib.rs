//! Configuration, artifact plumbing and commands of the `phaseplane` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
