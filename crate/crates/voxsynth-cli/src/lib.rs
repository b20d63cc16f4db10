//! Command-line front end for the voxsynth library: configuration handling,
//! procedural exemplar generation, benchmarking, and the end-to-end
//! pipelines behind each subcommand.

pub mod bench;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod procgen;
