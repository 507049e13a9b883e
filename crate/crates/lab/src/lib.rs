//! Command line front end of the bubblelab numerical laboratory: run
//! configuration, deterministic CSV and JSON output with manifests, field
//! files, gnuplot scripts and the subcommands.

pub mod commands;
pub mod config;
pub mod fields;
pub mod output;
pub mod plots;
pub mod scan;
