//! Command-line front end for `fret-core`: configuration, table output, and
//! the subcommands behind the `rydfret` binary.

pub mod commands;
pub mod config;
pub mod output;
