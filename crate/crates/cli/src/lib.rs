//! Command-line and HTTP front end for `evocell` run directories.
//!
//! The `evocell` binary is a thin wrapper over [`cli::main_with`]; every
//! subcommand only reads checkpoints, drives an [`evocell::Engine`], or
//! appends to the run's intervention mailbox.

pub mod cli;
pub mod http;

pub use cli::main_with;
