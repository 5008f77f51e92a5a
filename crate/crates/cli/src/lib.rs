//! Library side of the `subsort` binary: configuration, the three
//! subcommands, and the files they write.

pub mod commands;
pub mod config;
pub mod dump;
pub mod error;
pub mod evaluate;
