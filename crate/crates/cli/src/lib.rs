//! Library side of the `naht` binary: configuration, subcommands and the
//! matrix-game lemma table.

pub mod commands;
pub mod config;
pub mod lemmas;
