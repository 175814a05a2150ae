//! Experiment runner for epistemic uncertainty collapse in ensembles of
//! ensembles: subcommands, layered configuration and run outputs.

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
