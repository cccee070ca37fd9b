//! Experiment driver for the signms solver: configuration, runs, tables and
//! the self-check suite behind `signms verify`.

pub mod config;
pub mod run;
pub mod verify;
