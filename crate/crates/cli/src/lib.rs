//! Library surface of the command-line tool: flag parsing, the DVF1 volume
//! format, and run orchestration. The `diffreg` binary is a thin wrapper.

pub mod args;
pub mod runner;
pub mod volume;
