//! Command implementations behind the `fcubt` binary: curve CSV and model
//! JSON formats, the five subcommands, and the seeded replication harness.

pub mod commands;
pub mod curvefile;
pub mod harness;
pub mod modelfile;
