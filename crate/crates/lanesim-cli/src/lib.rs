//! Library surface of the experiment runner, used by the `lanesim` binary
//! and by integration tests.

pub mod config;
pub mod experiment;
