//! Configuration, persistence and the experiment suite around `noise-lab-core`.

pub mod artifacts;
pub mod checks;
pub mod config;
pub mod experiment;
pub mod predict;
pub mod verify;

use std::fmt;

/// An error that carries the process exit code: 2 for bad input, 1 for
/// failures while running.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitError {
    pub code: u8,
    pub msg: String,
}

impl ExitError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl fmt::Display for ExitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for ExitError {}

/// Exit code for an error chain: the first [`ExitError`] decides, anything else is 1.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<ExitError>())
        .map_or(1, |x| x.code)
}
