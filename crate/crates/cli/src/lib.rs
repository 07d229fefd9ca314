//! Library side of the `semdec` binary: configuration, the data pipeline
//! shared by the subcommands, and the subcommands themselves.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::fmt;

/// Failure class of a command, attached as context and mapped to the exit
/// code. Untagged errors are data errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    Config,
    Training,
    Data,
}

impl Failure {
    pub fn code(self) -> i32 {
        match self {
            Failure::Config => 2,
            Failure::Training => 3,
            Failure::Data => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Failure::Config => "configuration error",
            Failure::Training => "training failed",
            Failure::Data => "data error",
        })
    }
}

impl std::error::Error for Failure {}

pub trait Tag<T> {
    fn tag(self, failure: Failure) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn tag(self, failure: Failure) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(failure))
    }
}

/// Exit code for an error; the outermost tag wins.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.downcast_ref::<Failure>()
        .map_or(Failure::Data.code(), |f| f.code())
}
