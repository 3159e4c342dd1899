//! Process exit codes: 0 success, 2 usage or configuration, 3 environment,
//! 4 numerical failure.

use std::fmt;

pub const USAGE: u8 = 2;
pub const ENVIRONMENT: u8 = 3;
pub const NUMERICAL: u8 = 4;

/// An error tagged with the exit code it should produce.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub msg: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Coded {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Coded { code: USAGE, msg: msg.into() }.into()
}

pub fn environment(msg: impl Into<String>) -> anyhow::Error {
    Coded { code: ENVIRONMENT, msg: msg.into() }.into()
}

fn core_code(e: &diffpop::Error) -> u8 {
    use diffpop::Error::*;
    match e {
        NonFinite(_) | Diverged { .. } => NUMERICAL,
        Io(_) => ENVIRONMENT,
        _ => USAGE,
    }
}

/// The exit code for `err`: the first tagged cause in its chain wins.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<diffpop::Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ENVIRONMENT;
        }
    }
    1
}
