//! Exit codes: 0 ok, 2 usage, 3 data or I/O, 4 numeric, 5 acceptance failure.

use std::fmt;

use regid::Error;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;
pub const ACCEPTANCE: u8 = 5;

/// An error that carries its exit code explicitly.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Coded { code: USAGE, message: message.into() }.into()
}

pub fn coded(code: u8, message: impl Into<String>) -> anyhow::Error {
    Coded { code, message: message.into() }.into()
}

fn library_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Shape(_) => USAGE,
        Error::Ingestion { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => DATA,
        Error::Domain(_)
        | Error::Convergence { .. }
        | Error::Estimation { .. }
        | Error::Numerical(_)
        | Error::Stability(_) => NUMERIC,
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(l) = cause.downcast_ref::<Error>() {
            return library_code(l);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return DATA;
        }
    }
    DATA
}
