use std::fmt;

use zsda_core::Error;

pub const OK: u8 = 0;
pub const VERIFICATION: u8 = 1;
pub const CONFIG: u8 = 2;
pub const IO: u8 = 3;
pub const VERSION: u8 = 4;

/// An error that already knows its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> anyhow::Error {
        Self { code: CONFIG, message: message.into() }.into()
    }

    pub fn verification(message: impl Into<String>) -> anyhow::Error {
        Self { code: VERIFICATION, message: message.into() }.into()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Json(_) => CONFIG,
        Error::Io(_) => IO,
        Error::Format(_) => VERSION,
        Error::Domain(_) | Error::Shape(_) | Error::State(_) | Error::Contract(_) => VERIFICATION,
    }
}

/// Exit code for an error chain: the first classified cause wins.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
    }
    VERIFICATION
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context as _;

    #[test]
    fn codes() {
        let io: anyhow::Error = std::io::Error::other("x").into();
        assert_eq!(code_for(&io.context("writing")), IO);
        let fmt: anyhow::Error = Error::Format("bad".into()).into();
        assert_eq!(code_for(&fmt), VERSION);
        let cfg = Err::<(), _>(Error::Config("k".into())).context("loading").unwrap_err();
        assert_eq!(code_for(&cfg), CONFIG);
        assert_eq!(code_for(&Failure::verification("grad")), VERIFICATION);
        assert_eq!(code_for(&anyhow::anyhow!("plain")), VERIFICATION);
    }
}
