//! Exit-code classification.

use std::fmt;

use lbm_core::backends::BackendError;
use lbm_core::bank::BankError;
use lbm_core::dataset::DatasetError;
use lbm_core::fusion::FusionError;
use lbm_core::probe::ProbeError;

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

/// Bad input, configuration or missing upstream artifact.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(message.into()))
}

/// At least one selftest suite failed.
#[derive(Debug)]
pub struct SelftestFailed(pub usize);

impl fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} selftest suite(s) failed", self.0)
    }
}

impl std::error::Error for SelftestFailed {}

/// Backend and I/O failures are runtime errors; malformed inputs and
/// configuration are validation errors.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let chain = || err.chain();
    if chain().any(|e| e.is::<SelftestFailed>()) {
        return EXIT_SELFTEST;
    }
    if chain().any(|e| e.is::<BackendError>() || e.is::<std::io::Error>()) {
        return EXIT_RUNTIME;
    }
    if chain().any(|e| e.is::<Invalid>()) {
        return EXIT_VALIDATION;
    }
    for e in chain() {
        if let Some(d) = e.downcast_ref::<DatasetError>() {
            return match d {
                DatasetError::Io { .. } | DatasetError::Backend(_) | DatasetError::Bank(BankError::Io { .. }) => {
                    EXIT_RUNTIME
                }
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(b) = e.downcast_ref::<BankError>() {
            return if matches!(b, BankError::Io { .. }) { EXIT_RUNTIME } else { EXIT_VALIDATION };
        }
        if let Some(p) = e.downcast_ref::<ProbeError>() {
            return match p {
                ProbeError::Io { .. } | ProbeError::Diverged { .. } => EXIT_RUNTIME,
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(f) = e.downcast_ref::<FusionError>() {
            return if matches!(f, FusionError::Io { .. }) { EXIT_RUNTIME } else { EXIT_VALIDATION };
        }
    }
    EXIT_RUNTIME
}
