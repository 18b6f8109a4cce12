//! Exit status taxonomy.

use std::fmt;

use module_forge_core::registry::RegistryError;

pub const SUCCESS: u8 = 0;
pub const PARTIAL_FAILURE: u8 = 1;
pub const USAGE: u8 = 2;
pub const NETWORK: u8 = 3;

/// Bad input or an unmet precondition (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Some items in a batch failed (exit 1, or 3 if every failure was a
/// network failure and nothing succeeded).
#[derive(Debug)]
pub struct BatchFailure {
    pub failed: usize,
    pub succeeded: usize,
    pub all_network: bool,
}

impl fmt::Display for BatchFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} item(s) failed, {} succeeded",
            self.failed, self.succeeded
        )
    }
}

impl std::error::Error for BatchFailure {}

/// Short label for log lines and the exit code for an error chain.
pub fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("usage", USAGE);
        }
        if let Some(batch) = cause.downcast_ref::<BatchFailure>() {
            let code = if batch.all_network && batch.succeeded == 0 {
                NETWORK
            } else {
                PARTIAL_FAILURE
            };
            return ("partial", code);
        }
        if let Some(reg) = cause.downcast_ref::<RegistryError>() {
            return match reg {
                RegistryError::Transient(_) => ("transient", NETWORK),
                RegistryError::AuthFailure(_) => ("auth", NETWORK),
                RegistryError::NotFound(_) => ("not-found", USAGE),
                RegistryError::UnsupportedMediaType(_) => ("unsupported", PARTIAL_FAILURE),
                RegistryError::Integrity { .. } => ("integrity", PARTIAL_FAILURE),
                RegistryError::Protocol(_) => ("protocol", PARTIAL_FAILURE),
                RegistryError::Io(_) => ("io", PARTIAL_FAILURE),
            };
        }
    }
    ("failure", PARTIAL_FAILURE)
}

pub fn is_network(err: &anyhow::Error) -> bool {
    classify(err).1 == NETWORK
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn registry_errors_map_through_context() {
        let e = Err::<(), _>(RegistryError::Transient("down".into()))
            .context("adding x")
            .unwrap_err();
        assert_eq!(classify(&e), ("transient", NETWORK));
        let e = anyhow::Error::new(RegistryError::NotFound("x".into()));
        assert_eq!(classify(&e).1, USAGE);
        assert_eq!(classify(&anyhow::anyhow!("other")).1, PARTIAL_FAILURE);
    }

    #[test]
    fn batch_codes() {
        let all_net = anyhow::Error::new(BatchFailure {
            failed: 2,
            succeeded: 0,
            all_network: true,
        });
        assert_eq!(classify(&all_net).1, NETWORK);
        let mixed = anyhow::Error::new(BatchFailure {
            failed: 1,
            succeeded: 2,
            all_network: true,
        });
        assert_eq!(classify(&mixed).1, PARTIAL_FAILURE);
    }
}
