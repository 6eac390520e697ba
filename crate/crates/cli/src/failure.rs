//! Exit-code taxonomy.

use thiserror::Error;

pub const INTERNAL: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const MISMATCH: u8 = 3;
pub const EMPTY: u8 = 4;

/// Failures the CLI raises itself, outside the library.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Empty(String),
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => VALIDATION,
                Failure::Empty(_) => EMPTY,
            };
        }
        if let Some(e) = cause.downcast_ref::<mfcce::Error>() {
            return match e {
                mfcce::Error::GridMismatch { .. } => MISMATCH,
                mfcce::Error::NumericalBlowup { .. } => INTERNAL,
                _ => VALIDATION,
            };
        }
    }
    INTERNAL
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfcce::TimeGrid;

    #[test]
    fn codes() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let h = TimeGrid::new(1.0, 20).unwrap();
        let mismatch = anyhow::Error::from(mfcce::Error::GridMismatch { expected: g, found: h });
        assert_eq!(exit_code(&mismatch), MISMATCH);
        let invalid = anyhow::Error::from(mfcce::Error::InvalidModel("R not positive".into()));
        assert_eq!(exit_code(&invalid.context("loading")), VALIDATION);
        assert_eq!(exit_code(&Failure::Empty("no region".into()).into()), EMPTY);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), INTERNAL);
    }
}
