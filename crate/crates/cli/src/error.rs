//! Exit-code classification.

use routescore::finetune::FinetuneError;
use routescore::model::ModelError;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: anyhow::Error) -> Failure {
        Failure {
            code: EXIT_USAGE,
            error,
        }
    }
}

/// Non-finite training losses are numeric failures, configuration errors
/// surfacing from the library are usage errors, and everything else is a
/// data error.
impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Failure {
        let mut code = EXIT_DATA;
        for cause in error.chain() {
            if let Some(e) = cause.downcast_ref::<ModelError>() {
                code = match e {
                    ModelError::NonFinite { .. } => EXIT_NUMERIC,
                    ModelError::Config(_) => EXIT_USAGE,
                    _ => code,
                };
            }
            if let Some(e) = cause.downcast_ref::<FinetuneError>() {
                code = match e {
                    FinetuneError::NonFinite { .. } => EXIT_NUMERIC,
                    FinetuneError::Model(ModelError::NonFinite { .. }) => EXIT_NUMERIC,
                    FinetuneError::Config(_) => EXIT_USAGE,
                    _ => code,
                };
            }
        }
        Failure { code, error }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classifies_through_context() {
        let e: anyhow::Result<()> = Err(ModelError::NonFinite { epoch: 1, batch: 0 }.into());
        assert_eq!(
            Failure::from(e.context("training").unwrap_err()).code,
            EXIT_NUMERIC
        );
        let e = anyhow::Error::from(FinetuneError::Config("rank".into()));
        assert_eq!(Failure::from(e).code, EXIT_USAGE);
        assert_eq!(
            Failure::from(anyhow::anyhow!("missing file")).code,
            EXIT_DATA
        );
    }
}
