use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown scholar id(s) in publication records: {}", .0.join(", "))]
    UnknownScholar(Vec<String>),

    #[error("no profile for scholar `{0}`")]
    MissingProfile(String),

    #[error("equilibrium iteration did not converge after {iterations} iterations (L1 residual {residual:.3e})")]
    EquilibriumNonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("optimizer failed: {message} (iterations {iterations}, gradient norm {grad_norm:.3e}, last step {last_step:.3e})")]
    Optimizer {
        message: String,
        iterations: usize,
        grad_norm: f64,
        last_step: f64,
    },

    #[error(
        "dyadic logit did not converge after {iterations} sweeps (max change {max_change:.3e})"
    )]
    FormationNonConvergence { iterations: usize, max_change: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::UnknownScholar(_)
                | Error::MissingProfile(_)
                | Error::Parse { .. }
                | Error::Io(_)
        )
    }
}
