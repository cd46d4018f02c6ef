use thiserror::Error;

#[derive(Error, Debug)]
pub enum AttError {
    #[error("singular matrix: {what}")]
    Singular { what: String },

    #[error("ill-conditioned {what} (condition estimate {cond:e})")]
    IllConditioned { what: String, cond: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("inconsistent quaternion rate pair: scalar residual {0:e}")]
    InconsistentRates(f64),

    #[error("step size underflow at t = {t} s (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state derivative at t = {t} s")]
    NonFinite { t: f64 },

    #[error("at t = {t} s: {source}")]
    At { t: f64, source: Box<AttError> },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("toml write error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

impl AttError {
    /// Attaches the simulation time at which the error occurred.
    pub fn at(self, t: f64) -> Self {
        match self {
            e @ AttError::At { .. } => e,
            e => AttError::At { t, source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, AttError>;
