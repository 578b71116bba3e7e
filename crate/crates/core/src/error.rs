use std::path::PathBuf;

/// Errors produced by the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        context: String,
        line: Option<usize>,
        message: String,
    },

    /// A structural invariant does not hold. The message names the offending record.
    #[error("validation error: {0}")]
    Invalid(String),

    #[error("missing period {timestamp} in regional history")]
    MissingPeriod { timestamp: String },

    #[error("region {region} has zero total weight and no fallback is configured")]
    DegenerateRegion { region: u32 },

    #[error("substation {bus} (region {region}, {voltage_kv} kV) has no compatible geolocation")]
    EmptyCompatibility { bus: u32, region: u32, voltage_kv: f64 },

    #[error("no injective assignment exists: {0}")]
    InfeasibleAssignment(String),

    #[error("instance has {size} substations, exhaustive search is capped at {cap}")]
    SizeLimit { size: usize, cap: usize },

    #[error("cholesky factorization failed after {attempts} jitter attempts")]
    Factorization { attempts: usize },

    #[error("normalization denominator {value:e} below guard in region {region}, period {period}")]
    DenominatorUnderflow { region: u32, period: usize, value: f64 },

    #[error("generator {generator} with fuel '{fuel}' has no matching market participant")]
    UnmatchedFuel { generator: u32, fuel: String },

    #[error("participant {participant} has no offer for hour {hour}")]
    HorizonGap { participant: String, hour: u32 },

    #[error("network is disconnected ({islands} islands)")]
    Disconnected { islands: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver stopped without a solution: {0}")]
    Solver(String),

    #[error("period {period}: {source}")]
    Period {
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Infeasible,
    Other,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: Option<usize>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::Invalid(_)
            | Error::MissingPeriod { .. }
            | Error::DegenerateRegion { .. }
            | Error::EmptyCompatibility { .. }
            | Error::SizeLimit { .. }
            | Error::UnmatchedFuel { .. }
            | Error::HorizonGap { .. }
            | Error::Disconnected { .. } => ErrorKind::Validation,
            Error::InfeasibleAssignment(_) | Error::Infeasible(_) => ErrorKind::Infeasible,
            Error::Period { source, .. } | Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
