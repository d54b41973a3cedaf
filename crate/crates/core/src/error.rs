use thiserror::Error;

#[derive(Debug, Error)]
pub enum XferError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unequal masses {left} and {right}; normalize first or use tv_distance")]
    UnequalMass { left: f64, right: f64 },

    #[error("measure has zero mass")]
    EmptyMeasure,

    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    #[error("product of {atoms} atoms exceeds the cap of {cap}; compress the inputs first")]
    Capacity { atoms: u128, cap: usize },

    #[error("mass {mass:e} fell below the degeneracy threshold at t = {t}")]
    DegenerateMass { t: f64, mass: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("Picard iteration does not contract on a window of length {window}; use a smaller window")]
    WindowTooLarge { window: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl XferError {
    /// True for failures of the numerics (as opposed to bad input or config).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            XferError::Capacity { .. }
                | XferError::DegenerateMass { .. }
                | XferError::WindowTooLarge { .. }
                | XferError::EmptyMeasure
        )
    }
}

pub type Result<T> = std::result::Result<T, XferError>;
