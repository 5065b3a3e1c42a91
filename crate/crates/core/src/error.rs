use thiserror::Error;

/// Errors raised by the sampling toolkit.
#[derive(Debug, Error)]
pub enum DasError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("time index {t} out of range 0..={max}")]
    TimeRange { t: usize, max: usize },

    #[error("degenerate tilted target: component {component} has a non positive-definite precision (alpha = {alpha})")]
    DegenerateTarget { component: usize, alpha: f64 },

    #[error("score provider cannot supply {0}")]
    Capability(&'static str),

    #[error("guidance gradient is not finite at t = {t} (norm = {norm})")]
    GuidanceExplosion { t: usize, norm: f64 },

    #[error("degenerate ensemble: no particle carries a finite weight")]
    DegenerateEnsemble,

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("invalid training config: {0}")]
    TrainConfig(String),

    #[error("singular normal equations; increase the ridge regularization (ridge = {ridge})")]
    SingularSurrogate { ridge: f64 },

    #[error("online round {round} failed (alpha = {alpha}): {source}")]
    OnlineRound {
        round: usize,
        alpha: f64,
        #[source]
        source: Box<DasError>,
    },

    #[error("sampling step t = {t} failed: {source}")]
    Step {
        t: usize,
        #[source]
        source: Box<DasError>,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DasError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DasError::Dimension { expected, got });
    }
    Ok(())
}
