use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid communication graph: {0}")]
    InvalidGraph(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },

    #[error("simulation diverged at t = {t:.4} s in agent {agent} (state norm {norm:.3e})")]
    Divergence { t: f64, agent: usize, norm: f64 },

    #[error(
        "rank condition failed: rank {achieved} < required {required}; \
         increase noise amplitude or window"
    )]
    RankCondition { required: usize, achieved: usize },

    #[error(
        "excitation failure: least-squares matrix condition number {cond:.3e} exceeds 1e12; \
         increase noise amplitude or window"
    )]
    Excitation { cond: f64 },

    #[error("learned P at iteration {iteration} is not positive definite (K is not stabilizing)")]
    NotPositiveDefinite { iteration: usize },

    #[error(
        "policy iteration did not converge within {cap} iterations (last step {last_step:.3e})"
    )]
    IterationCap { cap: usize, last_step: f64 },

    #[error("cannot recover input matrix from learned quantities: {0}")]
    InputRecovery(String),

    #[error("learned regulator quantities are inconsistent (residual {residual:.3e})")]
    RegulatorInconsistent { residual: f64 },

    #[error("regulator equations have no solution (residual {residual:.3e})")]
    RegulatorInfeasible { residual: f64 },

    #[error("sampling instants invalid: {0}")]
    Sampling(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("report verification failed: {0}")]
    Verification(String),

    /// Carries the inner message in its own text, so it reports no source.
    #[error("agent {agent} failed during {phase}: {cause}")]
    Agent {
        agent: usize,
        phase: &'static str,
        cause: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tags an error with the (1-based) follower index and pipeline phase.
    pub fn in_agent(self, agent: usize, phase: &'static str) -> Self {
        Error::Agent {
            agent,
            phase,
            cause: Box::new(self),
        }
    }

    /// Innermost error, skipping agent/phase wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Agent { cause, .. } => cause.root(),
            e => e,
        }
    }
}
