use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("state vector cannot be normalized (norm {0})")]
    Normalization(f64),
    #[error("density matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace is {0}, expected 1")]
    Trace(f64),
    #[error("density matrix has negative eigenvalue {0:e}")]
    NotPositive(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntanglementError {
    #[error("eigen-solver did not converge for state {0}")]
    NoConvergence(String),
    #[error("amplitudes are not of the form B|Phi-> + C|Psi+> + iE|Psi->: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KrausError {
    #[error("photodetection with efficiencies ({0}, {1}) needs the inefficient operator set")]
    NeedsInefficient(f64, f64),
    #[error("invalid measurement settings: {0}")]
    Settings(String),
    #[error("POVM completeness failed for {family}: residual {residual:e}")]
    PovmFailed { family: String, residual: f64 },
    #[error("quadrature order {0} too low for a continuous family (need >= 20)")]
    QuadratureOrder(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericalError {
    #[error("outcome {outcome} has zero probability (trace {trace:e})")]
    ImpossibleOutcome { outcome: String, trace: f64 },
    #[error("state left the physical region: min eigenvalue {min_eigenvalue:e}")]
    NegativeEigenvalue { min_eigenvalue: f64 },
    #[error("weight clip of {0:e} exceeds tolerance; reduce dt")]
    DtTooLarge(f64),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<NumericalError>,
    },
    #[error(transparent)]
    Kraus(#[from] KrausError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ODE integration unstable: {0}")]
    Unstable(String),
}
