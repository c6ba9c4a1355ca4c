use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid quantum number: {0}")]
    QuantumNumber(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("basis overflow: {requested} states exceeds cap {cap}")]
    BasisOverflow { requested: usize, cap: usize },
    #[error("step size underflow at t = {t}: h = {h}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),
    #[error("norm drift {drift:e} exceeds tolerance {tol:e}")]
    NormDrift { drift: f64, tol: f64 },
    #[error("no interior minimum of the base population in the simulated window")]
    NoMinimum,
    #[error("target group for axis {0} has zero norm")]
    ZeroNormTarget(char),
    #[error("C profile is not normalized at v = {v:?}: sum |C|^2 = {sum}")]
    NonNormalizedProfile { v: [usize; 3], sum: f64 },
    #[error("thermal weight beyond truncation {tail:e} exceeds {max:e}")]
    TruncationTail { tail: f64, max: f64 },
    #[error("propagator deviates from unitarity by {0:e}")]
    NonUnitary(f64),
    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::QuantumNumber(_) | Error::Geometry(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
