use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model has zero norm")]
    ZeroNorm,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("environment {0} has no rows")]
    MissingEnvironment(u8),
    #[error("environment {0} has no positive-label rows")]
    NoPositives(u8),
    #[error("model has no core signal: <w, mu_c> = {0:e}")]
    NoSignal(f64),
    #[error("degenerate constraint: a_1 = {a1:e}, a_2 = {a2:e}")]
    DegenerateConstraint { a1: f64, a2: f64 },
    #[error("non-finite objective at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("data not linearly separable: convex combination of signed rows has norm {residual:e} (row {worst_row} violated by {violation:e})")]
    NonSeparable { residual: f64, worst_row: usize, violation: f64 },
    #[error("{what} did not converge in {iters} iterations (residual {residual:e})")]
    NotConverged { what: &'static str, iters: usize, residual: f64 },
    #[error("gram matrix ill-conditioned: minimum eigenvalue {min_eig:e} below {threshold}")]
    IllConditioned { min_eig: f64, threshold: f64 },
    #[error("margin {gamma} infeasible: achievable margin is {max_margin}")]
    Infeasible { gamma: f64, max_margin: f64 },
    #[error("signed sample matrix is rank deficient")]
    RankDeficient,
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("config line {line}: field `{field}`: {msg}")]
    Config { line: usize, field: String, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
