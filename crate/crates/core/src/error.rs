use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} lies outside the closed domain")]
    OutsideDomain([f64; 2]),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error at offset {offset}: {message}")]
    Expr { offset: usize, message: String },

    #[error("collar of width {width} is too wide: chart jacobian degenerates at sigma={sigma}, z={z}")]
    CollarTooWide { width: f64, sigma: f64, z: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("classification error: expected {expected}, found {found}")]
    Classification { expected: String, found: String },

    #[error("integration failed at t={t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("requested {requested} eigenpairs but only {admissible} lie in the trustworthy band")]
    SpectralBand { requested: usize, admissible: usize },

    #[error("dyadic band [{lo}, {hi}) exceeds the computed spectrum (sqrt(lambda_max) = {max})")]
    BandExceedsSpectrum { lo: f64, hi: f64, max: f64 },

    #[error("dense solve on {size} modes exceeds the limit {limit}; choose a coarser band")]
    TooManyModes { size: usize, limit: usize },

    #[error("symbol aliases on the grid: relative magnitude {magnitude:.3e} at the band edge; need at least {required} points per axis")]
    Aliasing { magnitude: f64, required: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("perturbation rejected after {0} attempts: SPD lost")]
    PerturbationRejected(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
