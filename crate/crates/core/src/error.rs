use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum DseError {
    #[error("degenerate machine parameters: {0}")]
    DegenerateParameters(String),

    #[error("invalid tap setting: 1 + tau = 0")]
    InvalidTap,

    #[error("zero voltage phasor at the auxiliary bus")]
    ZeroVoltage,

    #[error("empty averaging window: t = {t} <= t0 = {t0}")]
    EmptyWindow { t: f64, t0: f64 },

    #[error("singular network transfer matrix (|det| = {det:e})")]
    SingularNetwork { det: f64 },

    #[error("auxiliary power fixed point did not converge after {iterations} iterations (last change {change:e})")]
    AuxNonConvergence { iterations: usize, change: f64 },

    #[error("state left the admissible region at t = {t} s: {what}")]
    Instability { t: f64, what: String },

    #[error("degenerate phasor: |psi| = {magnitude:e} is below the floor {floor:e}")]
    DegeneratePhasor { magnitude: f64, floor: f64 },

    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("series too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("step too large: dt * max(pole) = {product} must be below {limit}")]
    StepTooLarge { product: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter estimate never settled inside the convergence band")]
    NeverConverged,

    #[error("at sample {index}: {source}")]
    AtSample {
        index: usize,
        #[source]
        source: Box<DseError>,
    },

    #[error("configuration parse error: {0}")]
    ConfigParse(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    ConfigInvalid(Vec<String>),

    #[error("csv schema mismatch in {path}: {reason}")]
    Schema { path: String, reason: String },

    #[error("csv data error in {path} at row {row}: {reason}")]
    CsvData { path: String, row: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DseError {
    pub(crate) fn at(self, index: usize) -> Self {
        DseError::AtSample {
            index,
            source: Box::new(self),
        }
    }

    /// Short machine-readable kind tag used by the command-line driver.
    pub fn kind(&self) -> &'static str {
        match self {
            DseError::DegenerateParameters(_) => "degenerate_parameters",
            DseError::InvalidTap => "invalid_tap",
            DseError::ZeroVoltage => "zero_voltage",
            DseError::EmptyWindow { .. } => "empty_window",
            DseError::SingularNetwork { .. } => "singular_network",
            DseError::AuxNonConvergence { .. } => "aux_non_convergence",
            DseError::Instability { .. } => "instability",
            DseError::DegeneratePhasor { .. } => "degenerate_phasor",
            DseError::LengthMismatch { .. } => "length_mismatch",
            DseError::TooShort { .. } => "too_short",
            DseError::StepTooLarge { .. } => "step_too_large",
            DseError::InvalidArgument(_) => "invalid_argument",
            DseError::NeverConverged => "never_converged",
            DseError::AtSample { source, .. } => source.kind(),
            DseError::ConfigParse(_) => "config_parse",
            DseError::ConfigInvalid(_) => "config_invalid",
            DseError::Schema { .. } => "schema",
            DseError::CsvData { .. } => "csv_data",
            DseError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, DseError>;
