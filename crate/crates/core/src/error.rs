use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FretError {
    #[error("atom count {got} outside supported range [{min}, {max}]")]
    AtomCount { got: usize, min: usize, max: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pair separation {distance:.3e} µm is below the {r_min} µm floor")]
    PairTooClose { distance: f64, r_min: f64 },

    #[error("could not place {atoms} atoms in a {side} µm cube after {attempts} rejections")]
    Placement { atoms: usize, side: f64, attempts: usize },

    #[error("eigendecomposition failed (dim {dim}, max |H| = {max_abs:.3e} MHz, finite = {finite})")]
    Eigen { dim: usize, max_abs: f64, finite: bool },

    #[error("integration step {dt:.3e} µs underflows the 1e-9 µs floor (‖H‖ = {norm:.3e} MHz)")]
    StepUnderflow { dt: f64, norm: f64 },

    #[error("propagation failed at realization {realization}, detuning {detuning} MHz: {source}")]
    Realization {
        realization: usize,
        detuning: f64,
        #[source]
        source: Box<FretError>,
    },

    #[error("detuning grids differ: {0}")]
    GridMismatch(String),

    #[error("missing spectrum for {0} interacting atoms")]
    MissingSpectrum(usize),

    #[error("line shape: {0}")]
    LineShape(String),

    #[error("Lorentz fit did not converge after {iterations} iterations (gradient norm {grad_norm:.3e}, params {params:?})")]
    FitConvergence {
        iterations: usize,
        grad_norm: f64,
        params: [f64; 4],
    },

    #[error("field {field} V/cm is outside the linear window {window} V/cm around {f_res} V/cm")]
    FieldWindow { field: f64, f_res: f64, window: f64 },

    #[error("calibration: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, FretError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> FretError {
    FretError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
