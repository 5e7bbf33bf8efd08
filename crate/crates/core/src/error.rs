use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A structural hypothesis on the model failed; `assumption` names it.
    #[error("assumption `{assumption}` violated: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("point ({x}, {y}) lies outside the sampled window")]
    OutOfWindow { x: f64, y: f64 },

    #[error("degenerate eikonal problem: {0}")]
    DegenerateEikonal(String),

    #[error("source set is empty or outside the grid")]
    EmptySource,

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("bracket [{lo}, {hi}] does not contain a sign change")]
    Bracket { lo: f64, hi: f64 },

    #[error("grid budget exceeded: window half-width {required_half_width} needs {nodes} nodes (limit {limit})")]
    GridBudget { required_half_width: f64, nodes: usize, limit: usize },

    #[error("CFL condition violated: dt = {dt:e} exceeds {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("under-resolved grid: h = {h} but the oscillation scale requires h <= {required}")]
    UnderResolved { h: f64, required: f64 },
}

pub(crate) fn invalid(name: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidParameter { name, detail: detail.into() }
}
