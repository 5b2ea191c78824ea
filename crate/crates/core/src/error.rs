use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unusable grid spacing h = {0}: need 0 < h <= 1/2 with 1/h an integer")]
    GridSpacing(f64),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("inadmissible vortex configuration: {}", .0.join("; "))]
    Inadmissible(Vec<String>),

    #[error("vortex lattice is empty (domain too small for delta = {delta})")]
    EmptyLattice { delta: f64 },

    #[error("profile table too coarse: {cells_per_eps:.2} cells per mollifier radius (need >= 4)")]
    CoarseTable { cells_per_eps: f64 },

    #[error("diffusivity tensor is not positive semidefinite at node {node}")]
    NotPsd { node: usize },

    #[error("linear solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },

    #[error("eigen iteration did not converge: residual {residual:e} after {iterations} iterations")]
    EigenNotConverged { residual: f64, iterations: usize },

    #[error("radial mesh has no node at the coefficient jump r = {0}")]
    MeshNotAligned(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("path {path} (seed {seed:#018x}) failed: {source}")]
    PathFailed {
        path: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
