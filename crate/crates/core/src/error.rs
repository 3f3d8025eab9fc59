use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported contract: {0}")]
    Unsupported(String),

    #[error("root finder failed at node {node} (t = {time:.6}): bracket [{lo:.10}, {hi:.10}]")]
    RootNotFound {
        node: usize,
        time: f64,
        lo: f64,
        hi: f64,
    },

    #[error(
        "quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e}"
    )]
    Quadrature { achieved: f64, requested: f64 },

    #[error("boundary monotonicity violated at node {node} (t = {time:.6}); refine the grid")]
    Monotonicity { node: usize, time: f64 },

    #[error("lattice: {0}")]
    Lattice(String),

    #[error("{step}: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tags the error with the pipeline step that produced it.
    pub fn in_step(self, step: &'static str) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}
