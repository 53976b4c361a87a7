use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite or non-positive length {0}")]
    BadLength(f64),
    #[error("triangle ({0}, {1}, {2}) violates the triangle inequality")]
    Inadmissible(f64, f64, f64),
    #[error("conformal factor out of representable range (log-scale {0})")]
    ScaleOverflow(f64),
    #[error("tan pole in angle derivative (a_i + a_j - a_k = {0})")]
    TanPole(f64),
    #[error("invalid surface: {0}")]
    Combinatorics(String),
    #[error("face {face} is inadmissible: lengths ({l0}, {l1}, {l2})")]
    InadmissibleFace { face: usize, l0: f64, l1: f64, l2: f64 },
    #[error("edge ({0}, {1}) does not exist")]
    NoSuchEdge(usize, usize),
    #[error("edge {edge} cannot be flipped: {reason}")]
    NotFlippable { edge: usize, reason: String },
    #[error("flip produces degenerate triangle")]
    DegenerateFlip,
    #[error("make_delaunay exceeded {cap} flips; state: {state}")]
    FlipCap { cap: usize, state: String },
    #[error("make_delaunay stuck: violating edges cannot be flipped ({0:?})")]
    DelaunayStuck(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("line search failed at residual {residual:e}; u = {u:?}")]
    LineSearch { residual: f64, u: Vec<f64> },
    #[error("target violates the convexity regime alpha * target <= 0 at vertex {vertex}")]
    Regime { vertex: usize },
    #[error("|u| exceeded {limit} at vertex {vertex}")]
    ConformalEscape { vertex: usize, limit: f64 },
    #[error("surgery path-following failed: {0}")]
    PathFollowing(String),
}
