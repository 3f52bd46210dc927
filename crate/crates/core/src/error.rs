use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("negative iterate requested for a non-invertible map or cocycle")]
    NegativeIterateOfNonInvertible,
    #[error("points belong to different spaces ({0} vs {1})")]
    SpaceMismatch(String, String),
    #[error("operator is singular or numerically non-invertible (smallest singular value {0:e})")]
    SingularGenerator(f64),
    #[error("pair is degenerate: d(x, y) = 0")]
    DegeneratePair,
    #[error("subspaces carry different norms")]
    NormMismatch,
    #[error("ambient dimensions differ ({0} vs {1})")]
    AmbientMismatch(usize, usize),
    #[error("splitting is ill-conditioned (condition number {0:e})")]
    IllConditionedSplitting(f64),
    #[error("graph transversality failed: projection restricted to the target is singular")]
    TransversalityFailure,
    #[error("Neumann series diverges: ||L|| = {0} >= 1")]
    SeriesDivergence(f64),
    #[error("horizon too short: estimates at N and N/2 differ by {diff:e} (limit {limit:e})")]
    HorizonTooShort { diff: f64, limit: f64 },
    #[error("intersection has dimension {found}, expected {expected}")]
    IntersectionRankDeficit { expected: usize, found: usize },
    #[error("block B restricted to U_i is numerically singular (sigma_min {0:e})")]
    BlockSingular(f64),
    #[error("no ell <= {cap} reaches the target fraction {target}")]
    UnreachableGamma { cap: f64, target: f64 },
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("cannot certify synthesized instance: {0}")]
    HypothesisSynthesisFailure(String),
    #[error("pair is outside the regular set")]
    PairOutsideRegularSet,
    #[error("pair too far apart: d(x, y) = {distance} >= {limit}")]
    PairTooFar { distance: f64, limit: f64 },
    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
