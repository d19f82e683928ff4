use thiserror::Error;

/// Failure classes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point lies on interface {interface} and no side was requested")]
    OnInterfaceWithoutSide { interface: usize },
    #[error("point is outside the sampled domain")]
    OutOfDomain,
    #[error("point is not on interface {interface} (|psi| = {psi:e})")]
    NotOnInterface { interface: usize, psi: f64 },
    #[error("medium has no radial symmetry")]
    NotRadial,
    #[error("density is not integrable: {0}")]
    NonIntegrableDensity(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("covector is zero")]
    ZeroCovector,
    #[error("frequency is zero")]
    ZeroFrequency,
    #[error("covector is post-critical on the {side} side")]
    PostCritical { side: &'static str },
    #[error("covector is glancing on the {side} side")]
    Glancing { side: &'static str },
    #[error("glancing ray at interface {interface} (|xi.nu|/|xi| = {cosine:e})")]
    GlancingRay { interface: usize, cosine: f64 },
    #[error("ray integration failed: {0}")]
    StepFailure(String),
    #[error("no connecting ray found (miss = {miss:e})")]
    NoConnectingRay { miss: f64 },
    #[error("caustic on path near s = {s}")]
    CausticOnPath { s: f64 },
    #[error("transmission system is degenerate (|det| = {det:e})")]
    DegenerateSystem { det: f64 },
    #[error("missing derivatives: {0}")]
    MissingDerivatives(String),
    #[error("need at least {needed} usable samples at distinct slownesses, got {got}")]
    InsufficientAngles { needed: usize, got: usize },
    #[error("oblique-sample residual has no sign change in the admissible speed range")]
    NoBracket,
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("design matrix rank {rank} < {needed}")]
    RankDeficientDesign { rank: usize, needed: usize },
    #[error("weighted integrand under/overflows even after log-space rescaling")]
    QuadratureUnderflow,
    #[error("solver failed: {0}")]
    SolveFailure(String),
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by arithmetic breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Layer { source, .. } => source.is_numerical(),
            Error::StepFailure(_)
            | Error::NoConnectingRay { .. }
            | Error::CausticOnPath { .. }
            | Error::DegenerateSystem { .. }
            | Error::NoBracket
            | Error::RankDeficientDesign { .. }
            | Error::QuadratureUnderflow
            | Error::SolveFailure(_) => true,
            _ => false,
        }
    }
}
