use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mass system: {0}")]
    InvalidMassSystem(String),

    #[error("center of mass not at origin (residual {residual:e})")]
    CenterOfMass { residual: f64 },

    #[error("collision between bodies {i} and {j} (distance {distance:e})")]
    Collision { i: usize, j: usize, distance: f64 },

    #[error("configuration is not on the unit sphere (norm {norm})")]
    NotOnSphere { norm: f64 },

    #[error("frame is not orthonormal: {0}")]
    NotOrthonormal(String),

    #[error("total collision: q = 0 has no blow-up image")]
    TotalCollision,

    #[error("state lies on the infinity manifold (rho = 0) and has no Cartesian image")]
    AtInfinity,

    #[error("s1 is not orthogonal to s0 (inner product {inner:e})")]
    NotOrthogonal { inner: f64 },

    #[error("step size underflow at tau = {tau} (h = {step:e})")]
    StepSizeUnderflow { tau: f64, step: f64 },

    #[error("step budget exhausted at tau = {tau}")]
    MaxSteps { tau: f64 },

    #[error("no convergence to an equilibrium before tau = {tau}")]
    NoConvergence { tau: f64 },

    #[error("insufficient samples: found {found}, need {needed}")]
    InsufficientSamples { found: usize, needed: usize },

    #[error("trajectory has not converged to the requested equilibrium")]
    NotConverged,

    #[error("seed scale {scale:e} exceeds bound {bound:e}")]
    SeedScale { scale: f64, bound: f64 },

    #[error("orbit parameter is zero (constant orbit)")]
    ZeroOrbit,

    #[error("rho1 = 0: the orbit lies at infinity and has no Chazy offset")]
    RhoZero,

    #[error("outside the asymptotic regime: {0}")]
    NotAsymptotic(String),

    #[error("ill-conditioned least-squares design (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("configuration is not planar")]
    NonPlanar,

    #[error("configuration is collinear")]
    Collinear,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
