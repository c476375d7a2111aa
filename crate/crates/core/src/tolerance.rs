use serde::{Deserialize, Serialize};

/// Every numerical threshold used by the library, in one injectable value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceSet {
    /// Relative local-error tolerance of the integrator.
    pub rtol: f64,
    /// Absolute local-error tolerance of the integrator.
    pub atol: f64,
    /// Convergence threshold on rho near an equilibrium.
    pub rho_eq: f64,
    /// Convergence threshold on the mass norm of w.
    pub w_eq: f64,
    /// Convergence threshold on |v - sign(v) sqrt(2h)|.
    pub v_eq: f64,
    /// Admissible energy drift along a trajectory.
    pub energy: f64,
    /// Admissible drift of the sphere and tangency constraints.
    pub constraint: f64,
    /// Largest admissible max(rho1, |s1|) for seeding.
    pub seed_scale_max: f64,
    /// Absolute tolerance of adaptive quadrature.
    pub quad_abs: f64,
    /// Relative singular-value threshold for rank decisions.
    pub rank_rel: f64,
    /// Largest admissible condition number of a least-squares design.
    pub cond_max: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-12,
            rho_eq: 1e-9,
            w_eq: 1e-8,
            v_eq: 1e-8,
            energy: 1e-9,
            constraint: 1e-10,
            seed_scale_max: 1e-3,
            quad_abs: 1e-10,
            rank_rel: 1e-8,
            cond_max: 1e8,
        }
    }
}

impl ToleranceSet {
    /// Scales the integrator tolerances, leaving every other threshold alone.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.rtol *= factor;
        self.atol *= factor;
        self
    }
}
