//! The hyperbolic scattering map and its structure: orbit parameters, scattering at
//! and near infinity, the first-order law `Delta A`, the integrated Hessian `Dbar`,
//! and numerical checks of the symmetries of the scattering relation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blowup::{check_frame, linear_model_flow, seed_state_on_shell, EquilibriumPoint, ManifoldParams};
use crate::chazy::{chazy_from_manifold, extract_manifold_params, ChazyParameters};
use crate::error::{Error, Result};
use crate::integrator::{detect_equilibrium, integrate, IntegrateOptions};
use crate::linalg::{gap_after, null_space, numerical_rank, singular_values};
use crate::nbody::{Configuration, MassSystem};
use crate::quadrature::integrate_vector;
use crate::tolerance::ToleranceSet;

/// Flow-invariant label of a stable or unstable manifold orbit, in normalized ray form.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitParameter {
    /// `1` for orbits off the infinity manifold, `0` on it.
    pub rho1: f64,
    /// `s1 - (rho1 log(rho1 |v0|) / v0^2) tgradU(s0)`, divided by `rho1` (it is then the
    /// Chazy offset `C`) or by its own norm when `rho1 = 0`.
    pub shifted_s1: Configuration,
}

impl OrbitParameter {
    /// True on the boundary `rho1 = 0` (orbits inside the infinity manifold).
    pub fn is_boundary(&self) -> bool {
        self.rho1 == 0.0
    }
}

fn shape_data(eq: &EquilibriumPoint, sys: &MassSystem) -> Result<(f64, Configuration)> {
    let (u, g) = sys.potential_and_grad(&eq.s0)?;
    Ok((u, g + &eq.s0 * u))
}

/// Normalized ray `[gamma]` of manifold parameters.
pub fn orbit_parameter(mp: &ManifoldParams, sys: &MassSystem) -> Result<OrbitParameter> {
    let v0 = mp.eq.v0;
    if mp.rho1 > 0.0 {
        let (_, tgrad) = shape_data(&mp.eq, sys)?;
        let shifted = &mp.s1 / mp.rho1 - tgrad * ((mp.rho1 * v0.abs()).ln() / (v0 * v0));
        return Ok(OrbitParameter { rho1: 1.0, shifted_s1: shifted });
    }
    let n = sys.norm(&mp.s1);
    if n == 0.0 {
        return Err(Error::ZeroOrbit);
    }
    Ok(OrbitParameter { rho1: 0.0, shifted_s1: &mp.s1 / n })
}

/// Moves `mp` along its linear-model orbit until `max(rho1, |s1|) = sigma`.
///
/// Returns the new parameters and the clock shift `tau` with `new = linear_model_flow(mp, tau)`.
pub fn flow_to_seed_scale(mp: &ManifoldParams, sigma: f64, sys: &MassSystem) -> Result<(ManifoldParams, f64)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("seed scale must be positive, got {sigma}")));
    }
    if mp.seed_scale(sys) == 0.0 {
        return Err(Error::ZeroOrbit);
    }
    let v0 = mp.eq.v0;
    // Bisection on log u, u = exp(-v0 tau); the scale grows with u.
    let scale_at = |lu: f64| -> Result<f64> { Ok(linear_model_flow(mp, -lu / v0, sys)?.seed_scale(sys)) };
    let mut lo = -50.0;
    while scale_at(lo)? >= sigma {
        lo -= 50.0;
        if lo < -2000.0 {
            return Err(Error::Degenerate("seed scale cannot be reached along the linear flow".into()));
        }
    }
    let mut hi = 0.0;
    while scale_at(hi)? < sigma {
        hi += 5.0;
        if hi > 700.0 {
            return Err(Error::Degenerate("seed scale cannot be reached along the linear flow".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if scale_at(mid)? < sigma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let tau = -0.5 * (lo + hi) / v0;
    Ok((linear_model_flow(mp, tau, sys)?, tau))
}

/// The point of the orbit `[gamma]` at equilibrium `eq` with seed scale `sigma`.
pub fn params_on_ray(eq: &EquilibriumPoint, gamma: &OrbitParameter, sigma: f64, sys: &MassSystem) -> Result<ManifoldParams> {
    let v0 = eq.v0;
    let project = |v: Configuration| -> Configuration {
        let along = sys.dot(&eq.s0, &v);
        v - &eq.s0 * along
    };
    let anchor = if gamma.rho1 > 0.0 {
        // Any point of the ray: rho1 = k, s1 = k (C + log(k |v0|) tgradU / v0^2) with k = 1.
        let c = &gamma.shifted_s1 / gamma.rho1;
        let (_, tgrad) = shape_data(eq, sys)?;
        ManifoldParams::new(eq.clone(), project(c + tgrad * (v0.abs().ln() / (v0 * v0))), 1.0, sys)?
    } else {
        ManifoldParams::new(eq.clone(), project(gamma.shifted_s1.clone()), 0.0, sys)?
    };
    Ok(flow_to_seed_scale(&anchor, sigma, sys)?.0)
}

/// Past parameters of the orbit with Chazy data `(A, C)` at `t -> -inf`, seeded at scale `sigma`.
pub fn past_params_from_chazy(a: &Configuration, c: &Configuration, sigma: f64, sys: &MassSystem) -> Result<ManifoldParams> {
    let speed = sys.norm(a);
    if speed == 0.0 {
        return Err(Error::InvalidArgument("asymptotic velocity must be nonzero".into()));
    }
    let eq = EquilibriumPoint::new(-a / speed, -speed, sys)?;
    let along = sys.dot(&eq.s0, c);
    let c = sys.project_com(&(c - &eq.s0 * along));
    params_on_ray(&eq, &OrbitParameter { rho1: 1.0, shifted_s1: c }, sigma, sys)
}

/// Outcome class of a scattering computation, as recorded in result files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatteringStatus {
    Ok,
    /// The orbit hit (or came within the collision distance of) a collision.
    Singular,
    /// No convergence to a future equilibrium within the budget.
    Undetermined,
}

impl ScatteringStatus {
    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Collision { .. } | Error::StepSizeUnderflow { .. } => ScatteringStatus::Singular,
            _ => ScatteringStatus::Undetermined,
        }
    }
}

/// Parameters of one end of a bi-hyperbolic orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringEnd {
    pub params: ManifoldParams,
    pub gamma: OrbitParameter,
    pub chazy: Option<ChazyParameters>,
}

impl ScatteringEnd {
    pub fn new(params: ManifoldParams, sys: &MassSystem) -> Result<Self> {
        let gamma = orbit_parameter(&params, sys)?;
        let chazy = if params.rho1 > 0.0 { Some(chazy_from_manifold(&params, sys)?) } else { None };
        Ok(Self { params, gamma, chazy })
    }

    pub fn eq(&self) -> &EquilibriumPoint {
        &self.params.eq
    }

    /// Asymptotic velocity `A = v0 s0`.
    pub fn a(&self) -> Configuration {
        self.params.eq.chazy_a()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScatteringDiagnostics {
    pub min_pair_distance: f64,
    pub max_rho: f64,
    pub max_potential: f64,
    pub energy_drift: f64,
    /// `max(rho1, |s1|)` of the seed actually integrated.
    pub seed_scale: f64,
    /// Clock shift between the caller's parameters and the seed.
    pub clock_shift: f64,
    /// Length of the integrated `tau` interval.
    pub tau_span: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringResult {
    pub past: ScatteringEnd,
    pub future: ScatteringEnd,
    pub diagnostics: ScatteringDiagnostics,
}

impl ScatteringResult {
    /// `| |A|^2 - |A'|^2 | / 2h`.
    pub fn energy_defect(&self, sys: &MassSystem) -> f64 {
        let (a, b) = (self.past.a(), self.future.a());
        (sys.dot(&a, &a) - sys.dot(&b, &b)).abs() / (2.0 * self.past.eq().energy())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterOptions {
    /// When set, the caller's parameters are first moved along their linear-model orbit
    /// to this seed scale; otherwise they are seeded as given.
    pub seed_scale: Option<f64>,
    /// Combine runs at the seed scale and half of it, cancelling the `O(seed)` chart error.
    pub richardson: bool,
    /// Budget in units of `1 / sqrt(2h)`.
    pub tau_budget: f64,
    pub max_steps: usize,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self { seed_scale: None, richardson: false, tau_budget: 50.0, max_steps: 500_000 }
    }
}

impl ScatterOptions {
    pub fn at_scale(sigma: f64) -> Self {
        Self { seed_scale: Some(sigma), ..Self::default() }
    }

    /// Seeding at `sigma` with Richardson extrapolation.
    pub fn refined(sigma: f64) -> Self {
        Self { richardson: true, ..Self::at_scale(sigma) }
    }
}

/// The hyperbolic scattering map from past to future parameters, seeding at `past` as given.
pub fn scattering_map(past: &ManifoldParams, tol: &ToleranceSet, sys: &MassSystem) -> Result<ScatteringResult> {
    scattering_map_with(past, tol, sys, &ScatterOptions::default())
}

/// Scattering map with explicit seeding options; the future parameters are returned in
/// the caller's clock.
pub fn scattering_map_with(
    past: &ManifoldParams,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &ScatterOptions,
) -> Result<ScatteringResult> {
    if past.eq.v0 >= 0.0 {
        return Err(Error::InvalidArgument("the past equilibrium needs v0 < 0".into()));
    }
    let bound = tol.seed_scale_max;
    let (seed, shift) = match opts.seed_scale {
        None => (past.clone(), 0.0),
        Some(sigma) => {
            if sigma > bound {
                return Err(Error::SeedScale { scale: sigma, bound });
            }
            flow_to_seed_scale(past, sigma, sys)?
        }
    };
    let scale = seed.seed_scale(sys);
    if scale == 0.0 {
        return Err(Error::ZeroOrbit);
    }
    if scale > bound * (1.0 + 1e-12) {
        return Err(Error::SeedScale { scale, bound });
    }
    let (mut future, mut diagnostics) = run_seed(&seed, tol, sys, opts)?;
    if opts.richardson {
        let (half, shift_half) = flow_to_seed_scale(&seed, 0.5 * scale, sys)?;
        let (future_half, diag_half) = run_seed(&half, tol, sys, opts)?;
        let future_half = linear_model_flow(&future_half, -shift_half, sys)?;
        future = extrapolate(&future, &future_half, sys)?;
        diagnostics.steps += diag_half.steps;
        diagnostics.energy_drift = diagnostics.energy_drift.max(diag_half.energy_drift);
    }
    diagnostics.seed_scale = scale;
    diagnostics.clock_shift = shift;
    let future = linear_model_flow(&future, -shift, sys)?;
    Ok(ScatteringResult { past: ScatteringEnd::new(past.clone(), sys)?, future: ScatteringEnd::new(future, sys)?, diagnostics })
}

fn run_seed(
    seed: &ManifoldParams,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &ScatterOptions,
) -> Result<(ManifoldParams, ScatteringDiagnostics)> {
    let x0 = seed_state_on_shell(seed, sys)?;
    let speed = (2.0 * seed.eq.energy()).sqrt();
    let iopts = IntegrateOptions { max_steps: opts.max_steps, ..IntegrateOptions::to_equilibrium(speed) };
    let traj = integrate(&x0, (0.0, opts.tau_budget / speed), tol, sys, &iopts)?;
    let eq = detect_equilibrium(&traj, tol, sys).ok_or(Error::NotConverged)?;
    if eq.v0 <= 0.0 {
        return Err(Error::NotConverged);
    }
    let future = extract_manifold_params(&traj, &eq, sys)?;
    let m = &traj.meta;
    let diag = ScatteringDiagnostics {
        min_pair_distance: m.min_pair_distance,
        max_rho: m.max_rho,
        max_potential: m.max_potential,
        energy_drift: m.max_energy_drift,
        seed_scale: 0.0,
        clock_shift: 0.0,
        tau_span: (traj.last().tau - traj.first().tau).abs(),
        steps: m.steps,
    };
    Ok((future, diag))
}

/// `2 fine - coarse` componentwise, then back onto the constraints. The seed chart is
/// first order, so its error in the orbit parameters is `O(seed)`.
fn extrapolate(coarse: &ManifoldParams, fine: &ManifoldParams, sys: &MassSystem) -> Result<ManifoldParams> {
    let s0 = sys.normalize(&(&fine.eq.s0 * 2.0 - &coarse.eq.s0))?;
    let mut s1 = &fine.s1 * 2.0 - &coarse.s1;
    let along = sys.dot(&s0, &s1);
    s1 -= &s0 * along;
    let rho1 = (2.0 * fine.rho1 - coarse.rho1).max(0.0);
    ManifoldParams::new(EquilibriumPoint::new(s0, fine.eq.v0, sys)?, s1, rho1, sys)
}

/// Number of samples used to certify that a great circle avoids collisions.
const CIRCLE_SAMPLES: usize = 720;

/// Scattering inside the infinity manifold along the great circle from `s0` through `eta`.
///
/// Closed form: the orbit ends at the antipode with `s1 = 2 eta` at both ends (in the clock
/// with `tau = 0` at the midpoint), so `A' = A`.
pub fn infinity_scattering(p: &EquilibriumPoint, eta: &Configuration, sys: &MassSystem) -> Result<ScatteringResult> {
    if p.v0 >= 0.0 {
        return Err(Error::InvalidArgument("the past equilibrium needs v0 < 0".into()));
    }
    check_frame(&p.s0, eta, sys)?;
    let mut min_dist = f64::INFINITY;
    let mut max_pot: f64 = 0.0;
    for k in 0..=CIRCLE_SAMPLES {
        let phi = std::f64::consts::PI * k as f64 / CIRCLE_SAMPLES as f64;
        let s = &p.s0 * phi.cos() + eta * phi.sin();
        sys.check_collision_free(&s)?;
        min_dist = min_dist.min(sys.min_pair_distance(&s).0);
        max_pot = max_pot.max(sys.potential(&s)?);
    }
    let s1 = eta * 2.0;
    let past = ManifoldParams::new(p.clone(), s1.clone(), 0.0, sys)?;
    let future = ManifoldParams::new(p.antipode(), s1, 0.0, sys)?;
    Ok(ScatteringResult {
        past: ScatteringEnd::new(past, sys)?,
        future: ScatteringEnd::new(future, sys)?,
        diagnostics: ScatteringDiagnostics {
            min_pair_distance: min_dist,
            max_potential: max_pot,
            tau_span: f64::INFINITY,
            ..ScatteringDiagnostics::default()
        },
    })
}

/// Default absolute tolerance of the great-circle quadratures.
pub const QUAD_TOL: f64 = 1e-10;

/// First-order change of `A` for the great-circle orbit `xi sin(theta) + eta cos(theta)`
/// perturbed by `drho0` at `theta = 0`:
/// `(drho0 / sqrt(2h)) int_{-pi/2}^{pi/2} gradU(xi sin + eta cos) dtheta`.
pub fn delta_a(xi: &Configuration, h: f64, eta: &Configuration, drho0: f64, sys: &MassSystem) -> Result<Configuration> {
    delta_a_with_tol(xi, h, eta, drho0, sys, QUAD_TOL)
}

pub fn delta_a_with_tol(
    xi: &Configuration,
    h: f64,
    eta: &Configuration,
    drho0: f64,
    sys: &MassSystem,
    abs_tol: f64,
) -> Result<Configuration> {
    check_frame(xi, eta, sys)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("energy must be positive, got {h}")));
    }
    if drho0 == 0.0 {
        return Ok(sys.zeros());
    }
    let k = drho0 / (2.0 * h).sqrt();
    let half = std::f64::consts::FRAC_PI_2;
    let integral = integrate_vector(|th| sys.grad_potential(&(xi * th.sin() + eta * th.cos())), -half, half, abs_tol / k.abs())?;
    Ok(integral * k)
}

/// Per-body rotation by 90 degrees in the first coordinate plane; other coordinates are dropped.
pub fn planar_perp(v: &Configuration, sys: &MassSystem) -> Configuration {
    let d = sys.d();
    let mut out = DVector::zeros(v.len());
    for i in 0..sys.n() {
        out[i * d] = -v[i * d + 1];
        out[i * d + 1] = v[i * d];
    }
    out
}

fn check_planar(v: &Configuration, sys: &MassSystem) -> Result<()> {
    let d = sys.d();
    for i in 0..sys.n() {
        for k in 2..d {
            if v[i * d + k].abs() > 1e-12 {
                return Err(Error::NonPlanar);
            }
        }
    }
    Ok(())
}

/// Closed form of [`delta_a`] for planar `xi` and `eta = xi^perp`: `(2 drho0 / sqrt(2h)) gradU(xi)^perp`.
pub fn delta_a_planar(xi: &Configuration, h: f64, drho0: f64, sys: &MassSystem) -> Result<Configuration> {
    sys.check_len(xi)?;
    check_planar(xi, sys)?;
    sys.check_unit(xi)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("energy must be positive, got {h}")));
    }
    Ok(planar_perp(&sys.grad_potential(xi)?, sys) * (2.0 * drho0 / (2.0 * h).sqrt()))
}

/// `Dbar = int_{-pi/2}^{pi/2} D gradU(xi sin + eta cos) cos(theta) dtheta` by adaptive quadrature.
pub fn build_dbar(xi: &Configuration, eta: &Configuration, sys: &MassSystem) -> Result<DMatrix<f64>> {
    check_frame(xi, eta, sys)?;
    let nd = sys.dim();
    let half = std::f64::consts::FRAC_PI_2;
    let flat = integrate_vector(
        |th| {
            let h = sys.hessian_blocks(&(xi * th.sin() + eta * th.cos()))?;
            Ok(DVector::from_column_slice(h.as_slice()) * th.cos())
        },
        -half,
        half,
        QUAD_TOL,
    )?;
    Ok(DMatrix::from_column_slice(nd, nd, flat.as_slice()))
}

/// Closed form of `Dbar` for `xi` in the first coordinate plane and `eta = xi^perp`.
///
/// In-plane blocks are `-2 (m_j / r^3) v v^T` with `v = u^perp`, normal blocks
/// `2 (m_j / r^3) I`, and diagonal blocks make block rows sum to zero.
pub fn build_dbar_planar(xi: &Configuration, sys: &MassSystem) -> Result<DMatrix<f64>> {
    sys.check_len(xi)?;
    check_planar(xi, sys)?;
    sys.check_collision_free(xi)?;
    let (n, d) = (sys.n(), sys.d());
    let m = sys.masses();
    let mut out = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (dx, dy) = (xi[j * d] - xi[i * d], xi[j * d + 1] - xi[i * d + 1]);
            let r = (dx * dx + dy * dy).sqrt();
            let coef = m[j] / (r * r * r);
            let v = [-dy / r, dx / r];
            for a in 0..d {
                for b in 0..d {
                    let val = match (a < 2, b < 2) {
                        (true, true) => -2.0 * coef * v[a] * v[b],
                        (false, false) if a == b => 2.0 * coef,
                        _ => 0.0,
                    };
                    out[(i * d + a, j * d + b)] = val;
                    out[(i * d + a, i * d + b)] -= val;
                }
            }
        }
    }
    Ok(out)
}

/// Mass-orthonormal basis of the center-of-mass subspace orthogonal to `exclude`.
pub fn tangent_basis(sys: &MassSystem, exclude: &[&Configuration]) -> Vec<Configuration> {
    let mut basis: Vec<Configuration> = Vec::new();
    let mut fixed: Vec<Configuration> = Vec::new();
    for e in exclude {
        let mut v = sys.project_com(e);
        for f in &fixed {
            let c = sys.dot(f, &v);
            v -= f * c;
        }
        let n = sys.norm(&v);
        if n > 1e-12 {
            fixed.push(v / n);
        }
    }
    for k in 0..sys.dim() {
        let mut v = sys.project_com(&DVector::from_fn(sys.dim(), |i, _| if i == k { 1.0 } else { 0.0 }));
        for _ in 0..2 {
            for f in fixed.iter().chain(basis.iter()) {
                let c = sys.dot(f, &v);
                v -= f * c;
            }
        }
        let n = sys.norm(&v);
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    basis
}

/// Numerical kernel of `Dbar` at a planar shape, with the nondegeneracy data around it.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub dimension: usize,
    /// Orthonormal (Euclidean) kernel basis, one column per vector.
    pub basis: DMatrix<f64>,
    /// Singular values of `Dbar`, decreasing.
    pub singular_values: Vec<f64>,
    /// `sigma_{nd-3} / sigma_{nd-2}` (1-based): the gap above a 3-dimensional kernel.
    pub gap: f64,
    /// Largest `|Dbar x| / (sigma_max |x|)` over `xi` and the two translations.
    pub printed_residual: f64,
    /// Numerical rank of `[Dbar Q | Dbar eta]`, `Q` a basis of `{COM = 0} & {s0, eta}^perp`.
    pub restricted_rank: usize,
    /// `D - 1` with `D = d (n - 1)`: the full restricted rank.
    pub restricted_full: usize,
    /// The bodies are collinear; the kernel is then larger and not asserted.
    pub collinear: bool,
}

/// Kernel of `Dbar(xi, xi^perp)` for planar `xi` with singular-value threshold `rel * sigma_max`.
pub fn dbar_kernel(xi: &Configuration, sys: &MassSystem, rel: f64) -> Result<KernelReport> {
    if sys.d() != 2 {
        return Err(Error::NonPlanar);
    }
    sys.check_len(xi)?;
    sys.check_unit(xi)?;
    let n = sys.n();
    let dbar = build_dbar_planar(xi, sys)?;
    let sv = singular_values(&dbar);
    let nd = sys.dim();
    let smax = sv[0];
    let dimension = nd - numerical_rank(&sv, rel);
    let basis = null_space(&dbar, rel);
    let ones_x = DVector::from_fn(nd, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
    let ones_y = DVector::from_fn(nd, |i, _| if i % 2 == 1 { 1.0 } else { 0.0 });
    let printed_residual = [xi, &ones_x, &ones_y]
        .iter()
        .map(|x| (&dbar * *x).norm() / (smax * x.norm()))
        .fold(0.0, f64::max);
    let eta = planar_perp(xi, sys);
    let q = tangent_basis(sys, &[xi, &eta]);
    let mut cols: Vec<DVector<f64>> = q.iter().map(|b| &dbar * b).collect();
    cols.push(&dbar * &eta);
    let restricted = DMatrix::from_columns(&cols);
    let restricted_rank = numerical_rank(&singular_values(&restricted), rel);
    let cross = |i: usize| (xi[2 * i] - xi[0]) * (xi[3] - xi[1]) - (xi[2 * i + 1] - xi[1]) * (xi[2] - xi[0]);
    let collinear = (2..n).all(|i| cross(i).abs() < 1e-10);
    Ok(KernelReport {
        dimension,
        basis,
        gap: gap_after(&sv, nd - 3),
        singular_values: sv,
        printed_residual,
        restricted_rank,
        restricted_full: 2 * (n - 1) - 1,
        collinear,
    })
}

/// Projects every body into the first coordinate plane, rotates the projections by 90
/// degrees and renormalizes.
pub fn eta_nonplanar(s0: &Configuration, sys: &MassSystem) -> Result<Configuration> {
    sys.check_len(s0)?;
    sys.check_unit(s0)?;
    let eta = planar_perp(s0, sys);
    let n = sys.norm(&eta);
    if n < 1e-12 {
        return Err(Error::Degenerate("all bodies project to the origin of the rotation plane".into()));
    }
    let eta = eta / n;
    for k in 0..=CIRCLE_SAMPLES {
        let phi = std::f64::consts::PI * k as f64 / CIRCLE_SAMPLES as f64;
        sys.check_collision_free(&(s0 * phi.cos() + &eta * phi.sin()))?;
    }
    Ok(eta)
}

/// A random element of `O(d)`.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let qr = m.qr();
        let r = qr.r();
        if (0..d).all(|i| r[(i, i)].abs() > 1e-3) {
            let mut q = qr.q();
            for i in 0..d {
                if r[(i, i)] < 0.0 {
                    let mut col = q.column_mut(i);
                    col *= -1.0;
                }
            }
            return q;
        }
    }
}

/// Applies `rot` to every body.
pub fn rotate(rot: &DMatrix<f64>, v: &Configuration, sys: &MassSystem) -> Configuration {
    let d = sys.d();
    let mut out = v.clone();
    for i in 0..sys.n() {
        let block = rot * v.rows(i * d, d);
        out.rows_mut(i * d, d).copy_from(&block);
    }
    out
}

/// Chazy-form scattering `(A, C) -> (A', C')` with seeding at scale `sigma`.
pub fn chazy_scattering(
    a: &Configuration,
    c: &Configuration,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &ScatterOptions,
) -> Result<(Configuration, Configuration)> {
    let sigma = opts.seed_scale.unwrap_or(tol.seed_scale_max);
    let past = past_params_from_chazy(a, c, sigma, sys)?;
    let res = scattering_map_with(&past, tol, sys, &ScatterOptions { seed_scale: None, ..*opts })?;
    let ch = res.future.chazy.ok_or(Error::RhoZero)?;
    Ok((ch.a, ch.c))
}

/// Symmetries of the scattering relation checked by [`check_relation_properties`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationProperty {
    /// (i) `|A| = |A'|`.
    EnergyConservation,
    /// (ii) scattering inside the infinity manifold is the identity on `A`, checked by
    /// integrating the boundary orbit `(s0, 2 eta, rho1 = 0)`.
    Reflexivity,
    /// (iii) `F(-A', C') = (-A, C)`.
    TimeReversal,
    /// (iv) dilation: `F(delta(A, C)) = delta(A', C')` with the action [`dilate`].
    Dilation,
    /// (v) `F(RA, RC) = (RA', RC')`.
    Rotation,
    /// (vi) `F(A', -C') = (A, -C)`.
    Reversibility,
    /// `T F T F = Id` on past data.
    Ftft,
}

impl RelationProperty {
    pub const ALL: [RelationProperty; 7] = [
        RelationProperty::EnergyConservation,
        RelationProperty::Reflexivity,
        RelationProperty::TimeReversal,
        RelationProperty::Dilation,
        RelationProperty::Rotation,
        RelationProperty::Reversibility,
        RelationProperty::Ftft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationProperty::EnergyConservation => "energy_conservation",
            RelationProperty::Reflexivity => "reflexivity",
            RelationProperty::TimeReversal => "time_reversal",
            RelationProperty::Dilation => "dilation",
            RelationProperty::Rotation => "rotation",
            RelationProperty::Reversibility => "reversibility",
            RelationProperty::Ftft => "ftft",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub property: RelationProperty,
    pub max_deviation: f64,
    pub checked: usize,
    /// `(seed index, deviation)` for every check above the threshold.
    pub failures: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationReport {
    pub threshold: f64,
    pub orbits: usize,
    pub properties: Vec<PropertyOutcome>,
    /// Seeds whose base scattering failed, with the error.
    pub undetermined: Vec<(usize, String)>,
}

impl RelationReport {
    pub fn passed(&self) -> bool {
        self.undetermined.is_empty() && self.properties.iter().all(|p| p.failures.is_empty() && p.checked > 0)
    }

    pub fn get(&self, p: RelationProperty) -> Option<&PropertyOutcome> {
        self.properties.iter().find(|o| o.property == p)
    }

    /// Appends another report (e.g. for a second mass system).
    pub fn merge(&mut self, other: RelationReport) {
        let offset = self.orbits;
        self.orbits += other.orbits;
        self.undetermined.extend(other.undetermined.into_iter().map(|(i, e)| (i + offset, e)));
        for o in other.properties {
            match self.properties.iter_mut().find(|p| p.property == o.property) {
                Some(p) => {
                    p.max_deviation = p.max_deviation.max(o.max_deviation);
                    p.checked += o.checked;
                    p.failures.extend(o.failures.into_iter().map(|(i, d)| (i + offset, d)));
                }
                None => self.properties.push(o),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationOptions {
    pub threshold: f64,
    pub scatter: ScatterOptions,
    pub rng_seed: u64,
}

impl Default for RelationOptions {
    fn default() -> Self {
        Self { threshold: 1e-6, scatter: ScatterOptions::refined(1e-6), rng_seed: 7 }
    }
}

/// Chazy data of the dilated orbit `k^-2 q(k^3 t)`: `(kA, (C + 3 log(k) B) / k^2)`, with the
/// component of `C` along `A` removed again (a shift of the time origin).
pub fn dilate(ch: &ChazyParameters, k: f64, sys: &MassSystem) -> Result<(Configuration, Configuration)> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("dilation factor must be positive, got {k}")));
    }
    let a = &ch.a * k;
    let c = (&ch.c + &ch.b * (3.0 * k.ln())) / (k * k);
    let along = sys.dot(&a, &c) / sys.dot(&a, &a);
    Ok((a.clone(), c - a * along))
}

/// Relative deviation between two Chazy pairs: the larger of `|dA| / |A|` and `|dC| / max(1, |C|)`.
fn chazy_deviation(x: &(Configuration, Configuration), y: &(Configuration, Configuration), sys: &MassSystem) -> f64 {
    let da = sys.norm(&(&x.0 - &y.0)) / sys.norm(&y.0);
    let dc = sys.norm(&(&x.1 - &y.1)) / sys.norm(&y.1).max(1.0);
    da.max(dc)
}

/// Checks the symmetries of the scattering relation on every seed (past parameters with
/// `rho1 > 0`). Failures are data: they are itemized in the report, never raised.
pub fn check_relation_properties(
    seeds: &[ManifoldParams],
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &RelationOptions,
) -> RelationReport {
    let per_seed: Vec<std::result::Result<Vec<(RelationProperty, f64)>, String>> = seeds
        .par_iter()
        .enumerate()
        .map(|(idx, mp)| relation_checks(idx, mp, tol, sys, opts).map_err(|e| e.to_string()))
        .collect();
    let mut report = RelationReport {
        threshold: opts.threshold,
        orbits: seeds.len(),
        properties: RelationProperty::ALL
            .iter()
            .map(|&p| PropertyOutcome { property: p, max_deviation: 0.0, checked: 0, failures: Vec::new() })
            .collect(),
        undetermined: Vec::new(),
    };
    for (idx, outcome) in per_seed.into_iter().enumerate() {
        match outcome {
            Ok(devs) => {
                for (p, dev) in devs {
                    let o = report.properties.iter_mut().find(|o| o.property == p).expect("all properties listed");
                    o.checked += 1;
                    o.max_deviation = o.max_deviation.max(dev);
                    if !(dev <= opts.threshold) {
                        o.failures.push((idx, dev));
                    }
                }
            }
            Err(e) => report.undetermined.push((idx, e)),
        }
    }
    report
}

fn relation_checks(
    idx: usize,
    mp: &ManifoldParams,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &RelationOptions,
) -> Result<Vec<(RelationProperty, f64)>> {
    use RelationProperty as P;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed.wrapping_add(idx as u64));
    let sc = &opts.scatter;
    let base = scattering_map_with(mp, tol, sys, sc)?;
    let past = base.past.chazy.clone().ok_or(Error::RhoZero)?;
    let fut = base.future.chazy.clone().ok_or(Error::RhoZero)?;
    let (a, c, a1, c1) = (past.a.clone(), past.c.clone(), fut.a.clone(), fut.c.clone());
    let f = |x: &Configuration, y: &Configuration| chazy_scattering(x, y, tol, sys, sc);
    let mut out = vec![(P::EnergyConservation, base.energy_defect(sys))];

    let eta = sys.random_tangent(&mut rng, &mp.eq.s0);
    if infinity_scattering(&mp.eq, &eta, sys).is_ok() {
        let boundary = ManifoldParams::new(mp.eq.clone(), &eta * 2.0, 0.0, sys)?;
        let res = scattering_map_with(&boundary, tol, sys, sc)?;
        out.push((P::Reflexivity, sys.norm(&(res.future.a() - res.past.a())) / sys.norm(&res.past.a())));
    }

    let t = f(&-&a1, &c1)?;
    let dev_t = chazy_deviation(&t, &(-&a, c.clone()), sys);
    out.push((P::TimeReversal, dev_t));
    // T F T F: apply T to the last output and compare with the original past data.
    out.push((P::Ftft, chazy_deviation(&(-&t.0, t.1.clone()), &(a.clone(), c.clone()), sys)));

    let k: f64 = rng.gen_range(0.5..2.0);
    let (ka, kc) = dilate(&past, k, sys)?;
    let dil = f(&ka, &kc)?;
    out.push((P::Dilation, chazy_deviation(&dil, &dilate(&fut, k, sys)?, sys)));

    let rot = random_orthogonal(sys.d(), &mut rng);
    let r = f(&rotate(&rot, &a, sys), &rotate(&rot, &c, sys))?;
    out.push((P::Rotation, chazy_deviation(&r, &(rotate(&rot, &a1, sys), rotate(&rot, &c1, sys)), sys)));

    let rev = f(&a1, &-&c1)?;
    out.push((P::Reversibility, chazy_deviation(&rev, &(a, -c), sys)));
    Ok(out)
}

/// Grid of seeds around one past equilibrium: every `rho1` paired with every `s1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub rho1: Vec<f64>,
    pub s1: Vec<Configuration>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.rho1.len() * self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seeds in deterministic order, `rho1`-major.
    pub fn seeds(&self) -> Vec<(f64, Configuration)> {
        self.rho1.iter().flat_map(|&r| self.s1.iter().map(move |s| (r, s.clone()))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub index: usize,
    pub rho1: f64,
    pub s1: Configuration,
    pub outcome: std::result::Result<ScatteringResult, Error>,
}

/// Scatters every grid seed at `p` on the current rayon pool; output order is the grid order.
pub fn sweep_image(
    p: &EquilibriumPoint,
    grid: &SweepGrid,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &ScatterOptions,
) -> Vec<SweepRecord> {
    grid.seeds()
        .into_par_iter()
        .enumerate()
        .map(|(index, (rho1, s1))| {
            let outcome = ManifoldParams::new(p.clone(), s1.clone(), rho1, sys)
                .and_then(|mp| scattering_map_with(&mp, tol, sys, opts));
            SweepRecord { index, rho1, s1, outcome }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepSummary {
    pub seeds: usize,
    pub ok: usize,
    pub singular: usize,
    pub undetermined: usize,
    /// Largest `|A' - A|` over successful seeds (`A' = A` is the limit at infinity).
    pub dispersion: f64,
    pub max_rho: f64,
    pub max_potential: f64,
}

pub fn summarize_sweep(records: &[SweepRecord], sys: &MassSystem) -> SweepSummary {
    let mut s = SweepSummary { seeds: records.len(), ..SweepSummary::default() };
    for r in records {
        match &r.outcome {
            Ok(res) => {
                s.ok += 1;
                s.dispersion = s.dispersion.max(sys.norm(&(res.future.a() - res.past.a())));
                s.max_rho = s.max_rho.max(res.diagnostics.max_rho);
                s.max_potential = s.max_potential.max(res.diagnostics.max_potential);
            }
            Err(e) => match ScatteringStatus::of_error(e) {
                ScatteringStatus::Singular => s.singular += 1,
                _ => s.undetermined += 1,
            },
        }
    }
    s
}

/// Keeps the successful records whose orbit stays in `Z(R, K)`: `max rho < 1/R`, `max U(s) < K`.
pub fn filter_near_infinity(records: &[SweepRecord], r_min: f64, k_max: f64) -> Vec<&SweepRecord> {
    records
        .iter()
        .filter(|r| matches!(&r.outcome, Ok(res) if res.diagnostics.max_rho < 1.0 / r_min && res.diagnostics.max_potential < k_max))
        .collect()
}

/// Finite-difference Jacobian of `A'` over the restricted seed slice.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    /// `(D - 1) x (D - 1)`: rows in an orthonormal basis of the tangent space of the
    /// energy sphere at `A'`, columns over `(log rho1, s1 directions)`.
    pub matrix: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// `sigma_min / sigma_max`.
    pub min_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianOptions {
    pub scatter: ScatterOptions,
    /// Central-difference step; a second pass at half the step is combined by Richardson extrapolation.
    pub step: f64,
}

impl Default for JacobianOptions {
    fn default() -> Self {
        Self { scatter: ScatterOptions::at_scale(1e-7), step: 1e-2 }
    }
}

/// Jacobian of `A'` with respect to `(log rho1, s1)` at the orbit `(rho1, s1)` of `p`.
///
/// `s1` varies over the `D - 2` directions of `{COM = 0}` orthogonal to `s0` and to `s1`
/// itself: moving `s1` along itself together with `rho1` only follows the linear flow.
pub fn image_jacobian(
    p: &EquilibriumPoint,
    rho1: f64,
    s1: &Configuration,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &JacobianOptions,
) -> Result<JacobianReport> {
    let dirs = tangent_basis(sys, &[&p.s0, s1]);
    let nparams = dirs.len() + 1;
    let eval = |x: &DVector<f64>| -> Result<Configuration> {
        let mut s = s1.clone();
        for (k, d) in dirs.iter().enumerate() {
            s += d * x[k + 1];
        }
        let mp = ManifoldParams::new(p.clone(), s, rho1 * x[0].exp(), sys)?;
        Ok(scattering_map_with(&mp, tol, sys, &opts.scatter)?.future.a())
    };
    let a0 = eval(&DVector::zeros(nparams))?;
    let rows = tangent_basis(sys, &[&a0]);
    let mut jobs = Vec::new();
    for h in [opts.step, 0.5 * opts.step] {
        for k in 0..nparams {
            for sign in [1.0, -1.0] {
                let mut x = DVector::zeros(nparams);
                x[k] = sign * h;
                jobs.push(x);
            }
        }
    }
    let outs: Vec<Configuration> = jobs.par_iter().map(eval).collect::<Result<_>>()?;
    let column = |pass: usize, k: usize, h: f64| -> DVector<f64> {
        let base = pass * 2 * nparams + 2 * k;
        let diff = (&outs[base] - &outs[base + 1]) / (2.0 * h);
        DVector::from_iterator(rows.len(), rows.iter().map(|r| sys.dot(r, &diff)))
    };
    let cols: Vec<DVector<f64>> = (0..nparams)
        .map(|k| (column(1, k, 0.5 * opts.step) * 4.0 - column(0, k, opts.step)) / 3.0)
        .collect();
    let matrix = DMatrix::from_columns(&cols);
    let sv = singular_values(&matrix);
    let rank = numerical_rank(&sv, tol.rank_rel);
    let min_ratio = sv.last().copied().unwrap_or(0.0) / sv[0];
    Ok(JacobianReport { matrix, singular_values: sv, rank, min_ratio })
}
