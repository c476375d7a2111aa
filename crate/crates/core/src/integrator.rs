//! Adaptive integration of the blown-up field in `tau`, with Newtonian time,
//! variational equations, renormalization and equilibrium/collision events.

use crate::blowup::{field_into, field_jvp_into, state_len, BlowupState, EquilibriumPoint, Tangent};
use crate::dop853::{Dop853, StepperOptions};
use crate::error::{Error, Result};
use crate::nbody::MassSystem;
use crate::tolerance::ToleranceSet;

/// Which samples a trajectory keeps.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Record {
    /// Every accepted step, starting with the initial state.
    #[default]
    Steps,
    /// Dense output at the given `tau` values (ordered in the integration direction).
    Grid(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    /// Stop once the equilibrium criteria hold over a trailing window of `2 / |v|`;
    /// reaching the end of the span first is then an error.
    pub stop_at_equilibrium: bool,
    pub max_step: Option<f64>,
    pub record: Record,
    pub max_steps: usize,
    /// Newtonian time attached to the initial state.
    pub t0: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { stop_at_equilibrium: false, max_step: None, record: Record::Steps, max_steps: 500_000, t0: 0.0 }
    }
}

impl IntegrateOptions {
    /// Options used by the scattering pipelines: stop at the equilibrium and keep
    /// steps short enough for tail regression.
    pub fn to_equilibrium(speed: f64) -> Self {
        Self { stop_at_equilibrium: true, max_step: Some(0.5 / speed), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    SpanEnd,
    /// Converged; the criteria first held continuously from `window_start`.
    Equilibrium { window_start: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tau: f64,
    pub state: BlowupState,
    /// Newtonian time; absent on orbits inside the infinity manifold.
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub tolerances: ToleranceSet,
    pub termination: Termination,
    pub energy0: f64,
    pub max_energy_drift: f64,
    pub max_constraint_defect: f64,
    pub min_pair_distance: f64,
    pub max_rho: f64,
    pub max_potential: f64,
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
}

/// Immutable record of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories hold at least one sample")
    }

    pub fn taus(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.tau).collect()
    }

    pub fn converged(&self) -> bool {
        matches!(self.meta.termination, Termination::Equilibrium { .. })
    }

    /// Newtonian time rebuilt from the samples alone, independently of the value
    /// carried by the integrator.
    ///
    /// On each interval `log r` is replaced by its quintic Hermite interpolant, using
    /// `(log r)' = v` and `(log r)'' = v' = |w|^2 - rho U(s)`, and `r` is integrated by
    /// 5-point Gauss-Legendre.
    pub fn time_quadrature(&self, sys: &MassSystem) -> Result<Vec<f64>> {
        let first = self.first();
        let mut t = first.t.ok_or(Error::AtInfinity)?;
        let jets = self
            .samples
            .iter()
            .map(|smp| {
                let x = &smp.state;
                if x.rho <= 0.0 {
                    return Err(Error::AtInfinity);
                }
                let dv = sys.dot(&x.w, &x.w) - x.rho * sys.potential(&x.s)?;
                Ok([-x.rho.ln(), x.v, dv])
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.samples.len());
        out.push(t);
        for (k, pair) in self.samples.windows(2).enumerate() {
            let h = pair[1].tau - pair[0].tau;
            let ([la, da, dda], [lb, db, ddb]) = (jets[k], jets[k + 1]);
            let mut acc = 0.0;
            for (x, wgt) in GAUSS5 {
                let s = 0.5 * (x + 1.0);
                let (s2, s3, s4, s5) = (s * s, s.powi(3), s.powi(4), s.powi(5));
                let l = la * (1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5)
                    + h * da * (s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5)
                    + h * h * dda * 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5)
                    + lb * (10.0 * s3 - 15.0 * s4 + 6.0 * s5)
                    + h * db * (-4.0 * s3 + 7.0 * s4 - 3.0 * s5)
                    + h * h * ddb * 0.5 * (s3 - 2.0 * s4 + s5);
                acc += 0.5 * wgt * l.exp();
            }
            t += acc * h;
            out.push(t);
        }
        Ok(out)
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// A base state with a tangent vector carried along by the linearized flow.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub tau: f64,
    pub base: BlowupState,
    pub delta: Tangent,
}

impl VariationalState {
    /// First-order change of the Cartesian velocity `v s + w`.
    pub fn delta_velocity(&self) -> nalgebra::DVector<f64> {
        &self.base.s * self.delta.v + &self.delta.s * self.base.v + &self.delta.w
    }
}

fn stepper_options(tol: &ToleranceSet, opts: &IntegrateOptions) -> StepperOptions {
    StepperOptions {
        rtol: tol.rtol,
        atol: tol.atol,
        h_max: opts.max_step.unwrap_or(f64::INFINITY),
        max_steps: opts.max_steps,
    }
}

/// Runs the stepper with projection after each accepted step; `observe` returns
/// `true` to stop early.
fn drive<F, P, O>(
    f: F,
    span: (f64, f64),
    y0: Vec<f64>,
    opts: StepperOptions,
    mut project: P,
    mut observe: O,
) -> Result<(usize, usize, usize)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    P: FnMut(&mut [f64]),
    O: FnMut(&mut Dop853<F>) -> Result<bool>,
{
    let mut st = Dop853::new(f, span.0, y0, span.1, opts)?;
    while !st.finished() {
        st.step()?;
        let mut y = st.y().to_vec();
        project(&mut y);
        st.set_state(y)?;
        if observe(&mut st)? {
            break;
        }
    }
    Ok((st.steps, st.rejected, st.evals))
}

fn project_slice(y: &mut [f64], sys: &MassSystem) {
    let m = state_len(sys);
    let mut x = BlowupState::from_slice(&y[..m], sys);
    x.project(sys);
    y[..m].copy_from_slice(x.to_vector().as_slice());
}

fn converged_at(x: &BlowupState, h: f64, tol: &ToleranceSet, sys: &MassSystem) -> bool {
    h > 0.0
        && x.rho < tol.rho_eq
        && sys.norm(&x.w) < tol.w_eq
        && (x.v - x.v.signum() * (2.0 * h).sqrt()).abs() < tol.v_eq
}

/// Integrates the blown-up field over `span = (tau0, tau1)` (either direction).
pub fn integrate(
    x0: &BlowupState,
    span: (f64, f64),
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    x0.check_invariants(sys)?;
    sys.check_collision_free(&x0.s)?;
    let m = state_len(sys);
    let track_time = x0.rho > 0.0;
    let dir = if span.1 >= span.0 { 1.0 } else { -1.0 };
    let energy0 = x0.energy(sys)?;

    let mut y0 = x0.to_vector().as_slice().to_vec();
    y0.push(opts.t0);
    let rhs = |_tau: f64, y: &[f64], dy: &mut [f64]| {
        field_into(&y[..m], &mut dy[..m], sys)?;
        dy[m] = if track_time { 1.0 / y[0] } else { 0.0 };
        Ok(())
    };
    let sample = |tau: f64, y: &[f64]| Sample {
        tau,
        state: BlowupState::from_slice(&y[..m], sys),
        t: track_time.then_some(y[m]),
    };

    let mut meta = TrajectoryMeta {
        tolerances: *tol,
        termination: Termination::SpanEnd,
        energy0,
        max_energy_drift: 0.0,
        max_constraint_defect: x0.constraint_defect(sys),
        min_pair_distance: sys.min_pair_distance(&x0.s).0,
        max_rho: x0.rho,
        max_potential: sys.potential(&x0.s)?,
        steps: 0,
        rejected: 0,
        evals: 0,
    };
    let (grid, mut next) = match &opts.record {
        Record::Steps => (None, 0),
        Record::Grid(g) => (Some(g.as_slice()), 0),
    };
    let mut samples = Vec::new();
    match grid {
        None => samples.push(sample(span.0, &y0)),
        Some(g) => {
            while next < g.len() && (g[next] - span.0) * dir <= 0.0 {
                if g[next] == span.0 {
                    samples.push(sample(span.0, &y0));
                }
                next += 1;
            }
        }
    }
    let mut window_start: Option<f64> = None;
    let mut stopped = false;

    let observe = |st: &mut Dop853<_>| -> Result<bool> {
        let tau = st.t();
        let y = st.y().to_vec();
        let x = BlowupState::from_slice(&y[..m], sys);

        let (dmin, _, _) = sys.min_pair_distance(&x.s);
        if dmin < 0.05 {
            let a = st.t_prev().unwrap_or(tau);
            for k in 1..4 {
                let yy = st.dense(a + (tau - a) * k as f64 / 4.0)?;
                let s = BlowupState::from_slice(&yy[..m], sys).s;
                sys.check_collision_free(&s)?;
                meta.min_pair_distance = meta.min_pair_distance.min(sys.min_pair_distance(&s).0);
            }
        }
        meta.min_pair_distance = meta.min_pair_distance.min(dmin);
        meta.max_rho = meta.max_rho.max(x.rho);
        meta.max_potential = meta.max_potential.max(sys.potential(&x.s)?);
        meta.max_energy_drift = meta.max_energy_drift.max((x.energy(sys)? - energy0).abs());
        meta.max_constraint_defect = meta.max_constraint_defect.max(x.constraint_defect(sys));

        match grid {
            None => samples.push(sample(tau, &y)),
            Some(g) => {
                while next < g.len() && (g[next] - tau) * dir <= 0.0 {
                    let mut yy = if g[next] == tau { y.clone() } else { st.dense(g[next])? };
                    project_slice(&mut yy, sys);
                    samples.push(sample(g[next], &yy));
                    next += 1;
                }
            }
        }

        if opts.stop_at_equilibrium {
            if converged_at(&x, energy0, tol, sys) {
                let start = *window_start.get_or_insert(tau);
                if (tau - start) * dir >= 2.0 / x.v.abs() {
                    meta.termination = Termination::Equilibrium { window_start: start };
                    stopped = true;
                    return Ok(true);
                }
            } else {
                window_start = None;
            }
        }
        Ok(false)
    };

    let (steps, rejected, evals) =
        drive(rhs, span, y0, stepper_options(tol, opts), |y| project_slice(y, sys), observe)?;
    if opts.stop_at_equilibrium && !stopped {
        return Err(Error::NoConvergence { tau: span.1 });
    }
    meta.steps = steps;
    meta.rejected = rejected;
    meta.evals = evals;
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { found: 0, needed: 1 });
    }
    Ok(Trajectory { samples, meta })
}

/// Integrates base state and tangent vector together from `x0.tau` to `tau_end`;
/// the tangent evolves under the exact Jacobian of the field along the base.
pub fn integrate_variational(
    x0: &VariationalState,
    tau_end: f64,
    tol: &ToleranceSet,
    sys: &MassSystem,
    opts: &IntegrateOptions,
) -> Result<Vec<VariationalState>> {
    x0.base.check_invariants(sys)?;
    sys.check_collision_free(&x0.base.s)?;
    let m = state_len(sys);
    let mut y0 = x0.base.to_vector().as_slice().to_vec();
    y0.extend_from_slice(x0.delta.to_vector().as_slice());
    let rhs = |_tau: f64, y: &[f64], dy: &mut [f64]| {
        let (base, delta) = y.split_at(m);
        let (dbase, ddelta) = dy.split_at_mut(m);
        field_into(base, dbase, sys)?;
        field_jvp_into(base, delta, ddelta, sys)
    };
    let state = |tau: f64, y: &[f64]| VariationalState {
        tau,
        base: BlowupState::from_slice(&y[..m], sys),
        delta: Tangent::from_slice(&y[m..], sys),
    };
    let dir = if tau_end >= x0.tau { 1.0 } else { -1.0 };
    let (grid, mut next) = match &opts.record {
        Record::Steps => (None, 0),
        Record::Grid(g) => (Some(g.as_slice()), 0),
    };
    let mut out = Vec::new();
    match grid {
        None => out.push(x0.clone()),
        Some(g) => {
            while next < g.len() && (g[next] - x0.tau) * dir <= 0.0 {
                if g[next] == x0.tau {
                    out.push(x0.clone());
                }
                next += 1;
            }
        }
    }
    let observe = |st: &mut Dop853<_>| -> Result<bool> {
        let tau = st.t();
        match grid {
            None => out.push(state(tau, st.y())),
            Some(g) => {
                while next < g.len() && (g[next] - tau) * dir <= 0.0 {
                    let mut yy = if g[next] == tau { st.y().to_vec() } else { st.dense(g[next])? };
                    project_slice(&mut yy, sys);
                    out.push(state(g[next], &yy));
                    next += 1;
                }
            }
        }
        Ok(false)
    };
    drive(rhs, (x0.tau, tau_end), y0, stepper_options(tol, opts), |y| project_slice(y, sys), observe)?;
    Ok(out)
}

/// Recognizes convergence of `traj` to an equilibrium `(s0, +-sqrt(2h))`.
///
/// All samples in the trailing window of length `2 / sqrt(2h)` must satisfy the
/// convergence criteria. `s0` is read off the asymptotic velocity
/// `v s + w + rho gradU(s) / v`, which is accurate to `O(rho^2)`.
pub fn detect_equilibrium(traj: &Trajectory, tol: &ToleranceSet, sys: &MassSystem) -> Option<EquilibriumPoint> {
    let h = traj.meta.energy0;
    if h <= 0.0 {
        return None;
    }
    let speed = (2.0 * h).sqrt();
    let window = 2.0 / speed;
    let last = traj.last();
    if (last.tau - traj.first().tau).abs() < window {
        return None;
    }
    let in_window = traj.samples.iter().rev().take_while(|s| (last.tau - s.tau).abs() <= window);
    for s in in_window {
        if !converged_at(&s.state, h, tol, sys) {
            return None;
        }
    }
    let x = &last.state;
    let sign = x.v.signum();
    let mut a_inf = x.velocity();
    if x.rho > 0.0 {
        a_inf += sys.grad_potential(&x.s).ok()? * (x.rho / x.v);
    }
    let s0 = sys.normalize(&(a_inf * sign)).ok()?;
    EquilibriumPoint::new(s0, sign * speed, sys).ok()
}

/// Newtonian time at every sample, as accumulated by the integrator.
pub fn newtonian_time(traj: &Trajectory) -> Result<Vec<f64>> {
    traj.samples.iter().map(|s| s.t.ok_or(Error::AtInfinity)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blowup::{infinity_flow, seed_state, to_blowup, ManifoldParams};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sys3() -> MassSystem {
        MassSystem::new(vec![1.0, 2.0, 1.5], 2).unwrap()
    }

    fn kepler_state(tau: f64) -> (DVector<f64>, DVector<f64>, f64) {
        // m1 = m2 = 2, h = 2, e = 2: a = 1, omega = 2, mu = 1.
        let (a, e, w) = (1.0_f64, 2.0_f64, 2.0_f64);
        let b = a * (e * e - 1.0).sqrt();
        let (ch, sh) = ((w * tau).cosh(), (w * tau).sinh());
        let rel = [a * e - a * ch, b * sh];
        let r = a * (e * ch - 1.0);
        let vel = [-a * w * sh / r, b * w * ch / r];
        let q = DVector::from_vec(vec![-0.5 * rel[0], -0.5 * rel[1], 0.5 * rel[0], 0.5 * rel[1]]);
        let xi = DVector::from_vec(vec![-0.5 * vel[0], -0.5 * vel[1], 0.5 * vel[0], 0.5 * vel[1]]);
        let t = (a / w) * (e * sh - w * tau);
        (q, xi, t)
    }

    #[test]
    fn equilibrium_is_a_constant_trajectory() {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = sys.random_shape(&mut rng, 0.2);
        let p = EquilibriumPoint::new(s0, 1.5, &sys).unwrap();
        let x0 = p.as_state(&sys);
        let traj = integrate(&x0, (0.0, 5.0), &ToleranceSet::default(), &sys, &IntegrateOptions::default()).unwrap();
        for s in &traj.samples {
            assert!((&s.state.s - &x0.s).amax() < 1e-15);
            assert_eq!(s.state.v, 1.5);
            assert_eq!(s.t, None);
        }
    }

    #[test]
    fn infinity_orbit_matches_closed_form() {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xi = sys.random_shape(&mut rng, 0.2);
        let eta = sys.random_tangent(&mut rng, &xi);
        let h = 0.8;
        let x0 = infinity_flow(&xi, &eta, h, -5.0, &sys).unwrap();
        let grid: Vec<f64> = (0..=40).map(|k| -5.0 + 0.25 * k as f64).collect();
        let opts = IntegrateOptions { record: Record::Grid(grid), ..Default::default() };
        let traj = integrate(&x0, (-5.0, 5.0), &ToleranceSet::default(), &sys, &opts).unwrap();
        assert_eq!(traj.samples.len(), 41);
        for smp in &traj.samples {
            let exact = infinity_flow(&xi, &eta, h, smp.tau, &sys).unwrap();
            let err = (smp.state.to_vector() - exact.to_vector()).amax();
            assert!(err < 1e-9, "tau {} err {err:e}", smp.tau);
            assert_eq!(smp.state.rho, 0.0);
        }
    }

    #[test]
    fn kepler_orbit_matches_closed_form_and_time() {
        let sys = MassSystem::new(vec![2.0, 2.0], 2).unwrap();
        let (q, xi, _) = kepler_state(-3.0);
        let x0 = to_blowup(&q, &xi, &sys).unwrap();
        let grid: Vec<f64> = (0..=24).map(|k| -3.0 + 0.25 * k as f64).collect();
        let opts = IntegrateOptions { record: Record::Grid(grid), t0: kepler_state(-3.0).2, ..Default::default() };
        let traj = integrate(&x0, (-3.0, 3.0), &ToleranceSet::default(), &sys, &opts).unwrap();
        let ts = newtonian_time(&traj).unwrap();
        for (smp, t) in traj.samples.iter().zip(ts) {
            let (q, xi, t_exact) = kepler_state(smp.tau);
            let exact = to_blowup(&q, &xi, &sys).unwrap();
            let err = (smp.state.to_vector() - exact.to_vector()).amax();
            assert!(err < 1e-8, "tau {} err {err:e}", smp.tau);
            assert!((t - t_exact).abs() < 1e-8 * t_exact.abs().max(1.0), "t {t} vs {t_exact}");
        }
        assert!(traj.meta.max_energy_drift < 1e-9);
    }

    #[test]
    fn time_quadrature_agrees_with_carried_time() {
        let sys = MassSystem::new(vec![2.0, 2.0], 2).unwrap();
        let (q, xi, t0) = kepler_state(-4.0);
        let x0 = to_blowup(&q, &xi, &sys).unwrap();
        let opts = IntegrateOptions { t0, max_step: Some(0.1), ..Default::default() };
        let traj = integrate(&x0, (-4.0, 4.0), &ToleranceSet::default(), &sys, &opts).unwrap();
        let carried = newtonian_time(&traj).unwrap();
        let rebuilt = traj.time_quadrature(&sys).unwrap();
        let scale = carried.iter().fold(1.0_f64, |m, t| m.max(t.abs()));
        for (a, b) in carried.iter().zip(&rebuilt) {
            assert!((a - b).abs() < 1e-11 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_radius_gives_t_equal_tau() {
        // A circular two-body orbit has r constant; choose r = 1 in mass norm.
        let sys = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        // v' = |w|^2 - rho U vanishes when |w|^2 = U at rho = 1.
        let s = DVector::from_vec(vec![-1.0 / 2f64.sqrt(), 0.0, 1.0 / 2f64.sqrt(), 0.0]);
        let u = sys.potential(&s).unwrap();
        let w = DVector::from_vec(vec![0.0, -1.0, 0.0, 1.0]) * (u / 2.0).sqrt();
        let x0 = BlowupState { rho: 1.0, s, v: 0.0, w };
        let traj = integrate(&x0, (0.0, 3.0), &ToleranceSet::default(), &sys, &IntegrateOptions::default()).unwrap();
        for smp in &traj.samples {
            assert!((smp.t.unwrap() - smp.tau).abs() < 1e-9);
            assert!((smp.state.rho - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_and_constraints_hold_on_three_body_run() {
        let sys = sys3();
        let q = sys.project_com(&DVector::from_vec(vec![-1.0, 0.1, 0.7, 0.4, 0.2, -0.6]));
        // Expanding velocities plus a shear keep every pair receding.
        let xi = &q * 4.0 + sys.project_com(&DVector::from_vec(vec![0.0, 0.3, 0.2, 0.0, -0.1, -0.2]));
        let x0 = to_blowup(&q, &xi, &sys).unwrap();
        assert!(x0.energy(&sys).unwrap() > 0.0);
        let traj = integrate(&x0, (0.0, 6.0), &ToleranceSet::default(), &sys, &IntegrateOptions::default()).unwrap();
        assert!(traj.meta.max_energy_drift < 1e-9, "{}", traj.meta.max_energy_drift);
        for smp in &traj.samples {
            assert!(smp.state.constraint_defect(&sys) < 1e-10);
        }
    }

    #[test]
    fn zero_tangent_stays_zero() {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s0 = sys.random_shape(&mut rng, 0.2);
        let p = EquilibriumPoint::new(s0, -1.0, &sys).unwrap();
        let s1 = sys.random_tangent(&mut rng, &p.s0) * 1e-3;
        let mp = ManifoldParams::new(p, s1, 1e-3, &sys).unwrap();
        let base = seed_state(&mp, &sys).unwrap();
        let x0 = VariationalState { tau: 0.0, base, delta: Tangent::zeros(&sys) };
        let out = integrate_variational(&x0, 3.0, &ToleranceSet::default(), &sys, &IntegrateOptions::default()).unwrap();
        for v in &out {
            assert_eq!(v.delta.to_vector().amax(), 0.0);
        }
    }

    #[test]
    fn variational_rho_on_great_circle_is_cosine() {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xi = sys.random_shape(&mut rng, 0.3);
        let eta = sys.random_tangent(&mut rng, &xi);
        let h = 2.0;
        let omega = 2.0;
        let base = infinity_flow(&xi, &eta, h, 0.0, &sys).unwrap();
        let mut delta = Tangent::zeros(&sys);
        delta.rho = 0.7;
        let x0 = VariationalState { tau: 0.0, base, delta };
        let grid: Vec<f64> = (0..=20).map(|k| 0.2 * k as f64).collect();
        let opts = IntegrateOptions { record: Record::Grid(grid), ..Default::default() };
        let out = integrate_variational(&x0, 4.0, &ToleranceSet::default(), &sys, &opts).unwrap();
        for v in &out {
            let theta = (omega * v.tau).sinh().atan();
            assert!((v.delta.rho - 0.7 * theta.cos()).abs() < 1e-9, "tau {}", v.tau);
        }
    }

    #[test]
    fn variational_matches_finite_difference() {
        let sys = sys3();
        let q = sys.project_com(&DVector::from_vec(vec![-1.0, 0.1, 0.7, 0.4, 0.2, -0.6]));
        let xi = sys.project_com(&DVector::from_vec(vec![0.3, -0.2, -0.1, 0.5, 0.05, -0.4]));
        let x0 = to_blowup(&q, &xi, &sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = sys.random_tangent(&mut rng, &x0.s);
        // Keep the linearized constraint <s, dw> + <ds, w> = 0 so that projecting the
        // perturbed states acts only at second order.
        let dw = sys.random_tangent(&mut rng, &x0.s) - &x0.s * sys.dot(&ds, &x0.w);
        let delta = Tangent { rho: 0.3, s: ds.clone(), v: -0.2, w: dw.clone() };
        let tol = ToleranceSet::default();
        let tau_end = 1.5;
        let var = integrate_variational(
            &VariationalState { tau: 0.0, base: x0.clone(), delta: delta.clone() },
            tau_end,
            &tol,
            &sys,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let lin = var.last().unwrap().delta.to_vector();

        let end = |eps: f64| {
            let mut x = x0.clone();
            x.rho += eps * delta.rho;
            x.s += &ds * eps;
            x.v += eps * delta.v;
            x.w += &dw * eps;
            x.project(&sys);
            integrate(&x, (0.0, tau_end), &tol, &sys, &IntegrateOptions::default()).unwrap().last().state.to_vector()
        };
        let eps = 1e-5;
        let fd = (end(eps) - end(-eps)) / (2.0 * eps);
        let err = (&fd - &lin).amax() / lin.amax();
        assert!(err < 1e-6, "relative error {err:e}");
    }

    #[test]
    fn kepler_forward_detects_asymptotic_direction() {
        let sys = MassSystem::new(vec![2.0, 2.0], 2).unwrap();
        let (q, xi, _) = kepler_state(0.0);
        let x0 = to_blowup(&q, &xi, &sys).unwrap();
        let tol = ToleranceSet::default();
        let traj = integrate(&x0, (0.0, 50.0), &tol, &sys, &IntegrateOptions::to_equilibrium(2.0)).unwrap();
        assert!(traj.converged());
        let p = detect_equilibrium(&traj, &tol, &sys).unwrap();
        // A' = v0 s0' = (-1, sqrt 3) for the relative coordinate q2 - q1.
        let a = p.chazy_a();
        let rel = [a[2] - a[0], a[3] - a[1]];
        assert!((rel[0] + 1.0).abs() < 1e-9 && (rel[1] - 3f64.sqrt()).abs() < 1e-9, "{rel:?}");
        assert!((p.v0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bounded_segment_is_not_an_equilibrium() {
        let sys = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let s = DVector::from_vec(vec![-1.0 / 2f64.sqrt(), 0.0, 1.0 / 2f64.sqrt(), 0.0]);
        let u = sys.potential(&s).unwrap();
        let w = DVector::from_vec(vec![0.0, -1.0, 0.0, 1.0]) * (u / 2.0).sqrt();
        let x0 = BlowupState { rho: 1.0, s, v: 0.0, w };
        let tol = ToleranceSet::default();
        let traj = integrate(&x0, (0.0, 10.0), &tol, &sys, &IntegrateOptions::default()).unwrap();
        assert!(detect_equilibrium(&traj, &tol, &sys).is_none());
        let err = integrate(&x0, (0.0, 10.0), &tol, &sys, &IntegrateOptions::to_equilibrium(1.0)).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn head_on_collision_is_reported() {
        let sys = MassSystem::new(vec![1.0, 1.0], 2).unwrap();
        let q = DVector::from_vec(vec![-1.0, 0.0, 1.0, 0.0]);
        let xi = DVector::from_vec(vec![0.1, 0.0, -0.1, 0.0]);
        let x0 = to_blowup(&q, &xi, &sys).unwrap();
        let err = integrate(&x0, (0.0, 50.0), &ToleranceSet::default(), &sys, &IntegrateOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Collision { .. } | Error::StepSizeUnderflow { .. }), "{err:?}");
    }

    #[test]
    fn seeded_backward_run_returns_to_its_equilibrium() {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s0 = sys.random_shape(&mut rng, 0.3);
        let p = EquilibriumPoint::new(s0, -2.0, &sys).unwrap();
        let s1 = sys.random_tangent(&mut rng, &p.s0) * 1e-4;
        let mp = ManifoldParams::new(p.clone(), s1, 5e-5, &sys).unwrap();
        let x0 = crate::blowup::seed_state_on_shell(&mp, &sys).unwrap();
        let tol = ToleranceSet::default();
        let traj = integrate(&x0, (0.0, -50.0), &tol, &sys, &IntegrateOptions::to_equilibrium(2.0)).unwrap();
        let q = detect_equilibrium(&traj, &tol, &sys).unwrap();
        assert!((&q.s0 - &p.s0).amax() < 1e-7);
        assert!((q.v0 - p.v0).abs() < 1e-7);
    }
}
