//! The acceptance suite. Each criterion is a self-contained numerical experiment with
//! pinned thresholds; failures are reported, never raised.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blowup::{
    generalized_eigenvector, infinity_flow, linearization_matrix, linearized_flow_exact, to_blowup, EquilibriumPoint,
    ManifoldParams, Tangent,
};
use crate::chazy::{
    cartesian_samples, chazy_from_manifold, extract_manifold_params, fit_chazy_cartesian_with, rho2_coefficient,
    series_predict, FitOptions, SeriesOrder,
};
use crate::error::{Error, Result};
use crate::integrator::{detect_equilibrium, integrate, integrate_variational, IntegrateOptions, Record, VariationalState};
use crate::kepler::{kepler_state, KeplerOrbit};
use crate::linalg::lstsq;
use crate::nbody::{Configuration, MassSystem};
use crate::scattering::{
    check_relation_properties, dbar_kernel, delta_a, delta_a_planar, filter_near_infinity, image_jacobian,
    planar_perp, scattering_map_with, summarize_sweep, sweep_image, JacobianOptions, RelationOptions, ScatterOptions,
    SweepGrid,
};
use crate::tolerance::ToleranceSet;

/// Integrator tolerances below this cannot be met in double precision; failures under
/// them are attributed to the tolerance rather than to the method.
pub const RTOL_FLOOR: f64 = 1e-13;

/// Seeding used by every scattering experiment of the suite.
pub fn suite_scatter() -> ScatterOptions {
    ScatterOptions::refined(1e-6)
}

/// Deliberate defects, to show that the suite detects them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Compare fitted `B` with `+gradU(A)` in the future (the wrong sign).
    WrongBSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub tol: ToleranceSet,
    pub fault: Option<Fault>,
    /// Criteria to run; empty means all.
    pub only: Vec<u8>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { tol: ToleranceSet::default(), fault: None, only: Vec::new() }
    }
}

/// Why a criterion failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The requested tolerances are unattainable or exhausted a numerical budget.
    ToleranceBound,
    /// The numbers disagree with the oracle.
    Logic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub failure: Option<FailureKind>,
    pub elapsed_s: f64,
}

impl CriterionOutcome {
    /// One line: `PASS [id] name: summary (time)`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let kind = match self.failure {
            Some(FailureKind::ToleranceBound) => " [tolerance-bound]",
            Some(FailureKind::Logic) => " [logic]",
            None => "",
        };
        format!("{tag} [{}] {}{kind}: {} ({:.2} s)", self.id, self.name, self.summary, self.elapsed_s)
    }
}

struct Check {
    passed: bool,
    summary: String,
}

/// Identifiers and names of the criteria, in order.
pub const CRITERIA: [(u8, &str); 10] = [
    (1, "kepler_closure"),
    (2, "infinity_manifold_oracle"),
    (3, "linearization"),
    (4, "chazy_coefficient_law"),
    (5, "series_orders"),
    (6, "first_order_scattering"),
    (7, "kernel_lemma"),
    (8, "image_rank"),
    (9, "relation_symmetries"),
    (10, "near_infinity_continuity"),
];

fn is_resource_error(e: &Error) -> bool {
    matches!(
        e,
        Error::StepSizeUnderflow { .. }
            | Error::MaxSteps { .. }
            | Error::NoConvergence { .. }
            | Error::NotConverged
            | Error::IllConditioned { .. }
    )
}

/// Runs one criterion.
pub fn run_criterion(id: u8, opts: &VerifyOptions) -> CriterionOutcome {
    let name = CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1).unwrap_or("unknown").to_string();
    let start = Instant::now();
    let result = match id {
        1 => kepler_closure(opts),
        2 => infinity_oracle(opts),
        3 => linearization(opts),
        4 => chazy_law(opts),
        5 => series_orders(opts),
        6 => first_order(opts),
        7 => kernel_lemma(opts),
        8 => image_rank(opts),
        9 => relation_symmetries(opts),
        10 => continuity(opts),
        _ => Err(Error::InvalidArgument(format!("no criterion {id}"))),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    let (passed, summary, failure) = classify(result, opts.tol.rtol < RTOL_FLOOR);
    CriterionOutcome { id, name, passed, summary, failure, elapsed_s }
}

fn classify(result: Result<Check>, tight: bool) -> (bool, String, Option<FailureKind>) {
    match result {
        Ok(c) if c.passed => (true, c.summary, None),
        Ok(c) => (false, c.summary, Some(if tight { FailureKind::ToleranceBound } else { FailureKind::Logic })),
        Err(e) => {
            let kind = if tight || is_resource_error(&e) { FailureKind::ToleranceBound } else { FailureKind::Logic };
            (false, format!("error: {e}"), Some(kind))
        }
    }
}

/// Runs the selected criteria in order.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .filter(|(id, _)| opts.only.is_empty() || opts.only.contains(id))
        .map(|&(id, _)| run_criterion(id, opts))
        .collect()
}

fn rel(sys: &MassSystem, x: &Configuration, y: &Configuration) -> f64 {
    sys.norm(&(x - y)) / sys.norm(y)
}

/// Kepler orbit with `mu = 1, h = 2, a = 1, e = 2`.
fn reference_orbit() -> KeplerOrbit {
    KeplerOrbit::new(2.0, 2.0, 2.0, 2.0).expect("valid orbit")
}

fn kepler_closure(opts: &VerifyOptions) -> Result<Check> {
    const TOL: f64 = 1e-6;
    const RUNTIME: f64 = 5.0;
    let start = Instant::now();
    let o = reference_orbit();
    let sys = o.system();
    let (q, xi) = kepler_state(&o, 0.0);
    let x0 = to_blowup(&q, &xi, &sys)?;
    let traj = integrate(&x0, (0.0, 60.0 / o.omega), &opts.tol, &sys, &IntegrateOptions::to_equilibrium(o.omega))?;
    let eq = detect_equilibrium(&traj, &opts.tol, &sys).ok_or(Error::NotConverged)?;
    let mp = extract_manifold_params(&traj, &eq, &sys)?;
    let ch = chazy_from_manifold(&mp, &sys)?;
    let runtime = start.elapsed().as_secs_f64();
    let r3 = 3f64.sqrt();
    let ea = rel(&sys, &ch.a, &o.embed([-1.0, r3]));
    let ec = rel(&sys, &ch.c, &o.embed([1.5, r3 / 2.0]));
    let er = (mp.rho1 - 1.0).abs();
    let worst = ea.max(ec).max(er);
    Ok(Check {
        passed: worst < TOL && runtime < RUNTIME,
        summary: format!("rel err A' {ea:.1e}, C' {ec:.1e}, rho1 {er:.1e} (< {TOL:e}); runtime {runtime:.3} s (< {RUNTIME} s)"),
    })
}

/// A random orthonormal frame whose great circle stays collision-free.
fn clear_frame(sys: &MassSystem, rng: &mut ChaCha8Rng) -> (Configuration, Configuration) {
    loop {
        let xi = sys.random_shape(rng, 0.2);
        let eta = sys.random_tangent(rng, &xi);
        let clear = (0..=360).all(|k| {
            let phi = std::f64::consts::PI * k as f64 / 180.0;
            sys.min_pair_distance(&(&xi * phi.cos() + &eta * phi.sin())).0 > 0.05
        });
        if clear {
            return (xi, eta);
        }
    }
}

fn infinity_oracle(opts: &VerifyOptions) -> Result<Check> {
    const STATE_TOL: f64 = 1e-9;
    const ENERGY_TOL: f64 = 1e-11;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // The flow has unstable directions on the sphere, so global error grows about a
    // hundredfold over the window; integrate two decades tighter than the suite tolerance.
    let tol = opts.tol.clone().scaled(0.01);
    let grid: Vec<f64> = (0..=100).map(|k| -5.0 + 0.1 * k as f64).collect();
    let (mut worst_state, mut worst_energy, mut orbits) = (0.0f64, 0.0f64, 0);
    for (masses, d) in [(vec![1.0, 2.0, 1.5], 2), (vec![1.0, 1.0, 1.0], 3), (vec![0.5, 1.0, 2.0, 1.5], 2)] {
        let sys = MassSystem::new(masses, d)?;
        for h in [0.5, 1.0, 2.0] {
            let (xi, eta) = clear_frame(&sys, &mut rng);
            let x0 = infinity_flow(&xi, &eta, h, -5.0, &sys)?;
            let iopts = IntegrateOptions { record: Record::Grid(grid.clone()), ..IntegrateOptions::default() };
            let traj = integrate(&x0, (-5.0, 5.0), &tol, &sys, &iopts)?;
            for smp in &traj.samples {
                let exact = infinity_flow(&xi, &eta, h, smp.tau, &sys)?;
                let x = &smp.state;
                let dev = (x.rho - exact.rho)
                    .abs()
                    .max((&x.s - &exact.s).amax())
                    .max((x.v - exact.v).abs())
                    .max((&x.w - &exact.w).amax());
                worst_state = worst_state.max(dev);
                let e = x.v * x.v + sys.dot(&x.w, &x.w);
                worst_energy = worst_energy.max((e - 2.0 * h).abs());
            }
            orbits += 1;
        }
    }
    Ok(Check {
        passed: worst_state < STATE_TOL && worst_energy < ENERGY_TOL,
        summary: format!(
            "{orbits} orbits on tau in [-5, 5]: max state deviation {worst_state:.1e} (< {STATE_TOL:e}), \
             max |v^2 + |w|^2 - 2h| {worst_energy:.1e} (< {ENERGY_TOL:e})"
        ),
    })
}

fn linearization(_opts: &VerifyOptions) -> Result<Check> {
    const EXP_TOL: f64 = 1e-9;
    const JORDAN_TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_exp, mut worst_jordan) = (0.0f64, 0.0f64);
    let mut count = 0;
    for d in [2, 3] {
        for _ in 0..50 {
            let masses: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
            let sys = MassSystem::new(masses, d)?;
            let s0 = sys.random_shape(&mut rng, 0.2);
            let speed: f64 = rng.gen_range(0.5..2.0);
            let v0 = if rng.gen::<bool>() { speed } else { -speed };
            let p = EquilibriumPoint::new(s0, v0, &sys)?;
            let l = linearization_matrix(&p, &sys)?;
            for tau in [-1.5, 0.4, 2.0] {
                let exact = linearized_flow_exact(&p, tau, &sys)?;
                let numeric = (&l * tau).exp();
                worst_exp = worst_exp.max((&exact - &numeric).amax() / numeric.amax());
            }
            let g = generalized_eigenvector(&p, &sys)?;
            let shifted = &l + DMatrix::identity(l.nrows(), l.ncols()) * v0;
            worst_jordan = worst_jordan.max((&shifted * (&shifted * &g)).amax() / g.amax());
            count += 1;
        }
    }
    Ok(Check {
        passed: worst_exp < EXP_TOL && worst_jordan < JORDAN_TOL,
        summary: format!(
            "{count} equilibria (d = 2, 3): max rel |exp(tau L) - closed form| {worst_exp:.1e} (< {EXP_TOL:e}), \
             max |(L + v0 I)^2 G| {worst_jordan:.1e} (< {JORDAN_TOL:e})"
        ),
    })
}

/// Past parameters of near-infinity three-body orbits in the plane.
fn three_body_seeds(sys: &MassSystem, count: usize, rho1: f64, seed: u64) -> Result<Vec<ManifoldParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_seed(sys, rho1, &mut rng)).collect()
}

fn random_seed(sys: &MassSystem, rho1: f64, rng: &mut ChaCha8Rng) -> Result<ManifoldParams> {
    let s0 = sys.random_shape(rng, 0.3);
    let eq = EquilibriumPoint::new(s0.clone(), -1.5, sys)?;
    let s1 = sys.random_tangent(rng, &s0) * 2.0;
    ManifoldParams::new(eq, s1, rho1, sys)
}

/// Closest approach below which an encounter amplifies seeding errors past the suite thresholds.
const MIN_ENCOUNTER: f64 = 0.05;

/// Seeds drawn until `count` are bi-hyperbolic with every pair distance above
/// [`MIN_ENCOUNTER`]; also returns how many draws were captured and how many were too close.
fn bi_hyperbolic_seeds(
    sys: &MassSystem,
    count: usize,
    rho1: f64,
    seed: u64,
    tol: &ToleranceSet,
) -> Result<(Vec<ManifoldParams>, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kept, mut captured, mut close) = (Vec::new(), 0, 0);
    while kept.len() < count {
        if captured + close > 10 * count {
            return Err(Error::Degenerate(format!("only {} of {count} usable seeds", kept.len())));
        }
        let mp = random_seed(sys, rho1, &mut rng)?;
        match scattering_map_with(&mp, tol, sys, &ScatterOptions::at_scale(1e-6)) {
            Ok(r) if r.diagnostics.min_pair_distance >= MIN_ENCOUNTER => kept.push(mp),
            Ok(_) => close += 1,
            Err(e) if is_resource_error(&e) || matches!(e, Error::TotalCollision | Error::Collision { .. }) => captured += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((kept, captured, close))
}

fn chazy_law(opts: &VerifyOptions) -> Result<Check> {
    const B_TOL: f64 = 1e-4;
    const A_TOL: f64 = 1e-8;
    let sys = MassSystem::new(vec![1.0, 2.0, 1.5], 2)?;
    let sign = if opts.fault == Some(Fault::WrongBSign) { -1.0 } else { 1.0 };
    let (mut worst_b, mut worst_a, mut runs) = (0.0f64, 0.0f64, 0);
    let (seeds, captured, close) = bi_hyperbolic_seeds(&sys, 6, 0.05, 4, &opts.tol)?;
    for mp in seeds {
        let speed = mp.eq.v0.abs();
        let iopts = IntegrateOptions::to_equilibrium(speed);
        let budget = 60.0 / speed;
        // Find the interaction region, then run both legs from there with t = 0 at its centre.
        let (seed, _) = crate::scattering::flow_to_seed_scale(&mp, 1e-6, &sys)?;
        let x0 = crate::blowup::seed_state_on_shell(&seed, &sys)?;
        let approach = integrate(&x0, (0.0, budget), &opts.tol, &sys, &iopts)?;
        let mid = approach
            .samples
            .iter()
            .max_by(|a, b| a.state.rho.total_cmp(&b.state.rho))
            .expect("nonempty trajectory")
            .state
            .clone();
        let h = 0.5 * speed * speed;
        for dir in [1.0, -1.0] {
            let traj = integrate(&mid, (0.0, dir * budget), &opts.tol, &sys, &iopts)?;
            let samples: Vec<_> = cartesian_samples(&traj)?.into_iter().filter(|(t, _)| t * dir > 0.0).collect();
            let fit = fit_chazy_cartesian_with(&samples, &sys, &FitOptions::default())?;
            let ch = fit.params;
            let expected = ch.expected_b(&sys)? * sign;
            worst_b = worst_b.max(sys.norm(&(&ch.b - expected)) / sys.norm(&ch.b));
            worst_a = worst_a.max((sys.dot(&ch.a, &ch.a) - 2.0 * h).abs() / (2.0 * h));
            runs += 1;
        }
    }
    let note = if sign < 0.0 { " (injected wrong B sign)" } else { "" };
    Ok(Check {
        passed: worst_b < B_TOL && worst_a < A_TOL,
        summary: format!(
            "{runs} three-body fits{note} ({captured} captured, {close} close-encounter draws skipped): max |B - (-/+)gradU(A)| / |B| {worst_b:.1e} (< {B_TOL:e}), \
             max ||A|^2 - 2h| / 2h {worst_a:.1e} (< {A_TOL:e})"
        ),
    })
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Fits `rho = c1 u + c2 u^2 + u^3 (a + b tau + c tau^2)` and returns `(c1, c2)`.
fn regress_rho(samples: &[(f64, f64)], v0: f64) -> Result<(f64, f64)> {
    let a = DMatrix::from_fn(samples.len(), 5, |i, j| {
        let tau = samples[i].0;
        let u = (-v0 * tau).exp();
        match j {
            0 => u,
            1 => u * u,
            2 => u.powi(3),
            3 => u.powi(3) * tau,
            _ => u.powi(3) * tau * tau,
        }
    });
    let b = DMatrix::from_fn(samples.len(), 1, |i, _| samples[i].1);
    let fit = lstsq(&a, &b, 1e12)?;
    Ok((fit.coef[(0, 0)], fit.coef[(1, 0)]))
}

fn series_orders(opts: &VerifyOptions) -> Result<Check> {
    const SLOPE_TOL: f64 = 0.2;
    const RHO2_TOL: f64 = 0.01;
    // e = 2 is avoided: its u^3 coefficient of rho vanishes, which would raise the second-order slope.
    let o = KeplerOrbit::new(1.0, 3.0, 0.7, 1.6)?;
    let sys = o.system();
    let mp = o.future_params();
    let (q, xi) = kepler_state(&o, 0.0);
    let x0 = to_blowup(&q, &xi, &sys)?;
    let (t1, t2) = (4.0, 4.0 + std::f64::consts::LN_10 / o.omega);
    let grid: Vec<f64> = (0..=8).map(|k| t1 + (t2 - t1) * k as f64 / 8.0).collect();
    let iopts = IntegrateOptions { record: Record::Grid(grid), ..IntegrateOptions::default() };
    let traj = integrate(&x0, (0.0, t2), &opts.tol, &sys, &iopts)?;
    let us: Vec<f64> = traj.samples.iter().map(|s| (-o.omega * s.tau).exp()).collect();
    let mut slopes = Vec::new();
    for order in [SeriesOrder::First, SeriesOrder::Second] {
        let resid: Vec<f64> = traj
            .samples
            .iter()
            .map(|s| Ok((series_predict(&mp, s.tau, order, &sys)?.rho - s.state.rho).abs()))
            .collect::<Result<_>>()?;
        slopes.push(loglog_slope(&us, &resid));
    }
    let slopes_ok = (slopes[0] - 2.0).abs() <= SLOPE_TOL && (slopes[1] - 3.0).abs() <= SLOPE_TOL;

    // rho2 by regression: the Kepler orbit and a three-body orbit with extracted rho1.
    let mut rho2_errs = Vec::new();
    let kgrid: Vec<f64> = (0..=60).map(|k| 3.0 / o.omega + k as f64 * 0.1 / o.omega).collect();
    let ktraj = integrate(&x0, (0.0, 9.0 / o.omega), &opts.tol, &sys, &IntegrateOptions { record: Record::Grid(kgrid), ..IntegrateOptions::default() })?;
    let ks: Vec<(f64, f64)> = ktraj.samples.iter().map(|s| (s.tau, s.state.rho)).collect();
    let (c1, c2) = regress_rho(&ks, o.omega)?;
    let mut fitted = mp.clone();
    fitted.rho1 = c1;
    rho2_errs.push((c2 - rho2_coefficient(&fitted, &sys)?).abs() / c2.abs());

    let sys3 = MassSystem::new(vec![1.0, 2.0, 1.5], 2)?;
    let seed = &three_body_seeds(&sys3, 1, 0.3, 5)?[0];
    let res = scattering_map_with(seed, &opts.tol, &sys3, &ScatterOptions::at_scale(1e-6))?;
    let (start, _) = crate::scattering::flow_to_seed_scale(&res.future.params, 0.1, &sys3)?;
    let v0 = start.eq.v0;
    let x3 = crate::blowup::seed_state_on_shell(&start, &sys3)?;
    // Integrate backward into the interaction region and forward to infinity from there.
    let back = integrate(&x3, (0.0, -3.0 / v0), &opts.tol, &sys3, &IntegrateOptions::default())?;
    let from = back.last().state.clone();
    let tgrid: Vec<f64> = (0..=60).map(|k| k as f64 * 0.1 / v0).collect();
    let fwd = integrate(&from, (0.0, 9.0 / v0), &opts.tol, &sys3, &IntegrateOptions { record: Record::Grid(tgrid), ..IntegrateOptions::default() })?;
    let fwd_full = integrate(&from, (0.0, 40.0 / v0), &opts.tol, &sys3, &IntegrateOptions::to_equilibrium(v0))?;
    let eq = detect_equilibrium(&fwd_full, &opts.tol, &sys3).ok_or(Error::NotConverged)?;
    let mp3 = extract_manifold_params(&fwd_full, &eq, &sys3)?;
    let samples: Vec<(f64, f64)> = fwd.samples.iter().filter(|s| s.tau >= 3.0 / v0).map(|s| (s.tau, s.state.rho)).collect();
    let (c1, c2) = regress_rho(&samples, v0)?;
    let mut fitted3 = mp3.clone();
    fitted3.rho1 = c1;
    let rho1_agree = (c1 - mp3.rho1).abs() / mp3.rho1;
    rho2_errs.push((c2 - rho2_coefficient(&fitted3, &sys3)?).abs() / c2.abs());
    let worst = rho2_errs.iter().copied().fold(0.0, f64::max);
    Ok(Check {
        passed: slopes_ok && worst < RHO2_TOL,
        summary: format!(
            "rho residual slopes {:.3} (order 1, expect 2) and {:.3} (order 2, expect 3) +- {SLOPE_TOL}; \
             rho2 regression rel err {} (< {RHO2_TOL}); regressed vs extracted rho1 {rho1_agree:.1e}",
            slopes[0],
            slopes[1],
            rho2_errs.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>().join(", "),
        ),
    })
}

fn first_order(opts: &VerifyOptions) -> Result<Check> {
    const RATIO: f64 = 4.0;
    const RATIO_SLACK: f64 = 0.25;
    const QUAD_TOL: f64 = 1e-9;
    const VAR_TOL: f64 = 1e-8;
    let sys = MassSystem::new(vec![1.0, 1.0, 1.0], 2)?;
    let h = 1.0;
    let s0 = sys.polygon_shape();
    let p = EquilibriumPoint::new(s0.clone(), -(2.0 * h as f64).sqrt(), &sys)?;
    let xi = -&s0;
    let eta = planar_perp(&xi, &sys);
    let mut errs = Vec::new();
    for rho1 in [1e-3, 5e-4, 2.5e-4] {
        let mp = ManifoldParams::new(p.clone(), &eta * 2.0, rho1, &sys)?;
        let res = scattering_map_with(&mp, &opts.tol, &sys, &suite_scatter())?;
        let da = delta_a(&xi, h, &eta, rho1 / 2.0, &sys)?;
        errs.push(sys.norm(&(res.future.a() - res.past.a() - da)));
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let ratios_ok = ratios.iter().all(|r| (r - RATIO).abs() <= RATIO_SLACK * RATIO);

    let mut quad_dev = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..5 {
        let x = if k == 0 { xi.clone() } else { sys.random_shape(&mut rng, 0.3) };
        let e = planar_perp(&x, &sys);
        let q = delta_a(&x, h, &e, 1.0, &sys)?;
        let c = delta_a_planar(&x, h, 1.0, &sys)?;
        quad_dev = quad_dev.max(sys.norm(&(&q - &c)) / sys.norm(&c));
    }

    let var_dev = variational_delta_a(&xi, &eta, h, &opts.tol, &sys)?;
    Ok(Check {
        passed: ratios_ok && quad_dev < QUAD_TOL && var_dev < VAR_TOL,
        summary: format!(
            "halving errors {} ratios {} (4 +- 25%); quadrature vs closed form {quad_dev:.1e} (< {QUAD_TOL:e}); \
             variational vs quadrature {var_dev:.1e} (< {VAR_TOL:e})",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", "),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", "),
        ),
    })
}

/// Relative difference between `Delta A` from the variational equations along the
/// great-circle orbit (perturbed by `d rho = 1` at its midpoint) and the quadrature.
fn variational_delta_a(
    xi: &Configuration,
    eta: &Configuration,
    h: f64,
    tol: &ToleranceSet,
    sys: &MassSystem,
) -> Result<f64> {
    let omega = (2.0 * h).sqrt();
    let horizon = 25.0 / omega;
    let base = infinity_flow(xi, eta, h, 0.0, sys)?;
    let delta = Tangent { rho: 1.0, s: sys.zeros(), v: 0.0, w: sys.zeros() };
    let x0 = VariationalState { tau: 0.0, base, delta };
    let end = |t: f64| -> Result<DVector<f64>> {
        let run = integrate_variational(&x0, t, tol, sys, &IntegrateOptions::default())?;
        Ok(run.last().expect("nonempty run").delta_velocity())
    };
    let numeric = end(horizon)? - end(-horizon)?;
    let quad = delta_a(xi, h, eta, 1.0, sys)?;
    Ok(sys.norm(&(numeric - &quad)) / sys.norm(&quad))
}

fn kernel_lemma(opts: &VerifyOptions) -> Result<Check> {
    const GAP: f64 = 1e6;
    const RESIDUAL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut checked, mut bad) = (0, Vec::new());
    let (mut min_gap, mut worst_res) = (f64::INFINITY, 0.0f64);
    for n in [3usize, 4] {
        let mut done = 0;
        while done < 10 {
            let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let sys = MassSystem::new(masses, 2)?;
            let xi = sys.random_shape(&mut rng, 0.2);
            let k = dbar_kernel(&xi, &sys, opts.tol.rank_rel)?;
            if k.collinear {
                continue;
            }
            done += 1;
            checked += 1;
            min_gap = min_gap.min(k.gap);
            worst_res = worst_res.max(k.printed_residual);
            if k.dimension != 3 || k.gap < GAP || k.printed_residual > RESIDUAL {
                bad.push(format!("n={n} dim {} gap {:.1e}", k.dimension, k.gap));
            }
        }
    }
    let sys = MassSystem::new(vec![1.0, 2.0, 1.5], 2)?;
    let line = sys.normalize(&sys.project_com(&DVector::from_vec(vec![-1.0, 0.0, 0.3, 0.0, 1.0, 0.0])))?;
    let flagged = dbar_kernel(&line, &sys, opts.tol.rank_rel)?.collinear;
    Ok(Check {
        passed: bad.is_empty() && flagged,
        summary: format!(
            "{checked} planar configurations (n = 3, 4): kernel dimension 3 in {}, min gap {min_gap:.1e} (>= {GAP:e}), \
             max printed-vector residual {worst_res:.1e} (< {RESIDUAL:e}); collinear flagged: {flagged}{}",
            checked - bad.len(),
            if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.join("; ")) }
        ),
    })
}

fn image_rank(opts: &VerifyOptions) -> Result<Check> {
    const GAP: f64 = 1e6;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lines = Vec::new();
    let mut ok = true;
    let jopts = JacobianOptions { scatter: suite_scatter(), ..JacobianOptions::default() };
    for (masses, label) in [(vec![1.0, 1.0, 1.0], "equilateral"), (vec![1.0, 2.0, 1.5], "random"), (vec![1.0, 0.5, 2.0, 1.5], "random")] {
        let sys = MassSystem::new(masses, 2)?;
        let s0 = if label == "equilateral" { sys.polygon_shape() } else { sys.random_shape(&mut rng, 0.3) };
        let p = EquilibriumPoint::new(s0.clone(), -(2.0f64).sqrt(), &sys)?;
        let eta = planar_perp(&s0, &sys);
        let eta = &eta / sys.norm(&eta);
        let j = image_jacobian(&p, 1e-3, &(eta * 2.0), &opts.tol, &sys, &jopts)?;
        let full = sys.reduced_dim() - 1;
        let gap = j.min_ratio / opts.tol.rank_rel;
        ok &= j.rank == full && gap >= GAP;
        lines.push(format!("n={} {label}: rank {}/{full}, gap {gap:.1e}", sys.n(), j.rank));
    }
    Ok(Check { passed: ok, summary: format!("{} (gap = sigma_min / (1e-8 sigma_max) >= {GAP:e})", lines.join("; ")) })
}

fn relation_symmetries(opts: &VerifyOptions) -> Result<Check> {
    const THRESHOLD: f64 = 1e-6;
    let ropts = RelationOptions { threshold: THRESHOLD, scatter: suite_scatter(), rng_seed: 9 };
    let mut report = None;
    for (m1, m2, h, e) in [(2.0, 2.0, 2.0, 2.0), (1.0, 3.0, 0.7, 1.6), (1.0, 1.0, 1.0, 1.2), (1.0, 2.0, 1.5, 3.0)] {
        let o = KeplerOrbit::new(m1, m2, h, e)?;
        let r = check_relation_properties(&[o.past_params()], &opts.tol, &o.system(), &ropts);
        match report.as_mut() {
            None => report = Some(r),
            Some(acc) => crate::scattering::RelationReport::merge(acc, r),
        }
    }
    let sys = MassSystem::new(vec![1.0, 2.0, 1.5], 2)?;
    let (mut seeds, mut captured, mut close) = bi_hyperbolic_seeds(&sys, 8, 0.05, 10, &opts.tol)?;
    let (more, c1, c2) = bi_hyperbolic_seeds(&sys, 8, 0.02, 11, &opts.tol)?;
    seeds.extend(more);
    captured += c1;
    close += c2;
    let mut report = report.expect("Kepler orbits checked");
    report.merge(check_relation_properties(&seeds, &opts.tol, &sys, &ropts));
    let parts: Vec<String> =
        report.properties.iter().map(|p| format!("{} {:.1e}", p.property.name(), p.max_deviation)).collect();
    let failures: usize = report.properties.iter().map(|p| p.failures.len()).sum();
    Ok(Check {
        passed: report.passed() && report.orbits >= 20,
        summary: format!(
            "{} orbits (4 Kepler, 16 three-body; {captured} captured and {close} close-encounter draws skipped), max deviation: {} (< {THRESHOLD:e}); {failures} failures, {} undetermined",
            report.orbits,
            parts.join(", "),
            report.undetermined.len()
        ),
    })
}

fn continuity(opts: &VerifyOptions) -> Result<Check> {
    const SLACK: f64 = 1.25;
    let sys = MassSystem::new(vec![1.0, 1.0, 1.0], 2)?;
    let s0 = sys.polygon_shape();
    let p = EquilibriumPoint::new(s0.clone(), -(2.0f64).sqrt(), &sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut dirs = Vec::new();
    while dirs.len() < 6 {
        let eta = sys.random_tangent(&mut rng, &s0);
        if crate::scattering::infinity_scattering(&p, &eta, &sys).is_ok() {
            dirs.push(eta * 2.0);
        }
    }
    let scales = [1e-2, 1e-3, 1e-4];
    let mut disp = Vec::new();
    let mut recorded = true;
    for &sigma in &scales {
        let grid = SweepGrid { rho1: vec![sigma], s1: dirs.clone() };
        let recs = sweep_image(&p, &grid, &opts.tol, &sys, &suite_scatter());
        let summary = summarize_sweep(&recs, &sys);
        if summary.ok != recs.len() {
            return Ok(Check { passed: false, summary: format!("seed scale {sigma:e}: {} of {} orbits failed", recs.len() - summary.ok, recs.len()) });
        }
        recorded &= summary.max_rho > 0.0 && summary.max_rho.is_finite() && summary.max_potential.is_finite();
        recorded &= filter_near_infinity(&recs, 0.5 / summary.max_rho, 2.0 * summary.max_potential).len() == recs.len();
        recorded &= filter_near_infinity(&recs, 2.0 / summary.max_rho, f64::INFINITY).len() < recs.len();
        disp.push(summary.dispersion);
    }
    let ratios: Vec<f64> = disp.windows(2).map(|w| w[1] / w[0]).collect();
    let linear = ratios.iter().zip(scales.windows(2)).all(|(r, s)| *r <= SLACK * s[1] / s[0]);
    Ok(Check {
        passed: linear && recorded,
        summary: format!(
            "dispersion |A' - A| at rho1 = 1e-2, 1e-3, 1e-4: {}; contraction ratios {} (<= {:.3}); Z(R,K) filter on recorded max rho / max U: {}",
            disp.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(", "),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", "),
            SLACK * 0.1,
            if recorded { "ok" } else { "broken" },
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        assert!((loglog_slope(&xs, &ys) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn outcome_line_format() {
        let o = CriterionOutcome {
            id: 3,
            name: "linearization".into(),
            passed: false,
            summary: "x".into(),
            failure: Some(FailureKind::ToleranceBound),
            elapsed_s: 0.5,
        };
        assert_eq!(o.line(), "FAIL [3] linearization [tolerance-bound]: x (0.50 s)");
    }

    #[test]
    fn failures_are_classified() {
        let bad = || Ok(Check { passed: false, summary: String::new() });
        assert_eq!(classify(bad(), false).2, Some(FailureKind::Logic));
        assert_eq!(classify(bad(), true).2, Some(FailureKind::ToleranceBound));
        assert_eq!(classify(Err(Error::MaxSteps { tau: 1.0 }), false).2, Some(FailureKind::ToleranceBound));
        assert_eq!(classify(Err(Error::TotalCollision), false).2, Some(FailureKind::Logic));
        assert_eq!(classify(Ok(Check { passed: true, summary: "ok".into() }), true), (true, "ok".into(), None));
    }

    #[test]
    fn unknown_criterion_fails_as_logic() {
        let o = run_criterion(42, &VerifyOptions::default());
        assert!(!o.passed);
        assert_eq!(o.failure, Some(FailureKind::Logic));
    }
}
