//! Chazy parameters `q(t) = A t + B log|t| + C + ...`, extraction of manifold
//! parameters from trajectories, truncated asymptotic series and the `tau`-`t` relation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blowup::{EquilibriumPoint, ManifoldParams};
use crate::error::{Error, Result};
use crate::integrator::{detect_equilibrium, Trajectory};
use crate::linalg::lstsq;
use crate::nbody::{Configuration, MassSystem};

/// Which end of an orbit a set of parameters describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Past,
    Future,
}

impl Direction {
    /// Future for `v0 > 0`, past for `v0 < 0`.
    pub fn of_speed(v0: f64) -> Self {
        if v0 > 0.0 {
            Direction::Future
        } else {
            Direction::Past
        }
    }

    /// `+1` for the future, `-1` for the past.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Future => 1.0,
            Direction::Past => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Future => Direction::Past,
            Direction::Past => Direction::Future,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChazyParameters {
    /// Asymptotic velocity.
    pub a: Configuration,
    /// Coefficient of `log|t|`.
    pub b: Configuration,
    /// Offset, normalized so that `<A, C> = 0`.
    pub c: Configuration,
    pub direction: Direction,
}

impl ChazyParameters {
    /// `B` predicted from `A`: `-gradU(A)` in the future, `+gradU(A)` in the past.
    pub fn expected_b(&self, sys: &MassSystem) -> Result<Configuration> {
        Ok(sys.grad_potential(&self.a)? * -self.direction.sign())
    }

    /// `|B - expected_b| / |B|` in the mass norm.
    pub fn b_relation_defect(&self, sys: &MassSystem) -> Result<f64> {
        let expected = self.expected_b(sys)?;
        Ok(sys.norm(&(&self.b - expected)) / sys.norm(&self.b))
    }

    /// `|A|^2 / 2`.
    pub fn energy(&self, sys: &MassSystem) -> f64 {
        0.5 * sys.dot(&self.a, &self.a)
    }

    /// Removes the `A` component of `C` (a shift of the origin of time).
    pub fn normalized(mut self, sys: &MassSystem) -> Self {
        let aa = sys.dot(&self.a, &self.a);
        if aa > 0.0 {
            let k = sys.dot(&self.a, &self.c) / aa;
            self.c -= &self.a * k;
        }
        self
    }

    /// Parameters of `q(-t)`: `(A, B, C) -> (-A, B, C)` with the direction flipped.
    pub fn time_reversed(&self) -> Self {
        Self { a: -&self.a, b: self.b.clone(), c: self.c.clone(), direction: self.direction.reversed() }
    }
}

/// Truncation order of the asymptotic series in `u = exp(-v0 tau)` and `tau u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesOrder {
    /// Terms linear in `u` and `tau u`.
    First,
    /// Adds the `rho2 u^2` term of `rho`.
    Second,
}

impl SeriesOrder {
    pub fn new(order: u8) -> Result<Self> {
        match order {
            1 => Ok(SeriesOrder::First),
            2 => Ok(SeriesOrder::Second),
            k => Err(Error::InvalidArgument(format!("series order must be 1 or 2, got {k}"))),
        }
    }

    pub fn get(self) -> u8 {
        match self {
            SeriesOrder::First => 1,
            SeriesOrder::Second => 2,
        }
    }
}

/// Output of [`series_predict`]; `r` and `q` are absent when `rho1 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPrediction {
    pub u: f64,
    pub rho: f64,
    pub s: Configuration,
    pub v: f64,
    pub r: Option<f64>,
    pub q: Option<Configuration>,
}

/// `U(s0)` and the tangential gradient at `s0`.
fn shape_data(eq: &EquilibriumPoint, sys: &MassSystem) -> Result<(f64, Configuration)> {
    let (u, g) = sys.potential_and_grad(&eq.s0)?;
    Ok((u, g + &eq.s0 * u))
}

/// `(A, B, C)` from manifold parameters, for either direction.
pub fn chazy_from_manifold(mp: &ManifoldParams, sys: &MassSystem) -> Result<ChazyParameters> {
    if mp.rho1 <= 0.0 {
        return Err(Error::RhoZero);
    }
    let (v0, s0) = (mp.eq.v0, &mp.eq.s0);
    let (u0, tgrad) = shape_data(&mp.eq, sys)?;
    let grad = &tgrad - s0 * u0;
    let v2 = v0 * v0;
    let c = &mp.s1 / mp.rho1 - &tgrad * ((mp.rho1 * v0.abs()).ln() / v2);
    let params = ChazyParameters { a: s0 * v0, b: grad * (-1.0 / v2), c, direction: Direction::of_speed(v0) };
    Ok(params.normalized(sys))
}

/// Second-order coefficient `rho2 = (rho1 / v0)^2 U(s0)` of `rho = rho1 u + rho2 u^2 + ...`.
pub fn rho2_coefficient(mp: &ManifoldParams, sys: &MassSystem) -> Result<f64> {
    let u0 = sys.potential(&mp.eq.s0)?;
    Ok((mp.rho1 / mp.eq.v0).powi(2) * u0)
}

/// The extraction window covers this many decades of `u` before the last sample; the
/// neglected terms are `O(u)`, so a longer window only adds bias.
const TAIL_DECADES: f64 = 1.0;
const MIN_TAIL_SAMPLES: usize = 3;

/// Estimates `(rho1, s1)` of a trajectory converging to `eq`, in the trajectory's own clock.
///
/// `rho1` solves `rho / u = rho1 + (U(s0) / v0^2) rho1^2 u` in the least-squares sense over the
/// trailing window; `s1` is read off `w = u (-v0 s1 - rho1 tgradU / v0 + rho1 tgradU tau)`,
/// which avoids the cancellation in `s - s0`.
pub fn extract_manifold_params(traj: &Trajectory, eq: &EquilibriumPoint, sys: &MassSystem) -> Result<ManifoldParams> {
    let last = traj.last();
    let converged = traj.converged() || detect_equilibrium(traj, &traj.meta.tolerances, sys).is_some();
    if !converged || last.state.v.signum() != eq.v0.signum() {
        return Err(Error::NotConverged);
    }
    if traj.samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientSamples { found: traj.samples.len(), needed: MIN_TAIL_SAMPLES });
    }
    let width = TAIL_DECADES * std::f64::consts::LN_10 / eq.v0.abs();
    let mut start = traj.samples.len() - MIN_TAIL_SAMPLES;
    while start > 0 && (last.tau - traj.samples[start - 1].tau).abs() <= width {
        start -= 1;
    }
    let tail: Vec<_> = traj.samples[start..].iter().collect();
    let v0 = eq.v0;
    let (u0, tgrad) = shape_data(eq, sys)?;
    let curv = u0 / (v0 * v0);
    let us: Vec<f64> = tail.iter().map(|s| (-v0 * s.tau).exp()).collect();
    let ys: Vec<f64> = tail.iter().zip(&us).map(|(s, u)| s.state.rho / u).collect();
    let n = tail.len() as f64;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mean_u = us.iter().sum::<f64>() / n;
    // Fixed point of rho1 = mean(y) - curv rho1^2 mean(u); the correction is O(u).
    let mut rho1 = mean_y;
    for _ in 0..50 {
        let next = mean_y - curv * rho1 * rho1 * mean_u;
        let done = (next - rho1).abs() <= 1e-15 * next.abs();
        rho1 = next;
        if done {
            break;
        }
    }
    if !rho1.is_finite() {
        return Err(Error::Degenerate("rho1 estimate is not finite".into()));
    }
    let rho1 = rho1.max(0.0);
    let mut s1 = sys.zeros();
    for (s, u) in tail.iter().zip(&us) {
        let k = &s.state.w / *u + &tgrad * (rho1 / v0 - rho1 * s.tau);
        s1 -= k / v0;
    }
    s1 /= n;
    let along = sys.dot(&eq.s0, &s1);
    s1 -= &eq.s0 * along;
    ManifoldParams::new(eq.clone(), s1, rho1, sys)
}

/// Largest admissible displacement `u (rho1 + |s1| + rho1 |tau| |alpha|)` for series prediction.
const ASYMPTOTIC_LIMIT: f64 = 0.1;

/// Truncated asymptotic series for `(rho, s, v, r, q)` at `tau`.
pub fn series_predict(mp: &ManifoldParams, tau: f64, order: SeriesOrder, sys: &MassSystem) -> Result<SeriesPrediction> {
    let (v0, s0) = (mp.eq.v0, &mp.eq.s0);
    let (u0, tgrad) = shape_data(&mp.eq, sys)?;
    let u = (-v0 * tau).exp();
    let alpha = &tgrad / v0;
    let size = u * (mp.rho1 + sys.norm(&mp.s1) + mp.rho1 * tau.abs() * sys.norm(&alpha));
    if !(size <= ASYMPTOTIC_LIMIT) {
        return Err(Error::NotAsymptotic(format!("displacement {size:e} at tau = {tau}")));
    }
    let mut rho = mp.rho1 * u;
    if order == SeriesOrder::Second {
        rho += rho2_coefficient(mp, sys)? * u * u;
    }
    let s = s0 + &mp.s1 * u - &alpha * (mp.rho1 * tau * u);
    let v = v0 + mp.rho1 * u0 * u / v0;
    let (r, q) = if mp.rho1 > 0.0 {
        let e = (v0 * tau).exp();
        let v2 = v0 * v0;
        let r = e / mp.rho1 - u0 / v2;
        let q = s0 * (e / mp.rho1) - &tgrad * (tau / v0) + &mp.s1 / mp.rho1 - s0 * (u0 / v2);
        (Some(r), Some(q))
    } else {
        (None, None)
    };
    Ok(SeriesPrediction { u, rho, s, v, r, q })
}

/// Which way [`tau_t_relation`] converts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeConversion {
    TauToT,
    TToTau,
}

/// Leading terms of `t(tau) = e^{v0 tau} / (rho1 v0) - (U(s0) / v0^2) tau + c` and its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauTRelation {
    pub v0: f64,
    pub rho1: f64,
    /// `U(s0)`.
    pub potential: f64,
    /// Origin of Newtonian time.
    pub c: f64,
}

impl TauTRelation {
    /// Uses the origin `c = U(s0)(log(rho1 |v0|) - 1) / v0^3`, the one for which the
    /// Chazy offset satisfies `<A, C> = 0`.
    pub fn new(mp: &ManifoldParams, sys: &MassSystem) -> Result<Self> {
        Self::from_parts(mp.eq.v0, mp.rho1, sys.potential(&mp.eq.s0)?)
    }

    pub fn from_parts(v0: f64, rho1: f64, potential: f64) -> Result<Self> {
        if rho1 <= 0.0 {
            return Err(Error::RhoZero);
        }
        if v0 == 0.0 || !v0.is_finite() {
            return Err(Error::InvalidArgument(format!("v0 must be nonzero, got {v0}")));
        }
        let c = potential * ((rho1 * v0.abs()).ln() - 1.0) / v0.powi(3);
        Ok(Self { v0, rho1, potential, c })
    }

    /// Replaces the time origin, e.g. `0` for the perihelion clock of a Kepler orbit.
    pub fn with_origin(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn t_of_tau(&self, tau: f64) -> f64 {
        let v2 = self.v0 * self.v0;
        (self.v0 * tau).exp() / (self.rho1 * self.v0) - self.potential / v2 * tau + self.c
    }

    /// Inverse through `e^{v0 tau} = rho1 v0 t + (rho1 U / v0^2)(log|t| + log(rho1 |v0|)) - rho1 v0 c`.
    pub fn tau_of_t(&self, t: f64) -> Result<f64> {
        if !(t * self.v0 > 0.0) {
            return Err(Error::InvalidArgument(format!("t = {t} is on the wrong side for v0 = {}", self.v0)));
        }
        let k = self.rho1 * self.potential / (self.v0 * self.v0);
        let e = self.rho1 * self.v0 * t + k * (t.abs().ln() + (self.rho1 * self.v0.abs()).ln())
            - self.rho1 * self.v0 * self.c;
        if !(e > 0.0) {
            return Err(Error::NotAsymptotic(format!("t = {t} is too close to the interaction region")));
        }
        Ok(e.ln() / self.v0)
    }
}

/// One-shot form of [`TauTRelation`] with the default time origin.
pub fn tau_t_relation(mp: &ManifoldParams, x: f64, conversion: TimeConversion, sys: &MassSystem) -> Result<f64> {
    let rel = TauTRelation::new(mp, sys)?;
    match conversion {
        TimeConversion::TauToT => Ok(rel.t_of_tau(x)),
        TimeConversion::TToTau => rel.tau_of_t(x),
    }
}

/// Basis of the Cartesian least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    /// `t, log|t|, 1`.
    #[default]
    Leading,
    /// `t, log|t|, 1, log|t| / t, 1 / t`: also absorbs the first decaying terms, for
    /// windows at moderate `|t|`.
    Extended,
}

impl FitModel {
    fn columns(self) -> usize {
        match self {
            FitModel::Leading => 3,
            FitModel::Extended => 5,
        }
    }

    fn row(self, t: f64) -> [f64; 5] {
        let l = t.abs().ln();
        [t, l, 1.0, l / t, 1.0 / t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub model: FitModel,
    pub cond_max: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { model: FitModel::Leading, cond_max: 1e8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChazyFit {
    pub params: ChazyParameters,
    /// Condition number of the column-scaled design.
    pub cond: f64,
    /// `|t|` range of the samples used.
    pub window: (f64, f64),
    pub rms_residual: f64,
    pub samples_used: usize,
}

/// Initial window `|t| >= FIT_DECADES max|t|`.
const FIT_DECADES: f64 = 1e-2;

/// Least-squares fit of `q(t) ~ A t + B log|t| + C` with the default options.
pub fn fit_chazy_cartesian(samples: &[(f64, Configuration)], sys: &MassSystem) -> Result<ChazyParameters> {
    fit_chazy_cartesian_with(samples, sys, &FitOptions::default()).map(|f| f.params)
}

/// Least-squares Chazy fit over a late-time window.
///
/// The window starts as the last two decades of `|t|` and widens one decade at a time
/// until the column-scaled design has condition number below `opts.cond_max`.
pub fn fit_chazy_cartesian_with(samples: &[(f64, Configuration)], sys: &MassSystem, opts: &FitOptions) -> Result<ChazyFit> {
    let k = opts.model.columns();
    let needed = 2 * k;
    if samples.len() < needed {
        return Err(Error::InsufficientSamples { found: samples.len(), needed });
    }
    let sign = samples[0].0.signum();
    if samples.iter().any(|(t, _)| t.signum() != sign || *t == 0.0 || !t.is_finite()) {
        return Err(Error::InvalidArgument("fit samples need nonzero times of one sign".into()));
    }
    for (_, q) in samples {
        sys.check_len(q)?;
    }
    let tmax = samples.iter().map(|(t, _)| t.abs()).fold(0.0, f64::max);
    let mut last_err = Error::IllConditioned { cond: f64::INFINITY };
    let mut f = FIT_DECADES;
    loop {
        let window: Vec<&(f64, Configuration)> = samples.iter().filter(|(t, _)| t.abs() >= f * tmax).collect();
        if window.len() >= needed {
            let a = DMatrix::from_fn(window.len(), k, |i, j| opts.model.row(window[i].0)[j]);
            let b = DMatrix::from_fn(window.len(), sys.dim(), |i, j| window[i].1[j]);
            match lstsq(&a, &b, opts.cond_max) {
                Ok(fit) => {
                    let row = |i: usize| fit.coef.row(i).transpose();
                    let params =
                        ChazyParameters { a: row(0), b: row(1), c: row(2), direction: if sign > 0.0 { Direction::Future } else { Direction::Past } };
                    let tmin = window.iter().map(|(t, _)| t.abs()).fold(f64::INFINITY, f64::min);
                    return Ok(ChazyFit {
                        params: params.normalized(sys),
                        cond: fit.cond,
                        window: (tmin, tmax),
                        rms_residual: fit.rms_residual,
                        samples_used: window.len(),
                    });
                }
                Err(e) => last_err = e,
            }
        }
        if window.len() == samples.len() {
            return Err(last_err);
        }
        f *= 0.1;
    }
}

/// Cartesian samples `(t, q)` of a trajectory with `rho > 0` throughout.
pub fn cartesian_samples(traj: &Trajectory) -> Result<Vec<(f64, Configuration)>> {
    traj.samples
        .iter()
        .map(|s| {
            let t = s.t.ok_or(Error::AtInfinity)?;
            if s.state.rho <= 0.0 {
                return Err(Error::AtInfinity);
            }
            Ok((t, &s.state.s / s.state.rho))
        })
        .collect()
}

/// Parameters of the time-reversed orbit: `(s0, v0, s1, rho1) -> (s0, -v0, s1, rho1)`.
pub fn time_reverse_params(mp: &ManifoldParams) -> ManifoldParams {
    ManifoldParams {
        eq: EquilibriumPoint { s0: mp.eq.s0.clone(), v0: -mp.eq.v0 },
        s1: mp.s1.clone(),
        rho1: mp.rho1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kepler::{kepler_scattering, KeplerOrbit};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SQ3: f64 = 1.732_050_807_568_877_2;

    fn reference() -> KeplerOrbit {
        KeplerOrbit::new(2.0, 2.0, 2.0, 2.0).unwrap()
    }

    fn sys3() -> MassSystem {
        MassSystem::new(vec![1.0, 2.0, 1.5], 2).unwrap()
    }

    fn random_params(seed: u64, v0: f64, rho1: f64) -> (MassSystem, ManifoldParams) {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = sys.random_shape(&mut rng, 0.2);
        let s1 = sys.random_tangent(&mut rng, &s0) * 0.3;
        let eq = EquilibriumPoint::new(s0, v0, &sys).unwrap();
        let mp = ManifoldParams::new(eq, s1, rho1, &sys).unwrap();
        (sys, mp)
    }

    fn rel(v: &Configuration) -> [f64; 2] {
        [v[2] - v[0], v[3] - v[1]]
    }

    #[test]
    fn kepler_future_parameters() {
        let o = reference();
        let sys = o.system();
        let ch = chazy_from_manifold(&o.future_params(), &sys).unwrap();
        assert_eq!(ch.direction, Direction::Future);
        let (a, c) = (rel(&ch.a), rel(&ch.c));
        assert!((a[0] + 1.0).abs() < 1e-14 && (a[1] - SQ3).abs() < 1e-14);
        assert!((c[0] - 1.5).abs() < 1e-14 && (c[1] - SQ3 / 2.0).abs() < 1e-14);
        assert!(ch.b_relation_defect(&sys).unwrap() < 1e-14);
    }

    #[test]
    fn kepler_past_parameters_flip_b() {
        let o = reference();
        let sys = o.system();
        let ch = chazy_from_manifold(&o.past_params(), &sys).unwrap();
        let sc = kepler_scattering(&o);
        assert_eq!(ch.direction, Direction::Past);
        assert!((&ch.a - &sc.a).amax() < 1e-14 && (&ch.c - &sc.c).amax() < 1e-14);
        assert!(ch.b_relation_defect(&sys).unwrap() < 1e-14);
        let wrong = sys.grad_potential(&ch.a).unwrap() * -1.0;
        assert!((&ch.b - wrong).amax() > 0.1);
    }

    #[test]
    fn two_body_offset_is_s1_over_rho1() {
        let o = KeplerOrbit::new(1.0, 3.0, 0.7, 1.6).unwrap();
        let sys = o.system();
        for mp in [o.past_params(), o.future_params()] {
            let ch = chazy_from_manifold(&mp, &sys).unwrap();
            assert!((&ch.c - &mp.s1 / mp.rho1).amax() < 1e-13);
        }
    }

    #[test]
    fn rho1_zero_has_no_offset() {
        let (sys, mut mp) = random_params(3, 1.0, 0.1);
        mp.rho1 = 0.0;
        assert_eq!(chazy_from_manifold(&mp, &sys), Err(Error::RhoZero));
    }

    proptest! {
        #[test]
        fn chazy_invariants_on_random_inputs(seed in 0u64..10_000, v0 in prop_oneof![-3.0..-0.2f64, 0.2..3.0f64], rho1 in 1e-3..10.0f64) {
            let (sys, mp) = random_params(seed, v0, rho1);
            let ch = chazy_from_manifold(&mp, &sys).unwrap();
            prop_assert!((sys.dot(&ch.a, &ch.a) - v0 * v0).abs() < 1e-12 * v0 * v0);
            prop_assert!(ch.b_relation_defect(&sys).unwrap() < 1e-12);
            prop_assert!(sys.dot(&ch.a, &ch.c).abs() < 1e-10 * (1.0 + sys.norm(&ch.c)));
            prop_assert_eq!(ch.direction, Direction::of_speed(v0));
        }

        #[test]
        fn time_reversal_is_an_involution(seed in 0u64..10_000, v0 in 0.2..3.0f64, rho1 in 1e-3..10.0f64) {
            let (sys, mp) = random_params(seed, v0, rho1);
            let back = time_reverse_params(&time_reverse_params(&mp));
            prop_assert_eq!(&back, &mp);
            let fwd = chazy_from_manifold(&mp, &sys).unwrap();
            let rev = chazy_from_manifold(&time_reverse_params(&mp), &sys).unwrap();
            prop_assert!((&rev.a + &fwd.a).amax() < 1e-14);
            prop_assert!((&rev.c - &fwd.c).amax() < 1e-12);
            prop_assert_eq!(rev, fwd.time_reversed());
        }
    }

    #[test]
    fn series_limit_is_the_equilibrium() {
        let (sys, mp) = random_params(5, 1.3, 0.4);
        let p = series_predict(&mp, 40.0, SeriesOrder::Second, &sys).unwrap();
        assert!(p.rho < 1e-20 && (p.v - 1.3).abs() < 1e-20);
        assert!((&p.s - &mp.eq.s0).amax() < 1e-20);
    }

    #[test]
    fn series_constant_term_of_r() {
        let (sys, mp) = random_params(6, -1.1, 0.4);
        let u0 = sys.potential(&mp.eq.s0).unwrap();
        let tau = -12.0;
        let p = series_predict(&mp, tau, SeriesOrder::First, &sys).unwrap();
        let leading = (mp.eq.v0 * tau).exp() / mp.rho1;
        let expect = -u0 / (mp.eq.v0 * mp.eq.v0);
        assert!((p.r.unwrap() - leading - expect).abs() < 1e-9 * leading);
    }

    #[test]
    fn series_rejects_the_interaction_region() {
        let (sys, mp) = random_params(7, 1.0, 5.0);
        assert!(matches!(series_predict(&mp, 0.0, SeriesOrder::First, &sys), Err(Error::NotAsymptotic(_))));
        let mut at_infinity = mp.clone();
        at_infinity.rho1 = 0.0;
        let p = series_predict(&at_infinity, 4.0, SeriesOrder::First, &sys).unwrap();
        assert_eq!((p.rho, p.r, p.q), (0.0, None, None));
    }

    #[test]
    fn series_orders_against_kepler_closed_form() {
        // Two-body: tgradU(s0) = 0, so the residual in rho is a pure power of u.
        // e = 2 is special: its u^3 coefficient vanishes.
        let o = KeplerOrbit::new(1.0, 3.0, 0.7, 1.6).unwrap();
        let sys = o.system();
        let mp = o.future_params();
        let resid = |tau: f64, order| {
            let p = series_predict(&mp, tau, order, &sys).unwrap();
            (p.rho - 1.0 / o.radius(tau)).abs()
        };
        for (order, slope) in [(SeriesOrder::First, 2.0), (SeriesOrder::Second, 3.0)] {
            let (t1, t2) = (4.0, 4.0 + 10f64.ln() / o.omega);
            let measured = (resid(t1, order) / resid(t2, order)).log10();
            assert!((measured - slope).abs() < 0.05, "{order:?}: {measured}");
        }
    }

    #[test]
    fn series_position_matches_kepler() {
        let o = reference();
        let sys = o.system();
        let mp = o.future_params();
        for tau in [6.0, 8.0] {
            let p = series_predict(&mp, tau, SeriesOrder::First, &sys).unwrap();
            let (q, _) = crate::kepler::kepler_state(&o, tau);
            let err = sys.norm(&(p.q.unwrap() - q));
            assert!(err < 50.0 * (-o.omega * tau).exp(), "tau {tau}: {err:e}");
        }
    }

    #[test]
    fn free_particle_time_is_exact() {
        let rel = TauTRelation::from_parts(1.5, 0.3, 0.0).unwrap().with_origin(2.0);
        for tau in [0.0, 1.0, 7.0] {
            let t = rel.t_of_tau(tau);
            assert!((t - ((1.5 * tau).exp() / 0.45 + 2.0)).abs() < 1e-12 * t.abs());
            assert!((rel.tau_of_t(t).unwrap() - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn kepler_time_in_the_perihelion_clock() {
        let o = reference();
        let sys = o.system();
        let rel = TauTRelation::new(&o.future_params(), &sys).unwrap().with_origin(0.0);
        for tau in [2.5, 4.0, 6.0] {
            let exact = o.time(tau);
            // Truncation: (a sqrt(mu) e / 2w) e^{-w tau}.
            let bound = 0.5 * o.a * o.mu.sqrt() * o.e / o.omega * (-o.omega * tau).exp() * 1.01;
            assert!((rel.t_of_tau(tau) - exact).abs() < bound + 1e-12 * exact);
        }
        let past = TauTRelation::new(&o.past_params(), &sys).unwrap().with_origin(0.0);
        assert!((past.t_of_tau(-5.0) - o.time(-5.0)).abs() < 1e-4);
    }

    #[test]
    fn inverse_time_map_error_shrinks() {
        let (sys, mp) = random_params(8, 1.2, 0.7);
        let rel = TauTRelation::new(&mp, &sys).unwrap();
        let errs: Vec<f64> = [4.0, 8.0, 16.0].iter().map(|&tau| (rel.tau_of_t(rel.t_of_tau(tau)).unwrap() - tau).abs()).collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1] && errs[2] < 1e-6, "{errs:?}");
        assert!(rel.tau_of_t(-1.0).is_err());
        let past = TauTRelation::new(&time_reverse_params(&mp), &sys).unwrap();
        assert!((past.tau_of_t(past.t_of_tau(-16.0)).unwrap() + 16.0).abs() < 1e-6);
    }

    #[test]
    fn default_origin_gives_orthogonal_offset() {
        // Substituting the leading series into q(t) with the default origin leaves no A component.
        let (sys, mp) = random_params(9, 1.4, 0.5);
        let rel = TauTRelation::new(&mp, &sys).unwrap();
        let ch = chazy_from_manifold(&mp, &sys).unwrap();
        let tau = 14.0;
        let t = rel.t_of_tau(tau);
        let q = series_predict(&mp, tau, SeriesOrder::First, &sys).unwrap().q.unwrap();
        let raw_c = q - &ch.a * t - &ch.b * t.ln();
        let along = sys.dot(&ch.a, &raw_c) / sys.dot(&ch.a, &ch.a);
        assert!(along.abs() < 1e-6, "{along:e}");
        assert!((raw_c - &ch.c).amax() < 1e-6);
    }

    #[test]
    fn synthetic_fit_is_exact() {
        let sys = sys3();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s0 = sys.random_shape(&mut rng, 0.2);
        let a = &s0 * 1.3;
        let b = sys.grad_potential(&a).unwrap() * -1.0;
        let c = sys.random_tangent(&mut rng, &s0) * 0.7;
        for (sign, model) in [(1.0, FitModel::Leading), (-1.0, FitModel::Extended)] {
            let samples: Vec<(f64, DVector<f64>)> = (0..60)
                .map(|k| {
                    let t = sign * 10f64.powf(2.0 + k as f64 / 20.0);
                    (t, &a * t + &b * t.abs().ln() + &c)
                })
                .collect();
            let fit = fit_chazy_cartesian_with(&samples, &sys, &FitOptions { model, cond_max: 1e8 }).unwrap();
            assert!(fit.cond < 1e8);
            let p = fit.params;
            assert!((&p.a - &a).amax() < 1e-10);
            assert!((&p.b - &b).amax() < 1e-10 * (1.0 + b.amax()) * 10.0);
            assert!((&p.c - &c).amax() < 1e-10 * 10.0, "{:e}", (&p.c - &c).amax());
            assert_eq!(p.direction, if sign > 0.0 { Direction::Future } else { Direction::Past });
        }
    }

    #[test]
    fn fit_errors() {
        let sys = sys3();
        let q = sys.zeros();
        let few: Vec<_> = (1..4).map(|k| (k as f64, q.clone())).collect();
        assert!(matches!(fit_chazy_cartesian(&few, &sys), Err(Error::InsufficientSamples { .. })));
        let mixed: Vec<_> = (-6..6).map(|k| (k as f64 + 0.5, q.clone())).collect();
        assert!(matches!(fit_chazy_cartesian(&mixed, &sys), Err(Error::InvalidArgument(_))));
        let short: Vec<_> = (0..12).map(|k| (1e6 + k as f64 * 1e-3, q.clone())).collect();
        assert!(matches!(fit_chazy_cartesian(&short, &sys), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn series_order_bounds() {
        assert_eq!(SeriesOrder::new(2).unwrap().get(), 2);
        assert!(SeriesOrder::new(3).is_err());
    }
}
