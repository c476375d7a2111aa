//! Closed-form hyperbolic two-body orbits, the oracle for the numerical pipelines.
//!
//! The relative vector `q = q2 - q1` is parametrized by the regularized time
//! `tau` with `dt = r dtau`, `r = |q|_M = sqrt(mu) |q|`:
//!
//! ```text
//! q(tau) = (a e - a cosh(w tau), a sqrt(e^2 - 1) sinh(w tau))
//! r(tau) = a sqrt(mu) (e cosh(w tau) - 1)
//! t(tau) = (a sqrt(mu) / w) (e sinh(w tau) - w tau)
//! ```
//!
//! with perihelion on the positive x-axis at `tau = 0`.

use nalgebra::DVector;

use crate::blowup::{EquilibriumPoint, ManifoldParams};
use crate::error::{Error, Result};
use crate::nbody::{Configuration, MassSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerOrbit {
    pub m1: f64,
    pub m2: f64,
    /// Semimajor axis, `m1 m2 / (2h)`.
    pub a: f64,
    pub e: f64,
    pub h: f64,
    /// Reduced mass `m1 m2 / (m1 + m2)`.
    pub mu: f64,
    /// `sqrt(2h)`.
    pub omega: f64,
}

/// Asymptotic data of a Kepler orbit, embedded in the two-body configuration space.
///
/// Unprimed quantities belong to the past end, primed ones to the future end.
#[derive(Debug, Clone, PartialEq)]
pub struct KeplerScattering {
    pub a: Configuration,
    pub c: Configuration,
    pub a_prime: Configuration,
    pub c_prime: Configuration,
    pub rho1: f64,
    pub s0: Configuration,
    pub s0_prime: Configuration,
    pub s1: Configuration,
    pub s1_prime: Configuration,
}

impl KeplerOrbit {
    pub fn new(m1: f64, m2: f64, h: f64, e: f64) -> Result<Self> {
        if !(m1 > 0.0 && m2 > 0.0 && m1.is_finite() && m2.is_finite()) {
            return Err(Error::InvalidMassSystem(format!("masses must be positive, got {m1}, {m2}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("hyperbolic orbits need h > 0, got {h}")));
        }
        if !(e > 1.0 && e.is_finite()) {
            return Err(Error::InvalidArgument(format!("hyperbolic orbits need e > 1, got {e}")));
        }
        Ok(Self { m1, m2, a: m1 * m2 / (2.0 * h), e, h, mu: m1 * m2 / (m1 + m2), omega: (2.0 * h).sqrt() })
    }

    /// Planar two-body system carrying this orbit.
    pub fn system(&self) -> MassSystem {
        MassSystem::new(vec![self.m1, self.m2], 2).expect("masses validated at construction")
    }

    fn b(&self) -> f64 {
        self.a * (self.e * self.e - 1.0).sqrt()
    }

    /// Relative position and velocity `q2 - q1`, `dq/dt`.
    pub fn relative(&self, tau: f64) -> ([f64; 2], [f64; 2]) {
        let x = self.omega * tau;
        let (ch, sh) = (x.cosh(), x.sinh());
        let pos = [self.a * self.e - self.a * ch, self.b() * sh];
        let r = self.radius(tau);
        let vel = [-self.a * self.omega * sh / r, self.b() * self.omega * ch / r];
        (pos, vel)
    }

    pub fn radius(&self, tau: f64) -> f64 {
        self.a * self.mu.sqrt() * (self.e * (self.omega * tau).cosh() - 1.0)
    }

    /// Newtonian time, zero at perihelion.
    pub fn time(&self, tau: f64) -> f64 {
        let x = self.omega * tau;
        self.a * self.mu.sqrt() / self.omega * (self.e * x.sinh() - x)
    }

    /// Embeds a relative vector with the center of mass pinned at the origin.
    pub fn embed(&self, rel: [f64; 2]) -> Configuration {
        let m = self.m1 + self.m2;
        let (c1, c2) = (-self.m2 / m, self.m1 / m);
        DVector::from_vec(vec![c1 * rel[0], c1 * rel[1], c2 * rel[0], c2 * rel[1]])
    }

    /// Past manifold parameters, in the perihelion clock.
    pub fn past_params(&self) -> ManifoldParams {
        let sc = kepler_scattering(self);
        let sys = self.system();
        let eq = EquilibriumPoint::new(sc.s0, -self.omega, &sys).expect("closed-form equilibrium");
        ManifoldParams::new(eq, sc.s1, sc.rho1, &sys).expect("closed-form parameters")
    }

    /// Future manifold parameters, in the perihelion clock.
    pub fn future_params(&self) -> ManifoldParams {
        let sc = kepler_scattering(self);
        let sys = self.system();
        let eq = EquilibriumPoint::new(sc.s0_prime, self.omega, &sys).expect("closed-form equilibrium");
        ManifoldParams::new(eq, sc.s1_prime, sc.rho1, &sys).expect("closed-form parameters")
    }
}

/// Cartesian position and velocity at `tau`.
pub fn kepler_state(orb: &KeplerOrbit, tau: f64) -> (Configuration, Configuration) {
    let (pos, vel) = orb.relative(tau);
    (orb.embed(pos), orb.embed(vel))
}

/// Closed-form asymptotic velocities, offsets and manifold parameters at both ends.
pub fn kepler_scattering(orb: &KeplerOrbit) -> KeplerScattering {
    let (e, a, w) = (orb.e, orb.a, orb.omega);
    let sm = orb.mu.sqrt();
    let k = (e * e - 1.0).sqrt();
    let s0 = [-1.0 / (e * sm), -k / (e * sm)];
    let s0p = [-1.0 / (e * sm), k / (e * sm)];
    let s1f = 2.0 / (e * e * sm);
    KeplerScattering {
        a: orb.embed([w / (e * sm), w * k / (e * sm)]),
        c: orb.embed([a / e * (e * e - 1.0), -a / e * k]),
        a_prime: orb.embed([-w / (e * sm), w * k / (e * sm)]),
        c_prime: orb.embed([a / e * (e * e - 1.0), a / e * k]),
        rho1: 2.0 / (a * e * sm),
        s0: orb.embed(s0),
        s0_prime: orb.embed(s0p),
        s1: orb.embed([s1f * (e * e - 1.0), -s1f * k]),
        s1_prime: orb.embed([s1f * (e * e - 1.0), s1f * k]),
    }
}

/// Angle between the incoming and outgoing asymptotic velocities.
pub fn scattering_angle(orb: &KeplerOrbit) -> f64 {
    let sc = kepler_scattering(orb);
    let sys = orb.system();
    (sys.dot(&sc.a, &sc.a_prime) / (2.0 * orb.h)).clamp(-1.0, 1.0).acos()
}
