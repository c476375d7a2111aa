//! Masses, the mass metric, and the Newtonian potential with its derivatives.
//!
//! Configurations are flat body-major vectors of length `n * d`. Gradients are
//! taken with respect to the mass inner product, so `grad_potential` returns
//! `M^{-1}` times the Euclidean gradient.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Positions, velocities and every other per-body vector.
pub type Configuration = DVector<f64>;

/// Default minimum pairwise distance below which a configuration counts as a collision.
pub const DEFAULT_COLLISION_DISTANCE: f64 = 1e-8;

const SPHERE_TOL: f64 = 1e-8;
const COM_TOL: f64 = 1e-9;

/// Positive energy level of a scattering computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLevel(f64);

impl EnergyLevel {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h.is_finite() {
            Ok(Self(h))
        } else {
            Err(Error::InvalidArgument(format!("energy must be positive, got {h}")))
        }
    }

    pub fn h(self) -> f64 {
        self.0
    }

    /// Asymptotic speed `sqrt(2h)`.
    pub fn speed(self) -> f64 {
        (2.0 * self.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassSystem {
    masses: Vec<f64>,
    d: usize,
    collision_distance: f64,
}

impl MassSystem {
    pub fn new(masses: Vec<f64>, d: usize) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidMassSystem(format!(
                "need at least two bodies, got {}",
                masses.len()
            )));
        }
        if d < 2 {
            return Err(Error::InvalidMassSystem(format!("spatial dimension must be at least 2, got {d}")));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidMassSystem(format!("masses must be positive, got {m}")));
        }
        Ok(Self { masses, d, collision_distance: DEFAULT_COLLISION_DISTANCE })
    }

    /// Replaces the collision threshold.
    pub fn with_collision_distance(mut self, delta: f64) -> Self {
        self.collision_distance = delta;
        self
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Length of a flat configuration vector, `n * d`.
    pub fn dim(&self) -> usize {
        self.n() * self.d
    }

    /// Dimension `D = d (n - 1)` of the center-of-mass subspace.
    pub fn reduced_dim(&self) -> usize {
        self.d * (self.n() - 1)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn collision_distance(&self) -> f64 {
        self.collision_distance
    }

    pub fn zeros(&self) -> Configuration {
        DVector::zeros(self.dim())
    }

    /// Validates length and zero center of mass.
    pub fn configuration(&self, coords: Vec<f64>) -> Result<Configuration> {
        let v = DVector::from_vec(coords);
        self.check_len(&v)?;
        let residual = self.center_of_mass(&v).norm();
        let scale = v.amax().max(1.0);
        if residual > COM_TOL * scale {
            return Err(Error::CenterOfMass { residual });
        }
        Ok(v)
    }

    pub fn check_len(&self, v: &Configuration) -> Result<()> {
        if v.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim(), found: v.len() })
        }
    }

    /// Block `i` (the `d` coordinates of body `i`).
    pub fn block<'a>(&self, v: &'a Configuration, i: usize) -> &'a [f64] {
        &v.as_slice()[i * self.d..(i + 1) * self.d]
    }

    /// Mass-weighted mean of the blocks.
    pub fn center_of_mass(&self, v: &Configuration) -> DVector<f64> {
        let mut c = DVector::zeros(self.d);
        for (i, m) in self.masses.iter().enumerate() {
            for k in 0..self.d {
                c[k] += m * v[i * self.d + k];
            }
        }
        c / self.total_mass()
    }

    /// Removes the mass-weighted mean, landing in the center-of-mass subspace.
    pub fn project_com(&self, v: &Configuration) -> Configuration {
        let c = self.center_of_mass(v);
        let mut out = v.clone();
        for i in 0..self.n() {
            for k in 0..self.d {
                out[i * self.d + k] -= c[k];
            }
        }
        out
    }

    /// Mass inner product with a length check.
    pub fn mass_inner(&self, v: &Configuration, w: &Configuration) -> Result<f64> {
        self.check_len(v)?;
        self.check_len(w)?;
        Ok(self.dot(v, w))
    }

    /// Mass inner product `sum_i m_i <v_i, w_i>`; lengths are assumed to match.
    pub fn dot(&self, v: &Configuration, w: &Configuration) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        debug_assert_eq!(w.len(), self.dim());
        let d = self.d;
        self.masses
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let lo = i * d;
                m * (lo..lo + d).map(|k| v[k] * w[k]).sum::<f64>()
            })
            .sum()
    }

    pub fn norm(&self, v: &Configuration) -> f64 {
        self.dot(v, v).sqrt()
    }

    pub fn normalize(&self, v: &Configuration) -> Result<Configuration> {
        let r = self.norm(v);
        if r == 0.0 || !r.is_finite() {
            return Err(Error::Degenerate("cannot normalize a zero vector".into()));
        }
        Ok(v / r)
    }

    /// Smallest pairwise Euclidean distance and the pair attaining it.
    pub fn min_pair_distance(&self, q: &Configuration) -> (f64, usize, usize) {
        let (n, d) = (self.n(), self.d);
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..n {
            for j in i + 1..n {
                let r2: f64 = (0..d).map(|k| (q[j * d + k] - q[i * d + k]).powi(2)).sum();
                let r = r2.sqrt();
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        best
    }

    pub fn check_collision_free(&self, q: &Configuration) -> Result<()> {
        let (r, i, j) = self.min_pair_distance(q);
        if r <= self.collision_distance || !r.is_finite() {
            Err(Error::Collision { i, j, distance: r })
        } else {
            Ok(())
        }
    }

    pub fn check_unit(&self, s: &Configuration) -> Result<()> {
        let norm = self.norm(s);
        if (norm - 1.0).abs() > SPHERE_TOL {
            Err(Error::NotOnSphere { norm })
        } else {
            Ok(())
        }
    }

    /// `U(q) = sum_{i<j} m_i m_j / |q_i - q_j|`.
    pub fn potential(&self, q: &Configuration) -> Result<f64> {
        self.check_len(q)?;
        let n = self.n();
        let mut u = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r = self.pair_distance(q, i, j)?;
                u += self.masses[i] * self.masses[j] / r;
            }
        }
        Ok(u)
    }

    /// Gradient of `U` in the mass metric: block `i` is `sum_{j != i} m_j (q_j - q_i) / r_ij^3`.
    pub fn grad_potential(&self, q: &Configuration) -> Result<Configuration> {
        Ok(self.potential_and_grad(q)?.1)
    }

    /// `U(q)` and its mass-metric gradient from one pass over the pairs.
    pub fn potential_and_grad(&self, q: &Configuration) -> Result<(f64, Configuration)> {
        self.check_len(q)?;
        let (n, d) = (self.n(), self.d);
        let mut u = 0.0;
        let mut g = DVector::zeros(n * d);
        for i in 0..n {
            for j in i + 1..n {
                let r = self.pair_distance(q, i, j)?;
                let (mi, mj) = (self.masses[i], self.masses[j]);
                u += mi * mj / r;
                let r3 = r * r * r;
                for k in 0..d {
                    let diff = (q[j * d + k] - q[i * d + k]) / r3;
                    g[i * d + k] += mj * diff;
                    g[j * d + k] -= mi * diff;
                }
            }
        }
        Ok((u, g))
    }

    /// Tangential gradient `grad U(s) + U(s) s` on the unit sphere.
    pub fn tangential_grad(&self, s: &Configuration) -> Result<Configuration> {
        self.check_len(s)?;
        self.check_unit(s)?;
        let (u, g) = self.potential_and_grad(s)?;
        Ok(g + s * u)
    }

    /// `1/2 |xi|^2 - U(q)`.
    pub fn energy(&self, q: &Configuration, xi: &Configuration) -> Result<f64> {
        self.check_len(xi)?;
        Ok(0.5 * self.dot(xi, xi) - self.potential(q)?)
    }

    /// Derivative of the mass-metric gradient, `D grad U(q)`, as an `nd x nd` matrix.
    ///
    /// Off-diagonal blocks are `(m_j / r^3)(I - 3 u u^T)`; diagonal blocks make each
    /// block row sum to zero.
    pub fn hessian_blocks(&self, q: &Configuration) -> Result<DMatrix<f64>> {
        self.check_len(q)?;
        let (n, d) = (self.n(), self.d);
        let mut h = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = self.pair_distance(q, i, j)?;
                let coef = self.masses[j] / (r * r * r);
                for a in 0..d {
                    let ua = (q[i * d + a] - q[j * d + a]) / r;
                    for b in 0..d {
                        let ub = (q[i * d + b] - q[j * d + b]) / r;
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let val = coef * (delta - 3.0 * ua * ub);
                        h[(i * d + a, j * d + b)] = val;
                        h[(i * d + a, i * d + b)] -= val;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Mass matrix `M` as an `nd x nd` diagonal matrix.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let diag = DVector::from_iterator(
            self.dim(),
            self.masses.iter().flat_map(|m| std::iter::repeat(*m).take(self.d)),
        );
        DMatrix::from_diagonal(&diag)
    }

    /// A random collision-free unit-norm configuration with zero center of mass.
    ///
    /// Bodies are drawn in a box, centred, rejected if any pair is closer than
    /// `min_sep` times the largest pair distance, and normalized.
    pub fn random_shape<R: Rng + ?Sized>(&self, rng: &mut R, min_sep: f64) -> Configuration {
        loop {
            let raw = DVector::from_fn(self.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let q = self.project_com(&raw);
            let (rmin, _, _) = self.min_pair_distance(&q);
            let rmax = self.max_pair_distance(&q);
            if rmin > min_sep * rmax {
                return &q / self.norm(&q);
            }
        }
    }

    /// A random unit vector in the center-of-mass subspace, mass-orthogonal to `s`.
    pub fn random_tangent<R: Rng + ?Sized>(&self, rng: &mut R, s: &Configuration) -> Configuration {
        loop {
            let raw = DVector::from_fn(self.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let mut t = self.project_com(&raw);
            t -= s * self.dot(s, &t);
            let r = self.norm(&t);
            if r > 1e-3 {
                return t / r;
            }
        }
    }

    /// Bodies at the vertices of a regular polygon in the first coordinate plane,
    /// centred at the center of mass and normalized. Equal masses give a central configuration.
    pub fn polygon_shape(&self) -> Configuration {
        let (n, d) = (self.n(), self.d);
        let mut q = DVector::zeros(n * d);
        for i in 0..n {
            let phi = std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * i as f64 / n as f64;
            q[i * d] = phi.cos();
            q[i * d + 1] = phi.sin();
        }
        let q = self.project_com(&q);
        &q / self.norm(&q)
    }

    fn max_pair_distance(&self, q: &Configuration) -> f64 {
        let (n, d) = (self.n(), self.d);
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r2: f64 = (0..d).map(|k| (q[j * d + k] - q[i * d + k]).powi(2)).sum();
                best = best.max(r2.sqrt());
            }
        }
        best
    }

    fn pair_distance(&self, q: &Configuration, i: usize, j: usize) -> Result<f64> {
        let d = self.d;
        let r2: f64 = (0..d).map(|k| (q[j * d + k] - q[i * d + k]).powi(2)).sum();
        let r = r2.sqrt();
        if r <= self.collision_distance || !r.is_finite() {
            return Err(Error::Collision { i: i.min(j), j: i.max(j), distance: r });
        }
        Ok(r)
    }
}
