//! Blown-up coordinates `(rho, s, v, w)` near infinity and the linear apparatus at
//! the equilibria of the infinity manifold.
//!
//! With `r = |q|`, `s = q / r`, `v = <s, xi>`, `w = xi - v s` and `rho = 1 / r`, the
//! rescaled time `dt = r dtau` turns Newton's equations into
//!
//! ```text
//! rho' = -v rho
//! s'   = w
//! v'   = |w|^2 - rho U(s)
//! w'   = rho gradU~(s) - v w - |w|^2 s
//! ```
//!
//! which extends smoothly to `rho = 0`. Flat state vectors use the order
//! `[rho, s (nd), v, w (nd)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nbody::{Configuration, MassSystem};

const INVARIANT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupState {
    pub rho: f64,
    pub s: Configuration,
    pub v: f64,
    pub w: Configuration,
}

/// A tangent vector `(d rho, d s, d v, d w)` to the blown-up phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub rho: f64,
    pub s: Configuration,
    pub v: f64,
    pub w: Configuration,
}

/// Restpoint `(0, s0, v0, 0)` on the infinity manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub s0: Configuration,
    pub v0: f64,
}

/// Equilibrium plus linearizing coordinates `(s1, rho1)` on its stable or unstable manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldParams {
    pub eq: EquilibriumPoint,
    pub s1: Configuration,
    pub rho1: f64,
}

/// Length of the flat state vector for `sys`.
pub fn state_len(sys: &MassSystem) -> usize {
    2 * sys.dim() + 2
}

fn pack(rho: f64, s: &Configuration, v: f64, w: &Configuration) -> DVector<f64> {
    let nd = s.len();
    let mut y = DVector::zeros(2 * nd + 2);
    y[0] = rho;
    y.rows_mut(1, nd).copy_from(s);
    y[nd + 1] = v;
    y.rows_mut(nd + 2, nd).copy_from(w);
    y
}

fn unpack(y: &[f64], nd: usize) -> (f64, Configuration, f64, Configuration) {
    (
        y[0],
        DVector::from_column_slice(&y[1..1 + nd]),
        y[nd + 1],
        DVector::from_column_slice(&y[nd + 2..2 * nd + 2]),
    )
}

impl BlowupState {
    pub fn to_vector(&self) -> DVector<f64> {
        pack(self.rho, &self.s, self.v, &self.w)
    }

    pub fn from_slice(y: &[f64], sys: &MassSystem) -> Self {
        let (rho, s, v, w) = unpack(y, sys.dim());
        Self { rho, s, v, w }
    }

    /// `1/2 v^2 + 1/2 |w|^2 - rho U(s)`, the energy written in blown-up variables.
    pub fn energy(&self, sys: &MassSystem) -> Result<f64> {
        let u = if self.rho == 0.0 { 0.0 } else { self.rho * sys.potential(&self.s)? };
        Ok(0.5 * self.v * self.v + 0.5 * sys.dot(&self.w, &self.w) - u)
    }

    /// Asymptotic-velocity proxy `v s + w`, the Cartesian velocity.
    pub fn velocity(&self) -> Configuration {
        &self.s * self.v + &self.w
    }

    /// Largest violation of `|s| = 1` and `<s, w> = 0`.
    pub fn constraint_defect(&self, sys: &MassSystem) -> f64 {
        let sphere = (sys.dot(&self.s, &self.s) - 1.0).abs();
        let tangency = sys.dot(&self.s, &self.w).abs();
        sphere.max(tangency)
    }

    pub fn check_invariants(&self, sys: &MassSystem) -> Result<()> {
        sys.check_len(&self.s)?;
        sys.check_len(&self.w)?;
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(Error::InvalidArgument(format!("rho must be non-negative, got {}", self.rho)));
        }
        sys.check_unit(&self.s)?;
        let tangency = sys.dot(&self.s, &self.w);
        if tangency.abs() > INVARIANT_TOL * (1.0 + sys.norm(&self.w)) {
            return Err(Error::NotOrthonormal(format!("<s, w> = {tangency:e}")));
        }
        Ok(())
    }

    /// Projects `s` onto the unit sphere and `w` onto its tangent space.
    pub fn project(&mut self, sys: &MassSystem) {
        let r = sys.norm(&self.s);
        self.s /= r;
        let c = sys.dot(&self.s, &self.w);
        self.w -= &self.s * c;
    }
}

impl Tangent {
    pub fn zeros(sys: &MassSystem) -> Self {
        Self { rho: 0.0, s: sys.zeros(), v: 0.0, w: sys.zeros() }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        pack(self.rho, &self.s, self.v, &self.w)
    }

    pub fn from_slice(y: &[f64], sys: &MassSystem) -> Self {
        let (rho, s, v, w) = unpack(y, sys.dim());
        Self { rho, s, v, w }
    }
}

impl EquilibriumPoint {
    pub fn new(s0: Configuration, v0: f64, sys: &MassSystem) -> Result<Self> {
        sys.check_len(&s0)?;
        sys.check_unit(&s0)?;
        sys.check_collision_free(&s0)?;
        if v0 == 0.0 || !v0.is_finite() {
            return Err(Error::InvalidArgument(format!("v0 must be nonzero, got {v0}")));
        }
        Ok(Self { s0, v0 })
    }

    /// Energy level `h = v0^2 / 2` of the equilibrium.
    pub fn energy(&self) -> f64 {
        0.5 * self.v0 * self.v0
    }

    /// Chazy velocity `A = v0 s0`.
    pub fn chazy_a(&self) -> Configuration {
        &self.s0 * self.v0
    }

    /// The antipodal restpoint `(-s0, -v0)`, endpoint of every great circle through `s0`.
    pub fn antipode(&self) -> Self {
        Self { s0: -&self.s0, v0: -self.v0 }
    }

    pub fn as_state(&self, sys: &MassSystem) -> BlowupState {
        BlowupState { rho: 0.0, s: self.s0.clone(), v: self.v0, w: sys.zeros() }
    }
}

impl ManifoldParams {
    pub fn new(eq: EquilibriumPoint, s1: Configuration, rho1: f64, sys: &MassSystem) -> Result<Self> {
        sys.check_len(&s1)?;
        if rho1 < 0.0 || !rho1.is_finite() {
            return Err(Error::InvalidArgument(format!("rho1 must be non-negative, got {rho1}")));
        }
        let inner = sys.dot(&eq.s0, &s1);
        if inner.abs() > 1e-9 * sys.norm(&s1).max(1e-300) + 1e-15 {
            return Err(Error::NotOrthogonal { inner });
        }
        Ok(Self { eq, s1, rho1 })
    }

    /// `max(rho1, |s1|)`, the size of the seed displacement from the equilibrium.
    pub fn seed_scale(&self, sys: &MassSystem) -> f64 {
        self.rho1.max(sys.norm(&self.s1))
    }
}

/// `(q, xi) -> (rho, s, v, w)`.
pub fn to_blowup(q: &Configuration, xi: &Configuration, sys: &MassSystem) -> Result<BlowupState> {
    sys.check_len(q)?;
    sys.check_len(xi)?;
    let r = sys.norm(q);
    if r == 0.0 {
        return Err(Error::TotalCollision);
    }
    let s = q / r;
    let v = sys.dot(&s, xi);
    let w = xi - &s * v;
    Ok(BlowupState { rho: 1.0 / r, s, v, w })
}

/// `(rho, s, v, w) -> (q, xi) = (s / rho, v s + w)`.
pub fn from_blowup(x: &BlowupState) -> Result<(Configuration, Configuration)> {
    if x.rho <= 0.0 {
        return Err(Error::AtInfinity);
    }
    Ok((&x.s / x.rho, x.velocity()))
}

/// Evaluates the blown-up field into `dy`, on the flat layout.
///
/// On `rho = 0` the potential is never evaluated, so the field there is exactly
/// the free great-circle flow.
pub fn field_into(y: &[f64], dy: &mut [f64], sys: &MassSystem) -> Result<()> {
    let nd = sys.dim();
    let rho = y[0];
    let v = y[nd + 1];
    let s = DVector::from_column_slice(&y[1..1 + nd]);
    let w = DVector::from_column_slice(&y[nd + 2..2 * nd + 2]);
    let ww = sys.dot(&w, &w);

    sys.check_collision_free(&s)?;
    let (pot, tgrad) = if rho != 0.0 {
        let (u, g) = sys.potential_and_grad(&s)?;
        (u, g + &s * u)
    } else {
        (0.0, DVector::zeros(nd))
    };

    dy[0] = -v * rho;
    dy[nd + 1] = ww - rho * pot;
    for k in 0..nd {
        dy[1 + k] = w[k];
        dy[nd + 2 + k] = rho * tgrad[k] - v * w[k] - ww * s[k];
    }
    Ok(())
}

/// The extended vector field on `(rho, s, v, w)`.
pub fn vector_field(x: &BlowupState, sys: &MassSystem) -> Result<Tangent> {
    sys.check_len(&x.s)?;
    sys.check_len(&x.w)?;
    let y = x.to_vector();
    let mut dy = vec![0.0; y.len()];
    field_into(y.as_slice(), &mut dy, sys)?;
    Ok(Tangent::from_slice(&dy, sys))
}

/// Jacobian-vector product of the field at `y` applied to `dx`, on the flat layout.
pub fn field_jvp_into(y: &[f64], dx: &[f64], out: &mut [f64], sys: &MassSystem) -> Result<()> {
    let nd = sys.dim();
    let (rho, s, v, w) = unpack(y, nd);
    let (drho, ds, dv, dw) = unpack(dx, nd);
    let ww = sys.dot(&w, &w);
    let w_dw = sys.dot(&w, &dw);

    let (u, g) = sys.potential_and_grad(&s)?;
    let tgrad = &g + &s * u;
    let g_ds = sys.dot(&g, &ds);
    // D(gradU~)(s) ds = D gradU(s) ds + <gradU, ds> s + U ds
    let d_tgrad = if rho != 0.0 {
        sys.hessian_blocks(&s)? * &ds + &s * g_ds + &ds * u
    } else {
        DVector::zeros(nd)
    };

    out[0] = -v * drho - rho * dv;
    out[nd + 1] = 2.0 * w_dw - drho * u - rho * g_ds;
    for k in 0..nd {
        out[1 + k] = dw[k];
        out[nd + 2 + k] = drho * tgrad[k] + rho * d_tgrad[k] - dv * w[k] - v * dw[k]
            - 2.0 * w_dw * s[k]
            - ww * ds[k];
    }
    Ok(())
}

/// Closed-form flow on the infinity manifold along the great circle through `eta`
/// towards `xi`.
pub fn infinity_flow(
    xi: &Configuration,
    eta: &Configuration,
    h: f64,
    tau: f64,
    sys: &MassSystem,
) -> Result<BlowupState> {
    check_frame(xi, eta, sys)?;
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("energy must be positive, got {h}")));
    }
    let omega = (2.0 * h).sqrt();
    let x = omega * tau;
    let theta = x.sinh().atan();
    let (sin, cos) = theta.sin_cos();
    let sech = 1.0 / x.cosh();
    Ok(BlowupState {
        rho: 0.0,
        s: xi * sin + eta * cos,
        v: omega * x.tanh(),
        w: (xi * cos - eta * sin) * (omega * sech),
    })
}

pub(crate) fn check_frame(xi: &Configuration, eta: &Configuration, sys: &MassSystem) -> Result<()> {
    sys.check_len(xi)?;
    sys.check_len(eta)?;
    let (nx, ne, c) = (sys.norm(xi), sys.norm(eta), sys.dot(xi, eta));
    if (nx - 1.0).abs() > INVARIANT_TOL || (ne - 1.0).abs() > INVARIANT_TOL || c.abs() > INVARIANT_TOL {
        return Err(Error::NotOrthonormal(format!("|xi| = {nx}, |eta| = {ne}, <xi, eta> = {c:e}")));
    }
    Ok(())
}

/// Linearization of the field at an equilibrium, acting on `R x R^{nd} x R x R^{nd}`.
pub fn linearization_matrix(p: &EquilibriumPoint, sys: &MassSystem) -> Result<DMatrix<f64>> {
    let nd = sys.dim();
    let (u, tgrad) = potential_data(p, sys)?;
    let v0 = p.v0;
    let mut l = DMatrix::zeros(2 * nd + 2, 2 * nd + 2);
    l[(0, 0)] = -v0;
    l[(nd + 1, 0)] = -u;
    for k in 0..nd {
        l[(1 + k, nd + 2 + k)] = 1.0;
        l[(nd + 2 + k, 0)] = tgrad[k];
        l[(nd + 2 + k, nd + 2 + k)] = -v0;
    }
    Ok(l)
}

/// Closed form of `exp(tau L(p))` with `u = exp(-v0 tau)`.
pub fn linearized_flow_exact(p: &EquilibriumPoint, tau: f64, sys: &MassSystem) -> Result<DMatrix<f64>> {
    let nd = sys.dim();
    let (pot, tgrad) = potential_data(p, sys)?;
    let v0 = p.v0;
    let u = (-v0 * tau).exp();
    // (1 - u) / v0 computed without cancellation for small v0 tau.
    let one_minus_u = -(-v0 * tau).exp_m1();
    let mut e = DMatrix::identity(2 * nd + 2, 2 * nd + 2);
    e[(0, 0)] = u;
    e[(nd + 1, 0)] = pot * (u - 1.0) / v0;
    let c_s = one_minus_u / (v0 * v0) - tau * u / v0;
    for k in 0..nd {
        e[(1 + k, 0)] = tgrad[k] * c_s;
        e[(1 + k, nd + 2 + k)] = one_minus_u / v0;
        e[(nd + 2 + k, 0)] = tgrad[k] * tau * u;
        e[(nd + 2 + k, nd + 2 + k)] = u;
    }
    Ok(e)
}

/// Generalized eigenvector `G = (1, 0, U(s0)/v0, -gradU~(s0)/v0)` for the eigenvalue `-v0`.
pub fn generalized_eigenvector(p: &EquilibriumPoint, sys: &MassSystem) -> Result<DVector<f64>> {
    let (u, tgrad) = potential_data(p, sys)?;
    Ok(pack(1.0, &sys.zeros(), u / p.v0, &(-tgrad / p.v0)))
}

/// Inclusion `i(s1, rho1) = rho1 G + (0, s1, 0, -v0 s1)` of the `-v0` generalized eigenspace.
pub fn eigenspace_inclusion(mp: &ManifoldParams, sys: &MassSystem) -> Result<DVector<f64>> {
    let g = generalized_eigenvector(&mp.eq, sys)?;
    let e = pack(0.0, &mp.s1, 0.0, &(&mp.s1 * -mp.eq.v0));
    Ok(g * mp.rho1 + e)
}

/// Aligned coordinates `J(mp)` projected back onto the constraint set.
///
/// `J` is the linear chart `(rho1, s0 + s1, v0 + U rho1 / v0, -gradU~ rho1 / v0 - v0 s1)`;
/// afterwards `s` is renormalized and `w` is made mass-orthogonal to it.
pub fn seed_state(mp: &ManifoldParams, sys: &MassSystem) -> Result<BlowupState> {
    let inner = sys.dot(&mp.eq.s0, &mp.s1);
    if inner.abs() > 1e-9 * sys.norm(&mp.s1).max(1e-300) + 1e-15 {
        return Err(Error::NotOrthogonal { inner });
    }
    let (u, tgrad) = potential_data(&mp.eq, sys)?;
    let v0 = mp.eq.v0;
    let mut x = BlowupState {
        rho: mp.rho1,
        s: &mp.eq.s0 + &mp.s1,
        v: v0 + u * mp.rho1 / v0,
        w: -&tgrad * (mp.rho1 / v0) - &mp.s1 * v0,
    };
    x.project(sys);
    Ok(x)
}

/// `seed_state` with `v` rescaled so the seed sits exactly on the energy shell `h = v0^2 / 2`.
pub fn seed_state_on_shell(mp: &ManifoldParams, sys: &MassSystem) -> Result<BlowupState> {
    let mut x = seed_state(mp, sys)?;
    let h = mp.eq.energy();
    let pot = if x.rho > 0.0 { x.rho * sys.potential(&x.s)? } else { 0.0 };
    let v2 = 2.0 * h - sys.dot(&x.w, &x.w) + 2.0 * pot;
    if v2 <= 0.0 {
        return Err(Error::Degenerate("seed lies outside the energy shell of its equilibrium".into()));
    }
    x.v = v2.sqrt().copysign(mp.eq.v0);
    Ok(x)
}

/// Explicit flow of the linear model in `(s1, rho1)` coordinates.
pub fn linear_model_flow(mp: &ManifoldParams, tau: f64, sys: &MassSystem) -> Result<ManifoldParams> {
    let (_, tgrad) = potential_data(&mp.eq, sys)?;
    let v0 = mp.eq.v0;
    let u = (-v0 * tau).exp();
    let alpha = tgrad / v0;
    Ok(ManifoldParams {
        eq: mp.eq.clone(),
        s1: &mp.s1 * u - alpha * (tau * u * mp.rho1),
        rho1: u * mp.rho1,
    })
}

fn potential_data(p: &EquilibriumPoint, sys: &MassSystem) -> Result<(f64, Configuration)> {
    sys.check_len(&p.s0)?;
    let (u, g) = sys.potential_and_grad(&p.s0)?;
    Ok((u, g + &p.s0 * u))
}
