//! The run configuration: one JSON document, validated into ready-to-use core values.

use std::path::PathBuf;

use chazy_core::acceptance::Fault;
use chazy_core::blowup::{EquilibriumPoint, ManifoldParams};
use chazy_core::scattering::ScatterOptions;
use chazy_core::{Configuration, DVector, KeplerOrbit, MassSystem, ToleranceSet};
use serde::{Deserialize, Serialize};

/// A configuration problem, attributed to the offending field (dotted path).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cartesian,
    Manifold,
    Kepler,
}

/// Which end of a bi-hyperbolic orbit manifold parameters describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    #[default]
    Past,
    Future,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartesianInit {
    pub q: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Manifold parameters; `s0` is normalized in the mass metric on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldInit {
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub rho1: f64,
    #[serde(default)]
    pub end: End,
}

/// Two-body orbit with the masses and energy of the config and eccentricity `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeplerInit {
    pub e: f64,
    /// Position on the orbit (blown-up time, 0 at perihelion) where simulations start.
    #[serde(default)]
    pub tau0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDirections {
    pub count: usize,
    #[serde(default = "default_direction_norm")]
    pub norm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_direction_norm() -> f64 {
    2.0
}

/// Seeds `(rho1, s1)` around the past equilibrium of the config, `rho1`-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub rho1: Vec<f64>,
    /// Explicit `s1` vectors (projected orthogonal to `s0`).
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    /// Random unit tangents at `s0`, scaled to `norm`, appended after `directions`.
    #[serde(default)]
    pub random_directions: Option<RandomDirections>,
    /// Orbit at which the Jacobian rank of the image is estimated (first direction).
    #[serde(default = "default_jacobian_rho1")]
    pub jacobian_rho1: f64,
}

fn default_jacobian_rho1() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Criteria to run; empty means all.
    #[serde(default)]
    pub only: Vec<u8>,
    #[serde(default)]
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub masses: Vec<f64>,
    pub d: usize,
    /// Energy `h > 0`.
    pub h: f64,
    pub mode: Mode,
    #[serde(default)]
    pub cartesian: Option<CartesianInit>,
    #[serde(default)]
    pub manifold: Option<ManifoldInit>,
    #[serde(default)]
    pub kepler: Option<KeplerInit>,
    #[serde(default)]
    pub tolerances: ToleranceSet,
    /// Integration budget in units of `1 / sqrt(2h)`.
    #[serde(default = "default_tau_budget")]
    pub tau_budget: f64,
    #[serde(default = "default_seed_scale")]
    pub seed_scale: f64,
    /// Cancel the first-order seeding error with a second run at half the scale.
    #[serde(default = "default_richardson")]
    pub richardson: bool,
    /// Stop simulations once the orbit has converged to an equilibrium.
    #[serde(default)]
    pub stop_at_equilibrium: bool,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_tau_budget() -> f64 {
    50.0
}

fn default_seed_scale() -> f64 {
    1e-6
}

fn default_richardson() -> bool {
    true
}

/// Field named by a serde message such as "missing field `h`".
fn quoted_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `").or_else(|| message.strip_prefix("unknown field `"))?;
    rest.split('`').next()
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            let field = match quoted_field(&message) {
                Some(name) if path == "." => name.to_string(),
                Some(name) if path.rsplit('.').next() != Some(name) => format!("{path}.{name}"),
                _ => path,
            };
            ConfigError::new(field, message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn system(&self) -> Result<MassSystem, ConfigError> {
        if self.d < 2 {
            return Err(ConfigError::new("d", format!("need d >= 2, got {}", self.d)));
        }
        MassSystem::new(self.masses.clone(), self.d).map_err(|e| ConfigError::new("masses", e.to_string()))
    }

    /// Checks everything the selected mode needs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let sys = self.system()?;
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(ConfigError::new("h", format!("energy must be positive, got {}", self.h)));
        }
        if !(self.tau_budget > 0.0 && self.tau_budget.is_finite()) {
            return Err(ConfigError::new("tau_budget", "must be positive"));
        }
        if !(self.seed_scale > 0.0 && self.seed_scale <= self.tolerances.seed_scale_max) {
            return Err(ConfigError::new(
                "seed_scale",
                format!("must lie in (0, {}], got {}", self.tolerances.seed_scale_max, self.seed_scale),
            ));
        }
        match self.mode {
            Mode::Cartesian => {
                self.cartesian_state(&sys)?;
            }
            Mode::Manifold => {
                self.manifold_params(&sys)?;
            }
            Mode::Kepler => {
                self.kepler_orbit()?;
            }
        }
        if let Some(sweep) = &self.sweep {
            self.sweep_seeds(&sys, sweep)?;
        }
        Ok(())
    }

    fn vector(&self, sys: &MassSystem, field: &str, coords: &[f64]) -> Result<Configuration, ConfigError> {
        sys.configuration(coords.to_vec()).map_err(|e| ConfigError::new(field, e.to_string()))
    }

    /// Cartesian initial state, checked against the energy `h`.
    pub fn cartesian_state(&self, sys: &MassSystem) -> Result<(Configuration, Configuration), ConfigError> {
        let init = self.cartesian.as_ref().ok_or_else(|| ConfigError::new("cartesian", "required in cartesian mode"))?;
        let q = self.vector(sys, "cartesian.q", &init.q)?;
        let xi = self.vector(sys, "cartesian.xi", &init.xi)?;
        let energy = sys.energy(&q, &xi).map_err(|e| ConfigError::new("cartesian.q", e.to_string()))?;
        if (energy - self.h).abs() > 1e-9 * self.h.max(1.0) {
            return Err(ConfigError::new("cartesian.xi", format!("state has energy {energy}, config says h = {}", self.h)));
        }
        Ok((q, xi))
    }

    /// Manifold parameters with `v0 = -/+ sqrt(2h)` for the past/future end.
    pub fn manifold_params(&self, sys: &MassSystem) -> Result<(ManifoldParams, End), ConfigError> {
        let init = self.manifold.as_ref().ok_or_else(|| ConfigError::new("manifold", "required in manifold mode"))?;
        let s0 = self.vector(sys, "manifold.s0", &init.s0)?;
        let s0 = sys.normalize(&s0).map_err(|e| ConfigError::new("manifold.s0", e.to_string()))?;
        let speed = (2.0 * self.h).sqrt();
        let v0 = match init.end {
            End::Past => -speed,
            End::Future => speed,
        };
        let eq = EquilibriumPoint::new(s0, v0, sys).map_err(|e| ConfigError::new("manifold.s0", e.to_string()))?;
        let s1 = self.vector(sys, "manifold.s1", &init.s1)?;
        if !(init.rho1 >= 0.0 && init.rho1.is_finite()) {
            return Err(ConfigError::new("manifold.rho1", format!("must be nonnegative, got {}", init.rho1)));
        }
        let mp = ManifoldParams::new(eq, s1, init.rho1, sys).map_err(|e| ConfigError::new("manifold.s1", e.to_string()))?;
        Ok((mp, init.end))
    }

    pub fn kepler_orbit(&self) -> Result<KeplerOrbit, ConfigError> {
        let init = self.kepler.as_ref().ok_or_else(|| ConfigError::new("kepler", "required in kepler mode"))?;
        if self.masses.len() != 2 {
            return Err(ConfigError::new("masses", "kepler mode needs exactly two masses"));
        }
        if self.d != 2 {
            return Err(ConfigError::new("d", "kepler mode is planar (d = 2)"));
        }
        KeplerOrbit::new(self.masses[0], self.masses[1], self.h, init.e).map_err(|e| ConfigError::new("kepler.e", e.to_string()))
    }

    /// Past manifold parameters of the configured orbit, for the scattering commands.
    pub fn past_params(&self, sys: &MassSystem) -> Result<Option<ManifoldParams>, ConfigError> {
        match self.mode {
            Mode::Kepler => Ok(Some(self.kepler_orbit()?.past_params())),
            Mode::Manifold => {
                let (mp, end) = self.manifold_params(sys)?;
                if end != End::Past {
                    return Err(ConfigError::new("manifold.end", "scattering starts from past parameters"));
                }
                Ok(Some(mp))
            }
            Mode::Cartesian => Ok(None),
        }
    }

    /// Sweep equilibrium and seeds in grid order.
    pub fn sweep_seeds(&self, sys: &MassSystem, grid: &SweepConfig) -> Result<(EquilibriumPoint, Vec<Configuration>), ConfigError> {
        let past = self
            .past_params(sys)?
            .ok_or_else(|| ConfigError::new("mode", "sweeps need manifold or kepler mode"))?;
        let eq = past.eq;
        if let Some(bad) = grid.rho1.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(ConfigError::new("sweep.rho1", format!("entries must be nonnegative, got {bad}")));
        }
        if !(grid.jacobian_rho1 > 0.0) {
            return Err(ConfigError::new("sweep.jacobian_rho1", "must be positive"));
        }
        let mut dirs = Vec::new();
        for (k, coords) in grid.directions.iter().enumerate() {
            let v = self.vector(sys, &format!("sweep.directions[{k}]"), coords)?;
            let along = sys.dot(&eq.s0, &v);
            dirs.push(sys.project_com(&(v - &eq.s0 * along)));
        }
        if let Some(r) = &grid.random_directions {
            if !(r.norm > 0.0) {
                return Err(ConfigError::new("sweep.random_directions.norm", "must be positive"));
            }
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(r.seed);
            for _ in 0..r.count {
                dirs.push(sys.random_tangent(&mut rng, &eq.s0) * r.norm);
            }
        }
        Ok((eq, dirs))
    }

    pub fn scatter_options(&self) -> ScatterOptions {
        let base = if self.richardson {
            ScatterOptions::refined(self.seed_scale)
        } else {
            ScatterOptions::at_scale(self.seed_scale)
        };
        ScatterOptions { tau_budget: self.tau_budget, ..base }
    }
}

/// Flat coordinates of a configuration, for records.
pub fn coords(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEPLER: &str = r#"{"masses": [2, 2], "d": 2, "h": 2, "mode": "kepler", "kepler": {"e": 2}}"#;

    #[test]
    fn kepler_config_loads_with_defaults() {
        let c = RunConfig::from_json(KEPLER).unwrap();
        assert_eq!(c.seed_scale, 1e-6);
        assert!(c.richardson);
        assert_eq!(c.tolerances, ToleranceSet::default());
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn missing_field_is_named() {
        let e = RunConfig::from_json(r#"{"masses": [1, 1], "d": 2, "mode": "kepler"}"#).unwrap_err();
        assert_eq!(e.field, "h");
    }

    #[test]
    fn unknown_and_mistyped_fields_are_named() {
        let e = RunConfig::from_json(&KEPLER.replace("\"e\": 2", "\"e\": 2, \"ecc\": 1")).unwrap_err();
        assert_eq!(e.field, "kepler.ecc");
        let e = RunConfig::from_json(&KEPLER.replace("\"h\": 2", "\"h\": \"two\"")).unwrap_err();
        assert_eq!(e.field, "h");
    }

    #[test]
    fn semantic_errors_are_named() {
        let e = RunConfig::from_json(&KEPLER.replace("\"h\": 2", "\"h\": -1")).unwrap_err();
        assert_eq!(e.field, "h");
        let e = RunConfig::from_json(&KEPLER.replace("\"d\": 2", "\"d\": 1")).unwrap_err();
        assert_eq!(e.field, "d");
        let e = RunConfig::from_json(&KEPLER.replace("\"e\": 2", "\"e\": 0.5")).unwrap_err();
        assert_eq!(e.field, "kepler.e");
        let e = RunConfig::from_json(r#"{"masses": [1, 1], "d": 2, "h": 1, "mode": "manifold"}"#).unwrap_err();
        assert_eq!(e.field, "manifold");
    }

    #[test]
    fn manifold_s0_is_normalized_and_s1_checked() {
        let text = r#"{"masses": [1, 1, 1], "d": 2, "h": 1, "mode": "manifold",
            "manifold": {"s0": [2, 0, -1, 1.7320508075688772, -1, -1.7320508075688772], "s1": [0, 0, 0, 0, 0, 0], "rho1": 0.001}}"#;
        let c = RunConfig::from_json(text).unwrap();
        let sys = c.system().unwrap();
        let (mp, end) = c.manifold_params(&sys).unwrap();
        assert_eq!(end, End::Past);
        assert!((sys.norm(&mp.eq.s0) - 1.0).abs() < 1e-15);
        assert_eq!(mp.eq.v0, -(2.0f64).sqrt());
        let bad = text.replace("\"s1\": [0, 0, 0, 0, 0, 0]", "\"s1\": [1, 0, -0.5, 0, -0.5, 0]");
        assert_eq!(RunConfig::from_json(&bad).unwrap_err().field, "manifold.s1");
    }

    #[test]
    fn cartesian_energy_must_match() {
        let text = r#"{"masses": [1, 1], "d": 2, "h": 5, "mode": "cartesian",
            "cartesian": {"q": [1, 0, -1, 0], "xi": [0, 1, 0, -1]}}"#;
        assert_eq!(RunConfig::from_json(text).unwrap_err().field, "cartesian.xi");
    }

    #[test]
    fn sweep_needs_an_equilibrium() {
        let text = r#"{"masses": [1, 1], "d": 2, "h": 0.5, "mode": "cartesian",
            "cartesian": {"q": [1, 0, -1, 0], "xi": [0, 1, 0, -1]}, "sweep": {"rho1": [0.001]}}"#;
        assert_eq!(RunConfig::from_json(text).unwrap_err().field, "mode");
    }
}
