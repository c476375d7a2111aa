//! The five commands. Each reads a validated config, writes its files into the output
//! directory and returns an exit status.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use chazy_core::acceptance::{run_suite, CriterionOutcome, VerifyOptions};
use chazy_core::blowup::{seed_state_on_shell, to_blowup, BlowupState, ManifoldParams};
use chazy_core::chazy::{chazy_from_manifold, extract_manifold_params, TauTRelation};
use chazy_core::integrator::{detect_equilibrium, integrate, IntegrateOptions, Termination, Trajectory};
use chazy_core::kepler::{kepler_scattering, kepler_state};
use chazy_core::scattering::{
    flow_to_seed_scale, image_jacobian, scattering_map_with, summarize_sweep, sweep_image, JacobianOptions, SweepGrid,
    SweepRecord,
};
use chazy_core::{Configuration, MassSystem, ToleranceSet};
use serde::{Deserialize, Serialize};

use crate::config::{coords, End, Mode, RunConfig};
use crate::output::{
    write_json, write_jsonl, write_trajectory_csv, ScatterRecord, TrajectoryTable,
};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRAJECTORY_META_FILE: &str = "trajectory.json";
pub const SCATTER_FILE: &str = "scatter.jsonl";
pub const SWEEP_FILE: &str = "sweep.jsonl";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";
pub const VERIFY_FILE: &str = "verify_report.json";
pub const KEPLER_CHECK_FILE: &str = "kepler_check.json";

/// Relative error allowed by `kepler-check`.
pub const KEPLER_CHECK_TOL: f64 = 1e-6;

/// How a command ended, mapped to the process exit code by the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// The run completed but a check failed.
    Failed,
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output.dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn speed(config: &RunConfig) -> f64 {
    (2.0 * config.h).sqrt()
}

/// Metadata written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub mode: Mode,
    pub samples: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    /// `span_end` or `equilibrium`.
    pub termination: String,
    pub converged_from: Option<f64>,
    pub energy0: f64,
    pub max_energy_drift: f64,
    pub max_constraint_defect: f64,
    pub min_pair_distance: f64,
    pub max_rho: f64,
    pub max_potential: f64,
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
    pub tolerances: ToleranceSet,
}

impl SimulationMeta {
    fn new(mode: Mode, traj: &Trajectory) -> Self {
        let m = &traj.meta;
        let (termination, converged_from) = match m.termination {
            Termination::SpanEnd => ("span_end".to_string(), None),
            Termination::Equilibrium { window_start } => ("equilibrium".to_string(), Some(window_start)),
        };
        Self {
            mode,
            samples: traj.samples.len(),
            tau_start: traj.first().tau,
            tau_end: traj.last().tau,
            termination,
            converged_from,
            energy0: m.energy0,
            max_energy_drift: m.max_energy_drift,
            max_constraint_defect: m.max_constraint_defect,
            min_pair_distance: m.min_pair_distance,
            max_rho: m.max_rho,
            max_potential: m.max_potential,
            steps: m.steps,
            rejected: m.rejected,
            evals: m.evals,
            tolerances: m.tolerances,
        }
    }
}

/// Initial state, start time `tau`, direction (+1 or -1) and Newtonian start time.
fn simulation_start(config: &RunConfig, sys: &MassSystem) -> Result<(BlowupState, f64, f64, f64)> {
    match config.mode {
        Mode::Cartesian => {
            let (q, xi) = config.cartesian_state(sys)?;
            Ok((to_blowup(&q, &xi, sys)?, 0.0, 1.0, 0.0))
        }
        Mode::Kepler => {
            let o = config.kepler_orbit()?;
            let tau0 = config.kepler.as_ref().map_or(0.0, |k| k.tau0);
            let (q, xi) = kepler_state(&o, tau0);
            Ok((to_blowup(&q, &xi, sys)?, tau0, 1.0, o.time(tau0)))
        }
        Mode::Manifold => {
            let (mp, end) = config.manifold_params(sys)?;
            let dir = if end == End::Past { 1.0 } else { -1.0 };
            let (seed, tau) = if mp.seed_scale(sys) > config.seed_scale {
                flow_to_seed_scale(&mp, config.seed_scale, sys)?
            } else {
                (mp.clone(), 0.0)
            };
            let t0 = if mp.rho1 > 0.0 { TauTRelation::new(&mp, sys)?.t_of_tau(tau) } else { 0.0 };
            Ok((seed_state_on_shell(&seed, sys)?, tau, dir, t0))
        }
    }
}

/// Integrates the configured orbit and writes `trajectory.csv` and `trajectory.json`.
pub fn simulate(config: &RunConfig) -> Result<Status> {
    let sys = config.system()?;
    let (x0, tau0, dir, t0) = simulation_start(config, &sys)?;
    let span = (tau0, tau0 + dir * config.tau_budget / speed(config));
    let base = if config.stop_at_equilibrium { IntegrateOptions::to_equilibrium(speed(config)) } else { IntegrateOptions::default() };
    let traj = integrate(&x0, span, &config.tolerances, &sys, &IntegrateOptions { t0, ..base })?;
    let dir_out = output_dir(config)?;
    write_trajectory_csv(&dir_out.join(TRAJECTORY_FILE), &TrajectoryTable::from_trajectory(&traj))?;
    let meta = SimulationMeta::new(config.mode, &traj);
    write_json(&dir_out.join(TRAJECTORY_META_FILE), &meta)?;
    println!(
        "simulate: {} samples, tau {:.3} -> {:.3}, final rho {:e}, energy drift {:.1e}",
        meta.samples,
        meta.tau_start,
        meta.tau_end,
        traj.last().state.rho,
        meta.max_energy_drift
    );
    Ok(Status::Success)
}

/// Past parameters of a Cartesian state, from its backward integration.
fn past_params_of_state(config: &RunConfig, sys: &MassSystem) -> Result<ManifoldParams> {
    let (q, xi) = config.cartesian_state(sys)?;
    let x0 = to_blowup(&q, &xi, sys)?;
    let traj = integrate(&x0, (0.0, -config.tau_budget / speed(config)), &config.tolerances, sys, &IntegrateOptions::to_equilibrium(speed(config)))?;
    let eq = detect_equilibrium(&traj, &config.tolerances, sys).context("backward orbit did not converge to an equilibrium")?;
    Ok(extract_manifold_params(&traj, &eq, sys)?)
}

/// Scatters the configured orbit and writes one record to `scatter.jsonl`.
pub fn scatter(config: &RunConfig) -> Result<Status> {
    let sys = config.system()?;
    let past = match config.past_params(&sys)? {
        Some(p) => p,
        None => past_params_of_state(config, &sys)?,
    };
    let outcome = scattering_map_with(&past, &config.tolerances, &sys, &config.scatter_options());
    let record = ScatterRecord::new(0, &past, &outcome);
    write_jsonl(&output_dir(config)?.join(SCATTER_FILE), std::slice::from_ref(&record))?;
    match &record.future {
        Some(f) => println!("scatter: status ok, A' = {:?}", f.a),
        None => println!("scatter: status {:?}: {}", record.status, record.error.as_deref().unwrap_or("")),
    }
    Ok(Status::Success)
}

/// One row of the dispersion-versus-scale table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub rho1: f64,
    pub seeds: usize,
    pub ok: usize,
    pub singular: usize,
    pub undetermined: usize,
    /// Largest `|A' - A|` over successful seeds.
    pub dispersion: f64,
    pub max_rho: f64,
    pub max_potential: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub rho1: f64,
    pub s1: Vec<f64>,
    pub rank: Option<usize>,
    /// `D - 1`, the rank of a full image.
    pub full_rank: usize,
    pub singular_values: Vec<f64>,
    /// `sigma_min / (rank_rel sigma_max)`.
    pub gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: usize,
    pub ok: usize,
    pub singular: usize,
    pub undetermined: usize,
    pub scales: Vec<ScaleRow>,
    pub jacobian: Option<RankEstimate>,
    pub notes: Vec<String>,
}

fn scale_rows(grid: &SweepGrid, records: &[SweepRecord], sys: &MassSystem) -> Vec<ScaleRow> {
    let per = grid.s1.len();
    grid.rho1
        .iter()
        .enumerate()
        .map(|(k, &rho1)| {
            let s = summarize_sweep(&records[k * per..(k + 1) * per], sys);
            ScaleRow {
                rho1,
                seeds: s.seeds,
                ok: s.ok,
                singular: s.singular,
                undetermined: s.undetermined,
                dispersion: s.dispersion,
                max_rho: s.max_rho,
                max_potential: s.max_potential,
            }
        })
        .collect()
}

/// Scatters every grid seed and writes `sweep.jsonl` (grid order) and `sweep_summary.json`.
pub fn sweep(config: &RunConfig) -> Result<Status> {
    let sys = config.system()?;
    let grid_cfg = config.sweep.as_ref().ok_or_else(|| crate::config::ConfigError::new("sweep", "required by the sweep command"))?;
    let (eq, dirs) = config.sweep_seeds(&sys, grid_cfg)?;
    let grid = SweepGrid { rho1: grid_cfg.rho1.clone(), s1: dirs };
    let opts = config.scatter_options();
    let records = sweep_image(&eq, &grid, &config.tolerances, &sys, &opts);
    let lines: Vec<ScatterRecord> = records
        .iter()
        .map(|r| {
            let past = ManifoldParams { eq: eq.clone(), s1: r.s1.clone(), rho1: r.rho1 };
            ScatterRecord::new(r.index, &past, &r.outcome)
        })
        .collect();
    let total = summarize_sweep(&records, &sys);
    let mut notes = Vec::new();
    let jacobian = match grid.s1.first() {
        None => {
            notes.push("zero seeds: the grid has no directions".to_string());
            None
        }
        Some(_) if grid.rho1.is_empty() => {
            notes.push("zero seeds: the grid has no rho1 values".to_string());
            None
        }
        Some(s1) => Some(rank_estimate(config, &sys, &eq, grid_cfg.jacobian_rho1, s1)),
    };
    let report = SweepReport {
        seeds: total.seeds,
        ok: total.ok,
        singular: total.singular,
        undetermined: total.undetermined,
        scales: scale_rows(&grid, &records, &sys),
        jacobian,
        notes,
    };
    let dir = output_dir(config)?;
    write_jsonl(&dir.join(SWEEP_FILE), &lines)?;
    write_json(&dir.join(SWEEP_SUMMARY_FILE), &report)?;
    println!("sweep: {} seeds, {} ok, {} singular, {} undetermined", report.seeds, report.ok, report.singular, report.undetermined);
    for row in &report.scales {
        println!("  rho1 {:.3e}: dispersion {:.3e}, max rho {:.3e}, max U {:.3}", row.rho1, row.dispersion, row.max_rho, row.max_potential);
    }
    if let Some(j) = &report.jacobian {
        match j.rank {
            Some(r) => println!("  image rank {r} of {} at rho1 = {:e}", j.full_rank, j.rho1),
            None => println!("  image rank unavailable: {}", j.error.as_deref().unwrap_or("")),
        }
    }
    Ok(Status::Success)
}

fn rank_estimate(
    config: &RunConfig,
    sys: &MassSystem,
    eq: &chazy_core::EquilibriumPoint,
    rho1: f64,
    s1: &Configuration,
) -> RankEstimate {
    let full_rank = sys.reduced_dim() - 1;
    let jopts = JacobianOptions { scatter: config.scatter_options(), ..JacobianOptions::default() };
    let base = RankEstimate { rho1, s1: coords(s1), rank: None, full_rank, singular_values: Vec::new(), gap: None, error: None };
    match image_jacobian(eq, rho1, s1, &config.tolerances, sys, &jopts) {
        Ok(j) => RankEstimate {
            rank: Some(j.rank),
            gap: Some(j.min_ratio / config.tolerances.rank_rel),
            singular_values: j.singular_values,
            ..base
        },
        Err(e) => RankEstimate { error: Some(e.to_string()), ..base },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub criteria: Vec<CriterionOutcome>,
}

/// Runs the acceptance suite and writes `verify_report.json`; fails if any criterion fails.
pub fn verify(config: &RunConfig) -> Result<Status> {
    let opts = VerifyOptions { tol: config.tolerances, fault: config.verify.fault, only: config.verify.only.clone() };
    let criteria = run_suite(&opts);
    for c in &criteria {
        println!("{}", c.line());
    }
    let report = VerifyReport { passed: criteria.iter().all(|c| c.passed), criteria };
    write_json(&output_dir(config)?.join(VERIFY_FILE), &report)?;
    Ok(if report.passed { Status::Success } else { Status::Failed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub quantity: String,
    pub numeric: Vec<f64>,
    pub exact: Vec<f64>,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeplerCheckReport {
    pub mu: f64,
    pub h: f64,
    pub a: f64,
    pub e: f64,
    pub rows: Vec<CheckRow>,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub passed: bool,
    pub runtime_s: f64,
}

/// Both ends of the configured two-body orbit from integration, against the closed form.
pub fn kepler_check(config: &RunConfig) -> Result<Status> {
    let start = Instant::now();
    let o = config.kepler_orbit()?;
    let sys = o.system();
    let exact = kepler_scattering(&o);
    let tau0 = config.kepler.as_ref().map_or(0.0, |k| k.tau0);
    let (q, xi) = kepler_state(&o, tau0);
    let x0 = to_blowup(&q, &xi, &sys)?;
    let tol = &config.tolerances;
    let mut rows = Vec::new();
    let mut row = |quantity: &str, numeric: &Configuration, exact: &Configuration| {
        let rel_err = sys.norm(&(numeric - exact)) / sys.norm(exact);
        rows.push(CheckRow { quantity: quantity.into(), numeric: coords(numeric), exact: coords(exact), rel_err });
    };
    let mut rho_errs = Vec::new();
    for dir in [1.0, -1.0] {
        let opts = IntegrateOptions { t0: o.time(tau0), ..IntegrateOptions::to_equilibrium(o.omega) };
        let traj = integrate(&x0, (tau0, tau0 + dir * config.tau_budget / o.omega), tol, &sys, &opts)?;
        let eq = detect_equilibrium(&traj, tol, &sys).context("Kepler orbit did not converge")?;
        let mp = extract_manifold_params(&traj, &eq, &sys)?;
        let ch = chazy_from_manifold(&mp, &sys)?;
        if dir > 0.0 {
            row("A'", &ch.a, &exact.a_prime);
            row("C'", &ch.c, &exact.c_prime);
            row("s0'", &mp.eq.s0, &exact.s0_prime);
        } else {
            row("A", &ch.a, &exact.a);
            row("C", &ch.c, &exact.c);
            row("s0", &mp.eq.s0, &exact.s0);
        }
        rho_errs.push((mp.rho1 - exact.rho1).abs() / exact.rho1);
    }
    for (name, err) in ["rho1'", "rho1"].iter().zip(&rho_errs) {
        rows.push(CheckRow { quantity: name.to_string(), numeric: Vec::new(), exact: vec![exact.rho1], rel_err: *err });
    }
    let max_rel_err = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let report = KeplerCheckReport {
        mu: o.mu,
        h: o.h,
        a: o.a,
        e: o.e,
        rows,
        max_rel_err,
        threshold: KEPLER_CHECK_TOL,
        passed: max_rel_err < KEPLER_CHECK_TOL,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    write_json(&output_dir(config)?.join(KEPLER_CHECK_FILE), &report)?;
    for r in &report.rows {
        println!("  {:<6} rel err {:.2e}", r.quantity, r.rel_err);
    }
    println!("kepler-check: {} (max rel err {:.2e} < {:e})", if report.passed { "PASS" } else { "FAIL" }, max_rel_err, KEPLER_CHECK_TOL);
    Ok(if report.passed { Status::Success } else { Status::Failed })
}
