//! The four subcommands. Each writes into `<out>/<scenario name>/`.

use std::path::{Path, PathBuf};

use isoaffine::affine::{asymptotic_fit, integrate_affine, AffineTrajectory};
use isoaffine::diagnostics::identities::identity_suite;
use isoaffine::diagnostics::{
    boundedness, coercivity, curl_decay, norm_energy_equivalence, support_and_propagation, NormReport, SupportProfile,
};
use isoaffine::eulerian::{
    characteristic_time, closed_form_invariant_drift, eulerian_convergence, eulerian_residual, lagrangian_reconstruct,
    temperature_invariant_drift, ReconstructInput, TemperatureModel, BOX_RADII, PROBE_FRACTION,
};
use isoaffine::evolver::{Dynamics, RunLedger};
use isoaffine::lagrangian::{FlowState, Grid3, WeightProfiles};
use isoaffine::modulation::{background_at, frame_series, frames_csv, verify_frame_bounds};
use isoaffine::pipeline::{prepare_motion, prepare_run, run, Motion};
use isoaffine::time_frames::{build_rescaling, exponents, mu1_crosscheck};
use serde_json::json;

use crate::config::Scenario;
use crate::error::{CliError, Result};
use crate::ledger::{csv_table, fmt_f64, write_text, LedgerWriter};

pub fn scenario_dir(out: &Path, scenario: &Scenario) -> Result<PathBuf> {
    let dir = out.join(&scenario.name);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

/// Files written by one subcommand.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
}

fn det_window(t_end: f64) -> (f64, f64) {
    if t_end >= 1000.0 {
        (100.0, 1000.0)
    } else {
        (0.1 * t_end, t_end)
    }
}

fn affine_summary(traj: &AffineTrajectory) -> Result<serde_json::Value> {
    let p = &traj.params;
    let fit = asymptotic_fit(traj)?;
    let resc = build_rescaling(traj)?;
    let (lo_t, hi_t) = det_window(traj.t_end());
    let (spread, lo, hi) = traj.det_ratio_variation(lo_t, hi_t, 64)?;
    Ok(json!({
        "alpha": p.alpha,
        "tbar": p.tbar,
        "cbar": p.cbar(),
        "regime": p.regime(),
        "t_end": traj.t_end(),
        "rel_tol": traj.rel_tol,
        "nodes": traj.len(),
        "rejected_steps": traj.rejected_steps,
        "max_energy_drift": traj.max_energy_drift(),
        "max_jacobi_mismatch": traj.max_jacobi_mismatch(),
        "det_ratio_window": [lo_t, hi_t],
        "det_ratio_variation": spread,
        "det_ratio_min": lo,
        "det_ratio_max": hi,
        "mu1": fit.mu1_est,
        "m_decay_exponent": fit.m_decay_exponent,
        "m_decay_bound": -3.0 / p.alpha + 0.3,
        "m_decay_r2": fit.m_decay_r2,
        "a1": fit.a1_est,
        "invariant_drift_closed": closed_form_invariant_drift(traj),
        "invariant_drift_integrated": temperature_invariant_drift(traj)?,
        "mu1_check": mu1_crosscheck(fit.mu1_est, &resc),
        "tau_max": resc.tau_max(),
    }))
}

/// Integrates the affine motion and writes the trajectory, frames and
/// Eulerian residual convergence.
pub fn affine(s: &Scenario, out: &Path) -> Result<Outputs> {
    let dir = scenario_dir(out, s)?;
    let params = s.params()?;
    let traj = integrate_affine(&params, s.affine.t_end, s.affine.rel_tol)?;
    let mut outputs = Outputs::default();
    let ledger_path = dir.join("affine.jsonl");
    let mut led = LedgerWriter::create(&ledger_path, &s.name, s.seed)?;
    led.write("scenario", s)?;
    led.write("affine_summary", &affine_summary(&traj)?)?;

    let d = &s.diagnostics;
    let motion = prepare_motion(&params, s.exponents.sigma_choice, d.frames_tau_end, s.affine.rel_tol)?;
    let frames = frame_series(&motion.resc, d.frames_tau_end, d.frames)?;
    led.write("frame_bounds", &verify_frame_bounds(&frames, &motion.exps)?)?;
    let frames_path = dir.join("frames.csv");
    write_text(&frames_path, &frames_csv(&frames))?;

    if d.eulerian {
        let t = 1.0_f64.min(0.5 * traj.t_end());
        led.write("eulerian", &eulerian_convergence(&traj, t, &d.eulerian_levels)?)?;
    }
    let traj_path = dir.join("trajectory.csv");
    write_text(&traj_path, &traj.to_csv())?;
    outputs.files.extend([led.finish()?, traj_path, frames_path]);
    Ok(outputs)
}

fn reports(led: &RunLedger) -> Vec<NormReport> {
    led.snapshots.iter().map(|s| s.norms.clone()).collect()
}

fn run_summary(s: &Scenario, motion: &Motion, led: &RunLedger) -> Result<serde_json::Value> {
    let reps = reports(led);
    let taus: Vec<f64> = led.snapshots.iter().map(|x| x.tau).collect();
    let sups: Vec<SupportProfile> = led.snapshots.iter().map(|x| x.support.clone()).collect();
    let thr = s.diagnostics.support_threshold;
    let ok_or_msg = |r: isoaffine::Result<serde_json::Value>| r.unwrap_or_else(|e| json!({ "error": e.to_string() }));
    Ok(json!({
        "status": led.status,
        "steps": led.steps.len(),
        "snapshots": led.snapshots.len(),
        "wave_budget": led.wave_budget,
        "wave_speed0": led.wave_speed0,
        "exponents": motion.exps,
        "boundedness": ok_or_msg(boundedness(&reps).map(|b| json!(b))),
        "curl_decay": ok_or_msg(curl_decay(&reps, &motion.exps, s.diagnostics.fit_start).map(|b| json!(b))),
        "coercivity": ok_or_msg(coercivity(&reps, &motion.exps).map(|c| json!({
            "constant": c.constant, "finite": c.finite, "pass": c.pass, "rows": c.rows,
        }))),
        "propagation": ok_or_msg(support_and_propagation(&taus, &sups, thr, led.config.grid.dx, led.wave_speed0).map(|p| json!(p))),
        "equivalence": norm_energy_equivalence(&reps),
    }))
}

fn reconstruct(motion: &Motion, profiles: &WeightProfiles, theta0: &isoaffine::lagrangian::VecField, state: &FlowState, grid: &Grid3) -> Result<serde_json::Value> {
    let bg = background_at(state.tau, &motion.resc)?;
    let accel = Dynamics::new(grid, motion.coeffs, profiles).acceleration(state, &bg);
    let f = lagrangian_reconstruct(&ReconstructInput { grid, resc: &motion.resc, profiles, theta0, state, accel: &accel })?;
    let t_lo = f.temperature.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_hi = f.temperature.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "tau": f.tau,
        "t": f.t,
        "mass": f.mass,
        "momentum_residual": f.momentum_residual,
        "momentum_scale": f.momentum_scale,
        "temperature_min": t_lo,
        "temperature_max": t_hi,
    }))
}

/// Runs the perturbation problem; one `snapshot` record per snapshot.
pub fn evolve(s: &Scenario, out: &Path) -> Result<Outputs> {
    let dir = scenario_dir(out, s)?;
    let params = s.params()?;
    let spec = s.run_spec();
    let motion = prepare_motion(&params, s.exponents.sigma_choice, 2.0 * spec.tau_end, s.affine.rel_tol)?;
    let prepared = prepare_run(&motion, &spec)?;
    let led = run(&motion, &prepared)?;
    let grid = prepared.config.grid;

    let ledger_path = dir.join("evolve.jsonl");
    let mut w = LedgerWriter::create(&ledger_path, &s.name, s.seed)?;
    w.write("scenario", s)?;
    w.write(
        "run_header",
        &json!({
            "config": led.config,
            "coeffs": led.coeffs,
            "mu1": motion.fit.mu1_est,
            "data_size": prepared.init.data_size,
            "beta_max": prepared.init.profiles.beta_max(),
            "beta_sobolev_sq": prepared.init.profiles.beta_sobolev_sq,
        }),
    )?;
    for snap in &led.snapshots {
        w.write("snapshot", snap)?;
    }
    w.write("run_summary", &run_summary(s, &motion, &led)?)?;

    let profiles = &prepared.init.profiles;
    let theta0 = &prepared.init.theta0;
    let mut lagrangian = Vec::new();
    for state in [led.initial_state.as_ref(), led.final_state.as_ref()].into_iter().flatten() {
        lagrangian.push(reconstruct(&motion, profiles, theta0, state, &grid)?);
    }
    if let [first, last] = &lagrangian[..] {
        let m0 = first["mass"].as_f64().unwrap_or(f64::NAN);
        let m1 = last["mass"].as_f64().unwrap_or(f64::NAN);
        w.write("lagrangian", &json!({ "initial": first, "final": last, "mass_drift": (m1 / m0 - 1.0).abs() }))?;
    }

    let t_final = motion.resc.t_of_tau(led.snapshots.last().map_or(0.0, |x| x.tau))?;
    let (a, adot) = motion.traj.eval(t_final)?;
    let t_char = characteristic_time(&params, &a, &adot)?;
    let egrid = Grid3::new(s.diagnostics.eulerian_levels[0], BOX_RADII * a.norm2())?;
    w.write("eulerian", &eulerian_residual(&motion.traj, t_final, &egrid, PROBE_FRACTION * t_char, TemperatureModel::Exact)?)?;

    let mut outputs = Outputs::default();
    outputs.files.push(w.finish()?);

    let rows: Vec<Vec<String>> = led
        .snapshots
        .iter()
        .map(|x| {
            let n = &x.norms;
            vec![
                fmt_f64(x.tau),
                fmt_f64(n.mu),
                fmt_f64(n.sn),
                fmt_f64(n.sn_inst),
                fmt_f64(n.bn_v_inst),
                fmt_f64(n.en),
                fmt_f64(n.dn),
                fmt_f64(x.support.radius(s.diagnostics.support_threshold)),
                fmt_f64(x.theta_max),
                fmt_f64(x.v_max),
            ]
        })
        .collect();
    let snap_path = dir.join("snapshots.csv");
    write_text(
        &snap_path,
        &csv_table(&["tau", "mu", "S", "S_inst", "B_V", "E", "D", "radius", "theta_max", "v_max"], &rows),
    )?;
    outputs.files.push(snap_path);

    if s.diagnostics.slice {
        if let Some(state) = led.final_state.as_ref() {
            let mid = grid.n / 2;
            let mut rows = Vec::new();
            for i in 0..grid.n {
                for j in 0..grid.n {
                    let idx = grid.idx(i, j, mid);
                    let (th, v) = (state.theta.at(idx), state.v.at(idx));
                    let mut row = vec![fmt_f64(grid.coord(i)), fmt_f64(grid.coord(j))];
                    row.extend(th.0.iter().chain(v.0.iter()).map(|c| fmt_f64(*c)));
                    rows.push(row);
                }
            }
            let slice_path = dir.join("slice_z0.csv");
            write_text(&slice_path, &csv_table(&["y1", "y2", "theta1", "theta2", "theta3", "v1", "v2", "v3"], &rows))?;
            outputs.files.push(slice_path);
        }
    }
    Ok(outputs)
}

/// Identity suites on seeded synthetic fields.
pub fn verify(s: &Scenario, out: &Path) -> Result<Outputs> {
    let dir = scenario_dir(out, s)?;
    let table = identity_suite(s.seed, &s.diagnostics.identity_grids)?;
    let csv_path = dir.join("identities.csv");
    write_text(&csv_path, &table.to_csv())?;
    let ledger_path = dir.join("verify.jsonl");
    let mut w = LedgerWriter::create(&ledger_path, &s.name, s.seed)?;
    for c in &table.checks {
        w.write("identity_check", c)?;
    }
    w.write("identity_summary", &json!({ "all_pass": table.all_pass(), "checks": table.checks.len() }))?;
    Ok(Outputs { files: vec![csv_path, w.finish()?] })
}

/// Exponents implied by the scenario, without integrating far; used by
/// `affine --dry-run` style checks in tests.
pub fn exponents_of(s: &Scenario, mu1: f64) -> Result<isoaffine::time_frames::ExponentSet> {
    Ok(exponents(s.affine.alpha, s.exponents.sigma_choice, mu1)?)
}
