//! Browser demo. Each export takes plain numbers and returns a JSON string;
//! the page in `www/` draws it on a canvas.
//!
//! The `*_json` functions are ordinary Rust and are tested natively.

use isoaffine::affine::{asymptotic_fit, integrate_affine, AffineParams};
use isoaffine::modulation::frame_series;
use isoaffine::pipeline::{prepare_motion, prepare_run, run, RunSpec};
use isoaffine::Mat3;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const REL_TOL: f64 = 1e-9;

/// `A₀ = diag(1 + s, 1, 1 − s)` plus a small shear, starting at rest.
pub fn demo_params(alpha: f64, tbar: f64, stretch: f64) -> isoaffine::Result<AffineParams> {
    let a0 = Mat3([[1.0 + stretch, 0.05, 0.0], [0.0, 1.0, 0.05], [0.05, 0.0, 1.0 - stretch]]);
    AffineParams::new(a0, Mat3::ZERO, tbar, alpha)
}

#[derive(Serialize)]
pub struct Curves {
    pub t: Vec<f64>,
    /// `(det A)^{1/3} / t`
    pub growth: Vec<f64>,
    pub temperature: Vec<f64>,
    pub energy_drift: Vec<f64>,
    pub mu1: f64,
    pub decay_exponent: f64,
}

#[derive(Serialize)]
pub struct Frames {
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    /// Eigenvalues of `Λ`, ascending.
    pub eig: Vec<[f64; 3]>,
    pub gamma_norm: Vec<f64>,
}

#[derive(Serialize)]
pub struct Slice {
    pub n: usize,
    pub half_width: f64,
    /// `|θ|` on the `z = 0` plane, row-major in `(y₁, y₂)`.
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub energy: Vec<f64>,
    pub sup: Vec<f64>,
    pub status: String,
}

fn log_samples(t_end: f64, count: usize) -> Vec<f64> {
    let (lo, hi) = (1e-2_f64.ln(), t_end.ln());
    (0..count).map(|k| (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp()).collect()
}

pub fn affine_curves_json(alpha: f64, tbar: f64, stretch: f64, t_end: f64) -> isoaffine::Result<String> {
    let p = demo_params(alpha, tbar, stretch)?;
    let traj = integrate_affine(&p, t_end.max(100.0), REL_TOL)?;
    let fit = asymptotic_fit(&traj)?;
    let e0 = traj.energy_at_node(0);
    let mut c = Curves {
        t: Vec::new(),
        growth: Vec::new(),
        temperature: Vec::new(),
        energy_drift: Vec::new(),
        mu1: fit.mu1_est,
        decay_exponent: fit.m_decay_exponent,
    };
    for t in log_samples(traj.t_end(), 200) {
        let (a, adot) = traj.eval(t)?;
        let det = a.det();
        let e = isoaffine::affine::ode_energy(&a, &adot, &p)?;
        c.t.push(t);
        c.growth.push(det.cbrt() / t);
        c.temperature.push(p.temperature(det));
        c.energy_drift.push(((e - e0) / e0.abs().max(1e-300)).abs());
    }
    Ok(serde_json::to_string(&c).expect("curves serialise"))
}

pub fn frames_json(alpha: f64, tbar: f64, stretch: f64, sigma: f64, tau_end: f64) -> isoaffine::Result<String> {
    let p = demo_params(alpha, tbar, stretch)?;
    let motion = prepare_motion(&p, sigma, tau_end, REL_TOL)?;
    let frames = frame_series(&motion.resc, tau_end, 121)?;
    let f = Frames {
        tau: frames.iter().map(|f| f.tau).collect(),
        mu: frames.iter().map(|f| f.mu).collect(),
        eig: frames.iter().map(|f| f.eig.eigenvalues).collect(),
        gamma_norm: frames.iter().map(|f| f.gamma_star.frobenius()).collect(),
    };
    Ok(serde_json::to_string(&f).expect("frames serialise"))
}

pub fn evolve_slice_json(n: usize, tau_end: f64, epsilon: f64) -> isoaffine::Result<String> {
    let p = isoaffine::pipeline::reference_params();
    let spec = RunSpec { n, tau_end, epsilon, snapshot_stride: 2, ..RunSpec::default() };
    let motion = prepare_motion(&p, isoaffine::pipeline::REFERENCE_SIGMA, 2.0 * tau_end, REL_TOL)?;
    let prepared = prepare_run(&motion, &spec)?;
    let led = run(&motion, &prepared)?;
    let grid = prepared.config.grid;
    let mid = grid.n / 2;
    let theta = match &led.final_state {
        Some(s) => (0..grid.n)
            .flat_map(|i| (0..grid.n).map(move |j| (i, j)))
            .map(|(i, j)| s.theta.at(grid.idx(i, j, mid)).norm())
            .collect(),
        None => Vec::new(),
    };
    let status = match &led.status {
        isoaffine::evolver::RunStatus::Completed => "completed".to_string(),
        other => format!("{other:?}"),
    };
    let s = Slice {
        n: grid.n,
        half_width: grid.half_width,
        theta,
        tau: led.snapshots.iter().map(|s| s.tau).collect(),
        energy: led.snapshots.iter().map(|s| s.norms.en).collect(),
        sup: led.snapshots.iter().map(|s| s.norms.sn).collect(),
        status,
    };
    Ok(serde_json::to_string(&s).expect("slice serialises"))
}

fn js(r: isoaffine::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Affine curves on a log grid up to `t_end`.
#[wasm_bindgen]
pub fn affine_curves(alpha: f64, tbar: f64, stretch: f64, t_end: f64) -> Result<String, JsError> {
    js(affine_curves_json(alpha, tbar, stretch, t_end))
}

/// Rescaled frame quantities over `[0, tau_end]`.
#[wasm_bindgen]
pub fn frames(alpha: f64, tbar: f64, stretch: f64, sigma: f64, tau_end: f64) -> Result<String, JsError> {
    js(frames_json(alpha, tbar, stretch, sigma, tau_end))
}

/// A small perturbation run on the reference background.
#[wasm_bindgen]
pub fn evolve_slice(n: usize, tau_end: f64, epsilon: f64) -> Result<String, JsError> {
    js(evolve_slice_json(n, tau_end, epsilon))
}
