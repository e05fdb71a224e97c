//! Acceptance suite. Every test writes one uncaptured `PASS`/`FAIL` line to
//! stderr and then asserts the same verdict.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use isoaffine::affine::{asymptotic_fit, integrate_affine, AffineParams};
use isoaffine::diagnostics::decay::DEFAULT_FIT_START;
use isoaffine::diagnostics::identities::{identity_suite, SUITE_GRIDS};
use isoaffine::diagnostics::{boundedness, coercivity, curl_decay, support_and_propagation, NormReport, SupportProfile};
use isoaffine::eulerian::{closed_form_invariant_drift, eulerian_convergence, temperature_invariant_drift};
use isoaffine::evolver::{RunLedger, RunStatus};
use isoaffine::modulation::{frame_series, verify_frame_bounds};
use isoaffine::pipeline::{prepare_motion, prepare_run, reference_params, run, seeded_params, Motion, RunSpec, REFERENCE_SIGMA};

const SEED: u64 = 1;
const CONFIGS: usize = 5;
const REL_TOL: f64 = 1e-10;
const SUPPORT_THRESHOLD: f64 = 1e-10;

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:>2} {status} {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

fn configs() -> Vec<AffineParams> {
    seeded_params(SEED, CONFIGS).unwrap()
}

struct Reference {
    motion: Motion,
    ledger: RunLedger,
    dx: f64,
    elapsed: Duration,
}

fn reference() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(|| {
        let start = Instant::now();
        let spec = RunSpec::default();
        let motion = prepare_motion(&reference_params(), REFERENCE_SIGMA, 2.0 * spec.tau_end, REL_TOL).unwrap();
        let prepared = prepare_run(&motion, &spec).unwrap();
        let ledger = run(&motion, &prepared).unwrap();
        Reference { dx: prepared.config.grid.dx, motion, ledger, elapsed: start.elapsed() }
    })
}

fn reports(led: &RunLedger) -> Vec<NormReport> {
    led.snapshots.iter().map(|s| s.norms.clone()).collect()
}

#[test]
fn c01_affine_energy_conservation() {
    let mut worst = 0.0_f64;
    let mut slowest = Duration::ZERO;
    let mut alphas = Vec::new();
    for p in configs() {
        let start = Instant::now();
        let traj = integrate_affine(&p, 100.0, REL_TOL).unwrap();
        worst = worst.max(traj.max_energy_drift());
        slowest = slowest.max(start.elapsed());
        alphas.push(p.alpha);
    }
    let covers = alphas.contains(&1.5) && alphas.contains(&3.0);
    let pass = worst <= 1e-8 && slowest < Duration::from_secs(5) && covers;
    verdict(1, "affine energy", pass, &format!("max drift {worst:.3e} (≤1e-8), slowest {slowest:.2?}, α {alphas:?}"));
}

#[test]
fn c02_det_growth() {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut pass = true;
    for p in configs().into_iter().filter(|p| p.alpha >= 1.5) {
        let traj = integrate_affine(&p, 1000.0, REL_TOL).unwrap();
        let (spread, lo, hi) = traj.det_ratio_variation(100.0, 1000.0, 64).unwrap();
        pass &= lo > 0.0 && hi.is_finite() && spread < 0.01;
        rows.push(format!("α={} [{lo:.3},{hi:.3}] var {:.2}%", p.alpha, 100.0 * spread));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    verdict(2, "det growth", pass, &format!("{} (<1%), {elapsed:.2?}", rows.join("; ")));
}

#[test]
fn c03_derivative_decay() {
    let mut rows = Vec::new();
    let mut pass = true;
    for p in configs() {
        let traj = integrate_affine(&p, 1000.0, REL_TOL).unwrap();
        let fit = asymptotic_fit(&traj).unwrap();
        let bound = -3.0 / p.alpha + 0.3;
        pass &= fit.m_decay_exponent <= bound;
        rows.push(format!("α={} slope {:.3} ≤ {bound:.3}", p.alpha, fit.m_decay_exponent));
    }
    verdict(3, "derivative decay", pass, &rows.join("; "));
}

#[test]
fn c04_dyson_residuals() {
    let mut worst = f64::INFINITY;
    let mut pass = true;
    for p in configs() {
        let traj = integrate_affine(&p, 5.0, 1e-11).unwrap();
        for t in [0.5, 3.0] {
            let conv = eulerian_convergence(&traj, t, &[17, 33, 65]).unwrap();
            pass &= conv.pass;
            for (k, row) in conv.reductions.iter().enumerate() {
                for (eq, r) in row.iter().enumerate() {
                    let lvl = &conv.levels[k + 1].equations()[eq].1;
                    if lvl.max > isoaffine::eulerian::RELATIVE_FLOOR * lvl.scale {
                        worst = worst.min(*r);
                    }
                }
            }
        }
    }
    verdict(4, "Dyson residuals", pass, &format!("smallest reduction per halving {worst:.2} (≥8), 17/33/65 nodes"));
}

#[test]
fn c05_temperature_invariant() {
    let mut closed = 0.0_f64;
    let mut integrated = 0.0_f64;
    let mut params = configs();
    params.push(reference_params());
    for p in params {
        let traj = integrate_affine(&p, 1000.0, REL_TOL).unwrap();
        closed = closed.max(closed_form_invariant_drift(&traj));
        integrated = integrated.max(temperature_invariant_drift(&traj).unwrap());
    }
    verdict(
        5,
        "T^α det A invariance",
        closed <= 1e-10,
        &format!("closed form {closed:.3e} (≤1e-10); energy-law integration {integrated:.3e}"),
    );
}

#[test]
fn c06_zero_fixed_point() {
    let start = Instant::now();
    let spec = RunSpec { n: 33, epsilon: 0.0, lambda: 0.0, ..RunSpec::default() };
    let motion = prepare_motion(&reference_params(), REFERENCE_SIGMA, spec.tau_end, REL_TOL).unwrap();
    let prepared = prepare_run(&motion, &spec).unwrap();
    let led = run(&motion, &prepared).unwrap();
    let worst = led.snapshots.iter().map(|s| s.theta_max + s.v_max).fold(0.0, f64::max);
    let final_state = led.final_state.as_ref().unwrap();
    let worst = worst.max(final_state.theta.max_norm() + final_state.v.max_norm());
    let elapsed = start.elapsed();
    let tau = final_state.tau;
    let pass = led.status == RunStatus::Completed
        && tau >= spec.tau_end - 1e-12
        && worst <= 1e-12
        && elapsed < Duration::from_secs(120);
    verdict(6, "zero fixed point", pass, &format!("max |θ|+|V| {worst:.1e} to τ={tau:.2} on 33³, {elapsed:.2?}"));
}

#[test]
fn c07_finite_propagation() {
    let r = reference();
    let taus: Vec<f64> = r.ledger.snapshots.iter().map(|s| s.tau).collect();
    let sups: Vec<SupportProfile> = r.ledger.snapshots.iter().map(|s| s.support.clone()).collect();
    let p = support_and_propagation(&taus, &sups, SUPPORT_THRESHOLD, r.dx, r.ledger.wave_speed0).unwrap();
    let pass = p.cone_ok && p.linear_r2 >= 0.98;
    // reported only: the same fit at a threshold well above stencil precursors
    let q = support_and_propagation(&taus, &sups, 1e-6, r.dx, r.ledger.wave_speed0).unwrap();
    verdict(
        7,
        "finite propagation",
        pass,
        &format!(
            "threshold {SUPPORT_THRESHOLD:e}: K_fit {:.4}, r² {:.3} (≥0.98), cone excess {:.4}, r {:.3}→{:.3}; \
             threshold 1e-6: K_fit {:.4}, r² {:.3}, cone excess {:.4}",
            p.k_fit,
            p.linear_r2,
            p.cone_excess,
            p.radii.first().unwrap(),
            p.radii.last().unwrap(),
            q.k_fit,
            q.linear_r2,
            q.cone_excess
        ),
    );
}

#[test]
fn c08_boundedness() {
    let r = reference();
    let b = boundedness(&reports(&r.ledger)).unwrap();
    let completed = r.ledger.status == RunStatus::Completed;
    let pass = b.pass && completed && r.elapsed < Duration::from_secs(1800);
    verdict(
        8,
        "boundedness",
        pass,
        &format!(
            "max 𝒮²/plateau {:.3} (≤3), trailing log-slope {:.4} (≤0.01), status {:?}, {:.1?}",
            b.max_ratio, b.trailing_log_slope, r.ledger.status, r.elapsed
        ),
    );
}

#[test]
fn c09_curl_decay() {
    let r = reference();
    let fit = curl_decay(&reports(&r.ledger), &r.motion.exps, DEFAULT_FIT_START);
    let (pass, detail) = match fit {
        Ok(f) => (
            f.pass && !f.skipped,
            format!(
                "exponent {:.4} vs −2μ₀ = {:.4} ±50%, window [{:.1},{:.1}], r² {:.3}",
                f.exponent, f.target, f.window.0, f.window.1, f.r_squared
            ),
        ),
        Err(e) => (false, e.to_string()),
    };
    verdict(9, "curl decay", pass, &detail);
}

#[test]
fn c10_identity_suites() {
    let a = identity_suite(42, &SUITE_GRIDS).unwrap();
    let b = identity_suite(42, &SUITE_GRIDS).unwrap();
    let deterministic = a.to_csv() == b.to_csv();
    let failing: Vec<&str> = a.checks.iter().filter(|c| c.scored && !c.pass).map(|c| c.identity.as_str()).collect();
    let scored = a.checks.iter().filter(|c| c.scored).count();
    let pass = a.all_pass() && deterministic;
    verdict(
        10,
        "identity suites",
        pass,
        &format!("{scored} scored checks, failing {failing:?}, deterministic {deterministic}"),
    );
}

#[test]
fn c11_coercivity() {
    let r = reference();
    let c = coercivity(&reports(&r.ledger), &r.motion.exps).unwrap();
    verdict(11, "coercivity", c.pass, &format!("constant {:.3} (≤10), {} multi-indices, finite {}", c.constant, c.rows.len(), c.finite));
}

#[test]
fn c12_frame_bounds() {
    let motion = prepare_motion(&reference_params(), REFERENCE_SIGMA, 20.0, REL_TOL).unwrap();
    let frames = frame_series(&motion.resc, 20.0, 81).unwrap();
    let b = verify_frame_bounds(&frames, &motion.exps).unwrap();
    let pass = b.bounded_pass && b.lambda_tau_pass && b.eigen_rate_pass;
    verdict(
        12,
        "frame bounds",
        pass,
        &format!(
            "max ‖Λ‖+‖Λ⁻¹‖ {:.3}, max ∑(d+1/d) {:.3}, rates {:.3}/{:.3} vs ≤ {:.3}",
            b.lambda_sum_max,
            b.eig_sum_max,
            b.lambda_tau_rate,
            b.eigen_rate,
            -0.75 * b.mu1
        ),
    );
}
