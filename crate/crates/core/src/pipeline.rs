//! Glue between the affine motion and a perturbation run: integrate far
//! enough in `t`, fix the exponents, size the grid from the wave budget and
//! build the initial data.

use serde::{Deserialize, Serialize};

use crate::affine::{asymptotic_fit, integrate_affine, AffineParams, AffineTrajectory, AsymptoticFit, ASYMPTOTIC_MIN_T};
use crate::error::{Error, Result};
use crate::evolver::{evolve, wave_budget, EvolverConfig, RunLedger};
use crate::lagrangian::{build_profiles, Grid3, InitialData};
use crate::modulation::{background_at, Coefficients};
use crate::time_frames::{build_rescaling, exponents, ExponentSet, TimeRescaling};

/// Starting horizon in `t`; grown ×4 until `τ_max` suffices.
pub const INITIAL_T_END: f64 = 1000.0;
/// Largest horizon tried.
pub const MAX_T_END: f64 = 1.0e8;

/// An affine motion with its rescaling and exponents.
#[derive(Clone, Debug)]
pub struct Motion {
    pub traj: AffineTrajectory,
    pub resc: TimeRescaling,
    pub fit: AsymptoticFit,
    pub exps: ExponentSet,
    pub coeffs: Coefficients,
}

/// Integrates until `τ_max ≥ tau_needed` and `t_end ≥ 100`.
pub fn prepare_motion(params: &AffineParams, sigma_choice: f64, tau_needed: f64, rel_tol: f64) -> Result<Motion> {
    let mut t_end = INITIAL_T_END.max(ASYMPTOTIC_MIN_T);
    loop {
        let traj = integrate_affine(params, t_end, rel_tol)?;
        let resc = build_rescaling(&traj)?;
        if resc.tau_max() >= tau_needed {
            let fit = asymptotic_fit(&traj)?;
            let exps = exponents(params.alpha, sigma_choice, fit.mu1_est)?;
            let coeffs = Coefficients { cbar: params.cbar(), alpha: params.alpha, exps };
            return Ok(Motion { traj, resc, fit, exps, coeffs });
        }
        if t_end >= MAX_T_END {
            return Err(Error::OutOfRange { tau: tau_needed, tau_max: resc.tau_max() });
        }
        t_end *= 4.0;
    }
}

/// Perturbation parameters of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub n: usize,
    pub tau_end: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub cfl: f64,
    pub order: usize,
    pub snapshot_stride: usize,
    pub dtau_max: f64,
    pub apriori_c: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            n: 49,
            tau_end: 10.0,
            epsilon: 1e-4,
            lambda: 1e-5,
            cfl: 0.4,
            order: 2,
            snapshot_stride: 4,
            dtau_max: 0.05,
            apriori_c: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub config: EvolverConfig,
    pub init: InitialData,
}

/// Sizes the grid so that `L − 4dx ≥ 1 + budget`. The budget depends on
/// `max β`, which depends on the grid, so later passes enlarge the box if the
/// current one falls short.
pub fn prepare_run(motion: &Motion, spec: &RunSpec) -> Result<PreparedRun> {
    let bg0 = background_at(0.0, &motion.resc)?;
    let mut budget = wave_budget(&motion.resc, &motion.coeffs, 0.0, spec.tau_end)?;
    for _ in 0..3 {
        let grid = Grid3::containing(spec.n, 1.0 + budget)?;
        let init = build_profiles(&grid, spec.lambda, spec.epsilon, spec.order, &bg0, &motion.coeffs)?;
        let need = wave_budget(&motion.resc, &motion.coeffs, init.profiles.beta_max(), spec.tau_end)?;
        if need <= budget {
            let config = EvolverConfig {
                tau_end: spec.tau_end,
                cfl: spec.cfl,
                order: spec.order,
                epsilon: spec.epsilon,
                lambda: spec.lambda,
                sigma_choice: motion.exps.sigma,
                grid,
                snapshot_stride: spec.snapshot_stride,
                dtau_max: spec.dtau_max,
                apriori_c: spec.apriori_c,
            };
            return Ok(PreparedRun { config, init });
        }
        // β depends on the grid, so leave room for it to move
        budget = need * 1.02;
    }
    Err(Error::GridInvalid { reason: format!("wave budget {budget} did not settle") })
}

pub fn run(motion: &Motion, prepared: &PreparedRun) -> Result<RunLedger> {
    evolve(
        &prepared.config,
        &motion.resc,
        &motion.coeffs,
        &prepared.init.profiles,
        prepared.init.theta0.clone(),
        prepared.init.v0.clone(),
    )
}

/// The reference configuration used by the acceptance suite and the CLI
/// defaults: `α = 3/2`, `T̄ = 0.36`, `A₀' = 0`.
pub fn reference_params() -> AffineParams {
    let a0 = crate::Mat3([[1.15, 0.05, 0.0], [0.0, 1.0, 0.05], [0.05, 0.0, 0.87]]);
    AffineParams::new(a0, crate::Mat3::ZERO, 0.36, 1.5).expect("reference parameters are valid")
}

pub const REFERENCE_SIGMA: f64 = 1.9;

/// Heat-capacity values cycled by [`seeded_params`].
pub const SEEDED_ALPHAS: [f64; 5] = [1.5, 2.0, 2.5, 3.0, 1.5];

/// `count` affine data sets drawn from `seed`: `A0 = I + U(±0.2)`,
/// `A0' = s·I + U(±0.2)` with `s ∈ [0, 1)`, `T̄ ∈ [0.2, 1)`.
pub fn seeded_params(seed: u64, count: usize) -> Result<Vec<AffineParams>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let s = rng.gen_range(0.0..1.0);
            let mut a0 = crate::Mat3::IDENTITY;
            let mut b = crate::Mat3::scalar(s);
            for i in 0..3 {
                for j in 0..3 {
                    a0.0[i][j] += rng.gen_range(-0.2..0.2);
                    b.0[i][j] += rng.gen_range(-0.2..0.2);
                }
            }
            let tbar = rng.gen_range(0.2..1.0);
            AffineParams::new(a0, b, tbar, SEEDED_ALPHAS[k % SEEDED_ALPHAS.len()])
        })
        .collect()
}
