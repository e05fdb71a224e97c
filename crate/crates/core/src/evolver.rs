//! τ-marching of the perturbation `(θ, V)` around the affine motion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::norms::{norms_report, NormHistory, NormReport};
use crate::diagnostics::propagation::SupportProfile;
use crate::error::{Error, Result};
use crate::lagrangian::{jacobian, FlowState, Grid3, VecField, WeightProfiles};
use crate::modulation::{background_at, Background, Coefficients};
use crate::tensor::{sym_eig3, Mat3};
use crate::time_frames::{adaptive_simpson, TimeRescaling};

/// Layers next to each face held at zero.
pub const CLAMP_LAYERS: usize = 2;
/// Smallest accepted step before the run is declared stuck.
pub const MIN_DTAU: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolverConfig {
    pub tau_end: f64,
    pub cfl: f64,
    /// Norm order `N` used by the diagnostics.
    pub order: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub sigma_choice: f64,
    pub grid: Grid3,
    /// Steps between norm snapshots.
    pub snapshot_stride: usize,
    pub dtau_max: f64,
    /// Constant `C` in the `‖DV‖∞, ‖DV_τ‖∞ ≤ C` monitors.
    pub apriori_c: f64,
}

impl EvolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidParameter { field, reason });
        if !(self.tau_end > 0.0 && self.tau_end.is_finite()) {
            return bad("tau_end", format!("{} must be positive", self.tau_end));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl", format!("{} must lie in (0, 1]", self.cfl));
        }
        if self.order == 0 {
            return bad("order", "must be at least 1".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", format!("{} must be ≥ 0", self.epsilon));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("{} must be ≥ 0", self.lambda));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride", "must be at least 1".into());
        }
        if !(self.dtau_max > 0.0) {
            return bad("dtau_max", format!("{} must be positive", self.dtau_max));
        }
        if !(self.apriori_c > 0.0) {
            return bad("apriori_c", format!("{} must be positive", self.apriori_c));
        }
        Ok(())
    }
}

/// Right-hand side of the second-order system solved for `θ_ττ`.
pub struct Dynamics<'a> {
    pub grid: &'a Grid3,
    pub coeffs: Coefficients,
    pub profiles: &'a WeightProfiles,
    y: Vec<crate::Vec3>,
}

impl<'a> Dynamics<'a> {
    pub fn new(grid: &'a Grid3, coeffs: Coefficients, profiles: &'a WeightProfiles) -> Self {
        let y = (0..grid.len()).map(|idx| grid.point(idx)).collect();
        Self { grid, coeffs, profiles, y }
    }

    /// `θ_ττ = −(μ_τ/μ)V − 2Γ*V − C̄μ^{−δ−σ}[Λθ + ∂_kG_{ik} − y_kG_{ik} + Λ(∇β − βy)]`
    /// with `G = (1+β)Λ(𝒜ᵀ𝒥^{−1/α} − I)`; the Gaussian weight enters only
    /// through `∂_k w / w = −y_k`.
    pub fn acceleration(&self, state: &FlowState, bg: &Background) -> VecField {
        let n = self.grid.len();
        let lam = bg.lambda;
        let inv_alpha = 1.0 / self.coeffs.alpha;
        let beta = &self.profiles.beta;
        let g: Vec<Mat3> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let a = state.kin.ainv[idx];
                let jm = state.kin.jdet[idx].powf(-inv_alpha);
                (lam * (a.transpose().scale(jm) - Mat3::IDENTITY)).scale(1.0 + beta[idx])
            })
            .collect();
        let mut div_g = VecField::zeros(n);
        for i in 0..3 {
            for k in 0..3 {
                let comp: Vec<f64> = g.iter().map(|m| m.0[i][k]).collect();
                let d = self.grid.deriv(&comp, k);
                div_g.0[i].iter_mut().zip(&d).for_each(|(o, v)| *o += v);
            }
        }
        let damp = bg.mu_tau / bg.mu;
        let flux = self.coeffs.flux(bg.mu);
        let gb = &self.profiles.grad_beta;
        let pts: Vec<crate::Vec3> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let y = self.y[idx];
                let v = state.v.at(idx);
                let source = gb.at(idx) - y.scale(beta[idx]);
                let bracket = lam * state.theta.at(idx) + div_g.at(idx) - g[idx] * y + lam * source;
                -(v.scale(damp) + (bg.gamma_star * v).scale(2.0) + bracket.scale(flux))
            })
            .collect();
        VecField::from_points(&pts)
    }

    /// Largest principal wave speed on the grid.
    pub fn wave_speed(&self, state: &FlowState, bg: &Background) -> Result<f64> {
        let dmax = sym_eig3(&bg.lambda)?.d_max();
        let unit = self.coeffs.speed_sq_unit(bg.mu) * dmax;
        let inv_alpha = 1.0 / self.coeffs.alpha;
        let beta = &self.profiles.beta;
        let c = (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let dth = state.kin.d_theta[idx].frobenius();
                // ‖𝒜‖₂ ≤ 1/(1 − ‖Dθ‖) while the Neumann series converges
                let anorm = if dth < 1.0 { 1.0 / (1.0 - dth) } else { state.kin.ainv[idx].norm2() };
                let p = (1.0 + beta[idx]) * state.kin.jdet[idx].powf(-inv_alpha);
                (unit * p).sqrt() * anorm
            })
            .reduce(|| 0.0, f64::max);
        Ok(c)
    }
}

/// One pair of first-order fields.
#[derive(Clone, Debug)]
struct Pair {
    theta: VecField,
    v: VecField,
}

fn clamp(grid: &Grid3, mut p: Pair) -> Pair {
    p.theta.clamp_boundary(grid, CLAMP_LAYERS);
    p.v.clamp_boundary(grid, CLAMP_LAYERS);
    p
}

/// One classical RK4 step of size `dtau` (negative steps allowed).
/// Returns the new state and the acceleration at the start of the step.
pub fn rk4_step(
    dynamics: &Dynamics,
    state: &FlowState,
    dtau: f64,
    bg_at: &dyn Fn(f64) -> Result<Background>,
) -> Result<(FlowState, VecField)> {
    let grid = dynamics.grid;
    let tau = state.tau;
    let eval = |s: &FlowState, t: f64| -> Result<(VecField, VecField)> {
        let bg = bg_at(t)?;
        Ok((s.v.clone(), dynamics.acceleration(s, &bg)))
    };
    let stage = |k: &(VecField, VecField), h: f64, t: f64| -> Result<FlowState> {
        let p = clamp(grid, Pair { theta: state.theta.axpy(h, &k.0), v: state.v.axpy(h, &k.1) });
        FlowState::new(grid, t, p.theta, p.v)
    };
    let k1 = eval(state, tau)?;
    let s2 = stage(&k1, 0.5 * dtau, tau + 0.5 * dtau)?;
    let k2 = eval(&s2, tau + 0.5 * dtau)?;
    let s3 = stage(&k2, 0.5 * dtau, tau + 0.5 * dtau)?;
    let k3 = eval(&s3, tau + 0.5 * dtau)?;
    let s4 = stage(&k3, dtau, tau + dtau)?;
    let k4 = eval(&s4, tau + dtau)?;
    let h6 = dtau / 6.0;
    let combine = |a: &VecField, b: &VecField, c: &VecField, d: &VecField, base: &VecField| {
        base.axpy(h6, a).axpy(2.0 * h6, b).axpy(2.0 * h6, c).axpy(h6, d)
    };
    let p = clamp(
        grid,
        Pair {
            theta: combine(&k1.0, &k2.0, &k3.0, &k4.0, &state.theta),
            v: combine(&k1.1, &k2.1, &k3.1, &k4.1, &state.v),
        },
    );
    Ok((FlowState::new(grid, tau + dtau, p.theta, p.v)?, k1.1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub margin: f64,
    pub ok: bool,
}

impl Bound {
    fn new(name: &str, value: f64, limit: f64, strict: bool) -> Self {
        let ok = value.is_finite() && if strict { value < limit } else { value <= limit };
        Self { name: name.into(), value, limit, margin: limit - value, ok }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AprioriFlags {
    pub bounds: Vec<Bound>,
}

impl AprioriFlags {
    pub fn all_ok(&self) -> bool {
        self.bounds.iter().all(|b| b.ok)
    }

    pub fn first_violation(&self) -> Option<&Bound> {
        self.bounds.iter().find(|b| !b.ok)
    }
}

/// The smallness monitors. Matrix sup-norms are pointwise Frobenius norms.
/// `sn` and `accel` are optional because they cost a full norm evaluation
/// and an extra gradient respectively.
pub fn apriori_monitor(
    grid: &Grid3,
    state: &FlowState,
    accel: Option<&VecField>,
    sn: Option<f64>,
    c: f64,
) -> AprioriFlags {
    let third = 1.0 / 3.0;
    let kin = &state.kin;
    let a_dev = kin.ainv.par_iter().map(|a| (*a - Mat3::IDENTITY).frobenius()).reduce(|| 0.0, f64::max);
    let d_th = kin.d_theta.par_iter().map(|d| d.frobenius()).reduce(|| 0.0, f64::max);
    let j_dev = kin.jdet.par_iter().map(|j| (j - 1.0).abs()).reduce(|| 0.0, f64::max);
    let dv = jacobian(grid, &state.v).par_iter().map(|d| d.frobenius()).reduce(|| 0.0, f64::max);
    let mut bounds = vec![
        Bound::new("A_minus_I", a_dev, third, true),
        Bound::new("D_theta", d_th, third, true),
        Bound::new("J_minus_1", j_dev, third, true),
    ];
    if let Some(s) = sn {
        bounds.push(Bound::new("S_N", s, third, true));
    }
    bounds.push(Bound::new("D_V", dv, c, false));
    if let Some(a) = accel {
        let dva = jacobian(grid, a).par_iter().map(|d| d.frobenius()).reduce(|| 0.0, f64::max);
        bounds.push(Bound::new("D_V_tau", dva, c, false));
    }
    AprioriFlags { bounds }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub tau: f64,
    pub dtau: f64,
    pub max_wave_speed: f64,
    pub apriori: AprioriFlags,
    /// Index into the ledger's snapshot list when this step produced one.
    pub snapshot: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub tau: f64,
    pub norms: NormReport,
    pub support: SupportProfile,
    pub theta_max: f64,
    pub v_max: f64,
    pub apriori: AprioriFlags,
    /// `ℰᴺ(τ) + ∫₀^τ 𝒟ᴺ`, trapezoid over snapshots.
    pub energy_plus_dissipation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum RunStatus {
    Completed,
    AprioriViolated { tau: f64, bound: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLedger {
    pub config: EvolverConfig,
    pub coeffs: Coefficients,
    /// `∫₀^{τ_end} c dτ` for the unperturbed geometry with `max β`.
    pub wave_budget: f64,
    pub wave_speed0: f64,
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepDiagnostics>,
    pub status: RunStatus,
    #[serde(skip)]
    pub initial_state: Option<FlowState>,
    #[serde(skip)]
    pub final_state: Option<FlowState>,
    /// `V_τ` at the final state.
    #[serde(skip)]
    pub final_accel: Option<VecField>,
}

impl RunLedger {
    pub fn norm_history(&self) -> NormHistory {
        let mut h = NormHistory::default();
        for s in &self.snapshots {
            h.push(s.norms.clone());
        }
        h
    }
}

/// Safety factor on `max β` in the wave budget.
pub const BUDGET_SAFETY: f64 = 1.1;

/// `∫₀^{τ_end} sqrt(C̄μ^{−δ−σ}(1+1/α)(1+β_max) d_max) dτ` along the
/// unperturbed motion, times [`BUDGET_SAFETY`].
pub fn wave_budget(resc: &TimeRescaling, coeffs: &Coefficients, beta_max: f64, tau_end: f64) -> Result<f64> {
    let f = |tau: f64| -> Result<f64> {
        let bg = background_at(tau, resc)?;
        let d = sym_eig3(&bg.lambda)?.d_max();
        Ok((coeffs.speed_sq_unit(bg.mu) * (1.0 + beta_max) * d).sqrt())
    };
    Ok(BUDGET_SAFETY * adaptive_simpson(&f, 0.0, tau_end, 1e-8)?)
}

/// Checks the containment invariant `L ≥ 1 + budget + 4dx`.
pub fn check_containment(grid: &Grid3, budget: f64) -> Result<()> {
    let need = 1.0 + budget + 4.0 * grid.dx;
    if grid.half_width < need {
        return Err(Error::GridInvalid {
            reason: format!("half width {} below containment radius {need}", grid.half_width),
        });
    }
    Ok(())
}

pub fn evolve(
    config: &EvolverConfig,
    resc: &TimeRescaling,
    coeffs: &Coefficients,
    profiles: &WeightProfiles,
    theta0: VecField,
    v0: VecField,
) -> Result<RunLedger> {
    config.validate()?;
    let grid = &config.grid;
    if config.tau_end > resc.tau_max() {
        return Err(Error::OutOfRange { tau: config.tau_end, tau_max: resc.tau_max() });
    }
    let budget = wave_budget(resc, coeffs, profiles.beta_max(), config.tau_end)?;
    check_containment(grid, budget)?;

    let dynamics = Dynamics::new(grid, *coeffs, profiles);
    let bg_at = |tau: f64| background_at(tau, resc);
    let mut state = FlowState::new(grid, 0.0, theta0, v0)?;
    let initial = state.clone();
    let mut history = NormHistory::default();
    let mut ledger = RunLedger {
        config: *config,
        coeffs: *coeffs,
        wave_budget: budget,
        wave_speed0: dynamics.wave_speed(&state, &bg_at(0.0)?)?,
        snapshots: Vec::new(),
        steps: Vec::new(),
        status: RunStatus::Completed,
        initial_state: None,
        final_state: None,
        final_accel: None,
    };
    let mut dissipation_integral = 0.0;
    let mut last_dn: Option<(f64, f64)> = None;
    let mut step = 0usize;

    let snapshot = |state: &FlowState,
                    step: usize,
                    history: &mut NormHistory,
                    dissipation_integral: &mut f64,
                    last_dn: &mut Option<(f64, f64)>,
                    accel: &VecField|
     -> Result<Snapshot> {
        let bg = bg_at(state.tau)?;
        let r = norms_report(grid, state, &bg, profiles, coeffs, config.order)?;
        history.push(r);
        let r = history.reports.last().unwrap().clone();
        if let Some((t0, d0)) = *last_dn {
            *dissipation_integral += 0.5 * (state.tau - t0) * (d0 + r.dn);
        }
        *last_dn = Some((state.tau, r.dn));
        Ok(Snapshot {
            step,
            tau: state.tau,
            support: SupportProfile::from_fields(grid, &state.theta, &state.v),
            theta_max: state.theta.max_norm(),
            v_max: state.v.max_norm(),
            apriori: apriori_monitor(grid, state, Some(accel), Some(r.sn), config.apriori_c),
            energy_plus_dissipation: r.en + *dissipation_integral,
            norms: r,
        })
    };

    let mut accel = dynamics.acceleration(&state, &bg_at(0.0)?);
    loop {
        let take_snapshot = step.is_multiple_of(config.snapshot_stride) || state.tau >= config.tau_end;
        let mut snap_idx = None;
        if take_snapshot {
            let s = snapshot(&state, step, &mut history, &mut dissipation_integral, &mut last_dn, &accel)?;
            let flags = s.apriori.clone();
            ledger.snapshots.push(s);
            snap_idx = Some(ledger.snapshots.len() - 1);
            if let Some(b) = flags.first_violation() {
                ledger.status = RunStatus::AprioriViolated { tau: state.tau, bound: b.name.clone() };
                break;
            }
        }
        if state.tau >= config.tau_end {
            break;
        }
        let bg = bg_at(state.tau)?;
        let c = dynamics.wave_speed(&state, &bg)?;
        let mut dtau = config.dtau_max.min(config.tau_end - state.tau);
        if c > 0.0 {
            dtau = dtau.min(config.cfl * grid.dx / c);
        }
        if !(dtau >= MIN_DTAU) && config.tau_end - state.tau > MIN_DTAU {
            return Err(Error::CflFailure { tau: state.tau, dtau });
        }
        let flags = apriori_monitor(grid, &state, Some(&accel), None, config.apriori_c);
        let violation = flags.first_violation().map(|b| b.name.clone());
        ledger.steps.push(StepDiagnostics {
            step,
            tau: state.tau,
            dtau,
            max_wave_speed: c,
            apriori: flags,
            snapshot: snap_idx,
        });
        if let Some(name) = violation {
            ledger.status = RunStatus::AprioriViolated { tau: state.tau, bound: name };
            break;
        }
        let (next, _) = rk4_step(&dynamics, &state, dtau, &bg_at)?;
        state = next;
        // land exactly on τ_end despite rounding in the accumulated sum
        if config.tau_end - state.tau < 1e-12 * config.tau_end {
            state.tau = config.tau_end;
        }
        accel = dynamics.acceleration(&state, &bg_at(state.tau)?);
        step += 1;
    }
    ledger.initial_state = Some(initial);
    ledger.final_accel = Some(accel);
    ledger.final_state = Some(state);
    Ok(ledger)
}
