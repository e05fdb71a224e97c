//! Long-time behaviour of a run: boundedness of `𝒮ᴺ`, decay of the curl
//! functional, coercivity ratios and the norm–energy equivalence constants.

use serde::{Deserialize, Serialize};

use crate::diagnostics::norms::NormReport;
use crate::error::{Error, Result};
use crate::fit::{line_fit, log_linear_fit};
use crate::time_frames::ExponentSet;

/// Decay fits ignore `τ` below this value.
pub const DEFAULT_FIT_START: f64 = 2.0;
/// Required span of the run in units of `1/μ₀`.
pub const MIN_EFOLDINGS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub quantity: String,
    pub exponent: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub target: f64,
    pub skipped: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub plateau_tau: f64,
    pub plateau: f64,
    pub max_ratio: f64,
    pub trailing_log_slope: f64,
    pub window: (f64, f64),
    pub pass: bool,
}

/// `𝒮ᴺ(τ) ≤ 3 𝒮ᴺ(plateau)` everywhere and a log-slope of at most 0.01 over
/// the trailing half. The plateau is the first snapshot with `τ ≥ 1`.
pub fn boundedness(reports: &[NormReport]) -> Result<BoundednessReport> {
    if reports.len() < 4 {
        return Err(Error::TooFewSnapshots { required: 4, got: reports.len() });
    }
    let plateau_r = reports.iter().find(|r| r.tau >= 1.0).unwrap_or(&reports[0]);
    let plateau = plateau_r.sn;
    let max_ratio = if plateau > 0.0 {
        reports.iter().map(|r| r.sn / plateau).fold(0.0, f64::max)
    } else if reports.iter().all(|r| r.sn == 0.0) {
        0.0
    } else {
        f64::INFINITY
    };
    let tau_end = reports.last().unwrap().tau;
    let window = (0.5 * tau_end, tau_end);
    let (x, y): (Vec<f64>, Vec<f64>) =
        reports.iter().filter(|r| r.tau >= window.0).map(|r| (r.tau, r.sn)).unzip();
    let slope = if y.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        log_linear_fit(&x, &y).map_or(f64::NAN, |f| f.slope)
    };
    Ok(BoundednessReport {
        plateau_tau: plateau_r.tau,
        plateau,
        max_ratio,
        trailing_log_slope: slope,
        window,
        pass: max_ratio <= 3.0 && slope <= 0.01,
    })
}

/// Log-linear fit of `ℬᴺ[V]/(1+τ²)` using the instantaneous curl functional,
/// over `[max(fit_start, τ_end/2), τ_end]`; passes within ±50% of `−2μ₀`.
pub fn curl_decay(reports: &[NormReport], exps: &ExponentSet, fit_start: f64) -> Result<DecayFit> {
    let target = -2.0 * exps.mu0;
    let tau_end = reports.last().map_or(0.0, |r| r.tau);
    let window = (fit_start.max(0.5 * tau_end), tau_end);
    let (x, y): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .filter(|r| r.tau >= window.0)
        .map(|r| (r.tau, r.bn_v_inst / (1.0 + r.tau * r.tau)))
        .unzip();
    if y.iter().all(|v| *v == 0.0) {
        return Ok(DecayFit {
            quantity: "B_N_V".into(),
            exponent: 0.0,
            r_squared: 1.0,
            window,
            target,
            skipped: true,
            pass: true,
        });
    }
    if tau_end * exps.mu0 < MIN_EFOLDINGS || x.len() < 3 {
        return Err(Error::WindowTooShort {
            reason: format!("τ_end·μ₀ = {:.3} with {} samples in window", tau_end * exps.mu0, x.len()),
        });
    }
    let f = log_linear_fit(&x, &y)
        .ok_or_else(|| Error::WindowTooShort { reason: "degenerate fit window".into() })?;
    Ok(DecayFit {
        quantity: "B_N_V".into(),
        exponent: f.slope,
        r_squared: f.r_squared,
        window,
        target,
        skipped: false,
        pass: (f.slope - target).abs() <= 0.5 * target.abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRow {
    pub nu: [usize; 3],
    /// Largest ratio over snapshots for the three inequalities
    /// (`θ`, `∇_ηθ`, `div_ηθ`).
    pub max_ratio: [f64; 3],
    /// Ratio at the final snapshot.
    pub final_ratio: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub rows: Vec<CoercivityRow>,
    pub constant: f64,
    pub finite: bool,
    pub pass: bool,
}

pub const COERCIVITY_LIMIT: f64 = 10.0;

fn guarded_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Ratios `LHS/RHS` of the three coercivity inequalities for `|ν| ≤ N−1`.
pub fn coercivity(reports: &[NormReport], exps: &ExponentSet) -> Result<CoercivityReport> {
    let first = reports.first().ok_or(Error::TooFewSnapshots { required: 1, got: 0 })?;
    let order = first.order;
    let lower: Vec<[usize; 3]> =
        first.per_nu.iter().map(|t| t.nu).filter(|nu| nu.iter().sum::<usize>() < order).collect();
    let mut rows = Vec::new();
    for nu in lower {
        let k = nu.iter().sum::<usize>();
        let find = |r: &NormReport, nu: [usize; 3]| r.per_nu.iter().find(|t| t.nu == nu).copied().unwrap();
        let t0 = find(first, nu);
        let mut sup_v = 0.0_f64;
        let mut sup_up = 0.0_f64;
        let mut max_ratio = [0.0_f64; 3];
        let mut final_ratio = [0.0; 3];
        for r in reports {
            let ms = r.mu.powf(exps.sigma);
            let t = find(r, nu);
            sup_v = sup_v.max(ms * t.v_sq);
            let up: f64 = r
                .per_nu
                .iter()
                .filter(|u| u.nu.iter().sum::<usize>() == k + 1 && (0..3).all(|a| u.nu[a] >= nu[a]))
                .map(|u| ms * u.v_sq)
                .sum();
            sup_up = sup_up.max(up);
            let ratios = [
                guarded_ratio(t.theta_sq, sup_v + t0.theta_sq),
                guarded_ratio(t.grad_sq, sup_up + t0.grad_sq),
                guarded_ratio(t.div_sq, sup_up + t0.div_sq),
            ];
            for a in 0..3 {
                max_ratio[a] = max_ratio[a].max(ratios[a]);
            }
            final_ratio = ratios;
        }
        rows.push(CoercivityRow { nu, max_ratio, final_ratio });
    }
    let constant = rows.iter().flat_map(|r| r.max_ratio).fold(0.0, f64::max);
    let finite = constant.is_finite();
    Ok(CoercivityReport { rows, constant, finite, pass: finite && constant <= COERCIVITY_LIMIT })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// Best `C₁` with `C₁𝒮ᴺ(τ) ≤ sup(ℰᴺ + 𝒞ᴺ⁻¹)`.
    pub c1: f64,
    /// Best `C₂` with `sup(ℰᴺ + 𝒞ᴺ⁻¹) ≤ C₂(𝒮ᴺ(τ) + 𝒮ᴺ(0))`.
    pub c2: f64,
    /// `C₁ ≤ C₂` for the best constants. Not implied by the two-sided bound.
    pub ordered: bool,
    /// `0 < C₁ ≤ 2C₂`, which any pair satisfying both bounds obeys since
    /// `𝒮ᴺ(0) ≤ 𝒮ᴺ(τ)`.
    pub consistent: bool,
}

pub fn norm_energy_equivalence(reports: &[NormReport]) -> EquivalenceReport {
    let s0 = reports.first().map_or(0.0, |r| r.sn);
    let mut sup_ec = 0.0_f64;
    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0_f64;
    for r in reports {
        sup_ec = sup_ec.max(r.en + r.cnm1);
        if r.sn > 0.0 {
            c1 = c1.min(sup_ec / r.sn);
            c2 = c2.max(sup_ec / (r.sn + s0));
        }
    }
    if !c1.is_finite() {
        c1 = 0.0;
    }
    let zero = c1 == 0.0 && c2 == 0.0;
    EquivalenceReport {
        c1,
        c2,
        ordered: c1 <= c2 || zero,
        consistent: zero || (c1 > 0.0 && c2.is_finite() && c1 <= 2.0 * c2 * (1.0 + 1e-12)),
    }
}

/// Least-squares slope of `ℰᴺ + ∫𝒟ᴺ` over the snapshots (reported only).
pub fn energy_trend(taus: &[f64], values: &[f64]) -> f64 {
    line_fit(taus, values).map_or(0.0, |f| f.slope)
}
