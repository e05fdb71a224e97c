//! Weighted Sobolev norm `𝒮ᴺ`, curl functional `ℬᴺ`, energy `ℰᴺ`,
//! dissipation `𝒟ᴺ` and the lower-order functional `𝒞ᴺ⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{jacobian, multi_indices_upto, FlowState, Grid3, VecField, WeightProfiles};
use crate::modulation::{Background, Coefficients};
use crate::tensor::{sym_eig3, Mat3, SymEig3};

/// Per-multi-index integrals, all unweighted in `μ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NuTerms {
    pub nu: [usize; 3],
    /// `‖∂^ν V‖²`
    pub v_sq: f64,
    /// `‖∂^ν θ‖²`
    pub theta_sq: f64,
    /// `‖∇_η ∂^ν θ‖²`
    pub grad_sq: f64,
    /// `‖div_η ∂^ν θ‖²`
    pub div_sq: f64,
    /// `‖∇_η ∂^ν V‖²`
    pub grad_v_sq: f64,
    /// `‖Curl_{Λ𝒜} ∂^ν V‖²`
    pub curl_v_sq: f64,
    /// `‖Curl_{Λ𝒜} ∂^ν θ‖²`
    pub curl_theta_sq: f64,
    /// `∫⟨Λ⁻¹∂^νV, ∂^νV⟩`
    pub form_v: f64,
    /// `∫⟨Λ⁻¹∂^νθ, ∂^νθ⟩`
    pub form_theta: f64,
    /// `∫(1+β)𝒥^{−1/α} ∑ d_i/d_j ([𝒩_ν]^j_i)²`
    pub elastic: f64,
    /// `∫(1+β)𝒥^{−1/α} (div_η ∂^νθ)²`
    pub elastic_div: f64,
}

impl NuTerms {
    pub fn order(&self) -> usize {
        self.nu.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub tau: f64,
    pub mu: f64,
    pub order: usize,
    /// Instantaneous value of the bracket inside `𝒮ᴺ`.
    pub sn_inst: f64,
    /// Running supremum of `sn_inst`; filled by the ledger.
    pub sn: f64,
    pub bn_v_inst: f64,
    pub bn_v: f64,
    pub bn_theta_inst: f64,
    pub bn_theta: f64,
    pub en: f64,
    pub dn: f64,
    pub cnm1: f64,
    pub per_nu: Vec<NuTerms>,
}

/// Minimum nodes per axis for norms of order `N` (needs `N+1` derivatives).
pub fn min_points(order: usize) -> usize {
    4 * (order + 1) + 1
}

/// `∑ d_i/d_j ([P X Pᵀ]^j_i)²`.
pub fn elastic_form(x: &Mat3, eig: &SymEig3) -> f64 {
    let p = eig.rotation;
    let nmat = p * *x * p.transpose();
    let d = eig.eigenvalues;
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += d[i] / d[j] * nmat.0[j][i] * nmat.0[j][i];
        }
    }
    s
}

fn frob_sq(m: &Mat3) -> f64 {
    m.0.iter().flatten().map(|v| v * v).sum()
}

/// Integrals for one `ν`.
pub fn nu_terms(
    grid: &Grid3,
    state: &FlowState,
    lambda: &Mat3,
    eig: &SymEig3,
    pressure: &[f64],
    nu: [usize; 3],
) -> NuTerms {
    let dth = state.theta.deriv_multi(grid, nu);
    let dv = state.v.deriv_multi(grid, nu);
    let jth = jacobian(grid, &dth);
    let jv = jacobian(grid, &dv);
    let lambda_inv = eig.rotation.transpose() * Mat3::diag(eig.eigenvalues.map(|d| 1.0 / d)) * eig.rotation;
    let ainv = &state.kin.ainv;
    let sum = |g: &(dyn Fn(usize) -> f64 + Sync)| grid.integrate_with(g);
    NuTerms {
        nu,
        v_sq: sum(&|i| dv.at(i).norm_sq()),
        theta_sq: sum(&|i| dth.at(i).norm_sq()),
        grad_sq: sum(&|i| frob_sq(&(jth[i] * ainv[i]))),
        div_sq: sum(&|i| (jth[i] * ainv[i]).trace().powi(2)),
        grad_v_sq: sum(&|i| frob_sq(&(jv[i] * ainv[i]))),
        curl_v_sq: sum(&|i| {
            let m = jv[i] * ainv[i] * *lambda;
            frob_sq(&(m - m.transpose()))
        }),
        curl_theta_sq: sum(&|i| {
            let m = jth[i] * ainv[i] * *lambda;
            frob_sq(&(m - m.transpose()))
        }),
        form_v: sum(&|i| dv.at(i).dot(&(lambda_inv * dv.at(i)))),
        form_theta: sum(&|i| dth.at(i).dot(&(lambda_inv * dth.at(i)))),
        elastic: sum(&|i| pressure[i] * elastic_form(&(jth[i] * ainv[i]), eig)),
        elastic_div: sum(&|i| pressure[i] * (jth[i] * ainv[i]).trace().powi(2)),
    }
}

/// `(1+β)𝒥^{−1/α}` at every node.
pub fn pressure_factor(state: &FlowState, profiles: &WeightProfiles, alpha: f64) -> Vec<f64> {
    state.kin.jdet.iter().zip(&profiles.beta).map(|(j, b)| (1.0 + b) * j.powf(-1.0 / alpha)).collect()
}

/// Assembles the functionals from per-`ν` terms.
pub fn assemble(tau: f64, bg: &Background, coeffs: &Coefficients, order: usize, per_nu: Vec<NuTerms>) -> NormReport {
    let e = coeffs.exps;
    let mu = bg.mu;
    let (ms, md) = (mu.powf(e.sigma), mu.powf(-e.delta));
    let alpha = coeffs.alpha;
    let cbar = coeffs.cbar;
    let mut r = NormReport { tau, mu, order, per_nu: Vec::new(), ..Default::default() };
    for t in &per_nu {
        let k = t.order();
        let top = k == order;
        r.sn_inst += ms * t.v_sq + t.theta_sq;
        let grad_div = t.grad_sq + t.div_sq;
        r.sn_inst += if top { md * grad_div } else { grad_div };
        r.bn_v_inst += if top { md * t.curl_v_sq } else { t.curl_v_sq };
        r.bn_theta_inst += if top { md * t.curl_theta_sq } else { t.curl_theta_sq };
        let elastic = t.elastic + t.elastic_div / alpha;
        r.en += 0.5 * (ms * t.form_v + cbar * md * t.form_theta + cbar * md * elastic);
        r.dn += cbar * 0.5 * e.delta * md * (bg.mu_tau / mu) * (t.theta_sq + elastic);
        if !top {
            r.cnm1 += 0.5 * (cbar * t.form_theta + cbar * elastic);
        }
    }
    r.sn = r.sn_inst;
    r.bn_v = r.bn_v_inst;
    r.bn_theta = r.bn_theta_inst;
    r.per_nu = per_nu;
    r
}

pub fn norms_report(
    grid: &Grid3,
    state: &FlowState,
    bg: &Background,
    profiles: &WeightProfiles,
    coeffs: &Coefficients,
    order: usize,
) -> Result<NormReport> {
    let need = min_points(order);
    if grid.n < need {
        return Err(Error::StencilUnderflow { order, required: need, got: grid.n });
    }
    let eig = sym_eig3(&bg.lambda)?;
    let pressure = pressure_factor(state, profiles, coeffs.alpha);
    let per_nu: Vec<NuTerms> = multi_indices_upto(order)
        .into_iter()
        .map(|nu| nu_terms(grid, state, &bg.lambda, &eig, &pressure, nu))
        .collect();
    Ok(assemble(state.tau, bg, coeffs, order, per_nu))
}

/// Running-supremum bookkeeping for `𝒮ᴺ` and `ℬᴺ`; reports must be pushed
/// in τ order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NormHistory {
    pub reports: Vec<NormReport>,
}

impl NormHistory {
    pub fn push(&mut self, mut r: NormReport) {
        let (sn, bn_v, bn_theta) = match self.reports.last() {
            Some(prev) => {
                assert!(r.tau >= prev.tau, "norm reports must arrive in τ order");
                (prev.sn, prev.bn_v, prev.bn_theta)
            }
            None => (0.0, 0.0, 0.0),
        };
        r.sn = r.sn_inst.max(sn);
        r.bn_v = r.bn_v_inst.max(bn_v);
        r.bn_theta = r.bn_theta_inst.max(bn_theta);
        self.reports.push(r);
    }
}

/// `𝒮ᴺ + ℬᴺ[V]` of a data pair at `τ = 0`, used to scale the initial data.
pub fn data_size(
    grid: &Grid3,
    theta: &VecField,
    v: &VecField,
    bg: &Background,
    profiles: &WeightProfiles,
    coeffs: &Coefficients,
    order: usize,
) -> Result<f64> {
    let state = FlowState::new(grid, 0.0, theta.clone(), v.clone())?;
    let r = norms_report(grid, &state, bg, profiles, coeffs, order)?;
    Ok(r.sn_inst + r.bn_v_inst)
}
