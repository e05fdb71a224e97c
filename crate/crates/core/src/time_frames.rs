//! The rescaled time `dτ/dt = 1/μ`, `μ = (det A)^{1/3}`, and the decay
//! exponents `(σ, δ, μ₀, μ₁)`.

use serde::{Deserialize, Serialize};

use crate::affine::AffineTrajectory;
use crate::error::{Error, Result};

/// Relative tolerance of the per-interval quadrature of `1/μ`.
pub const QUAD_REL_TOL: f64 = 1e-12;
const SIMPSON_MAX_DEPTH: u32 = 40;

fn simpson_rec(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure { a, b });
    }
    Ok(simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let fm = f(0.5 * (a + b))?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH)
}

/// Monotone map between physical time `t` and rescaled time `τ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeRescaling {
    pub traj: AffineTrajectory,
    pub t_nodes: Vec<f64>,
    pub tau_nodes: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_tau: Vec<f64>,
}

/// `μ` and `μ_τ = μ² tr(A'A⁻¹)/3` from `(A, A')`.
pub fn mu_and_rate(a: &crate::Mat3, adot: &crate::Mat3) -> Result<(f64, f64)> {
    let det = a.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let mu = det.cbrt();
    let inv = a.inverse_unchecked(det);
    let mu_t = mu * (*adot * inv).trace() / 3.0;
    Ok((mu, mu * mu_t))
}

impl TimeRescaling {
    fn inv_mu(&self, t: f64) -> Result<f64> {
        let (a, _) = self.traj.eval(t)?;
        let det = a.det();
        if !(det > 0.0) {
            return Err(Error::NonPositiveDeterminant { det });
        }
        Ok(1.0 / det.cbrt())
    }

    fn segment_integral(&self, a: f64, b: f64) -> Result<f64> {
        let f = |t: f64| self.inv_mu(t);
        // relative target from a crude midpoint estimate of the segment
        let crude = (b - a) * f(0.5 * (a + b))?;
        let tol = QUAD_REL_TOL * crude.abs() + 1e-300;
        adaptive_simpson(&f, a, b, tol)
    }

    pub fn tau_max(&self) -> f64 {
        *self.tau_nodes.last().unwrap()
    }

    pub fn t_max(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }

    /// `τ(t) = ∫₀ᵗ ds/μ(s)`.
    pub fn tau_of_t(&self, t: f64) -> Result<f64> {
        let t_max = self.t_max();
        if !(t >= 0.0 && t <= t_max) {
            return Err(Error::OutOfRange { tau: t, tau_max: t_max });
        }
        let k = self.t_nodes.partition_point(|&s| s <= t).saturating_sub(1);
        if k + 1 >= self.t_nodes.len() || t == self.t_nodes[k] {
            return Ok(self.tau_nodes[k]);
        }
        Ok(self.tau_nodes[k] + self.segment_integral(self.t_nodes[k], t)?)
    }

    /// Inverse map `t(τ)` by safeguarded Newton iteration.
    pub fn t_of_tau(&self, tau: f64) -> Result<f64> {
        let tau_max = self.tau_max();
        if !(tau >= 0.0 && tau <= tau_max) {
            return Err(Error::OutOfRange { tau, tau_max });
        }
        let k = self.tau_nodes.partition_point(|&s| s <= tau).saturating_sub(1);
        if k + 1 >= self.tau_nodes.len() || tau == self.tau_nodes[k] {
            return Ok(self.t_nodes[k]);
        }
        let (mut lo, mut hi) = (self.t_nodes[k], self.t_nodes[k + 1]);
        let (tau_lo, tau_hi) = (self.tau_nodes[k], self.tau_nodes[k + 1]);
        let mut t = lo + (hi - lo) * (tau - tau_lo) / (tau_hi - tau_lo);
        for _ in 0..60 {
            let g = self.tau_nodes[k] + self.segment_integral(self.t_nodes[k], t)? - tau;
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            if g.abs() <= 4.0 * f64::EPSILON * tau.max(1.0) {
                return Ok(t);
            }
            // dτ/dt = 1/μ
            let step = g / self.inv_mu(t)?;
            let mut next = t - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 2.0 * f64::EPSILON * t.abs().max(1.0) {
                return Ok(next);
            }
            t = next;
        }
        Ok(t)
    }

    /// `(A, A')` at rescaled time `τ`.
    pub fn state_at_tau(&self, tau: f64) -> Result<(crate::Mat3, crate::Mat3)> {
        let t = self.t_of_tau(tau)?;
        self.traj.eval(t)
    }

    /// `(μ, μ_τ)` at rescaled time `τ`.
    pub fn mu_at_tau(&self, tau: f64) -> Result<(f64, f64)> {
        let (a, v) = self.state_at_tau(tau)?;
        mu_and_rate(&a, &v)
    }

    /// `μ_τ/μ` at the last node, the finite-time proxy for `μ₁`.
    pub fn terminal_rate(&self) -> f64 {
        let k = self.mu.len() - 1;
        self.mu_tau[k] / self.mu[k]
    }

    /// Range of `μ(τ) e^{−μ₁τ}` over the nodes.
    pub fn exp_band(&self, mu1: f64) -> (f64, f64) {
        self.mu.iter().zip(&self.tau_nodes).fold((f64::INFINITY, 0.0_f64), |(lo, hi), (m, tau)| {
            let v = m * (-mu1 * tau).exp();
            (lo.min(v), hi.max(v))
        })
    }

    /// `∑ e^{−μ₀τᵢ} Δτᵢ` over the nodes.
    pub fn decay_weight_sum(&self, mu0: f64) -> f64 {
        self.tau_nodes.windows(2).map(|w| (-mu0 * w[1]).exp() * (w[1] - w[0])).sum()
    }
}

pub fn build_rescaling(traj: &AffineTrajectory) -> Result<TimeRescaling> {
    let mut resc = TimeRescaling {
        traj: traj.clone(),
        t_nodes: traj.t.clone(),
        tau_nodes: Vec::with_capacity(traj.len()),
        mu: Vec::with_capacity(traj.len()),
        mu_tau: Vec::with_capacity(traj.len()),
    };
    for k in 0..traj.len() {
        let (mu, mu_tau) = mu_and_rate(&traj.a[k], &traj.adot[k])?;
        resc.mu.push(mu);
        resc.mu_tau.push(mu_tau);
    }
    let mut tau = 0.0;
    let mut comp = 0.0;
    resc.tau_nodes.push(0.0);
    for k in 0..traj.len().saturating_sub(1) {
        let piece = resc.segment_integral(traj.t[k], traj.t[k + 1])?;
        // compensated summation keeps the node table at quadrature accuracy
        let y = piece - comp;
        let s = tau + y;
        comp = (s - tau) - y;
        tau = s;
        resc.tau_nodes.push(tau);
    }
    Ok(resc)
}

/// Decay exponents tied to one affine motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub sigma: f64,
    pub delta: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub alpha: f64,
}

/// Upper end `min(3/α, 2)` of the admissible σ interval.
pub fn sigma_upper(alpha: f64) -> f64 {
    (3.0 / alpha).min(2.0)
}

/// Midpoint of the admissible interval.
pub fn default_sigma(alpha: f64) -> f64 {
    0.5 * sigma_upper(alpha)
}

pub fn exponents(alpha: f64, sigma_choice: f64, mu1: f64) -> Result<ExponentSet> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter { field: "alpha", reason: format!("must be > 0, got {alpha}") });
    }
    let upper = sigma_upper(alpha);
    if !(sigma_choice > 0.0 && sigma_choice < upper) {
        return Err(Error::SigmaOutOfRange { sigma: sigma_choice, upper });
    }
    if !(mu1 > 0.0) || !mu1.is_finite() {
        return Err(Error::InvalidParameter { field: "mu1", reason: format!("must be > 0, got {mu1}") });
    }
    Ok(ExponentSet {
        sigma: sigma_choice,
        delta: 3.0 / alpha - sigma_choice,
        mu1,
        mu0: 0.5 * sigma_choice * mu1,
        alpha,
    })
}

/// Comparison of the fitted `μ₁` with the terminal `μ_τ/μ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mu1Check {
    pub mu1_fit: f64,
    pub mu1_terminal: f64,
    pub rel_gap: f64,
    pub pre_asymptotic: bool,
}

pub fn mu1_crosscheck(mu1_fit: f64, rescaling: &TimeRescaling) -> Mu1Check {
    let terminal = rescaling.terminal_rate();
    let rel_gap = ((terminal - mu1_fit) / mu1_fit).abs();
    Mu1Check { mu1_fit, mu1_terminal: terminal, rel_gap, pre_asymptotic: !(rel_gap <= 0.05) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{integrate_affine, integrate_free_streaming, AffineParams};

    #[test]
    fn frozen_mu_gives_identity_map() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        let traj = integrate_free_streaming(&p, 5.0, 1e-10).unwrap();
        let r = build_rescaling(&traj).unwrap();
        for &t in &[0.0, 0.3, 1.7, 5.0] {
            assert!((r.tau_of_t(t).unwrap() - t).abs() < 1e-14);
            assert!((r.t_of_tau(t).unwrap() - t).abs() < 1e-13);
        }
    }

    #[test]
    fn linear_mu_gives_log() {
        let p = AffineParams::isotropic(1.0, 1.0, 1.0, 1.5).unwrap();
        let traj = integrate_free_streaming(&p, 50.0, 1e-10).unwrap();
        let r = build_rescaling(&traj).unwrap();
        for &t in &[0.1, 1.0, 9.5, 50.0] {
            let tau = r.tau_of_t(t).unwrap();
            assert!((tau - (1.0 + t).ln()).abs() < 1e-9, "t={t}");
            assert!((r.t_of_tau(tau).unwrap() - t).abs() < 1e-8 * t.max(1.0));
        }
        // μ_τ/μ = dμ/dt = 1
        for k in 0..r.mu.len() {
            assert!((r.mu_tau[k] / r.mu[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expanding_run_round_trip() {
        let p = AffineParams::isotropic(1.0, 0.5, 0.8, 1.5).unwrap();
        let traj = integrate_affine(&p, 200.0, 1e-10).unwrap();
        let r = build_rescaling(&traj).unwrap();
        for &t in &[0.01, 0.5, 3.0, 77.0, 199.0] {
            let tau = r.tau_of_t(t).unwrap();
            assert!((r.t_of_tau(tau).unwrap() - t).abs() < 1e-8 * t.max(1.0));
        }
        assert!(r.tau_nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(r.t_of_tau(r.tau_max() + 1.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn exponent_examples() {
        let e = exponents(1.5, 1.0, 1.0).unwrap();
        assert_eq!((e.delta, e.mu0), (1.0, 0.5));
        let e = exponents(3.0, 0.5, 2.0).unwrap();
        assert_eq!((e.delta, e.mu0), (0.5, 0.5));
        assert!(exponents(1.0, 1.9, 0.3).is_ok());
        assert!(matches!(exponents(1.5, 2.0, 1.0), Err(Error::SigmaOutOfRange { .. })));
        assert!(matches!(exponents(3.0, 1.0, 1.0), Err(Error::SigmaOutOfRange { .. })));
        assert!(matches!(exponents(1.5, 0.0, 1.0), Err(Error::SigmaOutOfRange { .. })));
        assert!(exponents(1.5, 1.0, 0.0).is_err());
        assert_eq!(default_sigma(1.5), 1.0);
        assert_eq!(default_sigma(3.0), 0.5);
    }

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(&|x: f64| Ok(x * x * x - x), 0.0, 2.0, 1e-14).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
    }
}
