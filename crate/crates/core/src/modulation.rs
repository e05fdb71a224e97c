//! Modulation geometry along the affine motion: `Λ = μ² A⁻¹A⁻ᵀ ∈ SL(3)`,
//! its eigenframe `Λ = PᵀQP`, and `Γ* = O⁻¹O_τ` with `A = μO`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::log_linear_fit;
use crate::tensor::{sym_eig3, Mat3, SymEig3};
use crate::time_frames::{mu_and_rate, ExponentSet, TimeRescaling};

/// The τ-dependent coefficients the perturbation equation needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub tau: f64,
    pub t: f64,
    pub mu: f64,
    pub mu_tau: f64,
    pub lambda: Mat3,
    pub gamma_star: Mat3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationFrame {
    pub tau: f64,
    pub t: f64,
    pub mu: f64,
    pub mu_tau: f64,
    pub lambda: Mat3,
    pub lambda_inv: Mat3,
    pub lambda_tau: Mat3,
    pub eig: SymEig3,
    /// `∂_τ d_i` on the eigenvalue branch of `eig`.
    pub eig_rates: [f64; 3],
    /// `∂_τ P`.
    pub p_tau: Mat3,
    pub gamma_star: Mat3,
    pub o: Mat3,
}

impl ModulationFrame {
    pub fn background(&self) -> Background {
        Background {
            tau: self.tau,
            t: self.t,
            mu: self.mu,
            mu_tau: self.mu_tau,
            lambda: self.lambda,
            gamma_star: self.gamma_star,
        }
    }

    /// `∑|∂_τ d_i| + ‖∂_τ P‖_F`.
    pub fn eigen_rate(&self) -> f64 {
        self.eig_rates.iter().map(|v| v.abs()).sum::<f64>() + self.p_tau.frobenius()
    }
}

/// Constants of one perturbation problem: `C̄`, `α` and the decay exponents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub cbar: f64,
    pub alpha: f64,
    pub exps: ExponentSet,
}

impl Coefficients {
    /// `C̄ μ^{−δ−σ}`, the pressure coefficient once the equation is solved for `θ_ττ`.
    pub fn flux(&self, mu: f64) -> f64 {
        self.cbar * mu.powf(-self.exps.delta - self.exps.sigma)
    }

    /// Squared principal wave speed per unit `(1+β)𝒥^{−1/α} d_max ‖𝒜‖²`.
    pub fn speed_sq_unit(&self, mu: f64) -> f64 {
        self.flux(mu) * (1.0 + 1.0 / self.alpha)
    }
}

/// `Λ` from `A`.
pub fn lambda_of(a: &Mat3) -> Result<Mat3> {
    let det = a.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let inv = a.inverse()?;
    Ok((inv * inv.transpose()).scale(det.powf(2.0 / 3.0)))
}

/// `Γ* = μ (A⁻¹A' − ⅓ tr(A⁻¹A') I)`, traceless by construction.
pub fn gamma_star_of(a: &Mat3, adot: &Mat3) -> Result<Mat3> {
    let det = a.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let k = a.inverse()? * *adot;
    let tr = k.trace() / 3.0;
    Ok((k - Mat3::scalar(tr)).scale(det.cbrt()))
}

/// Closed form `Λ_τ = −(Γ*Λ + ΛΓ*ᵀ)`, used to cross-check the differenced value.
pub fn lambda_tau_analytic(a: &Mat3, adot: &Mat3) -> Result<Mat3> {
    let l = lambda_of(a)?;
    let g = gamma_star_of(a, adot)?;
    Ok(-(g * l + l * g.transpose()))
}

/// Background coefficients at `τ` without the differenced quantities.
pub fn background_at(tau: f64, resc: &TimeRescaling) -> Result<Background> {
    let t = resc.t_of_tau(tau)?;
    let (a, adot) = resc.traj.eval(t)?;
    let (mu, mu_tau) = mu_and_rate(&a, &adot)?;
    Ok(Background { tau, t, mu, mu_tau, lambda: lambda_of(&a)?, gamma_star: gamma_star_of(&a, &adot)? })
}

/// Step used for τ-differencing.
pub fn diff_step(tau: f64) -> f64 {
    1e-4 * tau.max(1.0)
}

struct Sampled {
    lambda: Mat3,
    eig: SymEig3,
}

fn sample(tau: f64, resc: &TimeRescaling, reference: &SymEig3) -> Result<Sampled> {
    let (a, _) = resc.state_at_tau(tau)?;
    let lambda = lambda_of(&a)?;
    let eig = sym_eig3(&lambda)?.align_to(reference);
    Ok(Sampled { lambda, eig })
}

/// First derivative of a sampled quantity by centred differences with one
/// Richardson refinement, falling back to one-sided stencils at the ends of
/// the integrated range. Returns the derivative of each of `k` channels.
fn richardson<const K: usize>(
    tau: f64,
    tau_max: f64,
    f: &dyn Fn(f64) -> Result<[f64; K]>,
) -> Result<[f64; K]> {
    let h = diff_step(tau);
    let mut out = [0.0; K];
    if tau - h >= 0.0 && tau + h <= tau_max {
        let d = |h: f64| -> Result<[f64; K]> {
            let p = f(tau + h)?;
            let m = f(tau - h)?;
            let mut r = [0.0; K];
            for i in 0..K {
                r[i] = (p[i] - m[i]) / (2.0 * h);
            }
            Ok(r)
        };
        let d1 = d(h)?;
        let d2 = d(0.5 * h)?;
        for i in 0..K {
            out[i] = (4.0 * d2[i] - d1[i]) / 3.0;
        }
    } else {
        // second-order one-sided, oriented into the range
        let s = if tau - h < 0.0 { 1.0 } else { -1.0 };
        let f0 = f(tau)?;
        let d = |h: f64| -> Result<[f64; K]> {
            let f1 = f(tau + s * h)?;
            let f2 = f(tau + 2.0 * s * h)?;
            let mut r = [0.0; K];
            for i in 0..K {
                r[i] = s * (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * h);
            }
            Ok(r)
        };
        let d1 = d(h)?;
        let d2 = d(0.5 * h)?;
        for i in 0..K {
            out[i] = (4.0 * d2[i] - d1[i]) / 3.0;
        }
    }
    Ok(out)
}

pub fn frame_at(tau: f64, resc: &TimeRescaling) -> Result<ModulationFrame> {
    let tau_max = resc.tau_max();
    if !(tau >= 0.0 && tau <= tau_max) {
        return Err(Error::OutOfRange { tau, tau_max });
    }
    let bg = background_at(tau, resc)?;
    let (a, _) = resc.traj.eval(bg.t)?;
    let eig = sym_eig3(&bg.lambda)?;
    let lambda_inv = bg.lambda.inverse()?;

    let lambda_tau = {
        let f = |s: f64| -> Result<[f64; 9]> { Ok(sample(s, resc, &eig)?.lambda.to_array()) };
        Mat3::from_array(&richardson::<9>(tau, tau_max, &f)?)
    };
    let (eig_rates, p_tau) = {
        let f = |s: f64| -> Result<[f64; 12]> {
            let e = sample(s, resc, &eig)?.eig;
            let mut v = [0.0; 12];
            v[..9].copy_from_slice(&e.rotation.to_array());
            v[9..].copy_from_slice(&e.eigenvalues);
            Ok(v)
        };
        let d = richardson::<12>(tau, tau_max, &f)?;
        let mut p = [0.0; 9];
        p.copy_from_slice(&d[..9]);
        ([d[9], d[10], d[11]], Mat3::from_array(&p))
    };

    Ok(ModulationFrame {
        tau,
        t: bg.t,
        mu: bg.mu,
        mu_tau: bg.mu_tau,
        lambda: bg.lambda,
        lambda_inv,
        lambda_tau,
        eig,
        eig_rates,
        p_tau,
        gamma_star: bg.gamma_star,
        o: a.scale(1.0 / bg.mu),
    })
}

/// Frames on `count` evenly spaced τ values in `[0, tau_end]`, with the
/// eigenframe carried continuously from one frame to the next.
pub fn frame_series(resc: &TimeRescaling, tau_end: f64, count: usize) -> Result<Vec<ModulationFrame>> {
    use rayon::prelude::*;
    let taus: Vec<f64> = crate::fit::linspace(0.0, tau_end, count.max(2));
    let mut frames: Vec<ModulationFrame> =
        taus.par_iter().map(|&tau| frame_at(tau, resc)).collect::<Result<Vec<_>>>()?;
    for k in 1..frames.len() {
        let prev = frames[k - 1].eig;
        let f = &mut frames[k];
        let aligned = f.eig.align_to(&prev);
        if aligned != f.eig {
            // re-express the rates on the aligned branch
            let perm = branch_permutation(&f.eig, &aligned);
            let mut rates = [0.0; 3];
            let mut p_tau = Mat3::ZERO;
            for j in 0..3 {
                let (src, sign) = perm[j];
                rates[j] = f.eig_rates[src];
                p_tau.0[j] = f.p_tau.row(src).scale(sign).0;
            }
            f.eig_rates = rates;
            f.p_tau = p_tau;
            f.eig = aligned;
        }
    }
    Ok(frames)
}

fn branch_permutation(from: &SymEig3, to: &SymEig3) -> [(usize, f64); 3] {
    let mut out = [(0usize, 1.0); 3];
    for j in 0..3 {
        let row = to.rotation.row(j);
        let (src, dot) = (0..3)
            .map(|i| (i, from.rotation.row(i).dot(&row)))
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        out[j] = (src, dot.signum());
    }
    out
}

/// Best constants and decay fits for the time-based frame inequalities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub frames: usize,
    pub lambda_norm_max: f64,
    pub lambda_inv_norm_max: f64,
    /// `max (‖Λ‖ + ‖Λ⁻¹‖)`.
    pub lambda_sum_max: f64,
    /// `max ∑(d_i + 1/d_i)`.
    pub eig_sum_max: f64,
    /// Relative spread of the two bounded quantities over the trailing half.
    pub lambda_sum_settling: f64,
    pub eig_sum_settling: f64,
    /// Lower and upper constants in `c_lo|w|² ≤ ⟨Λ⁻¹w,w⟩ ≤ c_hi|w|²`.
    pub form_lower: f64,
    pub form_upper: f64,
    pub fit_window: (f64, f64),
    /// Fitted exponential rate of `‖Λ_τ‖`; `-∞` when identically zero.
    pub lambda_tau_rate: f64,
    pub lambda_tau_r2: f64,
    /// Fitted exponential rate of `∑|∂_τ d_i| + ‖∂_τ P‖`.
    pub eigen_rate: f64,
    pub eigen_rate_r2: f64,
    /// Reference fit prefactor `C` in `‖Λ_τ‖ ≤ C e^{−μ₁τ}` over the window.
    pub lambda_tau_constant: f64,
    pub mu1: f64,
    pub lambda_tau_pass: bool,
    pub eigen_rate_pass: bool,
    pub bounded_pass: bool,
}

/// Minimum number of frames accepted by [`verify_frame_bounds`].
pub const MIN_FRAMES: usize = 10;
/// Rate criterion: fitted rate must be at most `-RATE_FRACTION · μ₁`.
pub const RATE_FRACTION: f64 = 0.75;
/// Settling tolerance for the bounded quantities over the trailing half.
pub const SETTLING_TOL: f64 = 0.05;

fn spread(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / hi.abs().max(f64::MIN_POSITIVE)
}

pub fn verify_frame_bounds(frames: &[ModulationFrame], exps: &ExponentSet) -> Result<BoundReport> {
    if frames.len() < MIN_FRAMES {
        return Err(Error::InsufficientFrames { required: MIN_FRAMES, got: frames.len() });
    }
    let mut lambda_norm_max = 0.0_f64;
    let mut lambda_inv_norm_max = 0.0_f64;
    let mut lambda_sum = Vec::with_capacity(frames.len());
    let mut eig_sum = Vec::with_capacity(frames.len());
    let mut form_lower = f64::INFINITY;
    let mut form_upper = 0.0_f64;
    for f in frames {
        let ln = f.lambda.norm2();
        let li = f.lambda_inv.norm2();
        lambda_norm_max = lambda_norm_max.max(ln);
        lambda_inv_norm_max = lambda_inv_norm_max.max(li);
        lambda_sum.push(ln + li);
        eig_sum.push(f.eig.eigenvalues.iter().map(|d| d + 1.0 / d).sum::<f64>());
        form_lower = form_lower.min(1.0 / f.eig.d_max());
        form_upper = form_upper.max(1.0 / f.eig.d_min());
    }
    let tau_last = frames.last().unwrap().tau;
    let tau_first = frames[0].tau;
    let window = (0.5 * (tau_first + tau_last), tau_last);
    let tail: Vec<&ModulationFrame> = frames.iter().filter(|f| f.tau >= window.0).collect();
    let tail_idx = frames.len() - tail.len();

    let taus: Vec<f64> = tail.iter().map(|f| f.tau).collect();
    let lt: Vec<f64> = tail.iter().map(|f| f.lambda_tau.frobenius()).collect();
    let er: Vec<f64> = tail.iter().map(|f| f.eigen_rate()).collect();
    let fit_rate = |v: &[f64]| -> (f64, f64) {
        if v.iter().all(|x| *x == 0.0) {
            return (f64::NEG_INFINITY, 1.0);
        }
        match log_linear_fit(&taus, v) {
            Some(f) => (f.slope, f.r_squared),
            None => (f64::NAN, 0.0),
        }
    };
    let (lambda_tau_rate, lambda_tau_r2) = fit_rate(&lt);
    let (eigen_rate, eigen_rate_r2) = fit_rate(&er);
    let lambda_tau_constant = frames
        .iter()
        .map(|f| f.lambda_tau.frobenius() * (exps.mu1 * f.tau).exp())
        .fold(0.0, f64::max);
    let threshold = -RATE_FRACTION * exps.mu1;
    let lambda_sum_settling = spread(&lambda_sum[tail_idx..]);
    let eig_sum_settling = spread(&eig_sum[tail_idx..]);
    let bounded_pass = lambda_sum.iter().chain(&eig_sum).all(|v| v.is_finite())
        && lambda_sum_settling <= SETTLING_TOL
        && eig_sum_settling <= SETTLING_TOL;
    Ok(BoundReport {
        frames: frames.len(),
        lambda_norm_max,
        lambda_inv_norm_max,
        lambda_sum_max: lambda_sum.iter().cloned().fold(0.0, f64::max),
        eig_sum_max: eig_sum.iter().cloned().fold(0.0, f64::max),
        lambda_sum_settling,
        eig_sum_settling,
        form_lower,
        form_upper,
        fit_window: window,
        lambda_tau_rate,
        lambda_tau_r2,
        eigen_rate,
        eigen_rate_r2,
        lambda_tau_constant,
        mu1: exps.mu1,
        lambda_tau_pass: lambda_tau_rate <= threshold,
        eigen_rate_pass: eigen_rate <= threshold,
        bounded_pass,
    })
}

/// CSV with columns `tau, mu, d1, d2, d3, normLambdaTau, normGammaStar`.
pub fn frames_csv(frames: &[ModulationFrame]) -> String {
    let mut s = String::from("tau,mu,d1,d2,d3,normLambdaTau,normGammaStar\n");
    for f in frames {
        let d = f.eig.eigenvalues;
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            f.tau,
            f.mu,
            d[0],
            d[1],
            d[2],
            f.lambda_tau.frobenius(),
            f.gamma_star.frobenius()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{integrate_affine, integrate_free_streaming, AffineParams};
    use crate::time_frames::{build_rescaling, exponents};

    #[test]
    fn isotropic_lambda_is_identity() {
        let l = lambda_of(&Mat3::scalar(3.0)).unwrap();
        assert!((l - Mat3::IDENTITY).max_abs() < 1e-14);
        let g = gamma_star_of(&Mat3::scalar(3.0), &Mat3::scalar(0.7)).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn diagonal_lambda() {
        let l = lambda_of(&Mat3::diag([1.0, 2.0, 4.0])).unwrap();
        assert!((l - Mat3::diag([4.0, 1.0, 0.25])).max_abs() < 1e-13);
        assert!((l.det() - 1.0).abs() < 1e-13);
    }

    fn generic_params() -> AffineParams {
        let a0 = Mat3([[1.1, 0.2, 0.0], [0.0, 0.9, 0.1], [0.1, 0.0, 1.0]]);
        let v0 = Mat3([[0.6, 0.1, 0.0], [0.0, 0.3, 0.2], [0.1, -0.1, 0.5]]);
        AffineParams::new(a0, v0, 0.5, 1.5).unwrap()
    }

    #[test]
    fn frame_invariants_on_generic_run() {
        let traj = integrate_affine(&generic_params(), 50.0, 1e-11).unwrap();
        let resc = build_rescaling(&traj).unwrap();
        for &tau in &[0.0, 0.5, 1.7, resc.tau_max()] {
            let f = frame_at(tau, &resc).unwrap();
            assert!((f.lambda.det() - 1.0).abs() < 1e-10);
            assert!(f.gamma_star.trace().abs() < 1e-10);
            assert!((f.eig.reconstruct() - f.lambda).max_abs() < 1e-10);
            assert!((f.o.det() - 1.0).abs() < 1e-12);
            let (a, v) = resc.traj.eval(f.t).unwrap();
            let exact = lambda_tau_analytic(&a, &v).unwrap();
            assert!(
                (f.lambda_tau - exact).max_abs() < 1e-6 * exact.max_abs().max(1.0),
                "tau={tau}: {:e}",
                (f.lambda_tau - exact).max_abs()
            );
            // the eigenvalue rates match first-order perturbation theory
            let pl = f.eig.rotation * f.lambda_tau * f.eig.rotation.transpose();
            for i in 0..3 {
                assert!((f.eig_rates[i] - pl.0[i][i]).abs() < 1e-6, "tau={tau}");
            }
        }
    }

    #[test]
    fn frozen_frames_have_unit_constants() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        let traj = integrate_free_streaming(&p, 10.0, 1e-10).unwrap();
        let resc = build_rescaling(&traj).unwrap();
        let frames = frame_series(&resc, 10.0, 12).unwrap();
        let exps = exponents(1.5, 1.0, 1.0).unwrap();
        let r = verify_frame_bounds(&frames, &exps).unwrap();
        assert!((r.lambda_norm_max - 1.0).abs() < 1e-12);
        assert!((r.lambda_inv_norm_max - 1.0).abs() < 1e-12);
        assert!((r.form_lower - 1.0).abs() < 1e-12 && (r.form_upper - 1.0).abs() < 1e-12);
        assert_eq!(r.lambda_tau_rate, f64::NEG_INFINITY);
        assert_eq!(r.eigen_rate, f64::NEG_INFINITY);
        assert!(r.lambda_tau_pass && r.eigen_rate_pass && r.bounded_pass);
    }

    #[test]
    fn too_few_frames() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        let traj = integrate_free_streaming(&p, 1.0, 1e-10).unwrap();
        let resc = build_rescaling(&traj).unwrap();
        let frames = frame_series(&resc, 1.0, 5).unwrap();
        let exps = exponents(1.5, 1.0, 1.0).unwrap();
        assert!(matches!(verify_frame_bounds(&frames, &exps), Err(Error::InsufficientFrames { .. })));
    }

    #[test]
    fn out_of_range_tau() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        let traj = integrate_free_streaming(&p, 1.0, 1e-10).unwrap();
        let resc = build_rescaling(&traj).unwrap();
        assert!(matches!(frame_at(2.0, &resc), Err(Error::OutOfRange { .. })));
    }
}
