//! The affine matrix ODE `A'' = C̄ (det A)^{-1/α} A^{-⊤}` and its asymptotics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{geomspace, log_log_fit};
use crate::tensor::Mat3;

/// Parameters of one affine motion. `cbar` is derived and kept consistent
/// by [`AffineParams::new`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a0: Mat3,
    pub a0dot: Mat3,
    pub tbar: f64,
    pub alpha: f64,
    cbar: f64,
}

/// Expansion regime. Below `α = 3/2` linear expansion is a selection on the
/// data rather than automatic, so det-growth checks are only reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Automatic,
    Selected,
}

impl AffineParams {
    pub fn new(a0: Mat3, a0dot: Mat3, tbar: f64, alpha: f64) -> Result<Self> {
        if !a0.is_finite() || !a0dot.is_finite() {
            return Err(Error::InvalidParameter { field: "a0", reason: "non-finite entry".into() });
        }
        let det0 = a0.det();
        if !(det0 > 0.0) {
            return Err(Error::NonPositiveDeterminant { det: det0 });
        }
        if !(tbar > 0.0) || !tbar.is_finite() {
            return Err(Error::InvalidParameter { field: "tbar", reason: format!("must be > 0, got {tbar}") });
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter { field: "alpha", reason: format!("must be > 0, got {alpha}") });
        }
        let cbar = tbar * det0.powf(1.0 / alpha);
        Ok(Self { a0, a0dot, tbar, alpha, cbar })
    }

    /// Isotropic data `A0 = a·I`, `A0' = b·I`.
    pub fn isotropic(a: f64, b: f64, tbar: f64, alpha: f64) -> Result<Self> {
        Self::new(Mat3::scalar(a), Mat3::scalar(b), tbar, alpha)
    }

    pub fn cbar(&self) -> f64 {
        self.cbar
    }

    pub fn regime(&self) -> Regime {
        if self.alpha >= 1.5 {
            Regime::Automatic
        } else {
            Regime::Selected
        }
    }

    /// Affine temperature `T_A = C̄ (det A)^{-1/α}`.
    pub fn temperature(&self, det_a: f64) -> f64 {
        self.cbar * det_a.powf(-1.0 / self.alpha)
    }
}

/// `C̄ (det A)^{-1/α} A^{-⊤}`.
pub fn affine_rhs(a: &Mat3, params: &AffineParams) -> Result<Mat3> {
    let det = a.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let inv = a.inverse()?;
    Ok(inv.transpose().scale(params.cbar * det.powf(-1.0 / params.alpha)))
}

/// First integral `½ tr(A'ᵀA') + α C̄ (det A)^{-1/α}`.
pub fn ode_energy(a: &Mat3, adot: &Mat3, params: &AffineParams) -> Result<f64> {
    let det = a.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let kinetic = 0.5 * (adot.transpose() * *adot).trace();
    Ok(kinetic + params.alpha * params.cbar * det.powf(-1.0 / params.alpha))
}

#[derive(Clone, Copy, Debug)]
struct State {
    a: Mat3,
    v: Mat3,
}

impl State {
    fn axpy(&self, h: f64, k: &[(f64, &State)]) -> State {
        let mut out = *self;
        for &(c, s) in k {
            if c != 0.0 {
                out.a += s.a.scale(h * c);
                out.v += s.v.scale(h * c);
            }
        }
        out
    }
}

type Rhs<'a> = dyn Fn(&Mat3) -> Result<Mat3> + 'a;

fn deriv(s: &State, rhs: &Rhs) -> Result<State> {
    Ok(State { a: s.v, v: rhs(&s.a)? })
}

// Dormand–Prince 5(4) tableau.
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Sampled solution with piecewise cubic Hermite dense output: `A` from
/// `(A, A')` and `A'` from `(A', A'')` on each step interval.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineTrajectory {
    pub params: AffineParams,
    pub rel_tol: f64,
    pub t: Vec<f64>,
    pub a: Vec<Mat3>,
    pub adot: Vec<Mat3>,
    pub addot: Vec<Mat3>,
    pub det_a: Vec<f64>,
    pub rejected_steps: usize,
}

fn hermite(t0: f64, t1: f64, y0: &Mat3, d0: &Mat3, y1: &Mat3, d1: &Mat3, t: f64) -> (Mat3, Mat3) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = y0.scale(h00) + d0.scale(h * h10) + y1.scale(h01) + d1.scale(h * h11);
    // derivative of the same cubic, used for C¹ checks
    let g00 = (6.0 * s2 - 6.0 * s) / h;
    let g10 = 3.0 * s2 - 4.0 * s + 1.0;
    let g01 = (-6.0 * s2 + 6.0 * s) / h;
    let g11 = 3.0 * s2 - 2.0 * s;
    let slope = y0.scale(g00) + d0.scale(g10) + y1.scale(g01) + d1.scale(g11);
    (value, slope)
}

impl AffineTrajectory {
    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn interval(&self, t: f64) -> Result<usize> {
        let t_end = self.t_end();
        if !(t >= self.t[0] && t <= t_end) {
            return Err(Error::OutOfRange { tau: t, tau_max: t_end });
        }
        let k = self.t.partition_point(|&s| s <= t);
        Ok(k.saturating_sub(1).min(self.t.len() - 2))
    }

    /// Dense output `(A(t), A'(t))`.
    pub fn eval(&self, t: f64) -> Result<(Mat3, Mat3)> {
        if self.t.len() == 1 {
            if t == self.t[0] {
                return Ok((self.a[0], self.adot[0]));
            }
            return Err(Error::OutOfRange { tau: t, tau_max: self.t[0] });
        }
        let k = self.interval(t)?;
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        let (a, _) = hermite(t0, t1, &self.a[k], &self.adot[k], &self.a[k + 1], &self.adot[k + 1], t);
        let (v, _) = hermite(t0, t1, &self.adot[k], &self.addot[k], &self.adot[k + 1], &self.addot[k + 1], t);
        Ok((a, v))
    }

    /// Derivative of the position interpolant; agrees with the velocity
    /// interpolant to integrator tolerance.
    pub fn eval_position_slope(&self, t: f64) -> Result<Mat3> {
        let k = self.interval(t)?;
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        Ok(hermite(t0, t1, &self.a[k], &self.adot[k], &self.a[k + 1], &self.adot[k + 1], t).1)
    }

    pub fn energy_at_node(&self, k: usize) -> f64 {
        ode_energy(&self.a[k], &self.adot[k], &self.params).unwrap_or(f64::NAN)
    }

    /// Largest `|E(t) − E(0)| / |E(0)|` over the nodes.
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy_at_node(0);
        (0..self.len())
            .map(|k| ((self.energy_at_node(k) - e0) / e0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest relative mismatch between `(det A)'` computed by cofactor
    /// contraction and by `det A · tr(A'A⁻¹)`.
    pub fn max_jacobi_mismatch(&self) -> f64 {
        (0..self.len())
            .map(|k| {
                let a = &self.a[k];
                let v = &self.adot[k];
                let cof = a.cofactor();
                let mut direct = 0.0;
                for r in 0..3 {
                    for c in 0..3 {
                        direct += cof.0[r][c] * v.0[r][c];
                    }
                }
                let inv = a.inverse_unchecked(self.det_a[k]);
                let jacobi = self.det_a[k] * (*v * inv).trace();
                let scale = self.det_a[k] * v.frobenius() * inv.frobenius();
                (direct - jacobi).abs() / scale.max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Relative spread `(max − min)/mean` of `det A(t)/(1+t³)` sampled on a
    /// geometric grid in `[t_lo, t_hi]`.
    pub fn det_ratio_variation(&self, t_lo: f64, t_hi: f64, samples: usize) -> Result<(f64, f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &t in &geomspace(t_lo, t_hi, samples) {
            let (a, _) = self.eval(t)?;
            let r = a.det() / (1.0 + t * t * t);
            lo = lo.min(r);
            hi = hi.max(r);
            sum += r;
        }
        let mean = sum / samples as f64;
        Ok(((hi - lo) / mean, lo, hi))
    }

    /// CSV with columns `t, A11..A33, Adot11..Adot33, detA, energy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for p in ["A", "Adot"] {
            for r in 1..=3 {
                for c in 1..=3 {
                    let _ = write!(s, ",{p}{r}{c}");
                }
            }
        }
        s.push_str(",detA,energy\n");
        for k in 0..self.len() {
            let _ = write!(s, "{:.16e}", self.t[k]);
            for v in self.a[k].to_array().iter().chain(self.adot[k].to_array().iter()) {
                let _ = write!(s, ",{v:.16e}");
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", self.det_a[k], self.energy_at_node(k));
        }
        s
    }
}

/// Outcome of an integration that may stop early on collapse.
#[derive(Clone, Debug)]
pub struct Integration {
    pub trajectory: AffineTrajectory,
    pub failure: Option<Error>,
}

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

fn validate_tol(t_end: f64, rel_tol: f64) -> Result<()> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter { field: "t_end", reason: format!("must be > 0, got {t_end}") });
    }
    if !(1e-12..=1e-4).contains(&rel_tol) {
        return Err(Error::InvalidParameter {
            field: "rel_tol",
            reason: format!("must lie in [1e-12, 1e-4], got {rel_tol}"),
        });
    }
    Ok(())
}

/// Integrates with an arbitrary forcing `A'' = rhs(A)`. Collapse or step
/// underflow stops the integration and is returned alongside the partial
/// trajectory.
pub fn integrate_with(
    params: &AffineParams,
    t_end: f64,
    rel_tol: f64,
    rhs: &Rhs,
) -> Result<Integration> {
    validate_tol(t_end, rel_tol)?;
    let mut y = State { a: params.a0, v: params.a0dot };
    let mut f = deriv(&y, rhs)?;
    let mut t = 0.0;
    let mut traj = AffineTrajectory {
        params: *params,
        rel_tol,
        t: vec![0.0],
        a: vec![y.a],
        adot: vec![y.v],
        addot: vec![f.v],
        det_a: vec![y.a.det()],
        rejected_steps: 0,
    };
    let atol = rel_tol;
    let scale_of = |s: &State| s.a.max_abs().max(s.v.max_abs());
    // initial step from the usual two-derivative heuristic
    let d0 = scale_of(&y);
    let d1 = scale_of(&f);
    let mut h = if d1 > 0.0 { 0.01 * (d0 + atol) / d1 } else { 1e-3 };
    h = h.min(t_end).max(1e-10);
    let mut err_prev: f64 = 1e-4;
    let h_floor = |t: f64| 1e-14 * (1.0 + t.abs());

    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let stages = (|| -> Result<(State, State, f64)> {
            let k1 = f;
            let k2 = deriv(&y.axpy(h, &[(A2[0], &k1)]), rhs)?;
            let k3 = deriv(&y.axpy(h, &[(A3[0], &k1), (A3[1], &k2)]), rhs)?;
            let k4 = deriv(&y.axpy(h, &[(A4[0], &k1), (A4[1], &k2), (A4[2], &k3)]), rhs)?;
            let k5 = deriv(&y.axpy(h, &[(A5[0], &k1), (A5[1], &k2), (A5[2], &k3), (A5[3], &k4)]), rhs)?;
            let k6 = deriv(
                &y.axpy(h, &[(A6[0], &k1), (A6[1], &k2), (A6[2], &k3), (A6[3], &k4), (A6[4], &k5)]),
                rhs,
            )?;
            let ks = [&k1, &k2, &k3, &k4, &k5, &k6];
            let terms: Vec<(f64, &State)> = (0..6).map(|i| (B5[i], ks[i])).collect();
            let y_new = y.axpy(h, &terms);
            let k7 = deriv(&y_new, rhs)?;
            let mut err = 0.0_f64;
            for r in 0..3 {
                for c in 0..3 {
                    let mut ea = 0.0;
                    let mut ev = 0.0;
                    for (i, k) in ks.iter().enumerate() {
                        ea += E[i] * k.a.0[r][c];
                        ev += E[i] * k.v.0[r][c];
                    }
                    ea += E[6] * k7.a.0[r][c];
                    ev += E[6] * k7.v.0[r][c];
                    let sa = atol + rel_tol * y.a.0[r][c].abs().max(y_new.a.0[r][c].abs());
                    let sv = atol + rel_tol * y.v.0[r][c].abs().max(y_new.v.0[r][c].abs());
                    err = err.max((h * ea).abs() / sa).max((h * ev).abs() / sv);
                }
            }
            Ok((y_new, k7, err))
        })();

        match stages {
            Ok((y_new, k7, err)) if err <= 1.0 && y_new.a.det() > 0.0 => {
                t += h;
                if (t_end - t).abs() <= 1e-13 * t_end.max(1.0) {
                    t = t_end;
                }
                y = y_new;
                f = k7;
                traj.t.push(t);
                traj.a.push(y.a);
                traj.adot.push(y.v);
                traj.addot.push(f.v);
                traj.det_a.push(y.a.det());
                let err_c = err.max(1e-10);
                let fac = SAFETY * err_c.powf(-PI_ALPHA) * err_prev.powf(PI_BETA);
                h *= fac.clamp(FAC_MIN, FAC_MAX);
                err_prev = err_c;
            }
            Ok((_, _, err)) => {
                traj.rejected_steps += 1;
                let fac = if err.is_finite() { (SAFETY * err.powf(-0.2)).max(FAC_MIN) } else { FAC_MIN };
                h *= fac.min(1.0);
            }
            Err(_) => {
                // a stage left GL⁺(3); shrink and retry
                traj.rejected_steps += 1;
                h *= FAC_MIN;
            }
        }
        if h < h_floor(t) && t < t_end {
            let failure = Error::StepFailure {
                t,
                reason: format!("step size underflow (h = {h:e}, det A = {:e})", y.a.det()),
            };
            return Ok(Integration { trajectory: traj, failure: Some(failure) });
        }
    }
    Ok(Integration { trajectory: traj, failure: None })
}

/// Integrates the affine ODE on `[0, t_end]`.
pub fn integrate_affine(params: &AffineParams, t_end: f64, rel_tol: f64) -> Result<AffineTrajectory> {
    let p = *params;
    let run = integrate_with(params, t_end, rel_tol, &move |a: &Mat3| affine_rhs(a, &p))?;
    match run.failure {
        Some(e) => Err(e),
        None => Ok(run.trajectory),
    }
}

/// Integrates with the forcing switched off (`A'' = 0`), i.e. exact linear
/// motion `A(t) = A0 + t A0'`. Test hook for the asymptotic machinery.
pub fn integrate_free_streaming(params: &AffineParams, t_end: f64, rel_tol: f64) -> Result<AffineTrajectory> {
    let run = integrate_with(params, t_end, rel_tol, &|_: &Mat3| Ok(Mat3::ZERO))?;
    match run.failure {
        Some(e) => Err(e),
        None => Ok(run.trajectory),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub a1_est: Mat3,
    pub mu1_est: f64,
    /// `(t, det A / (1 + t³))` on a geometric grid.
    pub ratio_series: Vec<(f64, f64)>,
    /// Log-log slope of `‖A'(t) − A1‖`; `-∞` when identically zero.
    pub m_decay_exponent: f64,
    pub m_decay_window: (f64, f64),
    pub m_decay_r2: f64,
}

/// Minimum span required by [`asymptotic_fit`].
pub const ASYMPTOTIC_MIN_T: f64 = 100.0;

pub fn asymptotic_fit(traj: &AffineTrajectory) -> Result<AsymptoticFit> {
    let t_end = traj.t_end();
    if t_end < ASYMPTOTIC_MIN_T {
        return Err(Error::TrajectoryTooShort { t_end, required: ASYMPTOTIC_MIN_T });
    }
    let a1 = *traj.adot.last().unwrap();
    let det1 = a1.det();
    let mu1 = if det1 > 0.0 { det1.cbrt() } else { f64::NAN };
    let mut ratio_series = Vec::new();
    for &t in &geomspace(1.0, t_end, 61) {
        let (a, _) = traj.eval(t)?;
        ratio_series.push((t, a.det() / (1.0 + t * t * t)));
    }
    let window = (t_end / 100.0, t_end / 10.0);
    let ts = geomspace(window.0, window.1, 41);
    let mut norms = Vec::with_capacity(ts.len());
    for &t in &ts {
        let (_, v) = traj.eval(t)?;
        norms.push((v - a1).frobenius());
    }
    let (exponent, r2) = if norms.iter().all(|v| *v == 0.0) {
        (f64::NEG_INFINITY, 1.0)
    } else {
        match log_log_fit(&ts, &norms) {
            Some(f) => (f.slope, f.r_squared),
            None => (f64::NEG_INFINITY, 1.0),
        }
    };
    Ok(AsymptoticFit {
        a1_est: a1,
        mu1_est: mu1,
        ratio_series,
        m_decay_exponent: exponent,
        m_decay_window: window,
        m_decay_r2: r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhs_examples() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        assert!((affine_rhs(&Mat3::IDENTITY, &p).unwrap() - Mat3::IDENTITY).max_abs() < 1e-15);

        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 3.0).unwrap();
        let r = affine_rhs(&Mat3::scalar(2.0), &p).unwrap();
        assert!((r - Mat3::scalar(0.25)).max_abs() < 1e-15);

        let p = AffineParams::isotropic(1.0, 0.0, 2.0, 1.5).unwrap();
        let r = affine_rhs(&Mat3::diag([1.0, 1.0, 2.0]), &p).unwrap();
        let k = 2.0 * 2f64.powf(-2.0 / 3.0);
        assert!((r - Mat3::diag([k, k, 0.5 * k])).max_abs() < 1e-14);
    }

    #[test]
    fn rhs_rejects_flipped_orientation() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        assert!(matches!(
            affine_rhs(&Mat3::diag([1.0, 1.0, -1.0]), &p),
            Err(Error::NonPositiveDeterminant { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(AffineParams::isotropic(1.0, 0.0, 0.0, 1.5).is_err());
        assert!(AffineParams::isotropic(1.0, 0.0, 1.0, -1.0).is_err());
        assert!(AffineParams::new(Mat3::diag([1.0, 1.0, -1.0]), Mat3::ZERO, 1.0, 1.5).is_err());
        let p = AffineParams::isotropic(2.0, 0.0, 1.5, 3.0).unwrap();
        assert!((p.cbar() - 1.5 * 8f64.powf(1.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn energy_examples() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        assert_eq!(ode_energy(&Mat3::IDENTITY, &Mat3::ZERO, &p).unwrap(), 1.5);
        let v = Mat3::diag([0.3, -0.2, 0.5]);
        let e1 = ode_energy(&Mat3::IDENTITY, &v, &p).unwrap() - 1.5;
        let e2 = ode_energy(&Mat3::IDENTITY, &v.scale(2.0), &p).unwrap() - 1.5;
        assert!((e2 - 4.0 * e1).abs() < 1e-15);
    }

    #[test]
    fn tolerance_bounds_enforced() {
        let p = AffineParams::isotropic(1.0, 0.0, 1.0, 1.5).unwrap();
        assert!(integrate_affine(&p, 1.0, 1e-3).is_err());
        assert!(integrate_affine(&p, 1.0, 1e-13).is_err());
        assert!(integrate_affine(&p, -1.0, 1e-8).is_err());
    }

    #[test]
    fn isotropic_from_rest_matches_closed_form() {
        // α = 3/2, A0 = I, A0' = 0: a(t) = sqrt(1 + T̄ t²)
        let tbar = 0.7;
        let p = AffineParams::isotropic(1.0, 0.0, tbar, 1.5).unwrap();
        let traj = integrate_affine(&p, 10.0, 1e-11).unwrap();
        for &t in &[0.5, 2.0, 7.3, 10.0] {
            let (a, v) = traj.eval(t).unwrap();
            let exact = (1.0 + tbar * t * t).sqrt();
            let dexact = tbar * t / exact;
            assert!((a - Mat3::scalar(exact)).max_abs() < 1e-8, "t={t}");
            assert!((v - Mat3::scalar(dexact)).max_abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn symmetric_data_stays_symmetric() {
        let a0 = Mat3([[1.2, 0.1, 0.0], [0.1, 0.9, 0.05], [0.0, 0.05, 1.0]]);
        let p = AffineParams::new(a0, Mat3::ZERO, 1.0, 2.0).unwrap();
        let traj = integrate_affine(&p, 20.0, 1e-10).unwrap();
        for a in &traj.a {
            assert!(a.max_asymmetry() <= 1e-9 * a.max_abs());
        }
    }

    #[test]
    fn free_streaming_fit() {
        let p = AffineParams::isotropic(1.0, 1.0, 1.0, 1.5).unwrap();
        let traj = integrate_free_streaming(&p, 200.0, 1e-10).unwrap();
        let fit = asymptotic_fit(&traj).unwrap();
        assert!((fit.a1_est - Mat3::IDENTITY).max_abs() < 1e-12);
        assert!((fit.mu1_est - 1.0).abs() < 1e-12);
        assert_eq!(fit.m_decay_exponent, f64::NEG_INFINITY);
        for &(t, r) in &fit.ratio_series {
            let exact = (1.0 + t).powi(3) / (1.0 + t * t * t);
            assert!((r - exact).abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn short_trajectory_rejected() {
        let p = AffineParams::isotropic(1.0, 1.0, 1.0, 1.5).unwrap();
        let traj = integrate_affine(&p, 10.0, 1e-8).unwrap();
        assert!(matches!(asymptotic_fit(&traj), Err(Error::TrajectoryTooShort { .. })));
    }

    #[test]
    fn dense_output_is_c1_at_nodes() {
        let a0 = Mat3([[1.0, 0.2, 0.0], [0.0, 1.1, -0.1], [0.1, 0.0, 0.9]]);
        let v0 = Mat3([[0.5, 0.0, 0.1], [0.2, 0.3, 0.0], [0.0, -0.1, 0.4]]);
        let p = AffineParams::new(a0, v0, 1.0, 1.5).unwrap();
        let traj = integrate_affine(&p, 5.0, 1e-10).unwrap();
        for k in 1..traj.len() - 1 {
            let t = traj.t[k];
            let eps = 1e-9 * (traj.t[k + 1] - traj.t[k]);
            let left = traj.eval_position_slope(t - eps).unwrap();
            let right = traj.eval_position_slope(t + eps).unwrap();
            assert!((left - right).max_abs() < 1e-6);
            let (_, v) = traj.eval(t).unwrap();
            assert!((v - traj.adot[k]).max_abs() < 1e-14);
        }
    }

    #[test]
    fn collapse_is_reported_not_panicked() {
        // strongly contracting data with a tiny temperature: det A reaches
        // zero before the pressure can turn the motion around
        let p = AffineParams::new(Mat3::IDENTITY, Mat3::diag([-5.0, 0.0, 0.0]), 1e-6, 1.5).unwrap();
        let run = integrate_with(&p, 2.0, 1e-9, &move |a: &Mat3| affine_rhs(a, &p)).unwrap();
        if let Some(e) = &run.failure {
            assert!(matches!(e, Error::StepFailure { .. }));
        }
        assert!(run.trajectory.det_a.iter().all(|d| *d > 0.0));
    }
}
