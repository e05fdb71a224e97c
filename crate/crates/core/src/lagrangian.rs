//! Gridded Lagrangian fields on a uniform cube `[-L, L]³`: stencils,
//! flow-map kinematics, the `η`-frame operators and the initial profiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat3, Vec3};

pub type Field = Vec<f64>;

/// Minimum number of nodes per axis.
pub const MIN_POINTS: usize = 17;
/// Radius of the bump profiles.
pub const BUMP_RADIUS: f64 = 0.8;
/// Fraction of the λ and ε budgets the profiles are scaled to.
pub const BUDGET_FILL: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub n: usize,
    pub half_width: f64,
    pub dx: f64,
}

impl Grid3 {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < MIN_POINTS || n.is_multiple_of(2) {
            return Err(Error::GridInvalid { reason: format!("n = {n} must be odd and at least {MIN_POINTS}") });
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::GridInvalid { reason: format!("half width {half_width} must be positive") });
        }
        Ok(Self { n, half_width, dx: 2.0 * half_width / (n - 1) as f64 })
    }

    /// Smallest grid of `n` points whose interior keeps a margin of four
    /// spacings around the ball of radius `reach`.
    pub fn containing(n: usize, reach: f64) -> Result<Self> {
        if n < MIN_POINTS {
            return Err(Error::GridInvalid { reason: format!("n = {n} below {MIN_POINTS}") });
        }
        let shrink = 1.0 - 8.0 / (n - 1) as f64;
        Self::new(n, reach / shrink)
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn coord(&self, i: usize) -> f64 {
        if 2 * i + 1 == self.n {
            0.0
        } else {
            -self.half_width + i as f64 * self.dx
        }
    }

    pub fn point(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        Vec3([self.coord(i), self.coord(j), self.coord(k)])
    }

    /// Number of nodes between `idx` and the nearest face.
    pub fn boundary_distance(&self, idx: usize) -> usize {
        self.ijk(idx).iter().map(|&p| p.min(self.n - 1 - p)).min().unwrap()
    }

    pub fn sample(&self, f: impl Fn(Vec3) -> f64 + Sync) -> Field {
        (0..self.len()).into_par_iter().map(|idx| f(self.point(idx))).collect()
    }

    pub fn sample_vec(&self, f: impl Fn(Vec3) -> Vec3 + Sync) -> VecField {
        let v: Vec<Vec3> = (0..self.len()).into_par_iter().map(|idx| f(self.point(idx))).collect();
        VecField::from_points(&v)
    }

    /// First derivative along `axis`: fourth-order centred in the interior,
    /// fourth-order one-sided on the two outermost layers.
    pub fn deriv(&self, f: &[f64], axis: usize) -> Field {
        assert_eq!(f.len(), self.len());
        let n = self.n;
        let stride = match axis {
            0 => n * n,
            1 => n,
            _ => 1,
        };
        let h = 12.0 * self.dx;
        let mut out = vec![0.0; f.len()];
        out.par_chunks_mut(n * n).enumerate().for_each(|(i, slab)| {
            for (local, o) in slab.iter_mut().enumerate() {
                let idx = i * n * n + local;
                let p = match axis {
                    0 => i,
                    1 => local / n,
                    _ => local % n,
                };
                let at = |q: isize| f[(idx as isize + q * stride as isize) as usize];
                *o = if p >= 2 && p + 2 < n {
                    (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / h
                } else if p == 0 {
                    (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)) / h
                } else if p == 1 {
                    (-3.0 * at(-1) - 10.0 * at(0) + 18.0 * at(1) - 6.0 * at(2) + at(3)) / h
                } else if p + 1 == n {
                    (25.0 * at(0) - 48.0 * at(-1) + 36.0 * at(-2) - 16.0 * at(-3) + 3.0 * at(-4)) / h
                } else {
                    (3.0 * at(1) + 10.0 * at(0) - 18.0 * at(-1) + 6.0 * at(-2) - at(-3)) / h
                };
            }
        });
        out
    }

    /// `∂^ν f` by repeated first derivatives.
    pub fn deriv_multi(&self, f: &[f64], nu: [usize; 3]) -> Field {
        let mut cur = f.to_vec();
        for (axis, &count) in nu.iter().enumerate() {
            for _ in 0..count {
                cur = self.deriv(&cur, axis);
            }
        }
        cur
    }

    /// Trapezoid weights per node (product rule over axes).
    fn weight(&self, idx: usize) -> f64 {
        let d3 = self.dx * self.dx * self.dx;
        self.ijk(idx)
            .iter()
            .map(|&p| if p == 0 || p + 1 == self.n { 0.5 } else { 1.0 })
            .product::<f64>()
            * d3
    }

    /// Trapezoid quadrature of `g(idx)`. Each `i`-slab is summed in order and
    /// the slab sums are combined sequentially, so the result does not depend
    /// on the thread count.
    pub fn integrate_with(&self, g: impl Fn(usize) -> f64 + Sync) -> f64 {
        let n2 = self.n * self.n;
        let slabs: Vec<f64> = (0..self.n)
            .into_par_iter()
            .map(|i| (i * n2..(i + 1) * n2).map(|idx| self.weight(idx) * g(idx)).sum())
            .collect();
        slabs.iter().sum()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.integrate_with(|idx| f[idx])
    }
}

/// Multi-indices `ν` with `|ν| = order`, in lexicographic order.
pub fn multi_indices(order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in (0..=order).rev() {
        for b in (0..=order - a).rev() {
            out.push([a, b, order - a - b]);
        }
    }
    out
}

/// All multi-indices with `|ν| ≤ max_order`, grouped by order.
pub fn multi_indices_upto(max_order: usize) -> Vec<[usize; 3]> {
    (0..=max_order).flat_map(multi_indices).collect()
}

/// Structure-of-arrays vector field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecField(pub [Field; 3]);

impl VecField {
    pub fn zeros(len: usize) -> Self {
        Self([vec![0.0; len], vec![0.0; len], vec![0.0; len]])
    }

    pub fn from_points(v: &[Vec3]) -> Self {
        let mut f = Self::zeros(v.len());
        for (idx, p) in v.iter().enumerate() {
            for c in 0..3 {
                f.0[c][idx] = p.0[c];
            }
        }
        f
    }

    pub fn len(&self) -> usize {
        self.0[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.0[0].is_empty()
    }

    pub fn at(&self, idx: usize) -> Vec3 {
        Vec3([self.0[0][idx], self.0[1][idx], self.0[2][idx]])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.clone().map(|c| c.into_iter().map(|v| v * s).collect()))
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for c in 0..3 {
            out.0[c].iter_mut().zip(&other.0[c]).for_each(|(a, b)| *a += s * b);
        }
        out
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| self.at(i).norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn deriv_multi(&self, grid: &Grid3, nu: [usize; 3]) -> Self {
        Self([0, 1, 2].map(|c| grid.deriv_multi(&self.0[c], nu)))
    }

    /// Zeroes every node within `layers` nodes of the boundary.
    pub fn clamp_boundary(&mut self, grid: &Grid3, layers: usize) {
        for idx in 0..self.len() {
            if grid.boundary_distance(idx) < layers {
                for c in 0..3 {
                    self.0[c][idx] = 0.0;
                }
            }
        }
    }
}

/// `DF[i][s] = ∂_s F^i`.
pub fn jacobian(grid: &Grid3, f: &VecField) -> Vec<Mat3> {
    let d: Vec<[Field; 3]> = (0..3).map(|c| [0, 1, 2].map(|s| grid.deriv(&f.0[c], s))).collect();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let mut m = Mat3::ZERO;
            for c in 0..3 {
                for s in 0..3 {
                    m.0[c][s] = d[c][s][idx];
                }
            }
            m
        })
        .collect()
}

pub fn gradient(grid: &Grid3, f: &[f64]) -> VecField {
    VecField([0, 1, 2].map(|s| grid.deriv(f, s)))
}

/// Flow-map kinematics of `η = y + θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    /// `Dθ`; `Dη = I + Dθ`.
    pub d_theta: Vec<Mat3>,
    /// `𝒜 = (Dη)⁻¹`.
    pub ainv: Vec<Mat3>,
    /// `𝒥 = det Dη`.
    pub jdet: Vec<f64>,
}

impl Kinematics {
    pub fn identity(len: usize) -> Self {
        Self { d_theta: vec![Mat3::ZERO; len], ainv: vec![Mat3::IDENTITY; len], jdet: vec![1.0; len] }
    }

    pub fn deta(&self, idx: usize) -> Mat3 {
        Mat3::IDENTITY + self.d_theta[idx]
    }
}

pub fn kinematics(grid: &Grid3, theta: &VecField) -> Result<Kinematics> {
    if theta.len() != grid.len() {
        return Err(Error::ShapeMismatch { expected: grid.len(), got: theta.len() });
    }
    let d_theta = jacobian(grid, theta);
    let pairs: Vec<(Mat3, f64)> = d_theta
        .par_iter()
        .enumerate()
        .map(|(node, d)| {
            let deta = Mat3::IDENTITY + *d;
            let jdet = deta.det();
            if !(jdet > 0.0) {
                return Err(Error::JacobianDegenerate { node, jdet });
            }
            Ok((deta.inverse_unchecked(jdet), jdet))
        })
        .collect::<Result<_>>()?;
    let (ainv, jdet) = pairs.into_iter().unzip();
    Ok(Kinematics { d_theta, ainv, jdet })
}

/// `[∇_η F]^i_r = 𝒜^s_r ∂_s F^i`, i.e. `DF·𝒜`.
pub fn grad_eta(df: &[Mat3], ainv: &[Mat3]) -> Vec<Mat3> {
    df.par_iter().zip(ainv).map(|(d, a)| *d * *a).collect()
}

/// `div_η F = tr(DF·𝒜)`.
pub fn div_eta(df: &[Mat3], ainv: &[Mat3]) -> Field {
    df.par_iter().zip(ainv).map(|(d, a)| (*d * *a).trace()).collect()
}

/// `Curl_{Λ𝒜} F = DF𝒜Λ − (DF𝒜Λ)ᵀ`.
pub fn curl_lambda_a(df: &[Mat3], ainv: &[Mat3], lambda: &Mat3) -> Vec<Mat3> {
    df.par_iter()
        .zip(ainv)
        .map(|(d, a)| {
            let m = *d * *a * *lambda;
            m - m.transpose()
        })
        .collect()
}

/// `[Λ𝒜∇f × F]^i_j = h_j F^i − h_i F^j` with `h = Λ𝒜ᵀ∇f`.
pub fn cross_lambda_a(f: &VecField, grad_f: &VecField, ainv: &[Mat3], lambda: &Mat3) -> Vec<Mat3> {
    (0..f.len())
        .into_par_iter()
        .map(|idx| {
            let h = *lambda * (ainv[idx].transpose() * grad_f.at(idx));
            let v = f.at(idx);
            v.outer(&h) - h.outer(&v)
        })
        .collect()
}

/// The four `η`-frame operators applied to one field.
#[derive(Clone, Debug)]
pub struct DiffOps {
    pub grad_eta: Vec<Mat3>,
    pub div_eta: Field,
    pub curl: Vec<Mat3>,
    pub cross: Option<Vec<Mat3>>,
}

pub fn differential_ops(
    grid: &Grid3,
    field: &VecField,
    kin: &Kinematics,
    lambda: &Mat3,
    scalar: Option<&[f64]>,
) -> Result<DiffOps> {
    for len in [field.len(), kin.ainv.len()] {
        if len != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.len(), got: len });
        }
    }
    let df = jacobian(grid, field);
    let cross = match scalar {
        Some(s) if s.len() != grid.len() => {
            return Err(Error::ShapeMismatch { expected: grid.len(), got: s.len() })
        }
        Some(s) => Some(cross_lambda_a(field, &gradient(grid, s), &kin.ainv, lambda)),
        None => None,
    };
    Ok(DiffOps {
        grad_eta: grad_eta(&df, &kin.ainv),
        div_eta: div_eta(&df, &kin.ainv),
        curl: curl_lambda_a(&df, &kin.ainv, lambda),
        cross,
    })
}

/// `∂_k (𝒥𝒜)^k_i` for every `i`, the discrete Piola defect.
pub fn piola_defect(grid: &Grid3, kin: &Kinematics) -> VecField {
    // cofactor rows a^k = 𝒥𝒜^k_·
    let cof: Vec<Mat3> = kin.ainv.iter().zip(&kin.jdet).map(|(a, j)| a.scale(*j)).collect();
    let mut out = VecField::zeros(grid.len());
    for i in 0..3 {
        for k in 0..3 {
            let comp: Field = cof.iter().map(|m| m.0[k][i]).collect();
            let d = grid.deriv(&comp, k);
            out.0[i].iter_mut().zip(&d).for_each(|(o, v)| *o += v);
        }
    }
    out
}

/// `e · exp(−r₀²/(r₀² − |y|²))` inside the ball of radius `r₀`, zero outside;
/// equals one at the origin.
pub fn bump(y: Vec3, r0: f64) -> f64 {
    let r2 = y.norm_sq();
    let s = r0 * r0;
    if r2 >= s {
        0.0
    } else {
        (1.0 - s / (s - r2)).exp()
    }
}

/// Gaussian weight `w(y) = e^{−|y|²/2}`.
pub fn weight(y: Vec3) -> f64 {
    (-0.5 * y.norm_sq()).exp()
}

/// `Σ_{|ν| ≤ order} ‖∂^ν f‖²` on the grid.
pub fn sobolev_sq(grid: &Grid3, f: &[f64], order: usize) -> f64 {
    multi_indices_upto(order)
        .iter()
        .map(|nu| {
            let d = grid.deriv_multi(f, *nu);
            grid.integrate_with(|idx| d[idx] * d[idx])
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfiles {
    /// `w` sampled at the nodes from the closed form.
    pub w: Field,
    pub beta: Field,
    pub grad_beta: VecField,
    pub lambda: f64,
    /// Achieved discrete `H^{N+1}` norm squared of `β`.
    pub beta_sobolev_sq: f64,
}

impl WeightProfiles {
    pub fn new(grid: &Grid3, beta: Field, lambda: f64, order: usize) -> Self {
        let beta_sobolev_sq = sobolev_sq(grid, &beta, order);
        Self {
            w: grid.sample(weight),
            grad_beta: gradient(grid, &beta),
            beta,
            lambda,
            beta_sobolev_sq,
        }
    }

    pub fn beta_max(&self) -> f64 {
        self.beta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Shapes multiplying the bump in `θ₀` and `V₀`; chosen to carry both
/// divergence and rotation.
pub fn theta_shape(y: Vec3) -> Vec3 {
    Vec3([0.6 + 0.8 * y[1], -0.4 - 0.8 * y[0] + 0.3 * y[2], 0.5 + 0.5 * y[0]])
}

pub fn velocity_shape(y: Vec3) -> Vec3 {
    Vec3([0.3 * y[0] - 0.6 * y[2], 0.7 + 0.2 * y[1], 0.6 * y[0] + 0.4])
}

pub fn beta_shape(y: Vec3) -> f64 {
    1.0 + 0.5 * y[0] - 0.25 * y[1] * y[2]
}

/// `(θ, V)` at one instant together with its kinematics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub tau: f64,
    pub theta: VecField,
    pub v: VecField,
    pub kin: Kinematics,
}

impl FlowState {
    pub fn new(grid: &Grid3, tau: f64, theta: VecField, v: VecField) -> Result<Self> {
        if v.len() != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.len(), got: v.len() });
        }
        let kin = kinematics(grid, &theta)?;
        Ok(Self { tau, theta, v, kin })
    }

    pub fn zero(grid: &Grid3, tau: f64) -> Self {
        Self {
            tau,
            theta: VecField::zeros(grid.len()),
            v: VecField::zeros(grid.len()),
            kin: Kinematics::identity(grid.len()),
        }
    }
}

/// Checks the grid resolves the bump: at least three spacings per radius and
/// a margin of four spacings beyond it.
pub fn check_resolution(grid: &Grid3) -> Result<()> {
    if BUMP_RADIUS / grid.dx < 3.0 {
        return Err(Error::BudgetInfeasible {
            reason: format!("bump radius {BUMP_RADIUS} spans {:.2} spacings, need 3", BUMP_RADIUS / grid.dx),
        });
    }
    check_margin(grid)
}

/// The unit ball plus four spacings fits in the box.
pub fn check_margin(grid: &Grid3) -> Result<()> {
    if grid.half_width < 1.0 + 4.0 * grid.dx {
        return Err(Error::BudgetInfeasible {
            reason: format!("half width {} leaves no margin around the unit ball", grid.half_width),
        });
    }
    Ok(())
}

/// Builds `β` with discrete `‖β‖²_{H^{N+1}} = BUDGET_FILL·λ`.
pub fn build_beta(grid: &Grid3, lambda: f64, order: usize) -> Result<WeightProfiles> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter { field: "lambda", reason: format!("{lambda} must be ≥ 0") });
    }
    if lambda > 0.0 {
        check_resolution(grid)?;
    } else {
        check_margin(grid)?;
    }
    let unit = grid.sample(|y| bump(y, BUMP_RADIUS) * beta_shape(y));
    let beta = if lambda == 0.0 {
        vec![0.0; grid.len()]
    } else {
        let s = (BUDGET_FILL * lambda / sobolev_sq(grid, &unit, order + 1)).sqrt();
        unit.iter().map(|v| v * s).collect()
    };
    Ok(WeightProfiles::new(grid, beta, lambda, order + 1))
}

/// Unit-amplitude `(θ₀, V₀)` before scaling.
pub fn unit_data(grid: &Grid3) -> (VecField, VecField) {
    let theta = grid.sample_vec(|y| theta_shape(y).scale(bump(y, BUMP_RADIUS)));
    let v = grid.sample_vec(|y| velocity_shape(y).scale(bump(y, BUMP_RADIUS)));
    (theta, v)
}

/// Profiles plus initial data scaled to the budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub profiles: WeightProfiles,
    pub theta0: VecField,
    pub v0: VecField,
    pub epsilon: f64,
    /// Achieved `𝒮ᴺ(θ₀,V₀) + ℬᴺ(V₀)`.
    pub data_size: f64,
}

/// Builds `β`, `θ₀`, `V₀` so that the discrete `‖β‖²_{H^{N+1}}` and
/// `𝒮ᴺ(θ₀,V₀) + ℬᴺ(V₀)` equal [`BUDGET_FILL`] times `λ` and `ε`.
pub fn build_profiles(
    grid: &Grid3,
    lambda: f64,
    epsilon: f64,
    order: usize,
    bg0: &crate::modulation::Background,
    coeffs: &crate::modulation::Coefficients,
) -> Result<InitialData> {
    use crate::diagnostics::norms::data_size;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter { field: "epsilon", reason: format!("{epsilon} must be ≥ 0") });
    }
    if order == 0 {
        return Err(Error::InvalidParameter { field: "order", reason: "must be at least 1".into() });
    }
    let profiles = build_beta(grid, lambda, order)?;
    let zero = VecField::zeros(grid.len());
    if epsilon == 0.0 {
        return Ok(InitialData { profiles, theta0: zero.clone(), v0: zero, epsilon, data_size: 0.0 });
    }
    check_resolution(grid)?;
    let (ut, uv) = unit_data(grid);
    let target = BUDGET_FILL * epsilon;
    let size = |s: f64| data_size(grid, &ut.scale(s), &uv.scale(s), bg0, &profiles, coeffs, order);
    // quadratic to leading order; a few secant-free rescalings absorb the 𝒜 dependence
    let mut s = (target / size(1e-6)?).sqrt() * 1e-6;
    let mut achieved = size(s)?;
    for _ in 0..8 {
        if (achieved / target - 1.0).abs() < 1e-6 {
            break;
        }
        s *= (target / achieved).sqrt();
        achieved = size(s)?;
    }
    if !(achieved <= epsilon) {
        return Err(Error::BudgetInfeasible { reason: format!("data size {achieved} exceeds ε = {epsilon}") });
    }
    Ok(InitialData { profiles, theta0: ut.scale(s), v0: uv.scale(s), epsilon, data_size: achieved })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid3 {
        Grid3::new(n, 1.5).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid3::new(16, 1.0).is_err());
        assert!(Grid3::new(15, 1.0).is_err());
        assert!(Grid3::new(17, 0.0).is_err());
        let g = Grid3::new(17, 2.0).unwrap();
        assert_eq!(g.coord(8), 0.0);
        assert_eq!(g.dx, 0.25);
        let g = Grid3::containing(33, 2.0).unwrap();
        assert!((g.half_width - 4.0 * g.dx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_is_exact_on_quartics() {
        let g = grid(17);
        let f = g.sample(|y| y[0].powi(4) - 2.0 * y[0] * y[1] + y[2].powi(3));
        let dx = g.deriv(&f, 0);
        let dz = g.deriv(&f, 2);
        for idx in 0..g.len() {
            let y = g.point(idx);
            assert!((dx[idx] - (4.0 * y[0].powi(3) - 2.0 * y[1])).abs() < 1e-10);
            assert!((dz[idx] - 3.0 * y[2] * y[2]).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_converges_at_fourth_order() {
        let err = |n: usize| {
            let g = grid(n);
            let f = g.sample(|y| (1.3 * y[1]).sin() * (0.7 * y[0]).cos());
            let d = g.deriv(&f, 1);
            (0..g.len())
                .map(|idx| {
                    let y = g.point(idx);
                    (d[idx] - 1.3 * (1.3 * y[1]).cos() * (0.7 * y[0]).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(17), err(33));
        assert!(e1 / e2 > 14.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn zero_theta_kinematics() {
        let g = grid(17);
        let k = kinematics(&g, &VecField::zeros(g.len())).unwrap();
        assert!(k.jdet.iter().all(|j| *j == 1.0));
        assert!(k.ainv.iter().all(|a| *a == Mat3::IDENTITY));
    }

    #[test]
    fn linear_theta_jacobian() {
        let g = grid(17);
        let theta = g.sample_vec(|y| y.scale(0.01));
        let k = kinematics(&g, &theta).unwrap();
        for j in &k.jdet {
            assert!((j - 1.01f64.powi(3)).abs() < 1e-13);
        }
    }

    #[test]
    fn degenerate_jacobian_reported() {
        let g = grid(17);
        let theta = g.sample_vec(|y| Vec3([-1.5 * y[0], 0.0, 0.0]));
        assert!(matches!(kinematics(&g, &theta), Err(Error::JacobianDegenerate { .. })));
    }

    #[test]
    fn constant_field_has_zero_divergence() {
        let g = grid(17);
        let f = g.sample_vec(|_| Vec3([1.0, -2.0, 0.5]));
        let ops = differential_ops(&g, &f, &Kinematics::identity(g.len()), &Mat3::IDENTITY, None).unwrap();
        assert!(ops.div_eta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn curl_is_antisymmetric_and_classical_at_identity() {
        let g = grid(17);
        let f = g.sample_vec(|y| Vec3([y[1] * y[2], -y[0], y[0] * y[1]]));
        let ops = differential_ops(&g, &f, &Kinematics::identity(g.len()), &Mat3::IDENTITY, None).unwrap();
        for (idx, c) in ops.curl.iter().enumerate() {
            assert_eq!(*c, -c.transpose());
            let y = g.point(idx);
            // ∂_1F² − ∂_2F¹ = −1 − y₃ sits in entry [2][1]
            assert!((c.0[1][0] - (-1.0 - y[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let g = grid(17);
        let f = VecField::zeros(10);
        assert!(matches!(
            differential_ops(&g, &f, &Kinematics::identity(g.len()), &Mat3::IDENTITY, None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bump_support_and_peak() {
        assert_eq!(bump(Vec3([0.0; 3]), 0.8), 1.0);
        assert_eq!(bump(Vec3([0.8, 0.0, 0.0]), 0.8), 0.0);
        assert!(bump(Vec3([0.5, 0.0, 0.0]), 0.8) > 0.0);
    }

    #[test]
    fn beta_budget() {
        let g = Grid3::new(33, 1.5).unwrap();
        let p = build_beta(&g, 1e-4, 2).unwrap();
        assert!(p.beta_sobolev_sq >= 0.9e-4 && p.beta_sobolev_sq <= 1e-4);
        // independent quadrature of the H³ proxy
        let direct: f64 = multi_indices_upto(3)
            .iter()
            .map(|nu| {
                let d = g.deriv_multi(&p.beta, *nu);
                d.iter().map(|v| v * v).sum::<f64>() * g.dx.powi(3)
            })
            .sum();
        assert!((direct - p.beta_sobolev_sq).abs() < 1e-12 * direct);
        let zero = build_beta(&g, 0.0, 2).unwrap();
        assert!(zero.beta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn coarse_grid_is_infeasible() {
        let g = Grid3::new(17, 4.0).unwrap();
        assert!(matches!(build_beta(&g, 1e-4, 2), Err(Error::BudgetInfeasible { .. })));
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices_upto(2).len(), 10);
        assert_eq!(multi_indices_upto(3).len(), 20);
        assert_eq!(multi_indices(1), vec![[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    }

    #[test]
    fn trapezoid_gaussian() {
        let g = Grid3::new(41, 8.0).unwrap();
        let w = g.sample(weight);
        let total = g.integrate(&w);
        assert!((total - (2.0 * std::f64::consts::PI).powf(1.5)).abs() < 1e-8);
    }
}
