//! Fixed-size 3×3 matrix and 3-vector kernels.
//!
//! Matrices are row-major: `m.0[r][c]`. Everything here is a plain value
//! type with no allocation, so the grid kernels can call it per node.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold for invertibility: `|det M| > DET_EPS * ‖M‖_F³`.
pub const DET_EPS: f64 = 1e-13;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        let a = &self.0;
        let b = &o.0;
        Vec3([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    /// Outer product `a bᵀ`.
    pub fn outer(&self, o: &Vec3) -> Mat3 {
        let mut m = Mat3::ZERO;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[r] * o.0[c];
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Mat3(rows)
    }

    pub fn diag(d: [f64; 3]) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn scalar(s: f64) -> Self {
        Mat3::diag([s, s, s])
    }

    /// Row-major flattening, matching the CSV column order `m11..m33`.
    pub fn to_array(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        Mat3([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }

    pub fn row(&self, r: usize) -> Vec3 {
        Vec3(self.0[r])
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3([self.0[0][c], self.0[1][c], self.0[2][c]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Cofactor matrix `C` with `C[r][c] = (-1)^{r+c} minor(r, c)`; equals `det · M⁻ᵀ`.
    pub fn cofactor(&self) -> Mat3 {
        let m = &self.0;
        let mut c = Mat3::ZERO;
        for r in 0..3 {
            for k in 0..3 {
                let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
                let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
                // cyclic index order already carries the sign
                c.0[r][k] = m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1];
            }
        }
        c
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Spectral norm via the eigenvalues of `MᵀM`.
    pub fn norm2(&self) -> f64 {
        let g = self.transpose() * *self;
        let (vals, _) = jacobi_eigen(&g);
        vals.iter().fold(0.0_f64, |a, v| a.max(*v)).max(0.0).sqrt()
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for v in out.0.iter_mut().flatten() {
            *v *= s;
        }
        out
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn sym_part(&self) -> Mat3 {
        (*self + self.transpose()).scale(0.5)
    }

    pub fn max_asymmetry(&self) -> f64 {
        (*self - self.transpose()).max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Threshold below which `|det|` counts as singular.
    pub fn singular_threshold(&self) -> f64 {
        DET_EPS * self.frobenius().powi(3)
    }

    pub fn inverse(&self) -> Result<Mat3> {
        let det = self.det();
        let threshold = self.singular_threshold();
        if !(det.abs() > threshold) {
            return Err(Error::SingularMatrix { det, threshold });
        }
        Ok(self.cofactor().transpose().scale(1.0 / det))
    }

    /// Inverse without the conditioning check, for hot loops where the
    /// caller has already validated the determinant.
    #[inline]
    pub fn inverse_unchecked(&self, det: f64) -> Mat3 {
        self.cofactor().transpose().scale(1.0 / det)
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.0[r][c]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.0[r][c]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut out = self;
        out += o;
        out
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, o: Mat3) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] += o.0[r][c];
            }
        }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut out = self;
        out -= o;
        out
    }
}

impl SubAssign for Mat3 {
    fn sub_assign(&mut self, o: Mat3) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] -= o.0[r][c];
            }
        }
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        self.scale(-1.0)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = Mat3::ZERO;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] =
                    self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        out
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(&v)
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        self.scale(s)
    }
}

/// Determinant, inverse and cofactor of `m` (cofactor = det · inverse⊤).
pub fn mat3_kinematics(m: &Mat3) -> Result<(f64, Mat3, Mat3)> {
    let det = m.det();
    let inv = m.inverse()?;
    Ok((det, inv, m.cofactor()))
}

/// Eigendecomposition `S = Pᵀ diag(d) P` of a symmetric positive definite matrix.
///
/// Rows of `rotation` are the unit eigenvectors; `eigenvalues` are sorted
/// in descending order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymEig3 {
    pub rotation: Mat3,
    pub eigenvalues: [f64; 3],
}

impl SymEig3 {
    pub fn reconstruct(&self) -> Mat3 {
        self.rotation.transpose() * Mat3::diag(self.eigenvalues) * self.rotation
    }

    pub fn d_max(&self) -> f64 {
        self.eigenvalues.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn d_min(&self) -> f64 {
        self.eigenvalues.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Reorders and re-signs the eigenvectors so that each row overlaps
    /// maximally (and positively) with the matching row of `prev`. Keeps
    /// `det P = +1`.
    pub fn align_to(&self, prev: &SymEig3) -> SymEig3 {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let overlap = |i: usize, j: usize| self.rotation.row(i).dot(&prev.rotation.row(j)).abs();
        let mut best = PERMS[0];
        let mut best_score = f64::MIN;
        for p in PERMS {
            // p[j] = row of self placed at slot j
            let score: f64 = (0..3).map(|j| overlap(p[j], j)).sum();
            if score > best_score + 1e-12 {
                best_score = score;
                best = p;
            }
        }
        let mut rot = Mat3::ZERO;
        let mut vals = [0.0; 3];
        for j in 0..3 {
            let row = self.rotation.row(best[j]);
            let s = if row.dot(&prev.rotation.row(j)) < 0.0 { -1.0 } else { 1.0 };
            rot.0[j] = row.scale(s).0;
            vals[j] = self.eigenvalues[best[j]];
        }
        if rot.det() < 0.0 {
            // flip the row with the weakest overlap
            let weakest = (0..3)
                .min_by(|&a, &b| {
                    let oa = rot.row(a).dot(&prev.rotation.row(a)).abs();
                    let ob = rot.row(b).dot(&prev.rotation.row(b)).abs();
                    oa.partial_cmp(&ob).unwrap()
                })
                .unwrap();
            rot.0[weakest] = rot.row(weakest).scale(-1.0).0;
        }
        SymEig3 { rotation: rot, eigenvalues: vals }
    }
}

const JACOBI_MAX_SWEEPS: usize = 30;

/// Cyclic Jacobi on a symmetric matrix. Returns the (unsorted) eigenvalues
/// and a matrix whose columns are the eigenvectors.
fn jacobi_eigen(s: &Mat3) -> ([f64; 3], Mat3) {
    let mut a = s.sym_part();
    let mut v = Mat3::IDENTITY;
    let scale = s.frobenius();
    let tol = 1e-14 * scale;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (a.0[0][1].powi(2) + a.0[0][2].powi(2) + a.0[1][2].powi(2)).sqrt();
        if off <= tol || off == 0.0 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a.0[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a.0[q][q] - a.0[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let sn = t * c;
            // A <- Jᵀ A J
            for k in 0..3 {
                let akp = a.0[k][p];
                let akq = a.0[k][q];
                a.0[k][p] = c * akp - sn * akq;
                a.0[k][q] = sn * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a.0[p][k];
                let aqk = a.0[q][k];
                a.0[p][k] = c * apk - sn * aqk;
                a.0[q][k] = sn * apk + c * aqk;
            }
            a.0[p][q] = 0.0;
            a.0[q][p] = 0.0;
            for k in 0..3 {
                let vkp = v.0[k][p];
                let vkq = v.0[k][q];
                v.0[k][p] = c * vkp - sn * vkq;
                v.0[k][q] = sn * vkp + c * vkq;
            }
        }
    }
    ([a.0[0][0], a.0[1][1], a.0[2][2]], v)
}

/// Symmetric tolerance accepted by [`sym_eig3`], relative to `max(1, ‖S‖_F)`.
pub const SYM_TOL: f64 = 1e-10;

pub fn sym_eig3(s: &Mat3) -> Result<SymEig3> {
    let asym = s.max_asymmetry();
    if asym > SYM_TOL * s.frobenius().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let (vals, vecs) = jacobi_eigen(s);
    let mut order = [0usize, 1, 2];
    // stable descending sort
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap_or(std::cmp::Ordering::Equal));
    let min = vals[order[2]];
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let mut rot = Mat3::ZERO;
    let mut d = [0.0; 3];
    for (slot, &i) in order.iter().enumerate() {
        rot.0[slot] = vecs.col(i).0;
        d[slot] = vals[i];
    }
    if rot.det() < 0.0 {
        rot.0[2] = rot.row(2).scale(-1.0).0;
    }
    Ok(SymEig3 { rotation: rot, eigenvalues: d })
}

/// Splits `A = μ O` with `μ = (det A)^{1/3}` and `det O = 1`.
pub fn polar_split(a: &Mat3) -> Result<(f64, Mat3)> {
    let det = a.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let mu = det.cbrt();
    Ok((mu, a.scale(1.0 / mu)))
}
