//! Support radius of `(θ, V)` and the finite-propagation cone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::line_fit;
use crate::lagrangian::{Grid3, VecField};

/// Exact description of `r(thr) = max{|y| : |θ|+|V| > thr}` for every
/// threshold: the points `(r, m)` where `m` is the largest value found at
/// radius `≥ r`, kept only where `m` increases. Radii ascend, values descend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportProfile {
    pub frontier: Vec<(f64, f64)>,
}

impl SupportProfile {
    pub fn from_fields(grid: &Grid3, theta: &VecField, v: &VecField) -> Self {
        let mut nodes: Vec<(f64, f64)> = (0..grid.len())
            .map(|idx| (grid.point(idx).norm(), theta.at(idx).norm() + v.at(idx).norm()))
            .filter(|(_, m)| *m > 0.0)
            .collect();
        nodes.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
        let mut frontier = Vec::new();
        let mut best = 0.0;
        for (r, m) in nodes {
            if m > best {
                best = m;
                frontier.push((r, m));
            }
        }
        frontier.reverse();
        Self { frontier }
    }

    pub fn radius(&self, threshold: f64) -> f64 {
        self.frontier.iter().rev().find(|(_, m)| *m > threshold).map_or(0.0, |(r, _)| *r)
    }

    pub fn peak(&self) -> f64 {
        self.frontier.first().map_or(0.0, |(_, m)| *m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub threshold: f64,
    pub taus: Vec<f64>,
    pub radii: Vec<f64>,
    pub k_fit: f64,
    pub intercept: f64,
    pub linear_r2: f64,
    /// Largest `r(τ) − (1 + K_fit τ + 3dx)` over the snapshots.
    pub cone_excess: f64,
    pub cone_ok: bool,
    pub empty_support: bool,
    pub wave_speed0: f64,
    /// `|K_fit − c(0)| / c(0)`.
    pub k_rel_gap: f64,
}

pub const MIN_SNAPSHOTS: usize = 5;

pub fn support_and_propagation(
    taus: &[f64],
    profiles: &[SupportProfile],
    threshold: f64,
    dx: f64,
    wave_speed0: f64,
) -> Result<PropagationReport> {
    if taus.len() < MIN_SNAPSHOTS || profiles.len() != taus.len() {
        return Err(Error::TooFewSnapshots { required: MIN_SNAPSHOTS, got: taus.len().min(profiles.len()) });
    }
    let radii: Vec<f64> = profiles.iter().map(|p| p.radius(threshold)).collect();
    let empty_support = radii.iter().all(|r| *r == 0.0);
    let (k_fit, intercept, linear_r2) = match line_fit(taus, &radii) {
        Some(f) => (f.slope, f.intercept, f.r_squared),
        None => (0.0, radii[0], 1.0),
    };
    let cone_excess = taus
        .iter()
        .zip(&radii)
        .map(|(t, r)| r - (1.0 + k_fit * t + 3.0 * dx))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PropagationReport {
        threshold,
        taus: taus.to_vec(),
        radii,
        k_fit,
        intercept,
        linear_r2,
        cone_excess,
        cone_ok: cone_excess <= 0.0,
        empty_support,
        wave_speed0,
        k_rel_gap: if wave_speed0 > 0.0 { (k_fit - wave_speed0).abs() / wave_speed0 } else { f64::NAN },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    #[test]
    fn radius_by_threshold() {
        let g = Grid3::new(17, 2.0).unwrap();
        let theta = g.sample_vec(|y| Vec3([(-y.norm_sq()).exp(), 0.0, 0.0]));
        let p = SupportProfile::from_fields(&g, &theta, &VecField::zeros(g.len()));
        for thr in [1e-3, 1e-1, 0.5] {
            let direct = (0..g.len())
                .filter(|&i| theta.at(i).norm() > thr)
                .map(|i| g.point(i).norm())
                .fold(0.0, f64::max);
            assert_eq!(p.radius(thr), direct);
        }
        assert_eq!(p.radius(2.0), 0.0);
        assert_eq!(p.peak(), 1.0);
    }

    #[test]
    fn zero_run_has_zero_radius() {
        let g = Grid3::new(17, 2.0).unwrap();
        let z = SupportProfile::from_fields(&g, &VecField::zeros(g.len()), &VecField::zeros(g.len()));
        let taus = [0.0, 1.0, 2.0, 3.0, 4.0];
        let r = support_and_propagation(&taus, &vec![z; 5], 1e-10, g.dx, 1.0).unwrap();
        assert!(r.empty_support && r.radii.iter().all(|v| *v == 0.0) && r.cone_ok);
    }

    #[test]
    fn too_few() {
        assert!(matches!(
            support_and_propagation(&[0.0], &[SupportProfile::default()], 1e-10, 0.1, 1.0),
            Err(Error::TooFewSnapshots { .. })
        ));
    }
}
