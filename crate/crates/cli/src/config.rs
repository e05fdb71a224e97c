//! Scenario files (TOML).
//!
//! ```toml
//! name = "reference"
//! seed = 42
//!
//! [affine]
//! a0 = [[1.15, 0.05, 0.0], [0.0, 1.0, 0.05], [0.05, 0.0, 0.87]]
//! a0dot = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
//! tbar = 0.36
//! alpha = 1.5
//!
//! [exponents]
//! sigma_choice = 1.9
//! ```
//!
//! `[evolver]` and `[diagnostics]` are optional and default to the reference run.

use std::path::Path;

use isoaffine::affine::AffineParams;
use isoaffine::pipeline::RunSpec;
use isoaffine::time_frames::sigma_upper;
use isoaffine::Mat3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub affine: AffineSection,
    pub exponents: ExponentSection,
    #[serde(default)]
    pub evolver: EvolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSection {
    pub a0: [[f64; 3]; 3],
    pub a0dot: [[f64; 3]; 3],
    pub tbar: f64,
    pub alpha: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Horizon of the `affine` subcommand.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_t_end() -> f64 {
    1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSection {
    pub sigma_choice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolverSection {
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

impl Default for EvolverSection {
    fn default() -> Self {
        let s = RunSpec::default();
        Self {
            n: s.n,
            tau_end: s.tau_end,
            epsilon: s.epsilon,
            lambda: s.lambda,
            cfl: s.cfl,
            order: s.order,
            snapshot_stride: s.snapshot_stride,
            dtau_max: s.dtau_max,
            apriori_c: s.apriori_c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub support_threshold: f64,
    pub fit_start: f64,
    /// Frames sampled over `[0, frames_tau_end]`.
    pub frames: usize,
    pub frames_tau_end: f64,
    /// Eulerian residual convergence on the affine fields.
    pub eulerian: bool,
    pub eulerian_levels: Vec<usize>,
    pub identity_grids: Vec<usize>,
    /// Write the `z = 0` plane of the final state.
    pub slice: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            support_threshold: 1e-10,
            fit_start: isoaffine::diagnostics::decay::DEFAULT_FIT_START,
            frames: 81,
            frames_tau_end: 20.0,
            eulerian: true,
            eulerian_levels: vec![17, 33, 65],
            identity_grids: isoaffine::diagnostics::identities::SUITE_GRIDS.to_vec(),
            slice: true,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("missing field") || msg.starts_with("unknown field"))
                .unwrap_or("<document>")
                .to_string();
            CliError::ConfigInvalid { field, reason: msg }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// The built-in reference scenario.
    pub fn reference() -> Self {
        let p = isoaffine::pipeline::reference_params();
        Self {
            name: "reference".into(),
            seed: 42,
            affine: AffineSection {
                a0: p.a0.0,
                a0dot: p.a0dot.0,
                tbar: p.tbar,
                alpha: p.alpha,
                rel_tol: default_rel_tol(),
                t_end: default_t_end(),
            },
            exponents: ExponentSection { sigma_choice: isoaffine::pipeline::REFERENCE_SIGMA },
            evolver: EvolverSection::default(),
            diagnostics: DiagnosticsSection::default(),
        }
    }

    pub fn params(&self) -> Result<AffineParams> {
        AffineParams::new(Mat3(self.affine.a0), Mat3(self.affine.a0dot), self.affine.tbar, self.affine.alpha)
            .map_err(|e| invalid(core_field(&e).unwrap_or("affine"), e.to_string()))
    }

    pub fn run_spec(&self) -> RunSpec {
        let e = &self.evolver;
        RunSpec {
            n: e.n,
            tau_end: e.tau_end,
            epsilon: e.epsilon,
            lambda: e.lambda,
            cfl: e.cfl,
            order: e.order,
            snapshot_stride: e.snapshot_stride,
            dtau_max: e.dtau_max,
            apriori_c: e.apriori_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", format!("{:?} is not a plain file name", self.name)));
        }
        self.params()?;
        let a = &self.affine;
        if !(1e-12..=1e-4).contains(&a.rel_tol) {
            return Err(invalid("affine.rel_tol", format!("{} outside [1e-12, 1e-4]", a.rel_tol)));
        }
        if !(a.t_end >= isoaffine::affine::ASYMPTOTIC_MIN_T && a.t_end.is_finite()) {
            return Err(invalid("affine.t_end", format!("{} must be ≥ 100", a.t_end)));
        }
        let upper = sigma_upper(a.alpha);
        let sigma = self.exponents.sigma_choice;
        if !(sigma > 0.0 && sigma < upper) {
            return Err(invalid("exponents.sigma_choice", format!("{sigma} outside (0, {upper})")));
        }
        let e = &self.evolver;
        if e.n < 17 || e.n.is_multiple_of(2) {
            return Err(invalid("evolver.n", format!("{} must be odd and ≥ 17", e.n)));
        }
        let positive = [
            ("evolver.tau_end", e.tau_end),
            ("evolver.dtau_max", e.dtau_max),
            ("evolver.apriori_c", e.apriori_c),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("{v} must be positive")));
            }
        }
        for (field, v) in [("evolver.epsilon", e.epsilon), ("evolver.lambda", e.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("{v} must be ≥ 0")));
            }
        }
        if !(e.cfl > 0.0 && e.cfl <= 1.0) {
            return Err(invalid("evolver.cfl", format!("{} outside (0, 1]", e.cfl)));
        }
        if e.order == 0 {
            return Err(invalid("evolver.order", "must be at least 1".into()));
        }
        if e.snapshot_stride == 0 {
            return Err(invalid("evolver.snapshot_stride", "must be at least 1".into()));
        }
        let d = &self.diagnostics;
        if !(d.support_threshold > 0.0) {
            return Err(invalid("diagnostics.support_threshold", "must be positive".into()));
        }
        if d.frames < isoaffine::modulation::MIN_FRAMES || !(d.frames_tau_end > 0.0) {
            return Err(invalid("diagnostics.frames", "need at least 10 frames over a positive span".into()));
        }
        for (field, grids) in [("diagnostics.eulerian_levels", &d.eulerian_levels), ("diagnostics.identity_grids", &d.identity_grids)] {
            if grids.len() < 2 || grids.iter().any(|n| *n < 17 || n % 2 == 0) {
                return Err(invalid(field, "need two or more odd sizes ≥ 17".into()));
            }
        }
        Ok(())
    }
}

fn invalid(field: &str, reason: String) -> CliError {
    CliError::ConfigInvalid { field: field.into(), reason }
}

fn core_field(e: &isoaffine::Error) -> Option<&'static str> {
    match e {
        isoaffine::Error::InvalidParameter { field, .. } => Some(match *field {
            "tbar" => "affine.tbar",
            "alpha" => "affine.alpha",
            _ => "affine.a0",
        }),
        isoaffine::Error::NonPositiveDeterminant { .. } => Some("affine.a0"),
        _ => None,
    }
}
