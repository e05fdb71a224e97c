//! Numerical laboratory for isothermal affine gas expansion and the
//! Lagrangian perturbation dynamics around it.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – 3×3 kernels.
//! * [`affine`] – the matrix ODE for `A(t)` and its asymptotics.
//! * [`time_frames`] – the `t ↔ τ` rescaling and exponent bookkeeping.
//! * [`modulation`] – `Λ`, its eigenframe and `Γ*` along the trajectory.
//! * [`lagrangian`] – grids, stencils, flow-map kinematics and profiles.
//! * [`evolver`] – the τ-marching of `(θ, V)`.
//! * [`diagnostics`] – norms, identities, propagation and decay fits.
//! * [`eulerian`] – closed-form affine fields and PDE residuals.
//! * [`pipeline`] – setting up a run from affine data.

pub mod affine;
pub mod diagnostics;
pub mod error;
pub mod eulerian;
pub mod evolver;
pub mod fit;
pub mod lagrangian;
pub mod modulation;
pub mod pipeline;
pub mod tensor;
pub mod time_frames;

pub use error::{Error, Result};
pub use tensor::{Mat3, SymEig3, Vec3};
