//! Functionals, identity checks, propagation and decay analysis.

pub mod decay;
pub mod identities;
pub mod norms;
pub mod propagation;

pub use decay::{boundedness, coercivity, curl_decay, norm_energy_equivalence, DecayFit};
pub use norms::{norms_report, NormHistory, NormReport};
pub use propagation::{support_and_propagation, PropagationReport, SupportProfile};
