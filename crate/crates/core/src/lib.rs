//! Certified ℓ∞ robustness radii for dense networks with S-curve activations.
//!
//! Pre-activation domains are estimated from both sides: a sound
//! over-approximation from symbolic bound propagation and an
//! under-approximation witnessed by concrete inputs (random sampling or a
//! signed-gradient step). The linear relaxation of each activation is chosen
//! with both domains in view, then propagated to a lower bound on every output
//! margin. A bracketing search turns the yes/no query into a certified radius.

pub mod activations;
pub mod cli;
pub mod error;
pub mod model;
pub mod propagation;
pub mod relaxation;
pub mod report;
pub mod underapprox;
pub mod verifier;

pub use activations::{ActivationKind, TangentLine};
pub use error::{Error, Result};
pub use model::{AffineLayer, InputRegion, Instance, Network};
pub use propagation::{LayerBounds, Relax, SymbolicBound};
pub use relaxation::{DualDomain, LinearRelaxation};
pub use underapprox::{UnderBounds, UnderConfig, UnderStrategy};
pub use verifier::{CertifyResult, Strategy, VerifierConfig, VerifyOutcome, VerifyStatus};
