//! Second-order particle dynamics confined to a domain with elastic wall
//! collisions.
//!
//! The crate provides
//!
//! - [`geometry`]: signed-distance calculus for the confinement domain,
//! - [`forces`]: force fields `F_i(t, X)` and their Lipschitz diagnostics,
//! - [`exact`]: an event-driven solver with exact reflection, sliding contact
//!   and grazing detection,
//! - [`penalty`]: the stiff-spring approximation `x'' = F - k (d grad d)(x)`
//!   together with stiffness sweeps,
//! - [`analysis`]: energy audits, boundary-measure extraction, weak-form
//!   residuals and trajectory comparison,
//! - [`counterexample`]: a closed-form non-uniqueness construction on the
//!   half-line with an automated certificate.

pub mod analysis;
pub mod counterexample;
pub mod error;
pub mod exact;
pub mod forces;
pub mod geometry;
pub mod io;
pub mod ode;
pub mod penalty;
pub mod quadrature;
pub mod roots;
pub mod trajectory;

pub use analysis::{BoundaryMeasure, CompareNorm};
pub use error::{Error, Result};
pub use exact::{simulate_exact, GrazePolicy, SolverOptions};
pub use forces::{BuiltinForce, ForceField, ScalarSignal};
pub use geometry::{DomainGeometry, DomainKind, Point};
pub use penalty::{simulate_penalty, PenaltyOptions, PenaltyRun};
pub use trajectory::{Event, EventKind, Mode, Sample, SystemState, Termination, Trajectory};
