//! Mean estimation under heterogeneous differential privacy.
//!
//! Every record carries its own privacy budget ε (or none at all, for public
//! records). Two estimators are compared throughout:
//!
//! - the **unique-threshold** estimator, which drops every record whose budget
//!   is below a single threshold ε, averages the rest and adds Laplace noise
//!   calibrated to ε;
//! - the **optimal affine** estimator, a noisy weighted mean whose weights are
//!   proportional to the clipped budgets `min(ε_i, τ)`.
//!
//! The crate evaluates both worst-case risks in closed form, optimizes them
//! exactly, simulates the underlying mechanisms, and checks the approximation
//! bounds relating the two.
//!
//! ```
//! use hetdp::{PrivacyProfile, optimizer};
//!
//! let profile = PrivacyProfile::from_pairs([(0.5, 1), (1.0, 1)], 0).unwrap();
//! let report = optimizer::ratio(&profile);
//! assert!((report.mse_thr - 17.0 / 8.0).abs() < 1e-12);
//! assert!((report.mse_aff - 37.0 / 36.0).abs() < 1e-12);
//! ```

pub mod bounds;
pub mod error;
pub mod mechanisms;
pub mod optimizer;
pub mod oracle;
pub mod profile;
mod serde_inf;
pub mod sweep;

pub use error::{Error, Result};
pub use profile::{ClippedStats, Level, PrivacyProfile};
