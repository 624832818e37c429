//! Factor updates, the block-coordinate driver and the baseline fits.
//!
//! Every fit goes through one driver: start from a truncated SVD, then
//! alternate between re-estimating the row/column precision graphs (or
//! keeping them fixed, for the baselines) and an inner ALS loop on the
//! factors. The objective is recorded after every ALS sweep.

mod als;
mod fit;
mod gpca;

pub use als::{als_step, als_step_with, fidelity, inner_als, inner_als_with, quadratic_objective, InnerOutcome, Penalty, StepStats};
pub use fit::{fit_dgrmd, fit_lgmd, fit_pca, fit_pmf, initial_factors, lgmd_objective, FitResult, Variant};
pub use gpca::{gpca_postprocess, GpcaResult};
pub use crate::linalg::sqrt_spd;
