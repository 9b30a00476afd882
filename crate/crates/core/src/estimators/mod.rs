//! Sample covariance, POET, POET2 and Double-POET estimators.

mod covariance;
mod factors;
mod groups;
mod panel;
mod threshold;

pub use covariance::{
    double_poet, double_poet_from_spectrum, extract_local_block, identity_estimate, poet, poet2, poet2_from_spectrum,
    poet_from_spectrum, precision_matrix, principal_truncation, principal_truncation_with, samcov_estimate,
    CovEstimate, Method, SampleSpectrum, Truncation, RESIDUAL_REPAIR_FLOOR,
};
pub use factors::{fit_factors, fit_global_factors, fit_local_factors, FactorEstimate, GlobalFit, LocalFit};
pub use groups::GroupStructure;
pub use panel::{sample_covariance, ReturnsPanel};
pub use threshold::{
    adaptive_threshold, default_tau, min_pd_tau, threshold_rate, threshold_resolved, TauChoice, ThresholdRule, ThresholdSpec,
    PD_MARGIN,
};
