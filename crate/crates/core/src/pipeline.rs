//! End-to-end estimation from a panel: factor counts chosen automatically
//! unless fixed, threshold defaults filled in, one of the estimators run.

use crate::error::{Error, Result};
use crate::estimators::{
    double_poet_from_spectrum, identity_estimate, poet2_from_spectrum, poet_from_spectrum,
    principal_truncation_with, samcov_estimate, CovEstimate, GroupStructure, Method, ReturnsPanel, SampleSpectrum,
    TauChoice, ThresholdRule, ThresholdSpec,
};
use crate::selection::{default_phi, mer_select_from_eigenvalues, select_local_counts, ModelSelection, DEFAULT_PHI_SCALE};

pub const DEFAULT_R_MAX: usize = 10;

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Global factor count; `None` selects it from the spectrum.
    pub k: Option<usize>,
    /// Local counts per group (a single total for POET2); `None` selects them.
    pub r: Option<Vec<usize>>,
    pub groups: Option<GroupStructure>,
    pub tau: TauChoice,
    pub rule: ThresholdRule,
    /// `None` uses `min(10 + J·r_max, p − 1, T − 2)`.
    pub k_max: Option<usize>,
    pub r_max: usize,
    pub phi_scale: f64,
}

impl EstimatorConfig {
    pub fn new(method: Method) -> Self {
        EstimatorConfig {
            method,
            k: None,
            r: None,
            groups: None,
            tau: TauChoice::PdCalibrated,
            rule: ThresholdRule::Soft,
            k_max: None,
            r_max: DEFAULT_R_MAX,
            phi_scale: DEFAULT_PHI_SCALE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedEstimate {
    pub estimate: CovEstimate,
    /// Present when the global count was selected.
    pub selection: Option<ModelSelection>,
    pub k: usize,
    pub r: Vec<usize>,
    pub tau: f64,
}

pub fn default_k_max(p: usize, t: usize, n_groups: usize, r_max: usize) -> usize {
    (10 + n_groups * r_max).min(p.saturating_sub(1)).min(t.saturating_sub(2))
}

pub fn fit_estimator(panel: &ReturnsPanel, config: &EstimatorConfig) -> Result<FittedEstimate> {
    let (t, p) = (panel.n_obs(), panel.n_assets());
    match config.method {
        Method::SampleCovariance => {
            return Ok(FittedEstimate {
                estimate: samcov_estimate(panel),
                selection: None,
                k: 0,
                r: Vec::new(),
                tau: 0.0,
            })
        }
        Method::Identity => {
            return Ok(FittedEstimate {
                estimate: identity_estimate(p),
                selection: None,
                k: 0,
                r: Vec::new(),
                tau: 0.0,
            })
        }
        _ => {}
    }
    if let Some(g) = &config.groups {
        if g.n_assets() != p {
            return Err(Error::InvalidInput(format!(
                "membership covers {} assets, panel has {p}",
                g.n_assets()
            )));
        }
    }
    let spectrum = SampleSpectrum::new(panel);
    let n_groups = config.groups.as_ref().map_or(1, GroupStructure::n_groups);
    let (k, selection) = match config.k {
        Some(k) => (k, None),
        None => {
            let k_max = config
                .k_max
                .unwrap_or_else(|| default_k_max(p, t, n_groups, config.r_max));
            let sel = mer_select_from_eigenvalues(
                spectrum.eigen().values.as_slice(),
                k_max,
                default_phi(p, config.phi_scale),
            )?;
            (sel.k_hat, Some(sel))
        }
    };
    let local_counts = |groups: &GroupStructure| -> Result<Vec<usize>> {
        match &config.r {
            Some(r) => Ok(r.clone()),
            None => {
                let rem = principal_truncation_with(spectrum.covariance(), spectrum.eigen(), k)?.remainder;
                select_local_counts(&rem, groups, config.r_max)
            }
        }
    };
    let min_group = config.groups.as_ref().map_or(p, GroupStructure::min_group_size);
    let spec = ThresholdSpec::from_choice(config.tau, config.rule.clone(), p, t, min_group)?;
    let (estimate, r) = match config.method {
        Method::Poet => (poet_from_spectrum(&spectrum, k, &spec)?, Vec::new()),
        Method::Poet2 => {
            let r = match (&config.r, &config.groups) {
                (Some(r), _) => r.clone(),
                (None, Some(g)) => local_counts(g)?,
                (None, None) => {
                    return Err(Error::InvalidConfig(
                        "poet2 needs either local factor counts or a membership".into(),
                    ))
                }
            };
            let total = r.iter().sum();
            (poet2_from_spectrum(&spectrum, k, total, &spec)?, vec![total])
        }
        Method::DoublePoet => {
            let groups = config
                .groups
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("double_poet needs a group membership".into()))?;
            let r = local_counts(groups)?;
            (double_poet_from_spectrum(&spectrum, k, groups, &r, &spec)?, r)
        }
        Method::SampleCovariance | Method::Identity => unreachable!("handled above"),
    };
    Ok(FittedEstimate {
        selection,
        k,
        r,
        tau: estimate.tau(),
        estimate,
    })
}
