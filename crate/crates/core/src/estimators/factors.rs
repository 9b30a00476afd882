//! Least-squares estimation of factors and loadings.
//!
//! Global factors solve `min ‖Y − G B'‖_F` with `G'G/T = I_k` and `B'B`
//! diagonal; local factors solve the same problem on each group's block of
//! the global residual `Ê`. The panel is demeaned first so that these fits
//! reproduce the principal components of the demeaned sample covariance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymmetricMatrix};

use super::covariance::{check_local_counts, CovEstimate};
use super::groups::GroupStructure;
use super::panel::ReturnsPanel;
use super::threshold::ThresholdSpec;

/// `Y ≈ G B'` with `G` of size `T × k` and `B` of size `p × k`.
#[derive(Debug, Clone)]
pub struct GlobalFit {
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
}

/// Per-group fits stacked side by side: `factors` is `T × Σr_j`, `loadings`
/// is `p × Σr_j` and zero outside each group's rows.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub counts: Vec<usize>,
}

/// Both levels of the least-squares fit.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    pub global: GlobalFit,
    pub local: LocalFit,
}

/// Leading `k` principal factors of the `T × T` matrix `Y Y'/T`.
fn principal_factors(y: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = y.nrows() as f64;
    let gram = SymmetricMatrix::symmetrized(y * y.transpose() / t);
    let eig = sym_eigen(&gram);
    let factors = eig.vectors.columns(0, k) * t.sqrt();
    let loadings = y.tr_mul(&factors) / t;
    (factors, loadings)
}

pub fn fit_global_factors(panel: &ReturnsPanel, k: usize) -> Result<GlobalFit> {
    let (t, p) = (panel.n_obs(), panel.n_assets());
    if k > t.min(p) {
        return Err(Error::InvalidFactorCount(format!(
            "k = {k} exceeds min(T, p) = {}",
            t.min(p)
        )));
    }
    let y = panel.demeaned();
    let (factors, loadings) = principal_factors(&y, k);
    let residuals = &y - &factors * loadings.transpose();
    Ok(GlobalFit {
        factors,
        loadings,
        residuals,
    })
}

pub fn fit_local_factors(e_hat: &DMatrix<f64>, groups: &GroupStructure, r: &[usize]) -> Result<LocalFit> {
    let (t, p) = e_hat.shape();
    check_local_counts(p, groups, r)?;
    if let Some(j) = r.iter().position(|&rj| rj > t) {
        return Err(Error::InvalidFactorCount(format!(
            "group {j}: {} local factors exceed T = {t}",
            r[j]
        )));
    }
    let total: usize = r.iter().sum();
    let mut factors = DMatrix::zeros(t, total);
    let mut loadings = DMatrix::zeros(p, total);
    let mut residuals = e_hat.clone();
    let mut col = 0;
    for (j, &rj) in r.iter().enumerate() {
        if rj == 0 {
            continue;
        }
        let idx = groups.members(j)?;
        let block = e_hat.select_columns(idx);
        let (f, l) = principal_factors(&block, rj);
        let fitted = &f * l.transpose();
        for (c, &asset) in idx.iter().enumerate() {
            for row in 0..t {
                residuals[(row, asset)] -= fitted[(row, c)];
            }
        }
        factors.columns_mut(col, rj).copy_from(&f);
        for (c, &asset) in idx.iter().enumerate() {
            for s in 0..rj {
                loadings[(asset, col + s)] = l[(c, s)];
            }
        }
        col += rj;
    }
    Ok(LocalFit {
        factors,
        loadings,
        residuals,
        counts: r.to_vec(),
    })
}

pub fn fit_factors(panel: &ReturnsPanel, k: usize, groups: &GroupStructure, r: &[usize]) -> Result<FactorEstimate> {
    let global = fit_global_factors(panel, k)?;
    let local = fit_local_factors(&global.residuals, groups, r)?;
    Ok(FactorEstimate { global, local })
}

impl FactorEstimate {
    /// `B̂B̂' + Λ̂Λ̂' + thresholded(Û'Û/T)`.
    pub fn substitution_estimate(&self, spec: &ThresholdSpec) -> Result<CovEstimate> {
        let u = &self.local.residuals;
        let t = u.nrows() as f64;
        let sigma_u = SymmetricMatrix::symmetrized(u.tr_mul(u) / t);
        CovEstimate::from_loadings(
            &self.global.loadings,
            &self.local.loadings,
            &self.local.counts,
            sigma_u,
            spec,
        )
    }
}
