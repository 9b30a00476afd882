use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{floor_eigenvalues, spd_inverse, sym_eigen, EigenDecomposition, LowRank, SymmetricMatrix};

use super::groups::GroupStructure;
use super::panel::{sample_covariance, ReturnsPanel};
use super::threshold::{threshold_resolved, ThresholdSpec};

/// Relative eigenvalue floor used by [`CovEstimate::with_residual_floor`]
/// when the caller asks for positive-definiteness repair.
pub const RESIDUAL_REPAIR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SampleCovariance,
    Poet,
    Poet2,
    DoublePoet,
    /// `Σ̂ = I`, a reference point for backtests.
    Identity,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::SampleCovariance => "samcov",
            Method::Poet => "poet",
            Method::Poet2 => "poet2",
            Method::DoublePoet => "double_poet",
            Method::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Method> {
        [
            Method::SampleCovariance,
            Method::Poet,
            Method::Poet2,
            Method::DoublePoet,
            Method::Identity,
        ]
        .into_iter()
        .find(|m| m.tag() == tag)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// The sample covariance of a panel together with its eigendecomposition.
/// Every principal-component estimator starts from this pair, so it is
/// computed once and shared.
#[derive(Debug, Clone)]
pub struct SampleSpectrum {
    cov: SymmetricMatrix,
    eigen: EigenDecomposition,
}

impl SampleSpectrum {
    pub fn new(panel: &ReturnsPanel) -> Self {
        Self::from_covariance(sample_covariance(panel))
    }

    pub fn from_covariance(cov: SymmetricMatrix) -> Self {
        let eigen = sym_eigen(&cov);
        SampleSpectrum { cov, eigen }
    }

    pub fn covariance(&self) -> &SymmetricMatrix {
        &self.cov
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eigen
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

/// Split of a covariance into its leading `k` principal components and the
/// principal orthogonal complement.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub factor: LowRank,
    pub low_rank: SymmetricMatrix,
    pub remainder: SymmetricMatrix,
}

pub fn principal_truncation(sigma_hat: &SymmetricMatrix, k: usize) -> Result<Truncation> {
    principal_truncation_with(sigma_hat, &sym_eigen(sigma_hat), k)
}

/// Same as [`principal_truncation`] with a precomputed eigendecomposition of `sigma_hat`.
pub fn principal_truncation_with(
    sigma_hat: &SymmetricMatrix,
    eigen: &EigenDecomposition,
    k: usize,
) -> Result<Truncation> {
    let p = sigma_hat.dim();
    if k > p {
        return Err(Error::InvalidFactorCount(format!("k = {k} exceeds dimension {p}")));
    }
    let factor = eigen.leading(k);
    let low = factor.to_dense();
    let remainder = SymmetricMatrix::symmetrized(sigma_hat.as_matrix() - &low);
    Ok(Truncation {
        factor,
        low_rank: SymmetricMatrix::symmetrized(low),
        remainder,
    })
}

/// Structured covariance estimate: global low-rank + block-diagonal local
/// low-rank + thresholded residual, and their sum.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    method: Method,
    global: LowRank,
    local: LowRank,
    /// Group owning each column of `local.basis`.
    local_groups: Vec<usize>,
    global_part: SymmetricMatrix,
    local_part: SymmetricMatrix,
    residual_part: SymmetricMatrix,
    assembled: SymmetricMatrix,
    k_used: usize,
    r_used: Vec<usize>,
    tau: f64,
}

impl CovEstimate {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        method: Method,
        global: LowRank,
        local: LowRank,
        local_groups: Vec<usize>,
        residual_part: SymmetricMatrix,
        k_used: usize,
        r_used: Vec<usize>,
        tau: f64,
    ) -> Self {
        let global_part = SymmetricMatrix::symmetrized(global.to_dense());
        let local_part = SymmetricMatrix::symmetrized(local.to_dense());
        let assembled = SymmetricMatrix::symmetrized(
            global_part.as_matrix() + local_part.as_matrix() + residual_part.as_matrix(),
        );
        CovEstimate {
            method,
            global,
            local,
            local_groups,
            global_part,
            local_part,
            residual_part,
            assembled,
            k_used,
            r_used,
            tau,
        }
    }

    /// Substitution form `B B' + Λ Λ' + thresholded(Σ_u)` built from loadings.
    pub(crate) fn from_loadings(
        global_loadings: &DMatrix<f64>,
        local_loadings: &DMatrix<f64>,
        counts: &[usize],
        sigma_u: SymmetricMatrix,
        spec: &ThresholdSpec,
    ) -> Result<Self> {
        let ones = |m: &DMatrix<f64>| LowRank {
            basis: m.clone(),
            weights: DVector::from_element(m.ncols(), 1.0),
        };
        let owners = counts
            .iter()
            .enumerate()
            .flat_map(|(j, &n)| std::iter::repeat_n(j, n))
            .collect();
        let (residual, tau) = threshold_resolved(&sigma_u, spec)?;
        Ok(CovEstimate::assemble(
            Method::DoublePoet,
            ones(global_loadings),
            ones(local_loadings),
            owners,
            residual,
            global_loadings.ncols(),
            counts.to_vec(),
            tau,
        ))
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn dim(&self) -> usize {
        self.assembled.dim()
    }

    pub fn global_factor(&self) -> &LowRank {
        &self.global
    }

    pub fn local_factor(&self) -> &LowRank {
        &self.local
    }

    pub fn global_part(&self) -> &SymmetricMatrix {
        &self.global_part
    }

    pub fn local_part(&self) -> &SymmetricMatrix {
        &self.local_part
    }

    pub fn residual_part(&self) -> &SymmetricMatrix {
        &self.residual_part
    }

    pub fn assembled(&self) -> &SymmetricMatrix {
        &self.assembled
    }

    pub fn k_used(&self) -> usize {
        self.k_used
    }

    /// Local factor counts per group (a single entry holding `r` for POET2).
    pub fn r_used(&self) -> &[usize] {
        &self.r_used
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Lifts the eigenvalues of the residual part to at least
    /// `rel_floor · trace(residual)/p` and reassembles.
    pub fn with_residual_floor(self, rel_floor: f64) -> CovEstimate {
        let p = self.dim().max(1) as f64;
        let floor = rel_floor * self.residual_part.trace().max(0.0) / p;
        let residual = floor_eigenvalues(&self.residual_part, floor);
        CovEstimate::assemble(
            self.method,
            self.global,
            self.local,
            self.local_groups,
            residual,
            self.k_used,
            self.r_used,
            self.tau,
        )
    }
}

/// Sample covariance wrapped as an unstructured estimate.
pub fn samcov_estimate(panel: &ReturnsPanel) -> CovEstimate {
    let p = panel.n_assets();
    CovEstimate::assemble(
        Method::SampleCovariance,
        LowRank::empty(p),
        LowRank::empty(p),
        Vec::new(),
        sample_covariance(panel),
        0,
        Vec::new(),
        0.0,
    )
}

pub fn identity_estimate(p: usize) -> CovEstimate {
    CovEstimate::assemble(
        Method::Identity,
        LowRank::empty(p),
        LowRank::empty(p),
        Vec::new(),
        SymmetricMatrix::identity(p),
        0,
        Vec::new(),
        0.0,
    )
}

/// POET: `k` principal components plus the thresholded remainder.
pub fn poet(panel: &ReturnsPanel, k: usize, spec: &ThresholdSpec) -> Result<CovEstimate> {
    poet_from_spectrum(&SampleSpectrum::new(panel), k, spec)
}

pub fn poet_from_spectrum(spectrum: &SampleSpectrum, k: usize, spec: &ThresholdSpec) -> Result<CovEstimate> {
    let trunc = principal_truncation_with(spectrum.covariance(), spectrum.eigen(), k)?;
    let (residual, tau) = threshold_resolved(&trunc.remainder, spec)?;
    let p = spectrum.dim();
    Ok(CovEstimate::assemble(
        Method::Poet,
        trunc.factor,
        LowRank::empty(p),
        Vec::new(),
        residual,
        k,
        Vec::new(),
        tau,
    ))
}

/// POET run with `k + r_total` components, treating local factors as weak global ones.
pub fn poet2(panel: &ReturnsPanel, k: usize, r_total: usize, spec: &ThresholdSpec) -> Result<CovEstimate> {
    poet2_from_spectrum(&SampleSpectrum::new(panel), k, r_total, spec)
}

pub fn poet2_from_spectrum(
    spectrum: &SampleSpectrum,
    k: usize,
    r_total: usize,
    spec: &ThresholdSpec,
) -> Result<CovEstimate> {
    let p = spectrum.dim();
    if k + r_total > p {
        return Err(Error::InvalidFactorCount(format!(
            "k + r = {} exceeds dimension {p}",
            k + r_total
        )));
    }
    let mut est = poet_from_spectrum(spectrum, k + r_total, spec)?;
    est.method = Method::Poet2;
    est.k_used = k;
    est.r_used = vec![r_total];
    Ok(est)
}

/// Double-POET: global principal truncation, per-group principal truncation
/// of the diagonal blocks of the remainder, thresholding of what is left.
pub fn double_poet(
    panel: &ReturnsPanel,
    k: usize,
    groups: &GroupStructure,
    r: &[usize],
    spec: &ThresholdSpec,
) -> Result<CovEstimate> {
    double_poet_from_spectrum(&SampleSpectrum::new(panel), k, groups, r, spec)
}

pub fn double_poet_from_spectrum(
    spectrum: &SampleSpectrum,
    k: usize,
    groups: &GroupStructure,
    r: &[usize],
    spec: &ThresholdSpec,
) -> Result<CovEstimate> {
    let p = spectrum.dim();
    check_local_counts(p, groups, r)?;
    let trunc = principal_truncation_with(spectrum.covariance(), spectrum.eigen(), k)?;
    let (local, local_groups) = local_principal_components(&trunc.remainder, groups, r)?;
    let local_dense = local.to_dense();
    let sigma_u = SymmetricMatrix::symmetrized(trunc.remainder.as_matrix() - &local_dense);
    let (residual, tau) = threshold_resolved(&sigma_u, spec)?;
    Ok(CovEstimate::assemble(
        Method::DoublePoet,
        trunc.factor,
        local,
        local_groups,
        residual,
        k,
        r.to_vec(),
        tau,
    ))
}

pub(crate) fn check_local_counts(p: usize, groups: &GroupStructure, r: &[usize]) -> Result<()> {
    if groups.n_assets() != p {
        return Err(Error::InvalidInput(format!(
            "group structure covers {} assets, estimate has {p}",
            groups.n_assets()
        )));
    }
    if r.len() != groups.n_groups() {
        return Err(Error::InvalidFactorCount(format!(
            "{} local factor counts for {} groups",
            r.len(),
            groups.n_groups()
        )));
    }
    for (j, (&rj, pj)) in r.iter().zip(groups.group_sizes()).enumerate() {
        if rj > 0 && pj < rj + 1 {
            return Err(Error::InvalidFactorCount(format!(
                "group {j} has {pj} assets, too few for {rj} local factors"
            )));
        }
    }
    Ok(())
}

/// Leading `r_j` eigenpairs of each diagonal block of `remainder`, embedded
/// into a `p × Σr_j` block-diagonal basis.
fn local_principal_components(
    remainder: &SymmetricMatrix,
    groups: &GroupStructure,
    r: &[usize],
) -> Result<(LowRank, Vec<usize>)> {
    let p = remainder.dim();
    let total: usize = r.iter().sum();
    let mut basis = DMatrix::zeros(p, total);
    let mut weights = DVector::zeros(total);
    let mut owners = Vec::with_capacity(total);
    let mut col = 0;
    for (j, &rj) in r.iter().enumerate() {
        if rj == 0 {
            continue;
        }
        let idx = groups.members(j)?;
        let eig = sym_eigen(&remainder.submatrix(idx));
        for s in 0..rj {
            for (row, &asset) in idx.iter().enumerate() {
                basis[(asset, col)] = eig.vectors[(row, s)];
            }
            weights[col] = eig.values[s];
            owners.push(j);
            col += 1;
        }
    }
    Ok((LowRank { basis, weights }, owners))
}

/// The `p_j × p_j` diagonal block of group `j`, with all three parts sliced.
pub fn extract_local_block(est: &CovEstimate, groups: &GroupStructure, j: usize) -> Result<CovEstimate> {
    if groups.n_assets() != est.dim() {
        return Err(Error::InvalidInput(format!(
            "group structure covers {} assets, estimate has {}",
            groups.n_assets(),
            est.dim()
        )));
    }
    let idx = groups.members(j)?;
    let all_global: Vec<usize> = (0..est.global.rank()).collect();
    let local_cols: Vec<usize> = est
        .local_groups
        .iter()
        .enumerate()
        .filter(|(_, &g)| g == j)
        .map(|(c, _)| c)
        .collect();
    let r_used = match est.method {
        Method::DoublePoet => vec![est.r_used.get(j).copied().unwrap_or(0)],
        _ => est.r_used.clone(),
    };
    Ok(CovEstimate {
        method: est.method,
        global: est.global.restrict(idx, &all_global),
        local: est.local.restrict(idx, &local_cols),
        local_groups: vec![0; local_cols.len()],
        global_part: est.global_part.submatrix(idx),
        local_part: est.local_part.submatrix(idx),
        residual_part: est.residual_part.submatrix(idx),
        assembled: est.assembled.submatrix(idx),
        k_used: est.k_used,
        r_used,
        tau: est.tau,
    })
}

/// Inverse of the assembled estimate through two nested Sherman–Morrison–Woodbury
/// updates: residual, then the local low-rank part, then the global one.
pub fn precision_matrix(est: &CovEstimate) -> Result<SymmetricMatrix> {
    let residual_inv = spd_inverse(est.residual_part.as_matrix())
        .map_err(|_| Error::NotPositiveDefinite("residual part is not positive definite".into()))?;
    let partial = woodbury(residual_inv, &est.local)?;
    let full = woodbury(partial, &est.global)?;
    Ok(SymmetricMatrix::symmetrized(full))
}

/// `(A + U W U')^{-1} = A^{-1} − A^{-1} U (I + W U' A^{-1} U)^{-1} W U' A^{-1}`;
/// this form stays valid when `W` is singular.
fn woodbury(a_inv: DMatrix<f64>, factor: &LowRank) -> Result<DMatrix<f64>> {
    let m = factor.rank();
    if m == 0 {
        return Ok(a_inv);
    }
    let au = &a_inv * &factor.basis;
    let w = DMatrix::from_diagonal(&factor.weights);
    let inner = DMatrix::identity(m, m) + &w * factor.basis.transpose() * &au;
    let rhs = &w * au.transpose();
    let solved = inner
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Woodbury capacitance matrix".into()))?;
    Ok(a_inv - au * solved)
}
