//! Synthetic global + local factor panels and the Monte Carlo replication runner.
//!
//! Every replication owns a ChaCha8 stream `(grid << 32) | rep` of the master
//! seed, so any single cell can be re-run alone and parallel scheduling never
//! changes the numbers.

use std::fmt;

use nalgebra::{Cholesky, DMatrix};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::clustering::{misclassification_rate, rsc_cluster};
use crate::error::{Error, Result};
use crate::estimators::{
    double_poet_from_spectrum, extract_local_block, poet, poet2_from_spectrum, poet_from_spectrum,
    precision_matrix, principal_truncation_with, samcov_estimate, CovEstimate, GroupStructure, ReturnsPanel,
    SampleSpectrum, TauChoice, ThresholdRule, ThresholdSpec,
};
use crate::linalg::{max_abs, spd_inverse, spectral_norm_sym, RelativeFrobenius, SymmetricMatrix};
use crate::par_map;
use crate::selection::{default_phi, mer_select_from_eigenvalues, select_local_counts, ModelSelection, DEFAULT_PHI_SCALE};

pub const DEFAULT_SPARSITY: f64 = 0.3;
pub const MAX_PD_ATTEMPTS: usize = 1000;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// Generator for replication `rep` at grid point `grid`.
pub fn replication_rng(master_seed: u64, grid: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((grid as u64) << 32) | rep as u64);
    rng
}

/// Sparse idiosyncratic covariance `D + s s' − diag(s²)` with
/// `d_i ~ Gamma(100, rate 100)` and `s_i ~ N(0, 1)` switched on with
/// probability `m / (√p log p)`. Redrawn until positive definite.
pub fn sparse_error_cov(p: usize, m: f64, seed: u64) -> Result<SymmetricMatrix> {
    sparse_error_cov_with(p, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sparse_error_cov_with(p: usize, m: f64, rng: &mut ChaCha8Rng) -> Result<SymmetricMatrix> {
    if p < 2 {
        return Err(Error::InvalidConfig(format!("error covariance needs p >= 2, got {p}")));
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidConfig(format!("sparsity m must be positive, got {m}")));
    }
    let pf = p as f64;
    let prob = (m / (pf.sqrt() * pf.ln())).min(1.0);
    let gamma = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
    for _ in 0..MAX_PD_ATTEMPTS {
        let (d, s) = draw_error_components(p, prob, &gamma, rng);
        let cov = DMatrix::from_fn(p, p, |i, j| if i == j { d[i] * d[i] } else { s[i] * s[j] });
        if Cholesky::new(cov.clone()).is_some() {
            return Ok(SymmetricMatrix::symmetrized(cov));
        }
    }
    Err(Error::GenerationFailed(format!(
        "no positive definite error covariance in {MAX_PD_ATTEMPTS} attempts"
    )))
}

fn draw_error_components(p: usize, prob: f64, gamma: &Gamma<f64>, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let d: Vec<f64> = (0..p).map(|_| gamma.sample(rng)).collect();
    let s: Vec<f64> = (0..p)
        .map(|_| if rng.random::<f64>() < prob { normal(rng) } else { 0.0 })
        .collect();
    (d, s)
}

/// Shape of a simulated model: `p` assets in `n_groups` equal groups,
/// `k` global factors and `r_local` local factors per group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub p: usize,
    pub t: usize,
    pub n_groups: usize,
    pub k: usize,
    pub r_local: usize,
    pub m: f64,
}

impl DgpSpec {
    pub fn new(p: usize, t: usize, n_groups: usize, k: usize, r_local: usize) -> Self {
        DgpSpec {
            p,
            t,
            n_groups,
            k,
            r_local,
            m: DEFAULT_SPARSITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.p % self.n_groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "p = {} is not divisible into {} equal groups",
                self.p, self.n_groups
            )));
        }
        if self.t < 2 {
            return Err(Error::InvalidConfig(format!("T must be at least 2, got {}", self.t)));
        }
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!("p must be at least 2, got {}", self.p)));
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.p / self.n_groups.max(1)
    }

    pub fn total_local(&self) -> usize {
        self.n_groups * self.r_local
    }
}

/// A drawn model: loadings, error covariance and the population covariance
/// `Σ = B B' + Λ Λ' + Σ_u`.
#[derive(Debug, Clone)]
pub struct DgpParams {
    pub spec: DgpSpec,
    pub groups: GroupStructure,
    pub mu_b: Vec<f64>,
    /// `p × k`.
    pub loadings: DMatrix<f64>,
    pub mu_lambda: Vec<Vec<f64>>,
    /// `p × (J·r_local)`, block-diagonal by group.
    pub local_loadings: DMatrix<f64>,
    pub sigma_u: SymmetricMatrix,
    pub population: SymmetricMatrix,
    chol_u: DMatrix<f64>,
}

impl PartialEq for DgpParams {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.groups == other.groups
            && self.mu_b == other.mu_b
            && self.loadings == other.loadings
            && self.mu_lambda == other.mu_lambda
            && self.local_loadings == other.local_loadings
            && self.sigma_u == other.sigma_u
    }
}

pub fn generate_model(spec: &DgpSpec, seed: u64) -> Result<DgpParams> {
    generate_model_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_model_with(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<DgpParams> {
    spec.validate()?;
    let (p, k, j, r) = (spec.p, spec.k, spec.n_groups, spec.r_local);
    let groups = GroupStructure::contiguous(&vec![spec.group_size(); j])?;

    let mu_b: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
    let loadings = DMatrix::from_fn(p, k, |_, c| mu_b[c] + normal(rng));

    let mut local_loadings = DMatrix::zeros(p, j * r);
    let mut mu_lambda = Vec::with_capacity(j);
    for g in 0..j {
        let mu: Vec<f64> = (0..r).map(|_| rng.random_range(-0.3..0.3)).collect();
        for &i in groups.members(g)? {
            for s in 0..r {
                local_loadings[(i, g * r + s)] = mu[s] + normal(rng);
            }
        }
        mu_lambda.push(mu);
    }

    let sigma_u = sparse_error_cov_with(p, spec.m, rng)?;
    let chol_u = Cholesky::new(sigma_u.as_matrix().clone())
        .expect("error covariance was checked positive definite")
        .unpack();
    let population = SymmetricMatrix::symmetrized(
        &loadings * loadings.transpose() + &local_loadings * local_loadings.transpose() + sigma_u.as_matrix(),
    );
    Ok(DgpParams {
        spec: *spec,
        groups,
        mu_b,
        loadings,
        mu_lambda,
        local_loadings,
        sigma_u,
        population,
        chol_u,
    })
}

/// `y_t = B G_t + Λ f_t + u_t` for `t = 1..T` with Gaussian factors and errors.
pub fn simulate_panel(dgp: &DgpParams, seed: u64) -> Result<ReturnsPanel> {
    simulate_panel_with(dgp, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simulate_panel_with(dgp: &DgpParams, rng: &mut ChaCha8Rng) -> Result<ReturnsPanel> {
    let t = dgp.spec.t;
    let g = normal_matrix(t, dgp.loadings.ncols(), rng);
    let f = normal_matrix(t, dgp.local_loadings.ncols(), rng);
    let z = normal_matrix(t, dgp.spec.p, rng);
    let y = g * dgp.loadings.transpose() + f * dgp.local_loadings.transpose() + z * dgp.chol_u.transpose();
    ReturnsPanel::from_matrix(y)
}

/// Moves `⌈rate·p⌉` distinct assets, chosen uniformly, to uniformly chosen
/// wrong groups.
pub fn perturb_membership(groups: &GroupStructure, rate: f64, seed: u64) -> Result<GroupStructure> {
    perturb_membership_with(groups, rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn perturb_membership_with(groups: &GroupStructure, rate: f64, rng: &mut ChaCha8Rng) -> Result<GroupStructure> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("misclassification rate must lie in [0, 1], got {rate}")));
    }
    let p = groups.n_assets();
    let j = groups.n_groups();
    // the small slack keeps 0.03·400 from rounding up to 13
    let moved = ((rate * p as f64) - 1e-9).ceil().max(0.0) as usize;
    if moved == 0 {
        return Ok(groups.clone());
    }
    if j < 2 {
        return Err(Error::InvalidConfig("cannot misassign assets with a single group".into()));
    }
    let mut labels = groups.membership().to_vec();
    for i in sample(rng, p, moved.min(p)).into_iter() {
        let shift = rng.random_range(1..j);
        labels[i] = (labels[i] + shift) % j;
    }
    GroupStructure::new(labels)
}

/// Estimators compared in the replication study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimMethod {
    SampleCovariance,
    Poet,
    Poet2,
    DoublePoet,
    /// Double-POET on groups detected by spectral clustering.
    DoublePoetRsc,
    /// Double-POET on the true groups with a fraction of assets misassigned.
    DoublePoetMix,
    /// POET on one group's assets alone with the true `k + r_j` factors.
    PoetOnGroup,
}

impl SimMethod {
    pub const ALL: [SimMethod; 7] = [
        SimMethod::SampleCovariance,
        SimMethod::Poet,
        SimMethod::Poet2,
        SimMethod::DoublePoet,
        SimMethod::DoublePoetRsc,
        SimMethod::DoublePoetMix,
        SimMethod::PoetOnGroup,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            SimMethod::SampleCovariance => "samcov",
            SimMethod::Poet => "poet",
            SimMethod::Poet2 => "poet2",
            SimMethod::DoublePoet => "dpoet",
            SimMethod::DoublePoetRsc => "dpoet_rsc",
            SimMethod::DoublePoetMix => "dpoet_mix",
            SimMethod::PoetOnGroup => "poet_group",
        }
    }

    pub fn from_tag(tag: &str) -> Option<SimMethod> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    /// `‖Σ̂ − Σ‖_Σ`.
    RelativeFrobenius,
    /// `‖Σ̂ − Σ‖_max`.
    Max,
    /// `‖Σ̂^{-1} − Σ^{-1}‖_2`; NaN when the estimate cannot be inverted.
    InverseSpectral,
}

impl ErrorNorm {
    pub const ALL: [ErrorNorm; 3] = [ErrorNorm::RelativeFrobenius, ErrorNorm::Max, ErrorNorm::InverseSpectral];

    pub fn tag(&self) -> &'static str {
        match self {
            ErrorNorm::RelativeFrobenius => "relative_frobenius",
            ErrorNorm::Max => "max",
            ErrorNorm::InverseSpectral => "inverse_spectral",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// What is compared against the population covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Full,
    /// Each group's diagonal block, averaged over groups.
    LocalBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorCounts {
    /// Eigenvalue-ratio selection on every replication.
    Estimated,
    /// The true `k` and `r_j`.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    /// Coordinate reported in the output (p, J, or the misclassification rate).
    pub value: f64,
    pub dgp: DgpSpec,
    /// Fraction of misassigned assets for [`SimMethod::DoublePoetMix`].
    pub mix_rate: f64,
}

impl GridPoint {
    pub fn new(value: f64, dgp: DgpSpec) -> Self {
        GridPoint {
            value,
            dgp,
            mix_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationConfig {
    pub grid: Vec<GridPoint>,
    pub methods: Vec<SimMethod>,
    pub reps: usize,
    pub seed: u64,
    pub target: Target,
    pub counts: FactorCounts,
    pub rule: ThresholdRule,
    pub tau: TauChoice,
    /// `k_max = k_max_extra + J·r_local`.
    pub k_max_extra: usize,
    pub r_max: usize,
    pub phi_scale: f64,
}

impl ReplicationConfig {
    pub fn new(grid: Vec<GridPoint>, methods: Vec<SimMethod>, reps: usize, seed: u64) -> Self {
        ReplicationConfig {
            grid,
            methods,
            reps,
            seed,
            target: Target::Full,
            counts: FactorCounts::Estimated,
            rule: ThresholdRule::Soft,
            tau: TauChoice::PdCalibrated,
            k_max_extra: 10,
            r_max: 10,
            phi_scale: DEFAULT_PHI_SCALE,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.methods.is_empty() || self.reps == 0 {
            return Err(Error::InvalidConfig("need at least one grid point, method and replication".into()));
        }
        if matches!(self.rule, ThresholdRule::SectorBlock(_)) {
            return Err(Error::InvalidConfig("sector thresholding is not available in simulations".into()));
        }
        if self.target == Target::Full && self.methods.contains(&SimMethod::PoetOnGroup) {
            return Err(Error::InvalidConfig("poet_group only applies to the local-block target".into()));
        }
        for g in &self.grid {
            g.dgp.validate()?;
            if !(0.0..=1.0).contains(&g.mix_rate) {
                return Err(Error::InvalidConfig(format!("mix rate {} outside [0, 1]", g.mix_rate)));
            }
        }
        Ok(())
    }
}

/// Everything one replication produced.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    /// `errors[method][norm]`; NaN marks a failed estimate.
    pub errors: Vec<[f64; 3]>,
    pub k_hat: usize,
    pub r_hat: Vec<usize>,
    /// Misclassification of the detected groups; NaN when clustering was not run.
    pub misclassification: f64,
}

// bitwise, so that NaN failure markers compare equal across reruns
impl PartialEq for CellOutcome {
    fn eq(&self, other: &Self) -> bool {
        let bits = |c: &CellOutcome| -> Vec<u64> { c.errors.iter().flatten().map(|v| v.to_bits()).collect() };
        bits(self) == bits(other)
            && self.k_hat == other.k_hat
            && self.r_hat == other.r_hat
            && self.misclassification.to_bits() == other.misclassification.to_bits()
    }
}

fn k_max_for(config: &ReplicationConfig, dgp: &DgpSpec) -> usize {
    (config.k_max_extra + dgp.total_local())
        .min(dgp.p - 1)
        .min(dgp.t.saturating_sub(2))
}

fn spec_for(config: &ReplicationConfig, dgp: &DgpSpec, tau_p: usize) -> Result<ThresholdSpec> {
    ThresholdSpec::from_choice(config.tau, config.rule.clone(), tau_p, dgp.t, dgp.group_size())
}

/// Inverse of an estimate: structured estimates go through the Woodbury
/// path, unstructured ones through Cholesky.
fn estimate_inverse(est: &CovEstimate) -> Result<DMatrix<f64>> {
    if est.global_factor().rank() + est.local_factor().rank() == 0 {
        return spd_inverse(est.assembled().as_matrix());
    }
    Ok(precision_matrix(est)?.into_inner())
}

struct Truth {
    rel: RelativeFrobenius,
    sigma: SymmetricMatrix,
    inverse: DMatrix<f64>,
}

impl Truth {
    fn new(sigma: SymmetricMatrix) -> Result<Self> {
        Ok(Truth {
            rel: RelativeFrobenius::new(&sigma)?,
            inverse: spd_inverse(sigma.as_matrix())?,
            sigma,
        })
    }

    fn errors(&self, est: &CovEstimate) -> [f64; 3] {
        let m = est.assembled().as_matrix();
        let rel = self.rel.distance(m).unwrap_or(f64::NAN);
        let max = max_abs(&(m - self.sigma.as_matrix()));
        let inv = estimate_inverse(est)
            .map(|i| spectral_norm_sym(&SymmetricMatrix::symmetrized(i - &self.inverse)))
            .unwrap_or(f64::NAN);
        [rel, max, inv]
    }
}

fn mean_errors(rows: &[[f64; 3]]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for r in rows {
        for n in 0..3 {
            out[n] += r[n] / rows.len() as f64;
        }
    }
    out
}

/// Runs replication `rep` of grid point `grid` on its own RNG stream.
pub fn run_cell(config: &ReplicationConfig, grid: usize, rep: usize) -> Result<CellOutcome> {
    let point = config
        .grid
        .get(grid)
        .ok_or_else(|| Error::InvalidConfig(format!("grid index {grid} out of range")))?;
    let dgp = &point.dgp;
    let mut rng = replication_rng(config.seed, grid, rep);
    let model = generate_model_with(dgp, &mut rng)?;
    let panel = simulate_panel_with(&model, &mut rng)?;
    let cluster_seed: u64 = rng.random();
    let mix_seed: u64 = rng.random();

    let spectrum = SampleSpectrum::new(&panel);
    let groups = &model.groups;
    let (k_hat, r_hat) = match config.counts {
        FactorCounts::Oracle => (dgp.k, vec![dgp.r_local; dgp.n_groups]),
        FactorCounts::Estimated => {
            let phi = default_phi(dgp.p, config.phi_scale);
            let sel = mer_select_from_eigenvalues(spectrum.eigen().values.as_slice(), k_max_for(config, dgp), phi)?;
            let rem = principal_truncation_with(spectrum.covariance(), spectrum.eigen(), sel.k_hat)?.remainder;
            (sel.k_hat, select_local_counts(&rem, groups, config.r_max)?)
        }
    };
    let r_total: usize = r_hat.iter().sum();
    let spec = spec_for(config, dgp, dgp.p)?;

    let truth = match config.target {
        Target::Full => vec![Truth::new(model.population.clone())?],
        Target::LocalBlocks => (0..dgp.n_groups)
            .map(|j| Truth::new(model.population.submatrix(groups.members(j)?)))
            .collect::<Result<_>>()?,
    };
    let score = |est: &CovEstimate, blocks: &GroupStructure| -> Result<[f64; 3]> {
        match config.target {
            Target::Full => Ok(truth[0].errors(est)),
            Target::LocalBlocks => {
                let rows = (0..dgp.n_groups)
                    .map(|j| Ok(truth[j].errors(&extract_local_block(est, blocks, j)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean_errors(&rows))
            }
        }
    };

    let mut misclassification = f64::NAN;
    let mut errors = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let outcome: Result<[f64; 3]> = (|| match method {
            SimMethod::SampleCovariance => score(&samcov_estimate(&panel), groups),
            SimMethod::Poet => score(&poet_from_spectrum(&spectrum, k_hat, &spec)?, groups),
            SimMethod::Poet2 => score(&poet2_from_spectrum(&spectrum, k_hat, r_total, &spec)?, groups),
            SimMethod::DoublePoet => score(
                &double_poet_from_spectrum(&spectrum, k_hat, groups, &r_hat, &spec)?,
                groups,
            ),
            SimMethod::DoublePoetRsc => {
                let rem = principal_truncation_with(spectrum.covariance(), spectrum.eigen(), k_hat)?.remainder;
                let fit = rsc_cluster(&rem, dgp.n_groups, cluster_seed)?;
                misclassification = misclassification_rate(&fit.labels, groups.membership())?;
                let found = GroupStructure::new(fit.labels)?;
                let r = match config.counts {
                    FactorCounts::Oracle => vec![dgp.r_local; found.n_groups()],
                    FactorCounts::Estimated => select_local_counts(&rem, &found, config.r_max)?,
                };
                let r = cap_counts(&found, &r);
                score(&double_poet_from_spectrum(&spectrum, k_hat, &found, &r, &spec)?, groups)
            }
            SimMethod::DoublePoetMix => {
                let mixed = perturb_membership(groups, point.mix_rate, mix_seed)?;
                let r = cap_counts(&mixed, &r_hat);
                score(&double_poet_from_spectrum(&spectrum, k_hat, &mixed, &r, &spec)?, groups)
            }
            SimMethod::PoetOnGroup => {
                let rows = (0..dgp.n_groups)
                    .map(|j| {
                        let idx = groups.members(j)?;
                        let sub = panel.select_assets(idx)?;
                        let spec_j = spec_for(config, dgp, idx.len())?;
                        let est = poet(&sub, dgp.k + dgp.r_local, &spec_j)?;
                        Ok(truth[j].errors(&est))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean_errors(&rows))
            }
        })();
        errors.push(outcome.unwrap_or_else(|e| {
            log::warn!("grid {grid} rep {rep}: {method} failed: {e}");
            [f64::NAN; 3]
        }));
    }
    Ok(CellOutcome {
        errors,
        k_hat,
        r_hat,
        misclassification,
    })
}

/// Caps local counts at `p_j − 1` so a group shrunk by misassignment stays valid.
fn cap_counts(groups: &GroupStructure, r: &[usize]) -> Vec<usize> {
    groups
        .group_sizes()
        .iter()
        .zip(r)
        .map(|(&pj, &rj)| rj.min(pj.saturating_sub(1)))
        .collect()
}

/// Mean and standard error of the finite entries of `values`.
pub fn mean_stderr(values: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN, 1);
    }
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

/// One aggregated line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub grid: f64,
    pub method: SimMethod,
    pub norm: ErrorNorm,
    pub mean: f64,
    pub stderr: f64,
    /// Replications with a finite error.
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub seed: u64,
    pub reps: usize,
    pub grid: Vec<GridPoint>,
    pub methods: Vec<SimMethod>,
    /// `cells[grid][rep]`.
    pub cells: Vec<Vec<CellOutcome>>,
}

impl ReplicationReport {
    fn method_index(&self, method: SimMethod) -> Result<usize> {
        self.methods
            .iter()
            .position(|&m| m == method)
            .ok_or_else(|| Error::InvalidInput(format!("method {method} was not run")))
    }

    /// Per-replication errors in replication order.
    pub fn samples(&self, grid: usize, method: SimMethod, norm: ErrorNorm) -> Result<Vec<f64>> {
        let m = self.method_index(method)?;
        let cells = self
            .cells
            .get(grid)
            .ok_or_else(|| Error::InvalidInput(format!("grid index {grid} out of range")))?;
        Ok(cells.iter().map(|c| c.errors[m][norm.index()]).collect())
    }

    /// Mean and standard error of `a − b` over replications where both are finite.
    pub fn paired_difference(&self, grid: usize, a: SimMethod, b: SimMethod, norm: ErrorNorm) -> Result<(f64, f64)> {
        let xa = self.samples(grid, a, norm)?;
        let xb = self.samples(grid, b, norm)?;
        let diff: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x - y).collect();
        let (mean, se, _) = mean_stderr(&diff);
        Ok((mean, se))
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut out = Vec::new();
        for (g, point) in self.grid.iter().enumerate() {
            for &method in &self.methods {
                for norm in ErrorNorm::ALL {
                    let values = self.samples(g, method, norm).expect("method was run");
                    let (mean, stderr, reps) = mean_stderr(&values);
                    out.push(ReportRow {
                        grid: point.value,
                        method,
                        norm,
                        mean,
                        stderr,
                        reps,
                    });
                }
            }
        }
        out
    }
}

pub fn run_replications(config: &ReplicationConfig) -> Result<ReplicationReport> {
    config.validate()?;
    let n = config.grid.len() * config.reps;
    let flat = par_map(n, |i| run_cell(config, i / config.reps, i % config.reps));
    let mut cells = vec![Vec::with_capacity(config.reps); config.grid.len()];
    for (i, cell) in flat.into_iter().enumerate() {
        cells[i / config.reps].push(cell?);
    }
    Ok(ReplicationReport {
        seed: config.seed,
        reps: config.reps,
        grid: config.grid.clone(),
        methods: config.methods.clone(),
        cells,
    })
}

/// Factor-count selection on `reps` fresh models and panels.
pub fn selection_replications(
    spec: &DgpSpec,
    reps: usize,
    seed: u64,
    k_max: usize,
    phi_scale: f64,
) -> Result<Vec<ModelSelection>> {
    spec.validate()?;
    let phi = default_phi(spec.p, phi_scale);
    par_map(reps, |rep| {
        let mut rng = replication_rng(seed, 0, rep);
        let model = generate_model_with(spec, &mut rng)?;
        let panel = simulate_panel_with(&model, &mut rng)?;
        let spectrum = SampleSpectrum::new(&panel);
        mer_select_from_eigenvalues(spectrum.eigen().values.as_slice(), k_max, phi)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::sample_covariance;
    use crate::linalg::{min_eigenvalue, relative_frobenius};

    #[test]
    fn error_cov_is_pd_with_gamma_moments() {
        let s = sparse_error_cov(2000, 0.3, 11).unwrap();
        let mean = s.diagonal().mean();
        assert!((mean - 1.01).abs() < 0.05, "diagonal mean {mean}");
        let small = sparse_error_cov(50, 0.3, 3).unwrap();
        assert!(min_eigenvalue(&small) > 0.0);
        assert!(small.diagonal().iter().all(|&d| d > 0.0));
        assert!(sparse_error_cov(1, 0.3, 0).is_err());
        assert!(sparse_error_cov(10, 0.0, 0).is_err());
    }

    #[test]
    fn sparse_count_matches_binomial_mean() {
        let p = 400;
        let prob = 0.3 / (20.0 * 400f64.ln());
        let gamma = Gamma::new(100.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let total: usize = (0..200)
            .map(|_| draw_error_components(p, prob, &gamma, &mut rng).1.iter().filter(|&&v| v != 0.0).count())
            .sum();
        let mean = total as f64 / 200.0;
        assert!((mean - p as f64 * prob).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn model_is_deterministic_and_assembled() {
        let spec = DgpSpec::new(40, 50, 4, 2, 1);
        let a = generate_model(&spec, 5).unwrap();
        assert_eq!(a, generate_model(&spec, 5).unwrap());
        assert_eq!(a.population, generate_model(&spec, 5).unwrap().population);
        let direct = &a.loadings * a.loadings.transpose()
            + &a.local_loadings * a.local_loadings.transpose()
            + a.sigma_u.as_matrix();
        assert!(max_abs(&(direct - a.population.as_matrix())) < 1e-12);
        // local loadings vanish outside the owning group
        assert_eq!(a.local_loadings[(0, 1)], 0.0);
        assert_eq!(a.local_loadings[(39, 0)], 0.0);
        assert!(generate_model(&DgpSpec::new(41, 50, 4, 2, 1), 0).is_err());
    }

    #[test]
    fn no_global_factors() {
        let m = generate_model(&DgpSpec::new(20, 30, 2, 0, 2), 1).unwrap();
        assert_eq!(m.loadings.ncols(), 0);
        let direct = &m.local_loadings * m.local_loadings.transpose() + m.sigma_u.as_matrix();
        assert!(max_abs(&(direct - m.population.as_matrix())) < 1e-12);
    }

    #[test]
    fn population_matches_monte_carlo_moments() {
        let mut spec = DgpSpec::new(50, 200_000, 5, 1, 1);
        spec.m = 0.3;
        let model = generate_model(&spec, 8).unwrap();
        let panel = simulate_panel(&model, 9).unwrap();
        let s = sample_covariance(&panel);
        let gap = max_abs(&(s.as_matrix() - model.population.as_matrix()));
        assert!(gap <= 0.05, "max gap {gap}");
    }

    #[test]
    fn panel_is_deterministic_and_converges() {
        let model = generate_model(&DgpSpec::new(50, 10_000, 5, 0, 0), 2).unwrap();
        let a = simulate_panel(&model, 3).unwrap();
        assert_eq!(a.values(), simulate_panel(&model, 3).unwrap().values());
        let gap = max_abs(&(sample_covariance(&a).as_matrix() - model.population.as_matrix()));
        assert!(gap <= 0.15, "max gap {gap}");
    }

    #[test]
    fn factor_panel_converges_on_correlation_scale() {
        let model = generate_model(&DgpSpec::new(50, 10_000, 5, 2, 1), 2).unwrap();
        let s = sample_covariance(&simulate_panel(&model, 3).unwrap());
        let pop = model.population.as_matrix();
        let gap = (0..50)
            .flat_map(|i| (0..50).map(move |j| (i, j)))
            .map(|(i, j)| (s.get(i, j) - pop[(i, j)]).abs() / (pop[(i, i)] * pop[(j, j)]).sqrt())
            .fold(0.0, f64::max);
        assert!(gap <= 0.15, "scaled gap {gap}");
    }

    #[test]
    fn perturbation_counts() {
        let g = GroupStructure::contiguous(&[40; 10]).unwrap();
        assert_eq!(perturb_membership(&g, 0.0, 1).unwrap(), g);
        let moved = perturb_membership(&g, 0.03, 1).unwrap();
        let diff = (0..400).filter(|&i| moved.group_of(i) != g.group_of(i)).count();
        assert_eq!(diff, 12);
        let all = perturb_membership(&GroupStructure::contiguous(&[5, 5]).unwrap(), 1.0, 4).unwrap();
        assert!((0..10).all(|i| all.group_of(i) != usize::from(i >= 5)));
        assert!(perturb_membership(&g, 1.5, 0).is_err());
        assert_eq!(perturb_membership(&g, 0.1, 7).unwrap(), perturb_membership(&g, 0.1, 7).unwrap());
    }

    #[test]
    fn single_samcov_cell_matches_direct_computation() {
        let dgp = DgpSpec::new(20, 40, 2, 1, 1);
        let config = ReplicationConfig::new(vec![GridPoint::new(20.0, dgp)], vec![SimMethod::SampleCovariance], 1, 17);
        let report = run_replications(&config).unwrap();
        let rows = report.rows();
        assert_eq!(rows.len(), 3);

        let mut rng = replication_rng(17, 0, 0);
        let model = generate_model_with(&dgp, &mut rng).unwrap();
        let panel = simulate_panel_with(&model, &mut rng).unwrap();
        let s = sample_covariance(&panel);
        let rel = relative_frobenius(&s, &model.population).unwrap();
        assert_eq!(rows[0].mean, rel);
        assert_eq!(rows[1].mean, max_abs(&(s.as_matrix() - model.population.as_matrix())));
        assert_eq!(rows[0].reps, 1);
        // T > p here so the sample covariance is invertible
        assert!(rows[2].mean.is_finite());
    }

    #[test]
    fn replications_are_reproducible() {
        let dgp = DgpSpec::new(30, 60, 3, 1, 1);
        let mut point = GridPoint::new(30.0, dgp);
        point.mix_rate = 0.1;
        let mut config = ReplicationConfig::new(
            vec![point],
            vec![SimMethod::Poet, SimMethod::DoublePoet, SimMethod::DoublePoetRsc, SimMethod::DoublePoetMix],
            3,
            99,
        );
        let a = run_replications(&config).unwrap();
        assert_eq!(a, run_replications(&config).unwrap());
        let cell = run_cell(&config, 0, 2).unwrap();
        assert_eq!(cell, a.cells[0][2]);
        assert!(cell.misclassification.is_finite());

        config.methods = vec![SimMethod::PoetOnGroup];
        assert!(run_replications(&config).is_err());
        config.target = Target::LocalBlocks;
        assert!(run_replications(&config).is_ok());
    }

    #[test]
    fn selection_study_runs() {
        let sel = selection_replications(&DgpSpec::new(60, 80, 3, 2, 1), 3, 1, 8, 0.3).unwrap();
        assert_eq!(sel.len(), 3);
        assert!(sel.iter().all(|s| s.k_hat <= 8));
    }
}
