//! Minimum-variance weights under a gross-exposure limit, and a rolling
//! out-of-sample backtest.
//!
//! The solver first tries the unconstrained closed form. When that breaks
//! the `‖ω‖₁ ≤ c` limit it runs ADMM on the split `ω = z` (equality
//! constraint in the `ω` step, L1-ball projection in the `z` step), then
//! polishes on the detected support and sign pattern and certifies the
//! result through the KKT conditions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::ReturnsPanel;
use crate::linalg::{floor_eigenvalues, sym_eigen, EigenDecomposition, SymmetricMatrix};
use crate::par_map;
use crate::pipeline::{fit_estimator, EstimatorConfig};

/// Relative eigenvalue floor applied before solving when repair is on.
pub const PD_REPAIR_FLOOR: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSolution {
    pub weights: DVector<f64>,
    /// `ω' Σ ω`.
    pub objective: f64,
    pub gross_exposure: f64,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
    /// True when the gross-exposure limit binds.
    pub l1_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Lift eigenvalues to `PD_REPAIR_FLOOR · trace/p` instead of failing.
    pub repair: bool,
    pub max_iterations: usize,
    /// KKT tolerance relative to the gradient scale.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            repair: false,
            max_iterations: MAX_ITERATIONS,
            tolerance: 1e-8,
        }
    }
}

fn quad(sigma: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(sigma * w))
}

fn l1(w: &DVector<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ c}`.
fn project_l1_ball(v: &DVector<f64>, c: f64) -> DVector<f64> {
    if l1(v) <= c {
        return v.clone();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - c) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Mixes with equal weights until `‖ω‖₁ ≤ c`; `1'ω = 1` is kept.
fn restore_feasibility(mut w: DVector<f64>, c: f64) -> DVector<f64> {
    let p = w.len() as f64;
    let shift = (1.0 - w.sum()) / p;
    w.add_scalar_mut(shift);
    let g = l1(&w);
    if g > c {
        let theta = (g - c) / (g - 1.0);
        let n = w.len();
        w = w * (1.0 - theta) + DVector::from_element(n, theta / p);
    }
    w
}

fn solution(sigma: &DMatrix<f64>, w: DVector<f64>, c: f64, converged: bool, iterations: usize, active: bool) -> PortfolioSolution {
    PortfolioSolution {
        objective: quad(sigma, &w),
        gross_exposure: l1(&w),
        weights: w,
        c,
        converged,
        iterations,
        l1_active: active,
    }
}

/// Solves the KKT system on the support `s` with signs `sign`, with the
/// gross-exposure equality when the signs are mixed.
fn polish(sigma: &DMatrix<f64>, support: &[usize], sign: &[f64], c: f64) -> Option<DVector<f64>> {
    let n = support.len();
    if n == 0 {
        return None;
    }
    let mixed = sign.iter().any(|&s| s != sign[0]);
    let m = n + 1 + usize::from(mixed);
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for (r, &i) in support.iter().enumerate() {
        for (c2, &j) in support.iter().enumerate() {
            a[(r, c2)] = 2.0 * sigma[(i, j)];
        }
        a[(r, n)] = 1.0;
        a[(n, r)] = 1.0;
        if mixed {
            a[(r, n + 1)] = sign[r];
            a[(n + 1, r)] = sign[r];
        }
    }
    b[n] = 1.0;
    if mixed {
        b[n + 1] = c;
    }
    let x = a.lu().solve(&b)?;
    let mut w = DVector::zeros(sigma.nrows());
    for (r, &i) in support.iter().enumerate() {
        if x[r] * sign[r] < 0.0 {
            return None;
        }
        w[i] = x[r];
    }
    Some(w)
}

/// First-order optimality of a feasible `w` for the constrained problem.
fn kkt_holds(sigma: &DMatrix<f64>, w: &DVector<f64>, c: f64, tol: f64) -> bool {
    let g = sigma * w * 2.0;
    let scale = g.amax().max(1.0);
    let eps = 1e-12 * l1(w).max(1.0);
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i].abs() > eps).collect();
    if support.is_empty() {
        return false;
    }
    let active = (l1(w) - c).abs() <= 1e-9 * c;
    if !active {
        // interior: the gradient must be constant
        let g0 = g[support[0]];
        return g.iter().all(|&gi| (gi - g0).abs() <= tol * scale);
    }
    let sign: Vec<f64> = support.iter().map(|&i| w[i].signum()).collect();
    let mixed = sign.iter().any(|&s| s != sign[0]);
    if !mixed {
        // 0 ∈ g_i + α + β ∂|w_i|: all support gradients equal, off-support
        // gradients on the far side of it
        let g0 = g[support[0]];
        let s0 = sign[0];
        let same = support.iter().all(|&i| (g[i] - g0).abs() <= tol * scale);
        let off = (0..w.len())
            .filter(|i| !support.contains(i))
            .all(|i| s0 * (g[i] - g0) >= -tol * scale);
        return same && off;
    }
    // least squares for (α, β) on the support
    let mut a = DMatrix::zeros(support.len(), 2);
    let mut b = DVector::zeros(support.len());
    for (r, &i) in support.iter().enumerate() {
        a[(r, 0)] = 1.0;
        a[(r, 1)] = sign[r];
        b[r] = -g[i];
    }
    let Ok(x) = a.clone().svd(true, true).solve(&b, 1e-14) else {
        return false;
    };
    let (alpha, beta) = (x[0], x[1]);
    let resid = (&a * &x - &b).amax();
    let off_ok = (0..w.len())
        .filter(|i| !support.contains(i))
        .all(|i| (g[i] + alpha).abs() <= beta + tol * scale);
    resid <= tol * scale && beta >= -tol * scale && off_ok
}

pub fn min_variance_weights(sigma: &SymmetricMatrix, c: f64) -> Result<PortfolioSolution> {
    min_variance_weights_with(sigma, c, &SolverOptions::default())
}

pub fn min_variance_weights_with(sigma: &SymmetricMatrix, c: f64, opts: &SolverOptions) -> Result<PortfolioSolution> {
    if !(c >= 1.0) {
        return Err(Error::InfeasibleConstraint(c));
    }
    let p = sigma.dim();
    if p == 0 {
        return Err(Error::InvalidInput("empty covariance matrix".into()));
    }
    let mut eig = sym_eigen(sigma);
    let min = eig.values[p - 1];
    let floor = PD_REPAIR_FLOOR * sigma.trace().max(f64::MIN_POSITIVE) / p as f64;
    let repaired;
    let sigma = if min > 0.0 && (!opts.repair || min >= floor) {
        sigma
    } else if opts.repair {
        repaired = floor_eigenvalues(sigma, floor);
        eig = sym_eigen(&repaired);
        &repaired
    } else {
        return Err(Error::NotPositiveDefinite(format!(
            "covariance has minimum eigenvalue {min:e}"
        )));
    };
    let s = sigma.as_matrix();
    let ones = DVector::from_element(p, 1.0);

    let apply = |eig: &EigenDecomposition, v: &DVector<f64>, shift: f64| -> DVector<f64> {
        let mut y = eig.vectors.tr_mul(v);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi /= 2.0 * eig.values[i] + shift;
        }
        &eig.vectors * y
    };

    let inv_one = apply(&eig, &ones, 0.0);
    let closed = &inv_one / inv_one.sum();
    if l1(&closed) <= c * (1.0 + 1e-12) {
        return Ok(solution(s, closed, c, true, 0, false));
    }

    // ADMM on min ω'Σω s.t. 1'ω = 1, ω = z, ‖z‖₁ ≤ c
    let mut rho = 2.0 * sigma.trace() / p as f64;
    let mut z = project_l1_ball(&closed, c);
    let mut u = DVector::zeros(p);
    let mut best = restore_feasibility(z.clone(), c);
    let mut best_obj = quad(s, &best);
    let mut m1 = apply(&eig, &ones, rho);
    for iter in 1..=opts.max_iterations {
        let v = (&z - &u) * rho;
        let mv = apply(&eig, &v, rho);
        let nu = (mv.sum() - 1.0) / m1.sum();
        let w = &mv - &m1 * nu;
        let z_old = z;
        z = project_l1_ball(&(&w + &u), c);
        u += &w - &z;

        let r = (&w - &z).norm();
        let d = rho * (&z - &z_old).norm();
        if iter % 25 == 0 || r + d < 1e-12 {
            let cand = restore_feasibility(w.clone(), c);
            let obj = quad(s, &cand);
            if obj < best_obj {
                best = cand;
                best_obj = obj;
            }
            let eps = 1e-9 * l1(&z).max(1.0);
            let support: Vec<usize> = (0..p).filter(|&i| z[i].abs() > eps).collect();
            let sign: Vec<f64> = support.iter().map(|&i| z[i].signum()).collect();
            if let Some(pw) = polish(s, &support, &sign, c) {
                let pw_obj = quad(s, &pw);
                if l1(&pw) <= c * (1.0 + 1e-12) && (pw.sum() - 1.0).abs() <= 1e-10 && pw_obj <= best_obj + 1e-14 * best_obj.abs() {
                    if kkt_holds(s, &pw, c, opts.tolerance) {
                        return Ok(solution(s, pw, c, true, iter, true));
                    }
                    best = pw;
                    best_obj = pw_obj;
                }
            }
            if kkt_holds(s, &best, c, opts.tolerance) {
                return Ok(solution(s, best, c, true, iter, true));
            }
        }
        // residual balancing
        if r > 10.0 * d {
            rho *= 2.0;
            u /= 2.0;
            m1 = apply(&eig, &ones, rho);
        } else if d > 10.0 * r {
            rho /= 2.0;
            u *= 2.0;
            m1 = apply(&eig, &ones, rho);
        }
    }
    Err(Error::SolverFailed {
        best: Box::new(solution(s, best, c, false, opts.max_iterations, true)),
    })
}

/// `√(Σ_t (ω' y_t)² / H)` over the rows of `returns`.
pub fn realized_risk(weights: &DVector<f64>, returns: &DMatrix<f64>) -> Result<f64> {
    if returns.ncols() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} assets",
            weights.len(),
            returns.ncols()
        )));
    }
    if returns.nrows() == 0 {
        return Err(Error::InvalidInput("no returns in holding period".into()));
    }
    let r = returns * weights;
    Ok((r.norm_squared() / returns.nrows() as f64).sqrt())
}

/// Rolling schedule: estimate on the last `window` rows, hold for `hold` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub window: usize,
    pub hold: usize,
    /// Hold for calendar months when every time label starts with `YYYY-MM`.
    pub calendar: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            window: 104,
            hold: 4,
            calendar: true,
        }
    }
}

fn month_key(label: &str) -> Option<&str> {
    let b = label.as_bytes();
    let ok = b.len() >= 7
        && b[..4].iter().all(u8::is_ascii_digit)
        && b[4] == b'-'
        && b[5..7].iter().all(u8::is_ascii_digit)
        && (b.len() == 7 || !b[7].is_ascii_digit());
    ok.then(|| &label[..7])
}

/// Holding periods `[start, end)` in row indices.
pub fn rebalance_periods(panel: &ReturnsPanel, schedule: &Schedule) -> Result<Vec<(usize, usize)>> {
    let t = panel.n_obs();
    if schedule.window < 2 || schedule.hold == 0 {
        return Err(Error::InvalidConfig(format!(
            "window must be >= 2 and hold >= 1, got {} and {}",
            schedule.window, schedule.hold
        )));
    }
    if t <= schedule.window {
        return Err(Error::InsufficientData {
            required: schedule.window + 1,
            actual: t,
        });
    }
    let months: Option<Vec<&str>> = panel
        .time_labels()
        .filter(|_| schedule.calendar)
        .and_then(|labels| labels.iter().map(|l| month_key(l)).collect());
    let mut periods = Vec::new();
    match months {
        Some(months) => {
            let mut starts: Vec<usize> = (schedule.window..t)
                .filter(|&i| months[i] != months[i - 1])
                .collect();
            if starts.first() != Some(&schedule.window) {
                // first holding period starts right after the first full window
                starts.insert(0, schedule.window);
            }
            for (n, &s) in starts.iter().enumerate() {
                periods.push((s, starts.get(n + 1).copied().unwrap_or(t)));
            }
        }
        None => {
            let mut s = schedule.window;
            while s < t {
                periods.push((s, (s + schedule.hold).min(t)));
                s += schedule.hold;
            }
        }
    }
    Ok(periods)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodResult {
    /// First row of the holding period.
    pub start: usize,
    pub end: usize,
    pub label: Option<String>,
    pub risk: f64,
    pub k: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub method: String,
    pub c: f64,
    pub periods: Vec<PeriodResult>,
    /// Mean of the per-period risks.
    pub overall_risk: f64,
    /// Start rows of periods dropped because the estimator failed.
    pub skipped: Vec<usize>,
}

/// Rolling backtest for every `c` in `c_grid`. One estimate per period is
/// shared by all `c`.
pub fn backtest(
    panel: &ReturnsPanel,
    schedule: &Schedule,
    estimator: &EstimatorConfig,
    c_grid: &[f64],
    repair: bool,
) -> Result<Vec<BacktestReport>> {
    if c_grid.is_empty() {
        return Err(Error::InvalidConfig("empty c grid".into()));
    }
    if let Some(&c) = c_grid.iter().find(|&&c| !(c >= 1.0)) {
        return Err(Error::InfeasibleConstraint(c));
    }
    let periods = rebalance_periods(panel, schedule)?;
    let opts = SolverOptions {
        repair,
        ..SolverOptions::default()
    };
    let outcomes = par_map(periods.len(), |n| -> Result<Option<Vec<(f64, usize, bool)>>> {
        let (start, end) = periods[n];
        let window = panel.rows(start - schedule.window, start)?;
        let fitted = match fit_estimator(&window, estimator) {
            Ok(f) => f,
            Err(e) if e.is_numerical() || matches!(e, Error::InvalidFactorCount(_) | Error::InvalidKMax { .. }) => {
                log::warn!("period starting at row {start}: estimator failed: {e}");
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let held = panel.values().rows(start, end - start).into_owned();
        let mut out = Vec::with_capacity(c_grid.len());
        for &c in c_grid {
            let sol = match min_variance_weights_with(fitted.estimate.assembled(), c, &opts) {
                Ok(s) => s,
                Err(Error::SolverFailed { best }) => {
                    log::warn!("period starting at row {start}, c = {c}: solver did not converge");
                    *best
                }
                Err(e) if e.is_numerical() => {
                    log::warn!("period starting at row {start}: {e}");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            out.push((realized_risk(&sol.weights, &held)?, fitted.k, sol.converged));
        }
        Ok(Some(out))
    });

    let mut reports: Vec<BacktestReport> = c_grid
        .iter()
        .map(|&c| BacktestReport {
            method: estimator.method.tag().to_string(),
            c,
            periods: Vec::new(),
            overall_risk: f64::NAN,
            skipped: Vec::new(),
        })
        .collect();
    for (n, outcome) in outcomes.into_iter().enumerate() {
        let (start, end) = periods[n];
        match outcome? {
            None => reports.iter_mut().for_each(|r| r.skipped.push(start)),
            Some(values) => {
                for (report, (risk, k, converged)) in reports.iter_mut().zip(values) {
                    report.periods.push(PeriodResult {
                        start,
                        end,
                        label: panel.time_labels().map(|l| l[start].clone()),
                        risk,
                        k,
                        converged,
                    });
                }
            }
        }
    }
    for r in &mut reports {
        if !r.periods.is_empty() {
            r.overall_risk = r.periods.iter().map(|p| p.risk).sum::<f64>() / r.periods.len() as f64;
        }
    }
    Ok(reports)
}
