use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::SymmetricMatrix;

/// Added to the smallest positive-definite constant by [`TauChoice::PdCalibrated`].
pub const PD_MARGIN: f64 = 0.1;

/// Shrinkage applied to the off-diagonal residual covariance entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThresholdRule {
    /// `sign(x)·max(|x| − τ_ij, 0)`.
    Soft,
    /// `x·1{|x| ≥ τ_ij}`.
    Hard,
    /// Keep entries whose two assets share a sector label, zero the rest.
    /// `τ` is ignored.
    SectorBlock(Vec<usize>),
}

/// How the threshold constant is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauChoice {
    Fixed(f64),
    /// `τ = 0.5·ω`, see [`default_tau`].
    Rate,
    /// `τ = (C_min + PD_MARGIN)·ω`, where `C_min` is the smallest constant
    /// whose thresholded residual is positive definite. Resolved separately
    /// for every residual.
    PdCalibrated,
}

/// Threshold constant `τ` and rule. Entry `(i, j)` is compared against
/// `τ_ij = τ·sqrt(σ_ii σ_jj)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSpec {
    tau: f64,
    rule: ThresholdRule,
    /// `Some(ω)` when `τ` is calibrated against each residual.
    calibrate: Option<f64>,
}

impl ThresholdSpec {
    pub fn new(tau: f64, rule: ThresholdRule) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!("threshold tau must be >= 0, got {tau}")));
        }
        Ok(ThresholdSpec {
            tau,
            rule,
            calibrate: None,
        })
    }

    pub fn soft(tau: f64) -> Result<Self> {
        Self::new(tau, ThresholdRule::Soft)
    }

    pub fn hard(tau: f64) -> Result<Self> {
        Self::new(tau, ThresholdRule::Hard)
    }

    pub fn sector(labels: Vec<usize>) -> Self {
        ThresholdSpec {
            tau: 0.0,
            rule: ThresholdRule::SectorBlock(labels),
            calibrate: None,
        }
    }

    /// No shrinkage at all.
    pub fn none() -> Self {
        ThresholdSpec {
            tau: 0.0,
            rule: ThresholdRule::Soft,
            calibrate: None,
        }
    }

    /// `τ = (C_min + PD_MARGIN)·omega`, resolved per residual.
    pub fn pd_calibrated(rule: ThresholdRule, omega: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidConfig(format!("threshold rate must be > 0, got {omega}")));
        }
        Ok(ThresholdSpec {
            tau: f64::NAN,
            rule,
            calibrate: Some(omega),
        })
    }

    /// Builds the spec for a panel of `p` assets over `t` periods whose
    /// smallest group has `min_group_size` assets.
    pub fn from_choice(choice: TauChoice, rule: ThresholdRule, p: usize, t: usize, min_group_size: usize) -> Result<Self> {
        if let ThresholdRule::SectorBlock(labels) = rule {
            return Ok(Self::sector(labels));
        }
        match choice {
            TauChoice::Fixed(tau) => Self::new(tau, rule),
            TauChoice::Rate => Self::new(default_tau(p, t, min_group_size), rule),
            TauChoice::PdCalibrated => Self::pd_calibrated(rule, threshold_rate(p, t, min_group_size)),
        }
    }

    /// The fixed constant; NaN for a calibrated spec, whose `τ` depends on
    /// the residual (see [`ThresholdSpec::resolve`]).
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rule(&self) -> &ThresholdRule {
        &self.rule
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrate.is_some()
    }

    /// The `τ` that will be applied to `residual`.
    pub fn resolve(&self, residual: &SymmetricMatrix) -> Result<f64> {
        match (self.calibrate, &self.rule) {
            (_, ThresholdRule::SectorBlock(_)) | (None, _) => Ok(self.tau),
            (Some(omega), rule) => Ok(min_pd_tau(residual, rule)? + PD_MARGIN * omega),
        }
    }

    /// Same rule restricted to the assets `idx` (only matters for sector labels).
    pub fn restricted(&self, idx: &[usize]) -> ThresholdSpec {
        let rule = match &self.rule {
            ThresholdRule::SectorBlock(labels) => {
                ThresholdRule::SectorBlock(idx.iter().map(|&i| labels[i]).collect())
            }
            other => other.clone(),
        };
        ThresholdSpec {
            tau: self.tau,
            rule,
            calibrate: self.calibrate,
        }
    }
}

/// `ω = sqrt(log p / T) + p_min^{-1/2}`, where `p_min` is the smallest group
/// size (`p` itself when there are no groups).
pub fn threshold_rate(p: usize, t: usize, min_group_size: usize) -> f64 {
    let p = p.max(1) as f64;
    let pmin = min_group_size.max(1) as f64;
    (p.ln() / t.max(1) as f64).sqrt() + 1.0 / pmin.sqrt()
}

/// Rate-based default `τ = 0.5·ω`.
pub fn default_tau(p: usize, t: usize, min_group_size: usize) -> f64 {
    0.5 * threshold_rate(p, t, min_group_size)
}

fn check_diagonal(m: &SymmetricMatrix) -> Result<()> {
    if let Some(index) = (0..m.dim()).find(|&i| !(m.get(i, i) > 0.0)) {
        return Err(Error::InvalidResidualDiagonal {
            index,
            value: m.get(index, index),
        });
    }
    Ok(())
}

fn apply(residual: &SymmetricMatrix, tau: f64, soft: bool) -> SymmetricMatrix {
    let p = residual.dim();
    let m = residual.as_matrix();
    let mut out = m.clone();
    let scale: Vec<f64> = (0..p).map(|i| m[(i, i)].sqrt()).collect();
    for i in 0..p {
        for j in (i + 1)..p {
            let x = m[(i, j)];
            let cut = tau * scale[i] * scale[j];
            let y = if soft {
                x.signum() * (x.abs() - cut).max(0.0)
            } else if x.abs() >= cut {
                x
            } else {
                0.0
            };
            out[(i, j)] = y;
            out[(j, i)] = y;
        }
    }
    SymmetricMatrix::symmetrized(out)
}

/// Smallest `τ` (to bisection accuracy) for which the thresholded residual
/// has a Cholesky factor. Zero when the residual itself is positive definite.
pub fn min_pd_tau(residual: &SymmetricMatrix, rule: &ThresholdRule) -> Result<f64> {
    let soft = match rule {
        ThresholdRule::Soft => true,
        ThresholdRule::Hard => false,
        ThresholdRule::SectorBlock(_) => {
            return Err(Error::InvalidConfig("sector thresholding has no tau to calibrate".into()))
        }
    };
    check_diagonal(residual)?;
    let pd = |tau: f64| Cholesky::new(apply(residual, tau, soft).into_inner()).is_some();
    if pd(0.0) {
        return Ok(0.0);
    }
    // above the largest correlation every off-diagonal entry is gone
    let p = residual.dim();
    let mut hi: f64 = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let c = residual.get(i, j).abs() / (residual.get(i, i) * residual.get(j, j)).sqrt();
            hi = hi.max(c);
        }
    }
    hi = hi * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let mut lo = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if pd(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-6 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Entrywise adaptive thresholding. The diagonal is copied untouched.
pub fn adaptive_threshold(residual: &SymmetricMatrix, spec: &ThresholdSpec) -> Result<SymmetricMatrix> {
    threshold_resolved(residual, spec).map(|(m, _)| m)
}

/// [`adaptive_threshold`] plus the `τ` that was applied.
pub fn threshold_resolved(residual: &SymmetricMatrix, spec: &ThresholdSpec) -> Result<(SymmetricMatrix, f64)> {
    let p = residual.dim();
    match &spec.rule {
        ThresholdRule::SectorBlock(labels) => {
            if labels.len() != p {
                return Err(Error::InvalidConfig(format!(
                    "{} sector labels for {p} assets",
                    labels.len()
                )));
            }
            let mut out = residual.as_matrix().clone();
            for i in 0..p {
                for j in 0..p {
                    if i != j && labels[i] != labels[j] {
                        out[(i, j)] = 0.0;
                    }
                }
            }
            Ok((SymmetricMatrix::symmetrized(out), 0.0))
        }
        rule => {
            if spec.calibrate.is_none() && spec.tau == 0.0 {
                return Ok((residual.clone(), 0.0));
            }
            check_diagonal(residual)?;
            let tau = spec.resolve(residual)?;
            Ok((apply(residual, tau, matches!(rule, ThresholdRule::Soft)), tau))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn sym(rows: usize, v: &[f64]) -> SymmetricMatrix {
        SymmetricMatrix::new(DMatrix::from_row_slice(rows, rows, v)).unwrap()
    }

    #[test]
    fn zero_tau_is_identity() {
        let r = sym(2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(adaptive_threshold(&r, &ThresholdSpec::soft(0.0).unwrap()).unwrap(), r);
    }

    #[test]
    fn soft_and_hard_examples() {
        let r = sym(2, &[1.0, 0.5, 0.5, 1.0]);
        let s = adaptive_threshold(&r, &ThresholdSpec::soft(0.2).unwrap()).unwrap();
        assert!((s.get(0, 1) - 0.3).abs() < 1e-15);
        assert_eq!(s.get(0, 0), 1.0);

        let r = sym(2, &[1.0, 0.1, 0.1, 1.0]);
        let h = adaptive_threshold(&r, &ThresholdSpec::hard(0.2).unwrap()).unwrap();
        assert_eq!(h.as_matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn entry_dependent_scale() {
        // tau_12 = 0.1 * sqrt(4 * 9) = 0.6
        let r = sym(2, &[4.0, -1.0, -1.0, 9.0]);
        let s = adaptive_threshold(&r, &ThresholdSpec::soft(0.1).unwrap()).unwrap();
        assert!((s.get(0, 1) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn sector_rule_keeps_within_sector() {
        let r = sym(3, &[1.0, 0.2, 0.3, 0.2, 1.0, 0.4, 0.3, 0.4, 1.0]);
        let s = adaptive_threshold(&r, &ThresholdSpec::sector(vec![0, 0, 1])).unwrap();
        assert_eq!(s.get(0, 1), 0.2);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(1, 2), 0.0);
        assert!(adaptive_threshold(&r, &ThresholdSpec::sector(vec![0, 1])).is_err());
    }

    #[test]
    fn nonpositive_diagonal_is_rejected() {
        let r = sym(2, &[1.0, 0.1, 0.1, 0.0]);
        assert!(matches!(
            adaptive_threshold(&r, &ThresholdSpec::soft(0.5).unwrap()),
            Err(Error::InvalidResidualDiagonal { index: 1, .. })
        ));
        assert!(ThresholdSpec::soft(-1.0).is_err());
    }

    #[test]
    fn default_tau_formula() {
        let expected = 0.5 * ((300f64.ln() / 300.0).sqrt() + 1.0 / 30f64.sqrt());
        assert!((default_tau(300, 300, 30) - expected).abs() < 1e-15);
    }

    #[test]
    fn calibration_finds_the_pd_boundary() {
        // eigenvalues 1 ± 1.2 at tau = 0; soft thresholding is PD once 1.2 − tau < 1
        let r = sym(2, &[1.0, 1.2, 1.2, 1.0]);
        let t = min_pd_tau(&r, &ThresholdRule::Soft).unwrap();
        assert!((t - 0.2).abs() < 1e-6, "{t}");
        let spec = ThresholdSpec::pd_calibrated(ThresholdRule::Soft, 0.5).unwrap();
        let (out, tau) = threshold_resolved(&r, &spec).unwrap();
        assert!((tau - (t + PD_MARGIN * 0.5)).abs() < 1e-15);
        assert!((out.get(0, 1) - (1.2 - tau)).abs() < 1e-12);

        let pd = sym(2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(min_pd_tau(&pd, &ThresholdRule::Hard).unwrap(), 0.0);
        assert!(ThresholdSpec::pd_calibrated(ThresholdRule::Soft, 0.0).is_err());
    }

    #[test]
    fn choices_map_to_specs() {
        let rate = ThresholdSpec::from_choice(TauChoice::Rate, ThresholdRule::Soft, 300, 300, 30).unwrap();
        assert_eq!(rate.tau(), default_tau(300, 300, 30));
        let fixed = ThresholdSpec::from_choice(TauChoice::Fixed(0.3), ThresholdRule::Hard, 10, 10, 10).unwrap();
        assert_eq!((fixed.tau(), fixed.rule()), (0.3, &ThresholdRule::Hard));
        let cal = ThresholdSpec::from_choice(TauChoice::PdCalibrated, ThresholdRule::Soft, 10, 10, 10).unwrap();
        assert!(cal.is_calibrated());
        let sector = ThresholdSpec::from_choice(TauChoice::PdCalibrated, ThresholdRule::SectorBlock(vec![0, 1]), 2, 10, 2);
        assert!(!sector.unwrap().is_calibrated());
    }

    fn random_residual() -> impl Strategy<Value = SymmetricMatrix> {
        (2usize..7).prop_flat_map(|p| {
            (
                prop::collection::vec(0.1f64..5.0, p),
                prop::collection::vec(-2.0f64..2.0, p * p),
            )
                .prop_map(move |(d, off)| {
                    let mut m = DMatrix::from_row_slice(p, p, &off);
                    m = (&m + m.transpose()) * 0.5;
                    for i in 0..p {
                        m[(i, i)] = d[i];
                    }
                    SymmetricMatrix::new(m).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn shrinkage_is_monotone_and_keeps_diagonal(r in random_residual(), tau in 0.0f64..2.0, hard in any::<bool>()) {
            let spec = if hard { ThresholdSpec::hard(tau) } else { ThresholdSpec::soft(tau) }.unwrap();
            let out = adaptive_threshold(&r, &spec).unwrap();
            let p = r.dim();
            for i in 0..p {
                prop_assert_eq!(out.get(i, i), r.get(i, i));
                for j in 0..p {
                    prop_assert!(out.get(i, j).abs() <= r.get(i, j).abs());
                    prop_assert_eq!(out.get(i, j), out.get(j, i));
                    prop_assert!(out.get(i, j) * r.get(i, j) >= 0.0);
                }
            }
        }

        #[test]
        fn calibrated_output_is_positive_definite(r in random_residual(), hard in any::<bool>()) {
            let rule = if hard { ThresholdRule::Hard } else { ThresholdRule::Soft };
            let (out, tau) = threshold_resolved(&r, &ThresholdSpec::pd_calibrated(rule.clone(), 0.1).unwrap()).unwrap();
            prop_assert!(tau >= PD_MARGIN * 0.1);
            prop_assert!(Cholesky::new(out.into_inner()).is_some());
            let t0 = min_pd_tau(&r, &rule).unwrap();
            prop_assert!(Cholesky::new(apply(&r, t0, !hard).into_inner()).is_some());
        }

        #[test]
        fn huge_tau_leaves_diagonal(r in random_residual()) {
            let out = adaptive_threshold(&r, &ThresholdSpec::soft(1e6).unwrap()).unwrap();
            let diag = DMatrix::from_diagonal(&r.diagonal());
            prop_assert_eq!(out.as_matrix(), &diag);
        }
    }
}
