//! Eigenvalue-ratio selection of the number of global and local factors.
//!
//! The modified ratio rule looks at the two largest adjacent-eigenvalue
//! ratios `ER(m) = δ_m / δ_{m+1}`. Two ratios above `φ_p` indicate a
//! global + local structure (the smaller index counts the global factors);
//! a single spike indicates a one-level factor model; no spike, no factors.

use std::fmt;

use crate::error::{Error, Result};
use crate::estimators::GroupStructure;
use crate::linalg::{sym_eigen, SymmetricMatrix};

/// Eigenvalues are floored here before ratios are taken.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Default multiplier `d` in `φ_p = d·log p`.
pub const DEFAULT_PHI_SCALE: f64 = 0.3;

pub fn default_phi(p: usize, scale: f64) -> f64 {
    scale * (p.max(1) as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    SingleLevel,
    MultiLevel,
    NoFactors,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::SingleLevel => "single_level",
            ModelVariant::MultiLevel => "multi_level",
            ModelVariant::NoFactors => "no_factors",
        })
    }
}

/// Outcome of the modified eigenvalue-ratio rule. `k1`, `k2` are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub variant: ModelVariant,
    /// Number of leading components to remove: `min(k1, k2)` for a
    /// multi-level verdict, `k1` for single-level, 0 without factors.
    pub k_hat: usize,
    pub k1: usize,
    pub k2: usize,
    pub er1: f64,
    pub er2: f64,
    pub phi_p: f64,
    pub ratios: Vec<f64>,
}

impl ModelSelection {
    /// Number of global factors implied by the verdict. A single-level
    /// verdict means the spectrum shows no separate global layer, so the
    /// `k1` factors found are not counted as global.
    pub fn global_factors(&self) -> usize {
        match self.variant {
            ModelVariant::MultiLevel => self.k_hat,
            ModelVariant::SingleLevel | ModelVariant::NoFactors => 0,
        }
    }
}

/// `ER(1..=k_max)` from a descending eigenvalue list.
pub fn eigenvalue_ratios(eigenvalues: &[f64], k_max: usize) -> Result<Vec<f64>> {
    if k_max == 0 || k_max >= eigenvalues.len() {
        return Err(Error::InvalidKMax {
            k_max,
            available: eigenvalues.len(),
        });
    }
    let floored: Vec<f64> = eigenvalues[..=k_max]
        .iter()
        .map(|v| v.max(EIGENVALUE_FLOOR))
        .collect();
    Ok(floored.windows(2).map(|w| w[0] / w[1]).collect())
}

/// 1-based index of the largest ratio, skipping `exclude`; ties go to the smaller index.
fn argmax(ratios: &[f64], exclude: Option<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in ratios.iter().enumerate() {
        let m = i + 1;
        if Some(m) == exclude {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((m, v));
        }
    }
    best.map(|(m, _)| m)
}

pub fn mer_select(sigma_hat: &SymmetricMatrix, k_max: usize, phi_p: f64) -> Result<ModelSelection> {
    let eig = sym_eigen(sigma_hat);
    mer_select_from_eigenvalues(eig.values.as_slice(), k_max, phi_p)
}

pub fn mer_select_from_eigenvalues(eigenvalues: &[f64], k_max: usize, phi_p: f64) -> Result<ModelSelection> {
    if !(phi_p > 0.0) {
        return Err(Error::InvalidConfig(format!("phi_p must be positive, got {phi_p}")));
    }
    if k_max < 2 {
        return Err(Error::InvalidKMax {
            k_max,
            available: eigenvalues.len(),
        });
    }
    let ratios = eigenvalue_ratios(eigenvalues, k_max)?;
    let k1 = argmax(&ratios, None).expect("k_max >= 2");
    let k2 = argmax(&ratios, Some(k1)).expect("k_max >= 2");
    let (er1, er2) = (ratios[k1 - 1], ratios[k2 - 1]);
    let (variant, k_hat) = if er1 <= phi_p {
        (ModelVariant::NoFactors, 0)
    } else if er2 <= phi_p {
        (ModelVariant::SingleLevel, k1)
    } else {
        (ModelVariant::MultiLevel, k1.min(k2))
    };
    Ok(ModelSelection {
        variant,
        k_hat,
        k1,
        k2,
        er1,
        er2,
        phi_p,
        ratios,
    })
}

/// Eigenvalue-ratio estimate of the local factor count of one diagonal block
/// of the global-factor remainder.
pub fn er_local_select(block: &SymmetricMatrix, r_max: usize) -> Result<usize> {
    let eig = sym_eigen(block);
    er_local_from_eigenvalues(eig.values.as_slice(), r_max)
}

pub fn er_local_from_eigenvalues(eigenvalues: &[f64], r_max: usize) -> Result<usize> {
    let ratios = eigenvalue_ratios(eigenvalues, r_max)?;
    Ok(argmax(&ratios, None).expect("r_max >= 1"))
}

/// Local factor counts for every group. `r_max` is capped at `p_j − 1` for
/// small groups; a single-asset group gets no local factor.
pub fn select_local_counts(remainder: &SymmetricMatrix, groups: &GroupStructure, r_max: usize) -> Result<Vec<usize>> {
    (0..groups.n_groups())
        .map(|j| {
            let idx = groups.members(j)?;
            let cap = r_max.min(idx.len().saturating_sub(1));
            if cap == 0 {
                return Ok(0);
            }
            er_local_select(&remainder.submatrix(idx), cap)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(eigenvalue_ratios(&[8.0, 4.0, 2.0, 1.0], 3).unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(eigenvalue_ratios(&[100.0, 1.0, 1.0, 1.0], 2).unwrap(), vec![100.0, 1.0]);
        assert!(matches!(
            eigenvalue_ratios(&[1.0, 0.5], 2),
            Err(Error::InvalidKMax { .. })
        ));
        // zero eigenvalues are floored, not divided by
        let r = eigenvalue_ratios(&[1.0, 0.0], 1).unwrap();
        assert_eq!(r, vec![1e12]);
    }

    #[test]
    fn multi_level_example() {
        let eig = [100.0, 90.0, 9.0, 8.0, 1.0, 0.9, 0.8];
        let sel = mer_select_from_eigenvalues(&eig, 6, 5.0).unwrap();
        assert_eq!((sel.k1, sel.k2), (2, 4));
        assert_eq!(sel.variant, ModelVariant::MultiLevel);
        assert_eq!(sel.k_hat, 2);
        assert_eq!(sel.global_factors(), 2);
        assert!((sel.er1 - 10.0).abs() < 1e-12 && (sel.er2 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_level_example() {
        let sel = mer_select_from_eigenvalues(&[50.0, 1.0, 0.9, 0.8], 3, 5.0).unwrap();
        assert_eq!(sel.variant, ModelVariant::SingleLevel);
        assert_eq!(sel.k_hat, 1);
        assert_eq!(sel.global_factors(), 0);
    }

    #[test]
    fn flat_spectrum_has_no_factors() {
        let sel = mer_select_from_eigenvalues(&[1.2, 1.1, 1.0, 0.9], 3, 2.0).unwrap();
        assert_eq!(sel.variant, ModelVariant::NoFactors);
        assert_eq!(sel.k_hat, 0);
        assert!(mer_select_from_eigenvalues(&[2.0, 1.0, 0.5], 1, 2.0).is_err());
        assert!(mer_select_from_eigenvalues(&[2.0, 1.0, 0.5], 2, 0.0).is_err());
    }

    #[test]
    fn local_examples() {
        assert_eq!(er_local_from_eigenvalues(&[10.0, 9.0, 1.0, 0.5], 3).unwrap(), 2);
        assert_eq!(er_local_select(&SymmetricMatrix::identity(5), 3).unwrap(), 1);
        assert!(matches!(
            er_local_select(&SymmetricMatrix::identity(3), 3),
            Err(Error::InvalidKMax { .. })
        ));
    }

    #[test]
    fn local_counts_cap_small_groups() {
        let m = SymmetricMatrix::from_diagonal(&[10.0, 1.0, 5.0, 4.0, 0.1, 3.0]);
        let groups = GroupStructure::new(vec![0, 0, 1, 1, 1, 2]).unwrap();
        assert_eq!(select_local_counts(&m, &groups, 10).unwrap(), vec![1, 2, 0]);
    }

    proptest! {
        #[test]
        fn geometric_spectrum_gives_constant_ratios(rho in 1.01f64..10.0, n in 3usize..12) {
            let eig: Vec<f64> = (0..n).map(|i| rho.powi((n - i) as i32)).collect();
            let r = eigenvalue_ratios(&eig, n - 1).unwrap();
            for v in r {
                prop_assert!((v - rho).abs() <= 1e-9 * rho);
            }
        }

        #[test]
        fn selection_is_scale_free_and_bounded(
            mut eig in prop::collection::vec(0.01f64..1000.0, 4..20),
            c in 0.001f64..1000.0,
            phi in 0.5f64..5.0,
        ) {
            eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let k_max = eig.len() - 1;
            let a = mer_select_from_eigenvalues(&eig, k_max, phi).unwrap();
            let scaled: Vec<f64> = eig.iter().map(|v| v * c).collect();
            let b = mer_select_from_eigenvalues(&scaled, k_max, phi).unwrap();
            prop_assert!(a.k_hat <= k_max);
            prop_assert!(a.k1 != a.k2 && a.er1 >= a.er2);
            // ratios agree up to rounding; compare verdicts away from the boundary
            let margin = |s: &ModelSelection| (s.er1 - phi).abs().min((s.er2 - phi).abs());
            if margin(&a) > 1e-9 * phi && (a.er1 - a.er2).abs() > 1e-9 * a.er1 {
                prop_assert_eq!(a.variant, b.variant);
                prop_assert_eq!(a.k_hat, b.k_hat);
            }
        }
    }
}
