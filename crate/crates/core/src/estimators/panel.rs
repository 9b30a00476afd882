use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, SymmetricMatrix};

/// A `T × p` observation matrix: one row per time point, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    values: DMatrix<f64>,
    asset_ids: Vec<String>,
    time_labels: Option<Vec<String>>,
}

impl ReturnsPanel {
    pub fn new(
        values: DMatrix<f64>,
        asset_ids: Vec<String>,
        time_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (t, p) = values.shape();
        if t < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                actual: t,
            });
        }
        if p == 0 {
            return Err(Error::InvalidInput("panel has no assets".into()));
        }
        check_finite(&values)?;
        if asset_ids.len() != p {
            return Err(Error::InvalidInput(format!(
                "{} asset ids for {p} columns",
                asset_ids.len()
            )));
        }
        if let Some(labels) = &time_labels {
            if labels.len() != t {
                return Err(Error::InvalidInput(format!(
                    "{} time labels for {t} rows",
                    labels.len()
                )));
            }
        }
        Ok(ReturnsPanel {
            values,
            asset_ids,
            time_labels,
        })
    }

    /// Panel with generated asset ids `a1..ap` and no time labels.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=values.ncols()).map(|i| format!("a{i}")).collect();
        Self::new(values, ids, None)
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn time_labels(&self) -> Option<&[String]> {
        self.time_labels.as_deref()
    }

    /// Column-demeaned copy of the observations.
    pub fn demeaned(&self) -> DMatrix<f64> {
        let t = self.n_obs() as f64;
        let mut y = self.values.clone();
        for mut col in y.column_iter_mut() {
            let mean = col.sum() / t;
            col.add_scalar_mut(-mean);
        }
        y
    }

    /// Sub-panel on the given asset columns.
    pub fn select_assets(&self, idx: &[usize]) -> Result<ReturnsPanel> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_assets()) {
            return Err(Error::InvalidInput(format!("asset index {bad} out of range")));
        }
        ReturnsPanel::new(
            self.values.select_columns(idx),
            idx.iter().map(|&i| self.asset_ids[i].clone()).collect(),
            self.time_labels.clone(),
        )
    }

    /// Sub-panel on rows `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Result<ReturnsPanel> {
        if start > end || end > self.n_obs() {
            return Err(Error::InvalidInput(format!(
                "row range {start}..{end} outside 0..{}",
                self.n_obs()
            )));
        }
        ReturnsPanel::new(
            self.values.rows(start, end - start).into_owned(),
            self.asset_ids.clone(),
            self.time_labels.as_ref().map(|l| l[start..end].to_vec()),
        )
    }
}

/// Demeaned sample covariance with divisor `T`.
pub fn sample_covariance(panel: &ReturnsPanel) -> SymmetricMatrix {
    let y = panel.demeaned();
    let t = panel.n_obs() as f64;
    SymmetricMatrix::symmetrized(y.tr_mul(&y) / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn naive_covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
        let (t, p) = y.shape();
        let means: Vec<f64> = (0..p)
            .map(|j| (0..t).map(|i| y[(i, j)]).sum::<f64>() / t as f64)
            .collect();
        DMatrix::from_fn(p, p, |a, b| {
            (0..t)
                .map(|i| (y[(i, a)] - means[a]) * (y[(i, b)] - means[b]))
                .sum::<f64>()
                / t as f64
        })
    }

    #[test]
    fn two_point_covariance_uses_divisor_t() {
        let panel =
            ReturnsPanel::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0])).unwrap();
        let s = sample_covariance(&panel);
        assert_eq!(s.as_matrix(), &DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn constant_panel_has_zero_covariance() {
        let panel = ReturnsPanel::from_matrix(DMatrix::from_element(5, 3, 4.2)).unwrap();
        assert_eq!(max_abs(sample_covariance(&panel).as_matrix()), 0.0);
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DMatrix::from_fn(500, 10, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * (1.0 + j as f64 * 0.1) + 0.3
        });
        let panel = ReturnsPanel::from_matrix(y.clone()).unwrap();
        let s = sample_covariance(&panel);
        assert!(max_abs(&(s.as_matrix() - naive_covariance(&y))) <= 1e-12);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DMatrix::from_fn(30, 4, |_, _| StandardNormal.sample(&mut rng));
        let s1 = sample_covariance(&ReturnsPanel::from_matrix(y.clone()).unwrap());
        let s3 = sample_covariance(&ReturnsPanel::from_matrix(y * 3.0).unwrap());
        assert!(max_abs(&(s3.as_matrix() - s1.as_matrix() * 9.0)) <= 1e-12);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            ReturnsPanel::from_matrix(DMatrix::zeros(1, 3)),
            Err(Error::InsufficientData { .. })
        ));
        let mut y = DMatrix::zeros(3, 2);
        y[(1, 1)] = f64::NAN;
        assert!(ReturnsPanel::from_matrix(y).is_err());
        assert!(ReturnsPanel::new(DMatrix::zeros(3, 2), vec!["x".into()], None).is_err());
    }
}
