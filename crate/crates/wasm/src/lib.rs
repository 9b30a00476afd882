//! Browser bindings. A `Scenario` fixes the simulated model and sample; each
//! method runs one demo operation on it.

use nalgebra::DVector;
use wasm_bindgen::prelude::*;

use multipoet::estimators::{Method, ReturnsPanel, SampleSpectrum};
use multipoet::linalg::{RelativeFrobenius, SymmetricMatrix};
use multipoet::pipeline::{default_k_max, fit_estimator, EstimatorConfig};
use multipoet::portfolio::{min_variance_weights_with, realized_risk, SolverOptions};
use multipoet::selection::{default_phi, mer_select_from_eigenvalues, DEFAULT_PHI_SCALE};
use multipoet::simulation::{generate_model, simulate_panel, DgpParams, DgpSpec};

/// Methods shown by `compare`, in display order.
pub const COMPARED: [Method; 4] = [Method::SampleCovariance, Method::Poet, Method::Poet2, Method::DoublePoet];

/// Eigenvalues shown in the scree plot.
const SCREE_LEN: usize = 40;

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Scenario {
    dgp: DgpParams,
    seed: u64,
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Scree {
    eigenvalues: Vec<f64>,
    ratios: Vec<f64>,
    k_hat: usize,
    k1: usize,
    k2: usize,
    variant: String,
    phi: f64,
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Comparison {
    p: usize,
    errors: Vec<f64>,
    max_errors: Vec<f64>,
    matrices: Vec<Vec<f64>>,
    population: Vec<f64>,
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Frontier {
    c: Vec<f64>,
    /// One row per compared method, in `methods` order.
    out_of_sample: Vec<Vec<f64>>,
    true_risk: Vec<f64>,
    gross: Vec<Vec<f64>>,
}

const FRONTIER_METHODS: [Method; 2] = [Method::SampleCovariance, Method::DoublePoet];

fn flat(m: &SymmetricMatrix) -> Vec<f64> {
    // column-major equals row-major for a symmetric matrix
    m.as_matrix().as_slice().to_vec()
}

impl Scenario {
    pub fn build(p: usize, groups: usize, t: usize, k: usize, r: usize, seed: u64) -> Result<Scenario, String> {
        let spec = DgpSpec::new(p, t, groups, k, r);
        let dgp = generate_model(&spec, seed).map_err(|e| e.to_string())?;
        Ok(Scenario { dgp, seed })
    }

    fn panel(&self) -> Result<ReturnsPanel, String> {
        simulate_panel(&self.dgp, self.seed + 1).map_err(|e| e.to_string())
    }

    fn config(&self, method: Method) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::new(method);
        if matches!(method, Method::Poet2 | Method::DoublePoet) {
            cfg.groups = Some(self.dgp.groups.clone());
        }
        cfg
    }

    pub fn scree_result(&self) -> Result<Scree, String> {
        let panel = self.panel()?;
        let (t, p) = (panel.n_obs(), panel.n_assets());
        let spectrum = SampleSpectrum::new(&panel);
        let values = spectrum.eigen().values.as_slice();
        let k_max = default_k_max(p, t, self.dgp.groups.n_groups(), multipoet::pipeline::DEFAULT_R_MAX);
        let sel = mer_select_from_eigenvalues(values, k_max, default_phi(p, DEFAULT_PHI_SCALE))
            .map_err(|e| e.to_string())?;
        Ok(Scree {
            eigenvalues: values.iter().take(SCREE_LEN).copied().collect(),
            ratios: sel.ratios.clone(),
            k_hat: sel.k_hat,
            k1: sel.k1,
            k2: sel.k2,
            variant: sel.variant.to_string(),
            phi: sel.phi_p,
        })
    }

    pub fn compare_result(&self) -> Result<Comparison, String> {
        let panel = self.panel()?;
        let truth = RelativeFrobenius::new(&self.dgp.population).map_err(|e| e.to_string())?;
        let pop = self.dgp.population.as_matrix();
        let mut out = Comparison {
            p: self.dgp.spec.p,
            errors: Vec::new(),
            max_errors: Vec::new(),
            matrices: Vec::new(),
            population: flat(&self.dgp.population),
        };
        for method in COMPARED {
            let fit = fit_estimator(&panel, &self.config(method)).map_err(|e| e.to_string())?;
            let est = fit.estimate.assembled();
            out.errors.push(truth.distance(est.as_matrix()).map_err(|e| e.to_string())?);
            out.max_errors.push((est.as_matrix() - pop).amax());
            out.matrices.push(flat(&est));
        }
        Ok(out)
    }

    /// Estimates on the first `T` rows of a `2T` sample and holds the
    /// minimum-variance portfolio over the rest.
    pub fn frontier_result(&self, c_values: &[f64]) -> Result<Frontier, String> {
        let t = self.dgp.spec.t;
        let mut long = self.clone();
        long.dgp.spec.t = 2 * t;
        let panel = long.panel()?;
        let fit_panel = panel.rows(0, t).map_err(|e| e.to_string())?;
        let held = panel.values().rows(t, t).into_owned();
        let opts = SolverOptions {
            repair: true,
            ..SolverOptions::default()
        };
        let pop = self.dgp.population.as_matrix();
        let mut out = Frontier {
            c: c_values.to_vec(),
            out_of_sample: Vec::new(),
            true_risk: Vec::new(),
            gross: Vec::new(),
        };
        for method in FRONTIER_METHODS {
            let fit = fit_estimator(&fit_panel, &self.config(method)).map_err(|e| e.to_string())?;
            let sigma = fit.estimate.assembled();
            let (mut oos, mut gross) = (Vec::new(), Vec::new());
            for &c in c_values {
                let sol = min_variance_weights_with(&sigma, c, &opts).map_err(|e| e.to_string())?;
                oos.push(realized_risk(&sol.weights, &held).map_err(|e| e.to_string())?);
                out.true_risk.push(true_risk(pop, &sol.weights));
                gross.push(sol.gross_exposure);
            }
            out.out_of_sample.push(oos);
            out.gross.push(gross);
        }
        Ok(out)
    }
}

fn true_risk(pop: &nalgebra::DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(pop * w)).sqrt()
}

#[wasm_bindgen]
impl Scenario {
    /// `p` assets in `groups` equal groups, `k` global and `r` local factors
    /// per group, `t` observations.
    #[wasm_bindgen(constructor)]
    pub fn new(p: usize, groups: usize, t: usize, k: usize, r: usize, seed: u32) -> Result<Scenario, JsError> {
        Scenario::build(p, groups, t, k, r, u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    pub fn scree(&self) -> Result<Scree, JsError> {
        self.scree_result().map_err(|e| JsError::new(&e))
    }

    pub fn compare(&self) -> Result<Comparison, JsError> {
        self.compare_result().map_err(|e| JsError::new(&e))
    }

    pub fn frontier(&self, c_values: Vec<f64>) -> Result<Frontier, JsError> {
        self.frontier_result(&c_values).map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen]
impl Scree {
    #[wasm_bindgen(getter)]
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn ratios(&self) -> Vec<f64> {
        self.ratios.clone()
    }
    #[wasm_bindgen(getter, js_name = kHat)]
    pub fn k_hat(&self) -> usize {
        self.k_hat
    }
    #[wasm_bindgen(getter)]
    pub fn k1(&self) -> usize {
        self.k1
    }
    #[wasm_bindgen(getter)]
    pub fn k2(&self) -> usize {
        self.k2
    }
    #[wasm_bindgen(getter)]
    pub fn variant(&self) -> String {
        self.variant.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn phi(&self) -> f64 {
        self.phi
    }
}

#[wasm_bindgen]
impl Comparison {
    #[wasm_bindgen(getter)]
    pub fn p(&self) -> usize {
        self.p
    }
    #[wasm_bindgen(getter)]
    pub fn methods(&self) -> Vec<String> {
        COMPARED.iter().map(|m| m.tag().to_string()).collect()
    }
    /// Relative Frobenius error of each method.
    #[wasm_bindgen(getter)]
    pub fn errors(&self) -> Vec<f64> {
        self.errors.clone()
    }
    #[wasm_bindgen(getter, js_name = maxErrors)]
    pub fn max_errors(&self) -> Vec<f64> {
        self.max_errors.clone()
    }
    /// Estimate of method `i`, row-major `p × p`.
    pub fn matrix(&self, i: usize) -> Vec<f64> {
        self.matrices.get(i).cloned().unwrap_or_default()
    }
    #[wasm_bindgen(getter)]
    pub fn population(&self) -> Vec<f64> {
        self.population.clone()
    }
}

#[wasm_bindgen]
impl Frontier {
    #[wasm_bindgen(getter)]
    pub fn methods(&self) -> Vec<String> {
        FRONTIER_METHODS.iter().map(|m| m.tag().to_string()).collect()
    }
    #[wasm_bindgen(getter)]
    pub fn c(&self) -> Vec<f64> {
        self.c.clone()
    }
    /// Realized risk over the holding sample for method `i`.
    #[wasm_bindgen(js_name = outOfSample)]
    pub fn out_of_sample(&self, i: usize) -> Vec<f64> {
        self.out_of_sample.get(i).cloned().unwrap_or_default()
    }
    /// `√(w' Σ w)` under the population covariance for method `i`.
    #[wasm_bindgen(js_name = trueRisk)]
    pub fn true_risk(&self, i: usize) -> Vec<f64> {
        let n = self.c.len();
        self.true_risk.get(i * n..(i + 1) * n).map(<[f64]>::to_vec).unwrap_or_default()
    }
    pub fn gross(&self, i: usize) -> Vec<f64> {
        self.gross.get(i).cloned().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario::build(60, 3, 120, 2, 1, 5).unwrap()
    }

    #[test]
    fn scree_is_descending_and_finds_factors() {
        let s = small().scree_result().unwrap();
        assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(s.eigenvalues.len(), SCREE_LEN);
        assert!(s.k_hat >= 1);
    }

    #[test]
    fn comparison_covers_every_method() {
        let c = small().compare_result().unwrap();
        assert_eq!(c.errors.len(), COMPARED.len());
        assert!(c.errors.iter().all(|e| e.is_finite() && *e >= 0.0));
        assert_eq!(c.matrix(0).len(), 60 * 60);
        assert!(c.matrix(9).is_empty());
        assert_eq!(c.methods(), ["samcov", "poet", "poet2", "double_poet"]);
    }

    #[test]
    fn frontier_respects_the_exposure_bound() {
        let f = small().frontier_result(&[1.0, 2.0, 4.0]).unwrap();
        for i in 0..FRONTIER_METHODS.len() {
            assert_eq!(f.out_of_sample(i).len(), 3);
            assert_eq!(f.true_risk(i).len(), 3);
            for (g, c) in f.gross(i).iter().zip([1.0, 2.0, 4.0]) {
                assert!(*g <= c + 1e-6, "gross {g} above {c}");
            }
        }
    }

    #[test]
    fn same_seed_same_answer() {
        let a = small().compare_result().unwrap();
        let b = small().compare_result().unwrap();
        assert_eq!(a.errors, b.errors);
        assert!(Scenario::build(61, 3, 120, 2, 1, 5).is_err());
    }
}
