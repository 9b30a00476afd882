//! Regularized spectral clustering of assets into local-factor groups.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymmetricMatrix};

pub const KMEANS_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

/// Absolute correlations: symmetric, entries in `[0, 1]`, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix(SymmetricMatrix);

impl AdjacencyMatrix {
    /// Wraps a matrix after checking symmetry and the `[0, 1]` range.
    pub fn new(m: SymmetricMatrix) -> Result<Self> {
        let bad = m.as_matrix().iter().any(|&v| !(0.0..=1.0).contains(&v));
        if bad {
            return Err(Error::InvalidMatrix("adjacency entries must lie in [0, 1]".into()));
        }
        Ok(AdjacencyMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_symmetric(&self) -> &SymmetricMatrix {
        &self.0
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.0.as_matrix().row_iter().map(|r| r.sum()).collect()
    }
}

/// Result of k-means. Labels are 0-based cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
}

pub fn abs_correlation_adjacency(sigma_e: &SymmetricMatrix) -> Result<AdjacencyMatrix> {
    let p = sigma_e.dim();
    let m = sigma_e.as_matrix();
    if let Some(index) = (0..p).find(|&i| !(m[(i, i)] > 0.0)) {
        return Err(Error::InvalidResidualDiagonal {
            index,
            value: m[(index, index)],
        });
    }
    let s: Vec<f64> = (0..p).map(|i| m[(i, i)].sqrt()).collect();
    let a = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (m[(i, j)].abs() / (s[i] * s[j])).min(1.0)
        }
    });
    Ok(AdjacencyMatrix(SymmetricMatrix::symmetrized(a)))
}

/// `D_a^{-1/2} L D_a^{-1/2}` with `D` the degree matrix. `a = None` uses the
/// average degree.
pub fn regularized_laplacian(adj: &AdjacencyMatrix, a: Option<f64>) -> Result<SymmetricMatrix> {
    let deg = adj.degrees();
    let p = deg.len();
    let a = match a {
        Some(a) if a >= 0.0 && a.is_finite() => a,
        Some(a) => return Err(Error::InvalidConfig(format!("regularization a must be >= 0, got {a}"))),
        None => deg.iter().sum::<f64>() / p.max(1) as f64,
    };
    let inv: Vec<f64> = deg
        .iter()
        .map(|&d| if d + a > 0.0 { 1.0 / (d + a).sqrt() } else { 0.0 })
        .collect();
    let l = adj.0.as_matrix();
    let out = DMatrix::from_fn(p, p, |i, j| inv[i] * l[(i, j)] * inv[j]);
    Ok(SymmetricMatrix::symmetrized(out))
}

fn sq_dist(rows: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..rows.ncols()).map(|d| (rows[(i, d)] - centers[(c, d)]).powi(2)).sum()
}

fn plus_plus_init(rows: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, d) = rows.shape();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut best = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let last = *chosen.last().unwrap();
        for (i, b) in best.iter_mut().enumerate() {
            let dist: f64 = (0..d).map(|c| (rows[(i, c)] - rows[(last, c)]).powi(2)).sum();
            *b = b.min(dist);
        }
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if b > 0.0 && u < b {
                    pick = i;
                    break;
                }
                u -= b;
            }
            // guard against rounding landing on an already chosen point
            if best[pick] > 0.0 {
                pick
            } else {
                best.iter().rposition(|&b| b > 0.0).unwrap()
            }
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
    }
    DMatrix::from_fn(k, d, |c, j| rows[(chosen[c], j)])
}

/// One Lloyd run; `None` when a cluster empties.
fn lloyd(rows: &DMatrix<f64>, mut centers: DMatrix<f64>) -> Option<ClusterAssignment> {
    let (n, d) = rows.shape();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let dist = sq_dist(rows, i, &centers, c);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            if *label != best.0 {
                *label = best.0;
                changed = true;
            }
        }
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[(l, j)] += rows[(i, j)];
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            for j in 0..d {
                centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(rows, i, &centers, l))
        .sum();
    Some(ClusterAssignment { labels, k, inertia })
}

/// Best of `restarts` k-means++ seeded Lloyd runs. Restart `s` draws from
/// stream `s` of a ChaCha8 generator keyed by `seed`.
pub fn kmeans(rows: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let n = rows.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k-means needs 1 <= K <= n, got K = {k}, n = {n}")));
    }
    if restarts == 0 {
        return Err(Error::InvalidInput("k-means needs at least one restart".into()));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means input has non-finite entries".into()));
    }
    let mut best: Option<ClusterAssignment> = None;
    for s in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let centers = plus_plus_init(rows, k, &mut rng);
        if let Some(fit) = lloyd(rows, centers) {
            if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
                best = Some(fit);
            }
        }
    }
    best.ok_or_else(|| Error::ClusteringFailed(format!("every one of {restarts} restarts left an empty cluster")))
}

/// Adjacency, regularized Laplacian, top-`K` eigenvectors, then k-means on
/// the rows of the eigenvector matrix.
pub fn rsc_cluster(sigma_e: &SymmetricMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let p = sigma_e.dim();
    if k < 2 || k > p {
        return Err(Error::InvalidInput(format!("spectral clustering needs 2 <= K <= p, got K = {k}, p = {p}")));
    }
    let adj = abs_correlation_adjacency(sigma_e)?;
    let lap = regularized_laplacian(&adj, None)?;
    let eig = sym_eigen(&lap);
    let rows = eig.vectors.columns(0, k).into_owned();
    kmeans(&rows, k, seed, DEFAULT_RESTARTS)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// potentials form). Returns `assign[row] = col`.
pub(crate) fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    // matched[col] = row, 1-based, 0 = free
    let mut matched = vec![0usize; n + 1];
    for row in 1..=n {
        matched[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if matched[j] > 0 {
            assign[matched[j] - 1] = j - 1;
        }
    }
    assign
}

/// Fraction of assets whose label disagrees with the truth under the best
/// one-to-one relabeling of the estimated clusters.
pub fn misclassification_rate(estimated: &[usize], truth: &[usize]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length: {} vs {}",
            estimated.len(),
            truth.len()
        )));
    }
    let n = estimated.len();
    if n == 0 {
        return Ok(0.0);
    }
    let size = 1 + estimated.iter().chain(truth).copied().max().unwrap();
    let mut agree = vec![vec![0.0; size]; size];
    for (&e, &t) in estimated.iter().zip(truth) {
        agree[e][t] += 1.0;
    }
    let cost: Vec<Vec<f64>> = agree.iter().map(|r| r.iter().map(|&c| -c).collect()).collect();
    let assign = hungarian(&cost);
    let matched: f64 = assign.iter().enumerate().map(|(e, &t)| agree[e][t]).sum();
    Ok(1.0 - matched / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sym(rows: usize, v: &[f64]) -> SymmetricMatrix {
        SymmetricMatrix::new(DMatrix::from_row_slice(rows, rows, v)).unwrap()
    }

    /// Exhaustive search over label permutations.
    fn brute_force_rate(est: &[usize], truth: &[usize]) -> f64 {
        let size = 1 + est.iter().chain(truth).copied().max().unwrap();
        let mut perm: Vec<usize> = (0..size).collect();
        let mut best = usize::MAX;
        fn visit(perm: &mut Vec<usize>, at: usize, est: &[usize], truth: &[usize], best: &mut usize) {
            if at == perm.len() {
                let wrong = est.iter().zip(truth).filter(|(&e, &t)| perm[e] != t).count();
                *best = (*best).min(wrong);
                return;
            }
            for i in at..perm.len() {
                perm.swap(at, i);
                visit(perm, at + 1, est, truth, best);
                perm.swap(at, i);
            }
        }
        visit(&mut perm, 0, est, truth, &mut best);
        best as f64 / est.len() as f64
    }

    fn block_cov(sizes: &[usize], within: &[f64]) -> SymmetricMatrix {
        let p: usize = sizes.iter().sum();
        let mut m = DMatrix::zeros(p, p);
        let mut start = 0;
        for (b, &s) in sizes.iter().enumerate() {
            for i in start..start + s {
                for j in start..start + s {
                    m[(i, j)] = if i == j { 1.0 } else { within[b] };
                }
            }
            start += s;
        }
        SymmetricMatrix::new(m).unwrap()
    }

    #[test]
    fn adjacency_examples() {
        let a = abs_correlation_adjacency(&SymmetricMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(a.as_symmetric().as_matrix(), &DMatrix::identity(2, 2));
        let a = abs_correlation_adjacency(&sym(2, &[1.0, -0.5, -0.5, 1.0])).unwrap();
        assert_eq!(a.as_symmetric().get(0, 1), 0.5);
        let a = abs_correlation_adjacency(&block_cov(&[2, 3], &[0.4, 0.6])).unwrap();
        assert_eq!(a.as_symmetric().get(0, 4), 0.0);
        assert!(matches!(
            abs_correlation_adjacency(&SymmetricMatrix::from_diagonal(&[1.0, 0.0])),
            Err(Error::InvalidResidualDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn laplacian_examples() {
        let id = AdjacencyMatrix::new(SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(regularized_laplacian(&id, Some(0.0)).unwrap().as_matrix(), &DMatrix::identity(3, 3));
        let ones = AdjacencyMatrix::new(sym(2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        let l0 = regularized_laplacian(&ones, Some(0.0)).unwrap();
        assert!(l0.as_matrix().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let la = regularized_laplacian(&ones, None).unwrap();
        assert!(la.as_matrix().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(regularized_laplacian(&ones, Some(-1.0)).is_err());
    }

    #[test]
    fn kmeans_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = DMatrix::from_fn(40, 2, |i, _| if i < 20 { 10.0 } else { -10.0 } + rng.random::<f64>());
        let fit = kmeans(&rows, 2, 1, 10).unwrap();
        assert_eq!(misclassification_rate(&fit.labels, &[vec![0; 20], vec![1; 20]].concat()).unwrap(), 0.0);

        let pts = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 5.0]);
        let fit = kmeans(&pts, 3, 4, 1).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut l = fit.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);

        let again = kmeans(&rows, 2, 1, 10).unwrap();
        assert_eq!(kmeans(&rows, 2, 1, 10).unwrap(), again);
        assert!(kmeans(&pts, 4, 0, 1).is_err());
        assert!(kmeans(&pts, 2, 0, 0).is_err());
    }

    #[test]
    fn kmeans_duplicate_points_fails_cleanly() {
        let pts = DMatrix::from_element(4, 2, 1.0);
        assert!(matches!(kmeans(&pts, 2, 0, 3), Err(Error::ClusteringFailed(_))));
    }

    #[test]
    fn rsc_recovers_noiseless_blocks() {
        let cov = block_cov(&[3, 5, 8], &[0.1, 0.9, 0.5]);
        let fit = rsc_cluster(&cov, 3, 7).unwrap();
        let truth = [vec![0; 3], vec![1; 5], vec![2; 8]].concat();
        assert_eq!(misclassification_rate(&fit.labels, &truth).unwrap(), 0.0);
    }

    #[test]
    fn rsc_with_k_equal_p_separates_everything() {
        let cov = block_cov(&[2, 3], &[0.3, 0.7]);
        let fit = rsc_cluster(&cov, 5, 3).unwrap();
        let mut l = fit.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3, 4]);
        assert!(rsc_cluster(&cov, 1, 3).is_err());
    }

    #[test]
    fn misclassification_examples() {
        assert_eq!(misclassification_rate(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(misclassification_rate(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(misclassification_rate(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.25);
        assert!(matches!(misclassification_rate(&[0], &[0, 1]), Err(Error::InvalidInput(_))));
    }

    fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0..k, n)
    }

    proptest! {
        #[test]
        fn matching_agrees_with_exhaustive_search(
            (est, truth) in (1usize..30, 1usize..7).prop_flat_map(|(n, k)| (labels(n, k), labels(n, k)))
        ) {
            let fast = misclassification_rate(&est, &truth).unwrap();
            prop_assert!((fast - brute_force_rate(&est, &truth)).abs() < 1e-12);
        }

        #[test]
        fn rate_ignores_relabeling(
            (est, truth) in (1usize..40, 2usize..6).prop_flat_map(|(n, k)| (labels(n, k), labels(n, k))),
            shift in 1usize..5,
        ) {
            let relabeled: Vec<usize> = est.iter().map(|&l| (l + shift) % 6).collect();
            let a = misclassification_rate(&est, &truth).unwrap();
            prop_assert!((a - misclassification_rate(&relabeled, &truth).unwrap()).abs() < 1e-12);
            prop_assert!((a - misclassification_rate(&truth, &est).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn rsc_ignores_scale_and_recovers_blocks(
            sizes in prop::collection::vec(2usize..7, 2..5),
            within in prop::collection::vec(0.1f64..0.95, 5),
            c in 0.01f64..100.0,
            seed in any::<u64>(),
        ) {
            let cov = block_cov(&sizes, &within[..sizes.len()]);
            let truth: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
            let a = rsc_cluster(&cov, sizes.len(), seed).unwrap();
            prop_assert_eq!(misclassification_rate(&a.labels, &truth).unwrap(), 0.0);
            let b = rsc_cluster(&cov.scaled(c), sizes.len(), seed).unwrap();
            prop_assert_eq!(misclassification_rate(&a.labels, &b.labels).unwrap(), 0.0);
        }
    }
}
