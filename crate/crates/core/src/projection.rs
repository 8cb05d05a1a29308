//! Discriminative projection of SPD descriptors onto a lower-dimensional
//! SPD space.
//!
//! Given training descriptors `X_i` with labels, the projection `P`
//! (`n x m`, orthonormal columns) minimizes
//!
//! ```text
//! J(P) = sum_ij A_ij * stein(P^T X_i P, P^T X_j P)
//! ```
//!
//! where the affinity `A` pulls same-class neighbors together (`+1`) and
//! pushes different-class neighbors apart (`-1`). The minimization runs
//! gradient descent on the Stiefel manifold with a QR retraction and
//! backtracking line search.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Dyn, QR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spd::{cholesky_log_det, regularize, stein_divergence, SpdMatrix};

/// Largest tolerated `|P^T P - I|` entry.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-6;

/// Epsilon used when a projected matrix fails to factorize.
pub const PROJECTION_EPSILON: f64 = 1e-10;

/// An `n x m` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    mat: DMatrix<f64>,
}

impl ProjectionMatrix {
    /// Wraps `mat` after checking `m <= n` and orthonormality.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.ncols() == 0 || mat.ncols() > mat.nrows() {
            return Err(Error::InvalidConfig(format!(
                "projection must be n x m with 1 <= m <= n, got {} x {}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let dev = orthonormality_error(&mat);
        if !(dev <= ORTHONORMALITY_TOLERANCE) {
            return Err(Error::NumericalFault(format!(
                "projection columns deviate from orthonormal by {dev:e}"
            )));
        }
        Ok(ProjectionMatrix { mat })
    }

    /// First `m` columns of the `n x n` identity.
    pub fn truncated_identity(n: usize, m: usize) -> Result<Self> {
        ProjectionMatrix::new(DMatrix::identity(n, m))
    }

    /// Orthonormalized Gaussian matrix drawn from `seed`.
    pub fn random(n: usize, m: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
        ProjectionMatrix::new(retract(g))
    }

    pub fn rows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

/// Largest absolute entry of `P^T P - I`.
pub fn orthonormality_error(p: &DMatrix<f64>) -> f64 {
    let gram = p.transpose() * p;
    let mut worst = 0.0f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

/// Q factor of the thin QR decomposition with the signs fixed so that `R`
/// has a positive diagonal.
fn retract(m: DMatrix<f64>) -> DMatrix<f64> {
    let qr: QR<f64, Dyn, Dyn> = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `P^T X P`, symmetric. Falls back to a small diagonal shift if the product
/// does not factorize.
pub fn project(p: &ProjectionMatrix, x: &SpdMatrix) -> Result<SpdMatrix> {
    if p.rows() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.rows(),
            found: x.dim(),
        });
    }
    let y = p.mat.transpose() * x.matrix() * &p.mat;
    match SpdMatrix::new(symmetric_part(&y)) {
        Ok(s) => Ok(s),
        Err(Error::NotPositiveDefinite) => regularize(&y, PROJECTION_EPSILON),
        Err(e) => Err(e),
    }
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric `{-1, 0, +1}` neighborhood matrix over training instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityMatrix {
    size: usize,
    entries: Vec<i8>,
}

impl AffinityMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.size + j]
    }

    /// Ordered pairs `(i, j, a_ij)` with nonzero weight.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0)
            .map(move |(k, &a)| (k / self.size, k % self.size, a as f64))
    }

    pub fn row_sum(&self, i: usize) -> i32 {
        (0..self.size).map(|j| self.get(i, j) as i32).sum()
    }
}

/// Marks each instance's `k_within` nearest same-class neighbors with `+1`
/// and its `k_between` nearest other-class neighbors with `-1`, then
/// symmetrizes. Distance ties go to the lower index.
pub fn build_affinity(
    labels: &[u32],
    k_within: usize,
    k_between: usize,
    pairwise: &DMatrix<f64>,
) -> Result<AffinityMatrix> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "affinity needs at least 2 instances, got {n}"
        )));
    }
    if pairwise.nrows() != n || pairwise.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: pairwise.nrows(),
        });
    }
    let mut raw = vec![0i8; n * n];
    for i in 0..n {
        let mut same: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        let mut other: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        let by_distance = |a: &usize, b: &usize| {
            pairwise[(i, *a)]
                .total_cmp(&pairwise[(i, *b)])
                .then(a.cmp(b))
        };
        same.sort_by(by_distance);
        other.sort_by(by_distance);
        for &j in same.iter().take(k_within) {
            raw[i * n + j] = 1;
        }
        for &j in other.iter().take(k_between) {
            raw[i * n + j] = -1;
        }
    }
    let mut entries = vec![0i8; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = raw[i * n + j];
            let b = raw[j * n + i];
            entries[i * n + j] = match a.abs().cmp(&b.abs()) {
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Equal => a.max(b),
            };
        }
    }
    Ok(AffinityMatrix { size: n, entries })
}

/// How the descent direction is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Analytic,
    /// Central finite differences over every entry of `P`.
    FiniteDifference,
}

/// Starting point of the descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionInit {
    TruncatedIdentity,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    pub k_within: usize,
    pub k_between: usize,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Stop once `(J_prev - J) / |J_prev|` falls below this.
    pub relative_tolerance: f64,
    pub gradient: GradientMode,
    pub init: ProjectionInit,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            k_within: 3,
            k_between: 3,
            max_iterations: 200,
            max_halvings: 20,
            relative_tolerance: 1e-6,
            gradient: GradientMode::Analytic,
            init: ProjectionInit::TruncatedIdentity,
        }
    }
}

/// Default target dimension: 10 for the Kinect layouts (57 or 72 features),
/// otherwise the source dimension capped at 10.
pub fn default_target_dim(n: usize) -> usize {
    n.min(10)
}

/// Training descriptors and their affinity; evaluates `J` and its gradient
/// at arbitrary `P`.
#[derive(Debug, Clone)]
pub struct ProjectionProblem {
    descriptors: Vec<DMatrix<f64>>,
    affinity: AffinityMatrix,
}

struct Projected {
    /// `X_i P`
    xp: Vec<DMatrix<f64>>,
    /// `P^T X_i P`
    y: Vec<DMatrix<f64>>,
    log_det: Vec<f64>,
}

impl ProjectionProblem {
    /// Builds the affinity from pairwise Stein divergences of the raw
    /// descriptors.
    pub fn new(train: &[(SpdMatrix, u32)], k_within: usize, k_between: usize) -> Result<Self> {
        let classes: BTreeSet<u32> = train.iter().map(|(_, l)| *l).collect();
        if classes.len() < 2 {
            return Err(Error::AffinityUndefined);
        }
        let n = train[0].0.dim();
        if let Some((x, _)) = train.iter().find(|(x, _)| x.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.dim(),
            });
        }
        let count = train.len();
        let mut pairwise = DMatrix::zeros(count, count);
        for i in 0..count {
            for j in (i + 1)..count {
                let d = stein_divergence(&train[i].0, &train[j].0)?;
                pairwise[(i, j)] = d;
                pairwise[(j, i)] = d;
            }
        }
        let labels: Vec<u32> = train.iter().map(|(_, l)| *l).collect();
        let affinity = build_affinity(&labels, k_within, k_between, &pairwise)?;
        Ok(ProjectionProblem {
            descriptors: train.iter().map(|(x, _)| x.matrix().clone()).collect(),
            affinity,
        })
    }

    pub fn affinity(&self) -> &AffinityMatrix {
        &self.affinity
    }

    pub fn source_dim(&self) -> usize {
        self.descriptors[0].nrows()
    }

    fn projected(&self, p: &DMatrix<f64>) -> Result<Projected> {
        let pt = p.transpose();
        let mut xp = Vec::with_capacity(self.descriptors.len());
        let mut y = Vec::with_capacity(self.descriptors.len());
        let mut log_det = Vec::with_capacity(self.descriptors.len());
        for x in &self.descriptors {
            let a = x * p;
            let b = symmetric_part(&(&pt * &a));
            log_det.push(cholesky_log_det(&b).ok_or(Error::NotPositiveDefinite)?);
            xp.push(a);
            y.push(b);
        }
        Ok(Projected { xp, y, log_det })
    }

    /// `J(P)`. `P` need only have full column rank.
    pub fn objective(&self, p: &DMatrix<f64>) -> Result<f64> {
        let proj = self.projected(p)?;
        let mut total = 0.0;
        for (i, j, a) in self.affinity.nonzero() {
            let mid = (&proj.y[i] + &proj.y[j]) * 0.5;
            let mid_ld = cholesky_log_det(&mid).ok_or(Error::NotPositiveDefinite)?;
            total += a * (mid_ld - 0.5 * (proj.log_det[i] + proj.log_det[j]));
        }
        Ok(total)
    }

    /// Euclidean gradient `dJ/dP`, using
    /// `d ln det(P^T X P) / dP = 2 X P (P^T X P)^-1`.
    pub fn gradient(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let proj = self.projected(p)?;
        let inverse = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            Ok(m.clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite)?
                .inverse())
        };
        let y_inv: Vec<DMatrix<f64>> = proj.y.iter().map(inverse).collect::<Result<_>>()?;
        let mut g = DMatrix::zeros(p.nrows(), p.ncols());
        for (i, j, a) in self.affinity.nonzero() {
            let mid_inv = inverse(&((&proj.y[i] + &proj.y[j]) * 0.5))?;
            // 2 * ((X_i + X_j)/2) P * mid^-1
            let sum_xp = &proj.xp[i] + &proj.xp[j];
            g += (sum_xp * mid_inv) * a;
            g -= (&proj.xp[i] * &y_inv[i]) * a;
            g -= (&proj.xp[j] * &y_inv[j]) * a;
        }
        Ok(g)
    }

    /// Central-difference approximation of [`gradient`](Self::gradient).
    pub fn finite_difference_gradient(&self, p: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
        let mut g = DMatrix::zeros(p.nrows(), p.ncols());
        let mut probe = p.clone();
        for j in 0..p.ncols() {
            for i in 0..p.nrows() {
                let orig = probe[(i, j)];
                probe[(i, j)] = orig + step;
                let up = self.objective(&probe)?;
                probe[(i, j)] = orig - step;
                let down = self.objective(&probe)?;
                probe[(i, j)] = orig;
                g[(i, j)] = (up - down) / (2.0 * step);
            }
        }
        Ok(g)
    }

    /// Projection of the Euclidean gradient onto the tangent space of the
    /// Stiefel manifold at `p`: `G - P sym(P^T G)`.
    pub fn riemannian_gradient(&self, p: &DMatrix<f64>, euclidean: &DMatrix<f64>) -> DMatrix<f64> {
        let ptg = p.transpose() * euclidean;
        euclidean - p * symmetric_part(&ptg)
    }
}

/// Outcome of [`learn_projection`].
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub projection: ProjectionMatrix,
    pub initial_objective: f64,
    pub objective: f64,
    /// Objective at the initial point and after every accepted step.
    pub objective_history: Vec<f64>,
    /// Largest `|P^T P - I|` entry over all iterates, including rejected
    /// line-search trials.
    pub max_orthonormality_error: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before the tolerance was met.
    pub converged: bool,
}

/// Learns a `source_dim x target_dim` projection from labeled descriptors.
pub fn learn_projection(
    train: &[(SpdMatrix, u32)],
    target_dim: usize,
    config: &ProjectionConfig,
) -> Result<ProjectionFit> {
    let problem = ProjectionProblem::new(train, config.k_within, config.k_between)?;
    optimize(&problem, target_dim, config)
}

/// Runs the descent on a prepared problem.
pub fn optimize(
    problem: &ProjectionProblem,
    target_dim: usize,
    config: &ProjectionConfig,
) -> Result<ProjectionFit> {
    let n = problem.source_dim();
    if target_dim == 0 || target_dim > n {
        return Err(Error::InvalidConfig(format!(
            "target dimension must lie in [1, {n}], got {target_dim}"
        )));
    }
    let start = match config.init {
        ProjectionInit::TruncatedIdentity => ProjectionMatrix::truncated_identity(n, target_dim)?,
        ProjectionInit::Random { seed } => ProjectionMatrix::random(n, target_dim, seed)?,
    };
    let mut p = start.mat;
    let mut value = problem.objective(&p)?;
    let initial_objective = value;
    let mut history = vec![value];
    let mut max_orth = orthonormality_error(&p);
    let mut step = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let euclid = match config.gradient {
            GradientMode::Analytic => problem.gradient(&p)?,
            GradientMode::FiniteDifference => problem.finite_difference_gradient(&p, 1e-5)?,
        };
        let rgrad = problem.riemannian_gradient(&p, &euclid);
        let gnorm2 = rgrad.norm_squared();
        if !(gnorm2 > 1e-24) {
            converged = true;
            break;
        }
        if step == 0.0 {
            // First trial moves P by about 0.5 in Frobenius norm.
            step = 0.5 / gnorm2.sqrt();
        } else {
            step *= 2.0;
        }

        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial = retract(&p - &rgrad * step);
            max_orth = max_orth.max(orthonormality_error(&trial));
            if let Ok(v) = problem.objective(&trial) {
                // Armijo sufficient decrease.
                if v <= value - 1e-4 * step * gnorm2 {
                    accepted = Some((trial, v));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            converged = true;
            break;
        };
        let decrease = value - next_value;
        p = next;
        value = next_value;
        history.push(value);
        if decrease <= config.relative_tolerance * value.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "projection learning stopped after {} iterations without meeting tolerance",
            iterations
        );
    }

    Ok(ProjectionFit {
        projection: ProjectionMatrix::new(p)?,
        initial_objective,
        objective: value,
        objective_history: history,
        max_orthonormality_error: max_orth,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(v))).unwrap()
    }

    #[test]
    fn identity_projection_is_exact() {
        let x = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
        ))
        .unwrap();
        let p = ProjectionMatrix::truncated_identity(3, 3).unwrap();
        assert_eq!(project(&p, &x).unwrap(), x);
    }

    #[test]
    fn truncated_projection_selects_block() {
        let p = ProjectionMatrix::truncated_identity(3, 2).unwrap();
        let y = project(&p, &diag(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.matrix(), diag(&[1.0, 2.0]).matrix());
    }

    #[test]
    fn project_rejects_mismatch() {
        let p = ProjectionMatrix::truncated_identity(4, 2).unwrap();
        assert!(matches!(
            project(&p, &diag(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn random_projection_is_orthonormal() {
        let p = ProjectionMatrix::random(12, 5, 3).unwrap();
        assert!(orthonormality_error(p.matrix()) < 1e-12);
        assert!(ProjectionMatrix::new(DMatrix::from_element(3, 2, 1.0)).is_err());
    }

    #[test]
    fn affinity_pairs() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let same = build_affinity(&[1, 1], 3, 3, &d).unwrap();
        assert_eq!(
            (
                same.get(0, 0),
                same.get(0, 1),
                same.get(1, 0),
                same.get(1, 1)
            ),
            (0, 1, 1, 0)
        );
        let diff = build_affinity(&[1, 2], 3, 3, &d).unwrap();
        assert_eq!(
            (
                diff.get(0, 0),
                diff.get(0, 1),
                diff.get(1, 0),
                diff.get(1, 1)
            ),
            (0, -1, -1, 0)
        );
    }

    #[test]
    fn affinity_matches_brute_force_enumeration() {
        let labels = [1u32, 1, 1, 2, 2, 2, 3, 3, 3];
        let n = labels.len();
        let pairwise = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                let (a, b) = (i.min(j) as f64, i.max(j) as f64);
                ((a * 7.0 + b * 13.0) % 11.0) + 0.5 + a * 0.01
            }
        });
        let aff = build_affinity(&labels, 2, 2, &pairwise).unwrap();
        // Brute force: j is a within-neighbor of i if fewer than 2 same-class
        // candidates are strictly closer (ties by index).
        let closer = |i: usize, j: usize, k: usize| {
            pairwise[(i, k)] < pairwise[(i, j)] || (pairwise[(i, k)] == pairwise[(i, j)] && k < j)
        };
        for i in 0..n {
            assert_eq!(aff.get(i, i), 0);
            for j in 0..n {
                assert_eq!(aff.get(i, j), aff.get(j, i));
                if i == j {
                    continue;
                }
                let is_nbr = |a: usize, b: usize| {
                    let pool = (0..n).filter(|&k| {
                        k != a && k != b && (labels[k] == labels[a]) == (labels[b] == labels[a])
                    });
                    pool.filter(|&k| closer(a, b, k)).count() < 2
                };
                let expected = if is_nbr(i, j) || is_nbr(j, i) {
                    if labels[i] == labels[j] {
                        1
                    } else {
                        -1
                    }
                } else {
                    0
                };
                assert_eq!(aff.get(i, j), expected, "pair ({i}, {j})");
            }
            let sum = aff.row_sum(i);
            assert!((-8..=8).contains(&sum));
        }
    }

    #[test]
    fn learn_projection_needs_two_classes() {
        let train = vec![(diag(&[1.0, 2.0]), 1), (diag(&[2.0, 1.0]), 1)];
        assert!(matches!(
            learn_projection(&train, 1, &ProjectionConfig::default()),
            Err(Error::AffinityUndefined)
        ));
    }

    #[test]
    fn full_dimension_identity_start_is_stationary() {
        let train = vec![
            (diag(&[1.0, 2.0, 3.0]), 1),
            (diag(&[1.5, 2.0, 2.5]), 1),
            (diag(&[3.0, 1.0, 1.0]), 2),
            (diag(&[2.5, 1.2, 0.8]), 2),
        ];
        let fit = learn_projection(&train, 3, &ProjectionConfig::default()).unwrap();
        let problem = ProjectionProblem::new(&train, 3, 3).unwrap();
        let raw = problem.objective(&DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(fit.initial_objective, raw, epsilon = 1e-12);
        assert!(fit.objective <= fit.initial_objective + 1e-12);
    }
}
