//! Closed-form optimal linear combination of component outputs.
//!
//! With `f_0 = 1` prepended to the component output vectors `f_1..f_K`, the
//! weights minimising `|sum_j θ_j f_j - y|² / N` solve the normal equations
//! `G Θ = r` with `G[i][j] = <f_i, f_j>` and `r[i] = <f_i, y>`. The solve
//! factors `G` by Cholesky and refuses near-singular systems unless a ridge
//! is requested, since a singular Gram matrix means the components are
//! linearly dependent.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which component vectors count as
/// linearly dependent.
pub const INDEPENDENCE_TOLERANCE: f64 = 1e-10;

/// Largest Gram condition number accepted by an unregularised solve.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramSystem {
    /// Row-major `(k + 1) x (k + 1)`; index 0 is the all-ones vector.
    pub gram: Vec<f64>,
    pub rhs: Vec<f64>,
    pub k: usize,
    pub n: usize,
}

impl GramSystem {
    pub fn dim(&self) -> usize {
        self.k + 1
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.dim() + j]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_columns(outputs: &[Vec<f64>], labels: &[f64]) -> Result<()> {
    let n = labels.len();
    for (j, col) in outputs.iter().enumerate() {
        if col.len() != n {
            return Err(Error::mismatch(format!("length of component column {}", j + 1), n, col.len()));
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("component column {} has non-finite entries", j + 1)));
        }
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("labels have non-finite entries".into()));
    }
    Ok(())
}

/// Inner products of the given columns (no bias column added).
pub fn gram_of_columns(columns: &[&[f64]], labels: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = columns.len();
    let mut gram = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = dot(columns[i], columns[j]);
            gram[i * d + j] = v;
            gram[j * d + i] = v;
        }
    }
    let rhs = columns.iter().map(|c| dot(c, labels)).collect();
    (gram, rhs)
}

/// Builds the normal equations for the bias plus `outputs.len()` components.
pub fn build_gram(outputs: &[Vec<f64>], labels: &[f64]) -> Result<GramSystem> {
    check_columns(outputs, labels)?;
    let ones = vec![1.0; labels.len()];
    let mut cols: Vec<&[f64]> = vec![&ones];
    cols.extend(outputs.iter().map(Vec::as_slice));
    let (gram, rhs) = gram_of_columns(&cols, labels);
    Ok(GramSystem {
        gram,
        rhs,
        k: outputs.len(),
        n: labels.len(),
    })
}

/// In-place Cholesky of a row-major symmetric matrix; returns the lower factor.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            z[i] -= l[i * d + k] * z[k];
        }
        z[i] /= l[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            z[i] -= l[k * d + i] * z[k];
        }
        z[i] /= l[i * d + i];
    }
    z
}

/// Ratio of largest to smallest eigenvalue of a symmetric matrix.
pub fn condition_estimate(a: &[f64], d: usize) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let m = DMatrix::from_row_slice(d, d, a);
    let eig = SymmetricEigen::new(m).eigenvalues;
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `(G + ridge I) Θ = r`.
pub fn solve_theta_star(sys: &GramSystem, ridge: f64) -> Result<Vec<f64>> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidInput(format!("ridge must be a finite nonnegative number, got {ridge}")));
    }
    let d = sys.dim();
    if sys.gram.len() != d * d || sys.rhs.len() != d {
        return Err(Error::mismatch("gram system size", d * d, sys.gram.len()));
    }
    let mut a = sys.gram.clone();
    for i in 0..d {
        a[i * d + i] += ridge;
    }
    let condition = condition_estimate(&a, d);
    if ridge == 0.0 && condition > MAX_GRAM_CONDITION {
        return Err(Error::SingularGram { condition });
    }
    let l = cholesky(&a, d).ok_or(Error::SingularGram { condition })?;
    Ok(cholesky_solve(&l, d, &sys.rhs))
}

/// `θ_0 + sum_j θ_j f_j` at every sample.
pub fn combine_outputs(theta: &[f64], outputs: &[Vec<f64>]) -> Vec<f64> {
    let n = outputs.first().map_or(0, Vec::len);
    let mut g = vec![theta[0]; n];
    for (t, col) in theta[1..].iter().zip(outputs) {
        for (gi, v) in g.iter_mut().zip(col) {
            *gi += t * v;
        }
    }
    g
}

/// Mean squared error of a prediction vector.
pub fn mse(predictions: &[f64], labels: &[f64]) -> f64 {
    let s: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    s / labels.len() as f64
}

/// Losses of `f_0 = 1, f_1, .., f_K`.
pub fn component_losses(outputs: &[Vec<f64>], labels: &[f64]) -> Vec<f64> {
    let ones = vec![1.0; labels.len()];
    std::iter::once(&ones)
        .chain(outputs)
        .map(|f| mse(f, labels))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearIndependence {
    pub holds: bool,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoPerfectComponent {
    pub holds: bool,
    /// `min_j sum_i |f_j(x_i) - y_i|`; absent without components.
    pub min_l1_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentBudget {
    pub holds: bool,
    /// `2 sqrt(N) - 1`
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: LinearIndependence,
    pub a2: NoPerfectComponent,
    pub a4: ComponentBudget,
}

impl AssumptionReport {
    pub fn a1_a2_hold(&self) -> bool {
        self.a1.holds && self.a2.holds
    }
}

/// Singular values of the `N x (K+1)` matrix `[1, f_1, .., f_K]`, padded with
/// zeros when there are more columns than rows.
fn column_singular_values(outputs: &[Vec<f64>], n: usize) -> Vec<f64> {
    let cols = outputs.len() + 1;
    let m = DMatrix::from_fn(n, cols, |i, j| if j == 0 { 1.0 } else { outputs[j - 1][i] });
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.resize(cols.max(sv.len()), 0.0);
    sv
}

/// Checks linear independence (`a1`), no perfect component (`a2`) and the
/// component budget `K < 2 sqrt(N) - 1` (`a4`).
pub fn check_assumptions(outputs: &[Vec<f64>], labels: &[f64]) -> Result<AssumptionReport> {
    check_columns(outputs, labels)?;
    let n = labels.len();
    let sv = column_singular_values(outputs, n);
    let max = sv.iter().fold(0.0f64, |a, &v| a.max(v));
    let min = sv.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let a1 = LinearIndependence {
        holds: max > 0.0 && min / max > INDEPENDENCE_TOLERANCE,
        min_singular_value: min,
        max_singular_value: max,
    };
    let min_l1 = outputs
        .iter()
        .map(|f| f.iter().zip(labels).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    let a2 = NoPerfectComponent {
        holds: min_l1.is_none_or(|v| v > 0.0),
        min_l1_error: min_l1,
    };
    let bound = 2.0 * (n as f64).sqrt() - 1.0;
    let a4 = ComponentBudget {
        holds: (outputs.len() as f64) < bound,
        bound,
    };
    Ok(AssumptionReport { a1, a2, a4 })
}

/// Full closed-form fit: Θ*, losses of every `f_j` and of the combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub theta: Vec<f64>,
    /// Losses of `f_0 = 1, f_1, .., f_K`.
    pub component_losses: Vec<f64>,
    pub composite_loss: f64,
    pub assumptions: AssumptionReport,
}

pub fn fit(outputs: &[Vec<f64>], labels: &[f64], ridge: f64) -> Result<LinearFit> {
    let assumptions = check_assumptions(outputs, labels)?;
    if !assumptions.a4.holds {
        log::warn!(
            "K = {} is not below 2 sqrt(N) - 1 = {:.3}; the improvement guarantee is vacuous",
            outputs.len(),
            assumptions.a4.bound
        );
    }
    let sys = build_gram(outputs, labels)?;
    let theta = solve_theta_star(&sys, ridge)?;
    let g = combine_outputs(&theta, outputs);
    Ok(LinearFit {
        composite_loss: mse(&g, labels),
        component_losses: component_losses(outputs, labels),
        theta,
        assumptions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain Gaussian elimination with partial pivoting on the augmented system.
    fn eliminate(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn two_sample_gram_by_hand() {
        let sys = build_gram(&[vec![1.0, 1.0]], &[2.0, 2.0]).unwrap();
        assert_eq!(sys.gram, vec![2.0, 2.0, 2.0, 2.0]);
        assert_eq!(sys.rhs, vec![4.0, 4.0]);
        assert_eq!(sys.entry(0, 0), 2.0);
    }

    #[test]
    fn off_diagonals_match_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f1: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f2: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sys = build_gram(&[f1.clone(), f2.clone()], &y).unwrap();
        let mut d12 = 0.0;
        let mut s1 = 0.0;
        for i in 0..20 {
            d12 += f1[i] * f2[i];
            s1 += f1[i];
        }
        assert!((sys.entry(1, 2) - d12).abs() < 1e-12);
        assert!((sys.entry(0, 1) - s1).abs() < 1e-12);
        assert_eq!(sys.entry(1, 2), sys.entry(2, 1));
        assert_eq!(sys.entry(0, 0), 20.0);
    }

    #[test]
    fn bias_duplicate_is_singular() {
        let sys = build_gram(&[vec![1.0; 5]], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(matches!(solve_theta_star(&sys, 0.0), Err(Error::SingularGram { .. })));
        // explicit ridge opts in to a regularised answer
        assert!(solve_theta_star(&sys, 1e-3).is_ok());
    }

    #[test]
    fn perfect_component_gets_unit_weight() {
        let y = vec![0.3, -1.2, 2.5, 0.7];
        let theta = solve_theta_star(&build_gram(&[y.clone()], &y).unwrap(), 0.0).unwrap();
        assert!(theta[0].abs() < 1e-12 && (theta[1] - 1.0).abs() < 1e-12, "{theta:?}");
        assert!(mse(&combine_outputs(&theta, &[y.clone()]), &y) < 1e-24);
    }

    #[test]
    fn bias_only_recovers_constant() {
        let theta = solve_theta_star(&build_gram(&[], &[4.5; 7]).unwrap(), 0.0).unwrap();
        assert_eq!(theta.len(), 1);
        assert!((theta[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn four_sample_instance_matches_elimination() {
        let f1 = vec![1.0, 0.0, 0.0, 0.0];
        let f2 = vec![0.0, 1.0, 0.0, 0.0];
        let y = vec![1.0, 2.0, 0.0, 0.0];
        // normal equations written out by hand: [1,f1,f2] inner products
        let a = vec![vec![4.0, 1.0, 1.0], vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]];
        let b = vec![3.0, 1.0, 2.0];
        let oracle = eliminate(a, b);
        // elimination gives (0, 1, 2)
        for (o, e) in oracle.iter().zip([0.0, 1.0, 2.0]) {
            assert!((o - e).abs() < 1e-12);
        }
        let theta = solve_theta_star(&build_gram(&[f1, f2], &y).unwrap(), 0.0).unwrap();
        for (t, o) in theta.iter().zip(&oracle) {
            assert!((t - o).abs() < 1e-10);
        }
    }

    #[test]
    fn assumption_flags() {
        let y = vec![1.0, 2.0, 3.0, 5.0];
        let f = vec![1.5, 2.0, 2.0, 6.0];
        let dup = check_assumptions(&[f.clone(), f.clone()], &y).unwrap();
        assert!(!dup.a1.holds);
        let perfect = check_assumptions(&[f.clone(), y.clone()], &y).unwrap();
        assert!(!perfect.a2.holds);
        assert_eq!(perfect.a2.min_l1_error, Some(0.0));
        let g = vec![0.0, 1.0, 0.0, 1.0];
        let h = vec![1.0, 0.0, 0.0, -1.0];
        let k3 = check_assumptions(&[f, g, h], &y).unwrap();
        assert_eq!(k3.a4.bound, 3.0);
        assert!(!k3.a4.holds);
        let empty = check_assumptions(&[], &y).unwrap();
        assert!(empty.a2.holds && empty.a2.min_l1_error.is_none());
    }

    #[test]
    fn length_mismatch_and_nan_rejected() {
        assert!(build_gram(&[vec![1.0]], &[1.0, 2.0]).is_err());
        assert!(build_gram(&[vec![1.0, f64::NAN]], &[1.0, 2.0]).is_err());
        assert!(solve_theta_star(&build_gram(&[], &[1.0]).unwrap(), -1.0).is_err());
    }
}
