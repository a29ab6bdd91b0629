//! Dense linear algebra helpers and the tree dynamic program for weighted
//! least-squares replication.

use nalgebra::{DMatrix, DVector};

use crate::process::PredictableProcess;
use crate::tree::EventTree;

/// Relative eigenvalue cutoff for pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-12;

/// Pseudo-inverse of a symmetric positive semidefinite matrix and its
/// numerical rank.
pub fn sym_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = PINV_RTOL * top;
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cut && lam.abs() > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    (out, rank)
}

/// Minimum-norm solution of `K h = b` for symmetric PSD `K`.
pub fn pinv_solve(k: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (p, rank) = sym_pinv(k);
    (p * b, rank)
}

/// Orthonormal basis (columns) of the orthogonal complement of the column
/// span of `cols` inside `R^n`.
pub fn orthogonal_complement(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cols.nrows();
    let gram = cols.transpose() * cols;
    let (gp, _) = sym_pinv(&gram);
    let proj = cols * gp * cols.transpose();
    let q = DMatrix::identity(n, n) - proj;
    let eig = q.symmetric_eigen();
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &eig.eigenvectors.column(k));
    }
    out
}

/// Result of [`weighted_replication`].
#[derive(Debug, Clone)]
pub struct Replication {
    /// Integrand, one vector per decision node.
    pub integrand: PredictableProcess,
    /// Starting value (given or optimal).
    pub start: f64,
    /// `start + (integrand . increments)` at every node.
    pub values: Vec<f64>,
    /// `sqrt(sum_l w_l (values_l - target_l)^2 / sum_l w_l)`.
    pub distance: f64,
    /// Number of decision nodes whose normal equations were rank deficient.
    pub rank_deficient: usize,
}

/// Minimizes `sum_l w_l (c + G_l - z_l)^2` over predictable integrands `h`,
/// where `G = sum over path of h^T phi(child)`. The start `c` is fixed when
/// `start` is `Some`, otherwise optimized. `phi[n]` is the increment vector
/// of dimension `dim` into node `n` (unused at the root).
pub fn weighted_replication(
    tree: &EventTree,
    phi: &[Vec<f64>],
    dim: usize,
    weights: &[f64],
    target: &[f64],
    start: Option<f64>,
) -> Replication {
    let n = tree.len();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for leaf in tree.leaves() {
        let i = tree.leaf_index(leaf);
        alpha[leaf] = weights[i];
        beta[leaf] = weights[i] * target[i];
    }
    let mut h0 = vec![DVector::zeros(dim); n];
    let mut h1 = vec![DVector::zeros(dim); n];
    let mut rank_deficient = 0;
    for node in tree.internal_nodes().rev() {
        let mut k = DMatrix::zeros(dim, dim);
        let mut k1 = DVector::zeros(dim);
        let mut k0 = DVector::zeros(dim);
        let (mut sa, mut sb) = (0.0, 0.0);
        for c in tree.children(node) {
            let f = DVector::from_column_slice(&phi[c]);
            k += alpha[c] * &f * f.transpose();
            k1 += alpha[c] * &f;
            k0 += beta[c] * &f;
            sa += alpha[c];
            sb += beta[c];
        }
        let (kp, rank) = sym_pinv(&k);
        if rank < dim {
            rank_deficient += 1;
        }
        let a0 = &kp * &k0;
        let a1 = &kp * &k1;
        alpha[node] = sa - k1.dot(&a1);
        beta[node] = sb - k1.dot(&a0);
        h0[node] = a0;
        h1[node] = a1;
    }
    let c = start.unwrap_or_else(|| if alpha[0] > 0.0 { beta[0] / alpha[0] } else { 0.0 });
    let mut values = vec![0.0; n];
    values[0] = c;
    let mut integrand = PredictableProcess::zeros(tree, dim);
    for node in tree.internal_nodes() {
        let h = &h0[node] - values[node] * &h1[node];
        integrand.at_node_mut(node).copy_from_slice(h.as_slice());
        for ch in tree.children(node) {
            let inc: f64 = h.iter().zip(&phi[ch]).map(|(a, b)| a * b).sum();
            values[ch] = values[node] + inc;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for leaf in tree.leaves() {
        let i = tree.leaf_index(leaf);
        num += weights[i] * (values[leaf] - target[i]).powi(2);
        den += weights[i];
    }
    Replication {
        integrand,
        start: c,
        values,
        distance: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
        rank_deficient,
    }
}

/// Whether the one-step increments `delta` (one row per child, all with
/// positive probability) admit an arbitrage: a direction `h` with
/// `h^T delta_c >= 0` for every child and `> 0` for some child.
///
/// Minimizes `sum_c p_c exp(lambda^T delta_c)`; a finite minimizer yields
/// an equivalent martingale measure, divergence of `lambda` an arbitrage.
pub fn one_step_arbitrage(delta: &[Vec<f64>], probs: &[f64]) -> bool {
    let k = delta.len();
    if k == 0 {
        return false;
    }
    let d = delta[0].len();
    let scale = delta
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return false;
    }
    let rows: Vec<DVector<f64>> = delta
        .iter()
        .map(|v| DVector::from_iterator(d, v.iter().map(|x| x / scale)))
        .collect();
    let mut lambda = DVector::zeros(d);
    for _ in 0..500 {
        let expo: Vec<f64> = rows.iter().map(|r| lambda.dot(r)).collect();
        if expo.iter().any(|e| e.abs() > 200.0) {
            return true;
        }
        let m = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = expo.iter().zip(probs).map(|(e, p)| p * (e - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for (r, wi) in rows.iter().zip(&w) {
            grad += (*wi / total) * r;
        }
        for (r, wi) in rows.iter().zip(&w) {
            let c = r - &grad;
            hess += (*wi / total) * &c * c.transpose();
        }
        // q_c / p_c for the candidate martingale measure q
        let min_ratio = w.iter().zip(probs).map(|(wi, p)| wi / total / p).fold(f64::INFINITY, f64::min);
        if min_ratio < 1e-12 {
            return true;
        }
        let (step, _) = pinv_solve(&hess, &grad);
        // Newton steps shrink only near a finite minimizer; under an
        // arbitrage they stay of order one while lambda diverges. Measured
        // through the exponents, since nearly collinear increments make
        // lambda itself badly scaled.
        let moves = rows.iter().map(|r| r.dot(&step).abs()).fold(0.0, f64::max);
        if moves < 1e-9 {
            return false;
        }
        let f0: f64 = total.ln() + m;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &lambda - t * &step;
            let e: Vec<f64> = rows.iter().map(|r| trial.dot(r)).collect();
            let mm = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let f1 = e.iter().zip(probs).map(|(x, p)| p * (x - mm).exp()).sum::<f64>().ln() + mm;
            if f1 < f0 && (f1 <= f0 - 1e-4 * t * grad.dot(&step) || t < 1.0) {
                lambda = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // roundoff stalls the search only next to a finite minimizer,
            // where the Newton step is already tiny
            return moves > 1e-6;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let m = &v * v.transpose();
        let (p, r) = sym_pinv(&m);
        assert_eq!(r, 1);
        let back = &m * &p * &m;
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn complement_dimensions() {
        let cols = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let q = orthogonal_complement(&cols);
        assert_eq!(q.ncols(), 2);
        assert!((cols.transpose() * &q).norm() < 1e-12);
    }

    #[test]
    fn arbitrage_detection() {
        let p = [0.5, 0.5];
        assert!(!one_step_arbitrage(&[vec![0.1], vec![-0.1]], &p));
        assert!(one_step_arbitrage(&[vec![0.1], vec![0.0]], &p));
        assert!(one_step_arbitrage(&[vec![0.1], vec![0.2]], &p));
        let p3 = [0.3, 0.3, 0.4];
        // two assets, 0 outside the convex hull of the increments
        assert!(one_step_arbitrage(&[vec![0.1, 0.1], vec![-0.1, 0.2], vec![0.05, -0.01]], &p3));
        assert!(!one_step_arbitrage(&[vec![0.1, 0.1], vec![-0.1, 0.2], vec![0.0, -0.3]], &p3));
        // redundant second asset
        assert!(!one_step_arbitrage(&[vec![0.1, 0.2], vec![-0.1, -0.2]], &p));
        assert!(!one_step_arbitrage(&[vec![0.0], vec![0.0]], &p));
        // the line search stalls on roundoff before the Newton step drops below tolerance
        let inc = [
            vec![-0.07848432360150744, -0.12231796266513664],
            vec![0.1506960563514244, 0.1243987074330841],
            vec![-0.0722700521651481, 0.0427921588099289],
        ];
        assert!(!one_step_arbitrage(&inc, &[0.15557258959360704, 0.23451654358344265, 0.6099108668229504]));
        // nearly collinear assets
        let inc = [
            vec![-0.2371125205773766, -0.0011107371550143907],
            vec![0.11636926102444048, 0.0004999143256917693],
            vec![0.16933698325404703, 0.0008165508857047865],
        ];
        assert!(!one_step_arbitrage(&inc, &[0.45545670356426166, 0.3525792337425689, 0.19196406269316946]));
    }

    #[test]
    fn replication_of_attainable_payoff_is_exact() {
        let t = EventTree::uniform(2, &[0.5, 0.5]).unwrap();
        let phi: Vec<Vec<f64>> = (0..t.len())
            .map(|n| vec![if n % 2 == 1 { 0.1 } else { -0.05 }])
            .collect();
        // payoff generated by h = 2 at the root and 3, -1 at time one
        let h = [2.0, 3.0, -1.0];
        let mut g = vec![0.0; t.len()];
        for n in 1..t.len() {
            let p = t.parent(n).unwrap();
            g[n] = g[p] + h[p] * phi[n][0];
        }
        let target: Vec<f64> = t.leaves().map(|l| 1.5 + g[l]).collect();
        let w = t.leaf_probs();
        let rep = weighted_replication(&t, &phi, 1, &w, &target, None);
        assert!(rep.distance < 1e-14);
        assert!((rep.start - 1.5).abs() < 1e-14);
        assert!((rep.integrand.at_node(2)[0] + 1.0).abs() < 1e-12);
    }
}
