//! Second-order sensitivity analysis around `(x, 0)`.
//!
//! Martingales under `R(x)` are sums of one-step elements: an element lives
//! on the edges out of a single decision node and has zero conditional
//! `R(x)`-mean there. The primal space is spanned by the compensated
//! increments of the `X`-discounted prices `x S / X`; the dual space is its
//! per-node orthogonal complement inside the zero-mean one-step vectors.
//! The six auxiliary problems are weighted least-squares problems over these
//! spans.

use nalgebra::{DMatrix, DVector};

use crate::duality::{dual_from_primal, solve_primal, DualSolution, PrimalSolution};
use crate::error::{Error, Result};
use crate::linalg::{orthogonal_complement, sym_pinv, weighted_replication};
use crate::market::MarketModel;
use crate::process::AdaptedProcess;
use crate::tree::EventTree;
use crate::utility::Utility;

/// Above this many basis elements the auxiliary problems are solved node by
/// node instead of through one dense system.
const DENSE_LIMIT: usize = 400;

/// Everything about the unperturbed optimum that the expansions need.
#[derive(Debug, Clone)]
pub struct BaseSolution {
    pub x: f64,
    pub y: f64,
    pub primal: PrimalSolution,
    pub dual: DualSolution,
    /// `R(x)` leaf weights.
    pub r: Vec<f64>,
    /// `X_T(x, 0)` and `Y_T(y, 0)` per leaf.
    pub xt: Vec<f64>,
    pub yt: Vec<f64>,
    /// `A(X_T)` and `B(Y_T)` per leaf.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

pub fn base_solution(m: &MarketModel, u: &Utility, x: f64) -> Result<BaseSolution> {
    let primal = solve_primal(m, u, x, 0.0)?;
    let dual = dual_from_primal(m, u, &primal)?;
    let r = crate::duality::measure_r(m, &primal, &dual);
    let xt = primal.terminal(m);
    let yt = dual.deflator.terminal(m.tree());
    let a: Vec<f64> = xt.iter().map(|v| u.risk_aversion(*v)).collect();
    let b = yt
        .iter()
        .map(|v| u.conjugate(*v).map(|c| c.b))
        .collect::<Result<Vec<f64>>>()?;
    let stats = m.perturbation_statistics();
    Ok(BaseSolution {
        x,
        y: dual.y,
        primal,
        dual,
        r,
        xt,
        yt,
        a,
        b,
        f: stats.f,
        g: stats.g,
    })
}

impl BaseSolution {
    /// `E^{R(x)}[Z]` for a leaf payoff.
    pub fn expect_r(&self, z: &[f64]) -> f64 {
        self.r.iter().zip(z).map(|(w, v)| w * v).sum()
    }
}

/// Martingale increment vector on the edges out of one decision node.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepElement {
    pub node: usize,
    /// One entry per child of `node`, in child order.
    pub increments: Vec<f64>,
}

impl OneStepElement {
    /// The martingale `M` with `M_0 = 0` and this single one-step jump.
    pub fn to_process(&self, tree: &EventTree) -> AdaptedProcess {
        let mut v = vec![0.0; tree.len()];
        let first = tree.children(self.node).start;
        for n in first..tree.len() {
            if let Some(c) = tree.child_towards(self.node, n) {
                v[n] = self.increments[c - first];
            }
        }
        AdaptedProcess::scalar(v)
    }
}

#[derive(Debug, Clone)]
pub struct MartingaleSpaceBasis {
    pub primal: Vec<OneStepElement>,
    pub dual: Vec<OneStepElement>,
    /// Rank of the primal one-step space at each decision node.
    pub primal_rank: Vec<usize>,
    /// Dimension of the dual one-step space at each decision node.
    pub dual_dim: Vec<usize>,
    /// Conditional `R(x)` probabilities of every non-root node.
    pub cond_r: Vec<f64>,
}

/// Conditional probabilities of each node given its parent under the leaf measure `w`.
pub(crate) fn conditional_probs(tree: &EventTree, w: &[f64]) -> Vec<f64> {
    let agg = tree.aggregate(w);
    (0..tree.len())
        .map(|n| match tree.parent(n) {
            None => 1.0,
            Some(p) => agg[n] / agg[p],
        })
        .collect()
}

/// Builds the primal span from one-step increments `inc[c]` (one vector per
/// non-root node) compensated under the conditional weights `cond`, and its
/// orthogonal complement.
pub(crate) fn split_spaces(
    tree: &EventTree,
    cond: &[f64],
    inc: &[Vec<f64>],
) -> (Vec<OneStepElement>, Vec<OneStepElement>, Vec<usize>, Vec<usize>) {
    let mut primal = Vec::new();
    let mut dual = Vec::new();
    let mut ranks = Vec::new();
    let mut dims = Vec::new();
    for node in tree.internal_nodes() {
        let ch = tree.children(node);
        let k = ch.len();
        let dim = inc[ch.start].len();
        let sq: Vec<f64> = ch.clone().map(|c| cond[c].sqrt()).collect();
        let mut cols = DMatrix::zeros(k, dim + 1);
        for (j, s) in sq.iter().enumerate() {
            cols[(j, 0)] = *s;
        }
        for i in 0..dim {
            let mean: f64 = ch.clone().map(|c| cond[c] * inc[c][i]).sum();
            let v: Vec<f64> = ch.clone().map(|c| inc[c][i] - mean).collect();
            for j in 0..k {
                cols[(j, i + 1)] = sq[j] * v[j];
            }
            primal.push(OneStepElement { node, increments: v });
        }
        let gram = cols.columns(1, dim).transpose() * cols.columns(1, dim);
        let scale = gram.diagonal().iter().fold(0.0f64, |a, v| a.max(*v));
        let rank = if scale > 1e-300 { sym_pinv(&gram).1 } else { 0 };
        ranks.push(rank);
        let q = orthogonal_complement(&cols);
        dims.push(q.ncols());
        for j in 0..q.ncols() {
            dual.push(OneStepElement {
                node,
                increments: (0..k).map(|r| q[(r, j)] / sq[r]).collect(),
            });
        }
    }
    (primal, dual, ranks, dims)
}

pub fn build_bases(m: &MarketModel, base: &BaseSolution) -> Result<MartingaleSpaceBasis> {
    let tree = m.tree();
    let s = m.prices();
    let w = &base.primal.wealth;
    let sx = |n: usize| -> Vec<f64> { s.at(n).iter().map(|v| base.x * v / w.value(n)).collect() };
    let inc: Vec<Vec<f64>> = (0..tree.len())
        .map(|n| match tree.parent(n) {
            None => vec![0.0; s.dim()],
            Some(p) => sx(n).iter().zip(sx(p)).map(|(a, b)| a - b).collect(),
        })
        .collect();
    let cond = conditional_probs(tree, &base.r);
    let (primal, dual, primal_rank, dual_dim) = split_spaces(tree, &cond, &inc);
    for (i, node) in tree.internal_nodes().enumerate() {
        let k = tree.children(node).len();
        if primal_rank[i] + dual_dim[i] + 1 != k {
            return Err(Error::InvariantViolation(format!(
                "node {node}: primal rank {} + dual dimension {} != {} - 1",
                primal_rank[i], dual_dim[i], k
            )));
        }
    }
    Ok(MartingaleSpaceBasis { primal, dual, primal_rank, dual_dim, cond_r: cond })
}

impl MartingaleSpaceBasis {
    pub fn primal_dim(&self) -> usize {
        self.primal_rank.iter().sum()
    }

    pub fn dual_dim(&self) -> usize {
        self.dual_dim.iter().sum()
    }

    /// Largest conditional `R(x)`-mean of any element, and largest
    /// conditional covariance between a primal and a dual element.
    pub fn orthogonality_defect(&self, tree: &EventTree) -> (f64, f64) {
        let mut mean: f64 = 0.0;
        let mut cross: f64 = 0.0;
        let cond = |c: usize| self.cond_r[c];
        for e in self.primal.iter().chain(&self.dual) {
            let first = tree.children(e.node).start;
            let s: f64 = e.increments.iter().enumerate().map(|(j, v)| cond(first + j) * v).sum();
            mean = mean.max(s.abs());
        }
        for p in &self.primal {
            for d in self.dual.iter().filter(|d| d.node == p.node) {
                let first = tree.children(p.node).start;
                let s: f64 = (0..p.increments.len())
                    .map(|j| cond(first + j) * p.increments[j] * d.increments[j])
                    .sum();
                cross = cross.max(s.abs());
            }
        }
        (mean, cross)
    }
}

/// Leaf-by-element matrix of terminal values.
pub fn terminal_matrix(tree: &EventTree, elems: &[OneStepElement]) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros(tree.n_leaves(), elems.len());
    for (k, e) in elems.iter().enumerate() {
        let first = tree.children(e.node).start;
        for leaf in tree.leaves() {
            if let Some(c) = tree.child_towards(e.node, leaf) {
                phi[(tree.leaf_index(leaf), k)] = e.increments[c - first];
            }
        }
    }
    phi
}

/// Minimizer of an auxiliary problem together with its value.
#[derive(Debug, Clone)]
pub struct AuxSolution {
    pub value: f64,
    /// Terminal value of the optimal martingale, per leaf.
    pub optimizer: Vec<f64>,
    /// The optimal martingale at every node.
    pub process: AdaptedProcess,
    /// Relative residual of the normal equations.
    pub normal_residual: f64,
    /// Set when the normal equations were singular (minimum-norm optimizer).
    pub rank_deficient: bool,
}

/// `min sum_l r_l w_l (M_l - t_l)^2` over the span of `elems`.
pub fn weighted_projection(
    tree: &EventTree,
    elems: &[OneStepElement],
    r: &[f64],
    w: &[f64],
    t: &[f64],
) -> (Vec<f64>, AdaptedProcess, f64, bool) {
    let weights: Vec<f64> = r.iter().zip(w).map(|(a, b)| a * b).collect();
    if elems.is_empty() {
        return (vec![0.0; tree.n_leaves()], AdaptedProcess::zeros(tree, 1), 0.0, false);
    }
    if elems.len() <= DENSE_LIMIT {
        let phi = terminal_matrix(tree, elems);
        let wv = DVector::from_column_slice(&weights);
        let tv = DVector::from_column_slice(t);
        let mut wphi = phi.clone();
        for (i, mut row) in wphi.row_iter_mut().enumerate() {
            row *= wv[i];
        }
        let normal = phi.transpose() * &wphi;
        let rhs = wphi.transpose() * &tv;
        let (pinv, rank) = sym_pinv(&normal);
        let coef = &pinv * &rhs;
        let mt = &phi * &coef;
        let res = wphi.transpose() * (&mt - &tv);
        let scale = rhs.norm().max(normal.norm() * coef.norm()).max(f64::MIN_POSITIVE);
        let process = combine(tree, elems, coef.as_slice());
        (mt.as_slice().to_vec(), process, res.norm() / scale, rank < elems.len())
    } else {
        let (rep, process) = projection_by_nodes(tree, elems, &weights, t);
        (rep, process, 0.0, true)
    }
}

fn combine(tree: &EventTree, elems: &[OneStepElement], coef: &[f64]) -> AdaptedProcess {
    let mut inc = vec![0.0; tree.len()];
    for (e, c) in elems.iter().zip(coef) {
        let first = tree.children(e.node).start;
        for (j, v) in e.increments.iter().enumerate() {
            inc[first + j] += c * v;
        }
    }
    let mut vals = vec![0.0; tree.len()];
    for n in 1..tree.len() {
        vals[n] = vals[tree.parent(n).unwrap()] + inc[n];
    }
    AdaptedProcess::scalar(vals)
}

/// Same projection computed by backward induction; used for large bases
/// and as an independent cross-check.
pub fn projection_by_nodes(
    tree: &EventTree,
    elems: &[OneStepElement],
    weights: &[f64],
    t: &[f64],
) -> (Vec<f64>, AdaptedProcess) {
    let mut per_node: Vec<Vec<&OneStepElement>> = vec![Vec::new(); tree.len()];
    for e in elems {
        per_node[e.node].push(e);
    }
    let dim = per_node.iter().map(|v| v.len()).max().unwrap_or(0).max(1);
    let mut phi = vec![vec![0.0; dim]; tree.len()];
    for node in tree.internal_nodes() {
        let first = tree.children(node).start;
        for (k, e) in per_node[node].iter().enumerate() {
            for (j, v) in e.increments.iter().enumerate() {
                phi[first + j][k] = *v;
            }
        }
    }
    let rep = weighted_replication(tree, &phi, dim, weights, t, Some(0.0));
    let terminal = tree.leaves().map(|l| rep.values[l]).collect();
    (terminal, AdaptedProcess::scalar(rep.values))
}

#[derive(Debug, Clone)]
pub struct AuxResults {
    pub a_xx: AuxSolution,
    pub a_ee: AuxSolution,
    pub a_xe: f64,
    pub b_yy: AuxSolution,
    pub b_ee: AuxSolution,
    pub b_ye: f64,
}

fn aux(
    tree: &EventTree,
    elems: &[OneStepElement],
    base: &BaseSolution,
    w: &[f64],
    t: &[f64],
    value: impl Fn(&[f64]) -> f64,
) -> AuxSolution {
    let (opt, process, res, deficient) = weighted_projection(tree, elems, &base.r, w, t);
    AuxSolution {
        value: value(&opt),
        optimizer: opt,
        process,
        normal_residual: res,
        rank_deficient: deficient,
    }
}

/// `(a(x,x), a(eps,eps), a(x,eps))` over the primal span.
pub fn solve_aux_primal(
    tree: &EventTree,
    basis: &MartingaleSpaceBasis,
    base: &BaseSolution,
) -> (AuxSolution, AuxSolution, f64) {
    let x = base.x;
    let (a, f, g) = (&base.a, &base.f, &base.g);
    let n = a.len();
    let t0 = vec![-1.0; n];
    let a_xx = aux(tree, &basis.primal, base, a, &t0, |m| {
        base.expect_r(&(0..n).map(|l| a[l] * (1.0 + m[l]).powi(2)).collect::<Vec<_>>())
    });
    let t1: Vec<f64> = (0..n).map(|l| -x * f[l] * (a[l] - 1.0) / a[l]).collect();
    let a_ee = aux(tree, &basis.primal, base, a, &t1, |m| {
        base.expect_r(
            &(0..n)
                .map(|l| {
                    a[l] * (m[l] + x * f[l]).powi(2) - 2.0 * x * f[l] * m[l] - x * x * (f[l] * f[l] + g[l])
                })
                .collect::<Vec<_>>(),
        )
    });
    let (m0, m1) = (&a_xx.optimizer, &a_ee.optimizer);
    let a_xe = base.expect_r(
        &(0..n)
            .map(|l| -x * f[l] * (1.0 + m0[l]) + a[l] * (x * f[l] + m1[l]) * (1.0 + m0[l]))
            .collect::<Vec<_>>(),
    );
    (a_xx, a_ee, a_xe)
}

/// `(b(y,y), b(eps,eps), b(y,eps))` over the dual span.
pub fn solve_aux_dual(
    tree: &EventTree,
    basis: &MartingaleSpaceBasis,
    base: &BaseSolution,
) -> (AuxSolution, AuxSolution, f64) {
    let y = base.y;
    let (b, f, g) = (&base.b, &base.f, &base.g);
    let n = b.len();
    let t0 = vec![-1.0; n];
    let b_yy = aux(tree, &basis.dual, base, b, &t0, |nn| {
        base.expect_r(&(0..n).map(|l| b[l] * (1.0 + nn[l]).powi(2)).collect::<Vec<_>>())
    });
    let t1: Vec<f64> = (0..n).map(|l| y * f[l] * (b[l] - 1.0) / b[l]).collect();
    let b_ee = aux(tree, &basis.dual, base, b, &t1, |nn| {
        base.expect_r(
            &(0..n)
                .map(|l| {
                    b[l] * (nn[l] - y * f[l]).powi(2) + 2.0 * y * f[l] * nn[l] - y * y * (f[l] * f[l] - g[l])
                })
                .collect::<Vec<_>>(),
        )
    });
    let (n0, n1) = (&b_yy.optimizer, &b_ee.optimizer);
    let b_ye = base.expect_r(
        &(0..n)
            .map(|l| y * f[l] * (1.0 + n0[l]) + b[l] * (-y * f[l] + n1[l]) * (1.0 + n0[l]))
            .collect::<Vec<_>>(),
    );
    (b_yy, b_ee, b_ye)
}

pub fn solve_aux(tree: &EventTree, basis: &MartingaleSpaceBasis, base: &BaseSolution) -> AuxResults {
    let (a_xx, a_ee, a_xe) = solve_aux_primal(tree, basis, base);
    let (b_yy, b_ee, b_ye) = solve_aux_dual(tree, basis, base);
    AuxResults { a_xx, a_ee, a_xe, b_yy, b_ee, b_ye }
}

/// `(grad u(x, 0), grad v(y, 0))`.
pub fn gradient(base: &BaseSolution) -> ([f64; 2], [f64; 2]) {
    let ue = base.x * base.y * base.expect_r(&base.f);
    ([base.y, ue], [-base.x, ue])
}

pub type Mat2 = [[f64; 2]; 2];

/// `(H_u(x, 0), H_v(y, 0))`.
pub fn hessians(aux: &AuxResults, x: f64, y: f64) -> (Mat2, Mat2) {
    let cu = -y / x;
    let cv = x / y;
    (
        [
            [cu * aux.a_xx.value, cu * aux.a_xe],
            [cu * aux.a_xe, cu * aux.a_ee.value],
        ],
        [
            [cv * aux.b_yy.value, cv * aux.b_ye],
            [cv * aux.b_ye, cv * aux.b_ee.value],
        ],
    )
}

/// Derivatives of the terminal optimizers, per leaf.
#[derive(Debug, Clone)]
pub struct OptimizerDerivatives {
    pub x_x: Vec<f64>,
    pub x_eps: Vec<f64>,
    pub y_y: Vec<f64>,
    pub y_eps: Vec<f64>,
}

pub fn optimizer_derivatives(base: &BaseSolution, aux: &AuxResults) -> OptimizerDerivatives {
    let (x, y) = (base.x, base.y);
    let n = base.xt.len();
    let (m0, m1) = (&aux.a_xx.optimizer, &aux.a_ee.optimizer);
    let (n0, n1) = (&aux.b_yy.optimizer, &aux.b_ee.optimizer);
    OptimizerDerivatives {
        x_x: (0..n).map(|l| base.xt[l] / x * (1.0 + m0[l])).collect(),
        x_eps: (0..n).map(|l| base.xt[l] / x * (x * base.f[l] + m1[l])).collect(),
        y_y: (0..n).map(|l| base.yt[l] / y * (1.0 + n0[l])).collect(),
        y_eps: (0..n).map(|l| -base.yt[l] / y * (y * base.f[l] - n1[l])).collect(),
    }
}

/// Residuals of the identities linking the primal and dual auxiliary problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    /// `a(x,x) b(y,y) - 1`.
    pub axx_byy: f64,
    /// `a(x,eps) b(y,y) - (x/y) b(y,eps)`.
    pub axe_byy: f64,
    /// `(y/x) a(eps,eps) + (x/y) b(eps,eps) - a(x,eps) b(y,eps)`.
    pub cross: f64,
    /// Largest leafwise residual of the primal-to-dual optimizer relations.
    pub primal_relations: f64,
    /// Largest leafwise residual of the dual-to-primal optimizer relations.
    pub dual_relations: f64,
    /// Largest one-step P-martingale defect among the nine products.
    pub products: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        [self.axx_byy, self.axe_byy, self.cross, self.primal_relations, self.dual_relations, self.products]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

pub fn check_identities(tree: &EventTree, base: &BaseSolution, aux: &AuxResults) -> IdentityReport {
    let (x, y) = (base.x, base.y);
    let (axx, aee, axe) = (aux.a_xx.value, aux.a_ee.value, aux.a_xe);
    let (byy, bee, bye) = (aux.b_yy.value, aux.b_ee.value, aux.b_ye);
    let (m0, m1) = (&aux.a_xx.optimizer, &aux.a_ee.optimizer);
    let (n0, n1) = (&aux.b_yy.optimizer, &aux.b_ee.optimizer);
    let mut primal_rel: f64 = 0.0;
    let mut dual_rel: f64 = 0.0;
    for l in 0..base.xt.len() {
        let (a, b, f) = (base.a[l], base.b[l], base.f[l]);
        let r1 = axx * (n0[l] + 1.0) - a * (m0[l] + 1.0);
        let r2 = axe * (n0[l] + 1.0) - x / y * (n1[l] - y * f) - a * (m1[l] + x * f);
        let r3 = byy * (1.0 + m0[l]) - b * (1.0 + n0[l]);
        let r4 = bye * (1.0 + m0[l]) - y / x * (x * f + m1[l]) - b * (-y * f + n1[l]);
        primal_rel = primal_rel.max(r1.abs()).max(r2.abs());
        dual_rel = dual_rel.max(r3.abs()).max(r4.abs());
    }
    let xh = &base.primal.wealth;
    let yh = &base.dual.deflator;
    let left: Vec<Vec<f64>> = vec![
        (0..tree.len()).map(|n| xh.value(n) * aux.a_xx.process.value(n)).collect(),
        (0..tree.len()).map(|n| xh.value(n) * aux.a_ee.process.value(n)).collect(),
        xh.values().to_vec(),
    ];
    let right: Vec<Vec<f64>> = vec![
        (0..tree.len()).map(|n| yh.value(n) * aux.b_yy.process.value(n)).collect(),
        (0..tree.len()).map(|n| yh.value(n) * aux.b_ee.process.value(n)).collect(),
        yh.values().to_vec(),
    ];
    let scale = x * y;
    let mut products: f64 = 0.0;
    for l in &left {
        for r in &right {
            for node in tree.internal_nodes() {
                let e: f64 = tree.children(node).map(|c| tree.prob(c) * l[c] * r[c]).sum();
                products = products.max((e - l[node] * r[node]).abs() / scale);
            }
        }
    }
    IdentityReport {
        axx_byy: axx * byy - 1.0,
        axe_byy: axe * byy - x / y * bye,
        cross: y / x * aee + x / y * bee - axe * bye,
        primal_relations: primal_rel,
        dual_relations: dual_rel,
        products,
    }
}

/// Full second-order expansion around `(x, 0)`.
#[derive(Debug, Clone)]
pub struct ExpansionReport {
    pub base: BaseSolution,
    pub basis: MartingaleSpaceBasis,
    pub aux: AuxResults,
    pub gradient_u: [f64; 2],
    pub gradient_v: [f64; 2],
    pub hessian_u: Mat2,
    pub hessian_v: Mat2,
    pub derivatives: OptimizerDerivatives,
}

pub fn expand(m: &MarketModel, u: &Utility, x: f64) -> Result<ExpansionReport> {
    let base = base_solution(m, u, x)?;
    let basis = build_bases(m, &base)?;
    let aux = solve_aux(m.tree(), &basis, &base);
    let (gradient_u, gradient_v) = gradient(&base);
    let (hessian_u, hessian_v) = hessians(&aux, base.x, base.y);
    let derivatives = optimizer_derivatives(&base, &aux);
    Ok(ExpansionReport { base, basis, aux, gradient_u, gradient_v, hessian_u, hessian_v, derivatives })
}

impl ExpansionReport {
    /// Second-order Taylor polynomial of `u` around `(x, 0)`.
    pub fn quadratic_u(&self, dx: f64, eps: f64) -> f64 {
        let g = self.gradient_u;
        let h = self.hessian_u;
        self.base.primal.value
            + dx * g[0]
            + eps * g[1]
            + 0.5 * (h[0][0] * dx * dx + 2.0 * h[0][1] * dx * eps + h[1][1] * eps * eps)
    }

    /// Second-order Taylor polynomial of `v` around `(y, 0)`.
    pub fn quadratic_v(&self, dy: f64, eps: f64) -> f64 {
        let g = self.gradient_v;
        let h = self.hessian_v;
        self.base.dual.value
            + dy * g[0]
            + eps * g[1]
            + 0.5 * (h[0][0] * dy * dy + 2.0 * h[0][1] * dy * eps + h[1][1] * eps * eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn basis_dimensions() {
        let u = Utility::log();
        let m = instances::binomial(1.0);
        let rep = expand(&m, &u, 1.0).unwrap();
        assert_eq!((rep.basis.primal_dim(), rep.basis.dual_dim()), (1, 0));
        let m = instances::t1(1.0);
        let rep = expand(&m, &u, 1.0).unwrap();
        assert_eq!((rep.basis.primal_dim(), rep.basis.dual_dim()), (1, 1));
        let (mean, cross) = rep.basis.orthogonality_defect(m.tree());
        assert!(mean < 1e-15 && cross < 1e-15);
    }

    #[test]
    fn t1_log_hand_values() {
        let m = instances::t1(1.0);
        let rep = expand(&m, &Utility::log(), 1.0).unwrap();
        assert!((rep.aux.a_xx.value - 1.0).abs() < 1e-14);
        assert!((rep.aux.a_ee.value + 1.0 / 150.0).abs() < 1e-14);
        assert!(rep.aux.a_xe.abs() < 1e-14);
        assert!((rep.aux.b_yy.value - 1.0).abs() < 1e-14);
        assert!(rep.gradient_u[1].abs() < 1e-15);
        assert!((rep.hessian_u[0][0] + 1.0).abs() < 1e-14);
        assert!((rep.hessian_u[1][1] - 1.0 / 150.0).abs() < 1e-14);
        for (a, f) in rep.derivatives.x_eps.iter().zip(&rep.base.f) {
            assert!((a - f).abs() < 1e-14);
        }
        assert!(check_identities(m.tree(), &rep.base, &rep.aux).max() < 1e-12);
    }

    #[test]
    fn zero_perturbation() {
        let m = instances::trinomial_two_period();
        let m = m.with_theta(crate::PredictableProcess::constant(m.tree(), &[1.0, 0.0])).unwrap();
        let rep = expand(&m, &instances::mixture_utility(), 1.0).unwrap();
        assert!(rep.aux.a_ee.value.abs() < 1e-15);
        assert!(rep.aux.a_xe.abs() < 1e-15);
        assert!(rep.aux.a_ee.optimizer.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(rep.gradient_u[1], 0.0);
    }

    #[test]
    fn dense_and_nodewise_projections_agree() {
        let m = instances::trinomial_two_period();
        let rep = expand(&m, &instances::mixture_utility(), 1.0).unwrap();
        let base = &rep.base;
        let t: Vec<f64> = (0..base.a.len()).map(|l| -base.f[l] * (base.a[l] - 1.0) / base.a[l]).collect();
        let w: Vec<f64> = base.r.iter().zip(&base.a).map(|(r, a)| r * a).collect();
        let (dense, _, res, _) = weighted_projection(m.tree(), &rep.basis.primal, &base.r, &base.a, &t);
        let (dp, _) = projection_by_nodes(m.tree(), &rep.basis.primal, &w, &t);
        assert!(res < 1e-12);
        for (a, b) in dense.iter().zip(&dp) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
