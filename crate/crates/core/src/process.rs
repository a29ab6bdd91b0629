//! Adapted and predictable processes on an [`EventTree`] and the discrete
//! semimartingale calculus used throughout the crate.
//!
//! Conventions: stochastic integrals are predictable Riemann sums, the
//! stochastic exponential is the pure-jump product `prod (1 + dX)`, and the
//! quadratic covariation is the sum of jump products. Continuous martingale
//! parts are identically zero on a tree.

use crate::error::{Error, Result};
use crate::tree::EventTree;

/// Node-indexed process with a fixed vector dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    dim: usize,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(tree: &EventTree, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; tree.len() * dim],
        }
    }

    pub fn constant(tree: &EventTree, value: f64) -> Self {
        Self {
            dim: 1,
            values: vec![value; tree.len()],
        }
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        Self { dim: 1, values }
    }

    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values cannot be split into vectors of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_fn(tree: &EventTree, dim: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(tree.len() * dim);
        for node in 0..tree.len() {
            let v = f(node);
            if v.len() != dim {
                return Err(Error::Dimension(format!("node {node}: expected {dim} components")));
            }
            values.extend(v);
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// Value of a scalar process.
    pub fn value(&self, node: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.values[node]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, i: usize) -> AdaptedProcess {
        AdaptedProcess::scalar(self.values.iter().skip(i).step_by(self.dim).copied().collect())
    }

    /// Increment `X_n - X_parent(n)`; zero at the root.
    pub fn increment(&self, tree: &EventTree, node: usize) -> Vec<f64> {
        match tree.parent(node) {
            None => vec![0.0; self.dim],
            Some(p) => self.at(node).iter().zip(self.at(p)).map(|(a, b)| a - b).collect(),
        }
    }

    /// Leaf values of a scalar process, in leaf order.
    pub fn terminal(&self, tree: &EventTree) -> Vec<f64> {
        debug_assert_eq!(self.dim, 1);
        self.values[tree.leaves().start..].to_vec()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(Error::Dimension("processes have different shapes".into()));
        }
        Ok(Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Process measurable with respect to the parent node.
///
/// Values are stored on the parent, so every child of a node sees the same
/// vector and sibling equality holds by construction. Leaf entries are unused
/// and kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableProcess {
    dim: usize,
    values: Vec<f64>,
}

impl PredictableProcess {
    pub fn zeros(tree: &EventTree, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; tree.len() * dim],
        }
    }

    /// Same vector at every decision node.
    pub fn constant(tree: &EventTree, value: &[f64]) -> Self {
        let mut out = Self::zeros(tree, value.len());
        for n in tree.internal_nodes() {
            out.at_node_mut(n).copy_from_slice(value);
        }
        out
    }

    pub fn from_fn(tree: &EventTree, dim: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Result<Self> {
        let mut out = Self::zeros(tree, dim);
        for n in tree.internal_nodes() {
            let v = f(n);
            if v.len() != dim {
                return Err(Error::Dimension(format!("node {n}: expected {dim} components")));
            }
            out.at_node_mut(n).copy_from_slice(&v);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Value chosen at decision node `node`, applied to the increments into its children.
    pub fn at_node(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn at_node_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// Value seen by a non-root node (the one fixed at its parent).
    pub fn for_child(&self, tree: &EventTree, child: usize) -> &[f64] {
        self.at_node(tree.parent(child).expect("root has no predictable value"))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled_add(&self, scale: f64, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension("predictable processes differ in dimension".into()));
        }
        Ok(Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + scale * b).collect(),
        })
    }
}

/// `(H . X)_n = sum over path of H^T (X_k - X_parent(k))`, zero at the root.
pub fn stochastic_integral(
    tree: &EventTree,
    h: &PredictableProcess,
    x: &AdaptedProcess,
) -> Result<AdaptedProcess> {
    if h.dim() != x.dim() {
        return Err(Error::Dimension(format!(
            "integrand has dimension {} but integrator has {}",
            h.dim(),
            x.dim()
        )));
    }
    if x.len() != tree.len() {
        return Err(Error::Dimension("integrator is not defined on this tree".into()));
    }
    let mut out = vec![0.0; tree.len()];
    for node in 1..tree.len() {
        let p = tree.parent(node).unwrap();
        let inc: f64 = h
            .at_node(p)
            .iter()
            .zip(x.at(node).iter().zip(x.at(p)))
            .map(|(hh, (a, b))| hh * (a - b))
            .sum();
        out[node] = out[p] + inc;
    }
    Ok(AdaptedProcess::scalar(out))
}

/// `E(X)_n = prod over path of (1 + dX)`. Negative values are permitted.
pub fn stochastic_exponential(tree: &EventTree, x: &AdaptedProcess) -> Result<AdaptedProcess> {
    if x.dim() != 1 {
        return Err(Error::Dimension("stochastic exponential needs a scalar process".into()));
    }
    let mut out = vec![1.0; tree.len()];
    for node in 1..tree.len() {
        let p = tree.parent(node).unwrap();
        out[node] = out[p] * (1.0 + x.value(node) - x.value(p));
    }
    Ok(AdaptedProcess::scalar(out))
}

/// `[X, Y]_n = sum over path of dX dY` for scalar processes.
pub fn quadratic_covariation(
    tree: &EventTree,
    x: &AdaptedProcess,
    y: &AdaptedProcess,
) -> Result<AdaptedProcess> {
    if x.dim() != 1 || y.dim() != 1 {
        return Err(Error::Dimension("quadratic covariation needs scalar processes".into()));
    }
    let mut out = vec![0.0; tree.len()];
    for node in 1..tree.len() {
        let p = tree.parent(node).unwrap();
        out[node] = out[p] + (x.value(node) - x.value(p)) * (y.value(node) - y.value(p));
    }
    Ok(AdaptedProcess::scalar(out))
}
