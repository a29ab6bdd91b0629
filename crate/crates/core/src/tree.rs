//! Finite filtered probability space stored as a breadth-first node array.
//!
//! Nodes are numbered breadth-first by `(time, parent order)`, so the children
//! of every node occupy a contiguous index range and all leaves sit at the end
//! of the array. Transition probabilities are stored per node (probability of
//! reaching the node from its parent); the root carries probability one.

use std::ops::Range;

use crate::error::{Error, Result};

/// Tolerance for probability normalization.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EventTree {
    parent: Vec<Option<usize>>,
    time: Vec<usize>,
    prob: Vec<f64>,
    children: Vec<Range<usize>>,
    uncond: Vec<f64>,
    steps: usize,
    first_leaf: usize,
}

impl EventTree {
    /// Builds a tree from breadth-first parent links and conditional
    /// probabilities. `parents[0]` must be `None`; every other parent index
    /// must be smaller than the child index and nondecreasing in the child
    /// index.
    pub fn from_parents(parents: &[Option<usize>], probs: &[f64]) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::InvalidTree("empty node list".into()));
        }
        if probs.len() != n {
            return Err(Error::Dimension(format!(
                "{} parents but {} probabilities",
                n,
                probs.len()
            )));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        let mut time = vec![0usize; n];
        let mut children = vec![0..0; n];
        let mut last_parent = 0usize;
        for i in 1..n {
            let p = parents[i]
                .ok_or_else(|| Error::InvalidTree(format!("node {i} has no parent")))?;
            if p >= i {
                return Err(Error::InvalidTree(format!("node {i} has parent {p} >= {i}")));
            }
            if p < last_parent {
                return Err(Error::InvalidTree(format!(
                    "node {i}: parents must be nondecreasing in breadth-first order"
                )));
            }
            if children[p].is_empty() {
                children[p] = i..i + 1;
            } else if children[p].end == i {
                children[p].end = i + 1;
            } else {
                return Err(Error::InvalidTree(format!("children of node {p} are not contiguous")));
            }
            last_parent = p;
            time[i] = time[p] + 1;
        }
        for i in 1..n {
            if time[i] < time[i - 1] {
                return Err(Error::InvalidTree("nodes are not ordered by time".into()));
            }
        }
        let steps = time.iter().copied().max().unwrap_or(0);
        let mut prob = probs.to_vec();
        prob[0] = 1.0;
        for (node, range) in children.iter().enumerate() {
            if range.is_empty() {
                if time[node] != steps {
                    return Err(Error::InvalidTree(format!(
                        "leaf {node} at time {} but the horizon is {steps}",
                        time[node]
                    )));
                }
                continue;
            }
            let mut sum = 0.0;
            for c in range.clone() {
                let p = prob[c];
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidTree(format!(
                        "transition probability {p} of node {c} is outside (0, 1]"
                    )));
                }
                sum += p;
            }
            let dev = (sum - 1.0).abs();
            if dev >= PROB_TOL {
                return Err(Error::InvalidTree(format!(
                    "children of node {node} have probabilities summing to {sum}"
                )));
            }
            if dev > 0.0 {
                for c in range.clone() {
                    prob[c] /= sum;
                }
            }
        }
        let mut uncond = vec![0.0; n];
        uncond[0] = 1.0;
        for i in 1..n {
            uncond[i] = uncond[parents[i].unwrap()] * prob[i];
        }
        let first_leaf = (0..n).find(|&i| children[i].is_empty()).unwrap();
        if (first_leaf..n).any(|i| !children[i].is_empty()) {
            return Err(Error::InvalidTree("leaves must form the tail of the node array".into()));
        }
        Ok(Self {
            parent: parents.to_vec(),
            time,
            prob,
            children,
            uncond,
            steps,
            first_leaf,
        })
    }

    /// Recombination-free tree in which every node at time `< steps` has the
    /// same branching probabilities.
    pub fn uniform(steps: usize, branch_probs: &[f64]) -> Result<Self> {
        let mut parents = vec![None];
        let mut probs = vec![1.0];
        let mut frontier = vec![0usize];
        for _ in 0..steps {
            let mut next = Vec::with_capacity(frontier.len() * branch_probs.len());
            for &p in &frontier {
                for &q in branch_probs {
                    next.push(parents.len());
                    parents.push(Some(p));
                    probs.push(q);
                }
            }
            frontier = next;
        }
        Self::from_parents(&parents, &probs)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn time(&self, node: usize) -> usize {
        self.time[node]
    }

    /// Conditional probability of reaching `node` from its parent.
    pub fn prob(&self, node: usize) -> f64 {
        self.prob[node]
    }

    /// Unconditional probability of the path from the root to `node`.
    pub fn path_prob(&self, node: usize) -> f64 {
        self.uncond[node]
    }

    pub fn children(&self, node: usize) -> Range<usize> {
        self.children[node].clone()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    pub fn leaves(&self) -> Range<usize> {
        self.first_leaf..self.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.len() - self.first_leaf
    }

    pub fn leaf_index(&self, node: usize) -> usize {
        debug_assert!(node >= self.first_leaf);
        node - self.first_leaf
    }

    /// Non-leaf nodes in breadth-first order.
    pub fn internal_nodes(&self) -> Range<usize> {
        0..self.first_leaf
    }

    /// Unconditional leaf probabilities, in leaf order.
    pub fn leaf_probs(&self) -> Vec<f64> {
        self.uncond[self.first_leaf..].to_vec()
    }

    /// Nodes on the path from the root to `node`, root first.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// The child of `ancestor` lying on the path to `node`, if any.
    pub fn child_towards(&self, ancestor: usize, node: usize) -> Option<usize> {
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            if p == ancestor {
                return Some(cur);
            }
            if p < ancestor {
                return None;
            }
            cur = p;
        }
        None
    }

    /// Sums leaf masses up the tree: `out[n] = sum of leaf_mass over leaves below n`.
    pub fn aggregate(&self, leaf_mass: &[f64]) -> Vec<f64> {
        assert_eq!(leaf_mass.len(), self.n_leaves());
        let mut out = vec![0.0; self.len()];
        out[self.first_leaf..].copy_from_slice(leaf_mass);
        for node in (1..self.len()).rev() {
            let p = self.parent[node].unwrap();
            out[p] += out[node];
        }
        out
    }

    /// Conditional expectation `E^Q[Z | F_n]` at every node for the leaf
    /// payoff `payoff` under the measure with unconditional leaf weights
    /// `weights` (not necessarily normalized).
    pub fn conditional_expectation(&self, weights: &[f64], payoff: &[f64]) -> Vec<f64> {
        assert_eq!(payoff.len(), self.n_leaves());
        let weighted: Vec<f64> = weights.iter().zip(payoff).map(|(w, z)| w * z).collect();
        let num = self.aggregate(&weighted);
        let den = self.aggregate(weights);
        num.iter()
            .zip(&den)
            .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
            .collect()
    }

    /// `E^P[Z | F_n]` under the tree's own probabilities.
    pub fn expectation_process(&self, payoff: &[f64]) -> Vec<f64> {
        self.conditional_expectation(&self.uncond[self.first_leaf..], payoff)
    }

    /// `E^P[Z]` for a leaf payoff.
    pub fn expect(&self, payoff: &[f64]) -> f64 {
        self.uncond[self.first_leaf..]
            .iter()
            .zip(payoff)
            .map(|(p, z)| p * z)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_trinomial_layout() {
        let t = EventTree::uniform(2, &[0.25, 0.5, 0.25]).unwrap();
        assert_eq!(t.len(), 13);
        assert_eq!(t.n_leaves(), 9);
        assert_eq!(t.children(0), 1..4);
        assert_eq!(t.children(2), 7..10);
        assert_eq!(t.time(12), 2);
        let total: f64 = t.leaf_probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(t.path(8), vec![0, 2, 8]);
        assert_eq!(t.child_towards(0, 8), Some(2));
        assert_eq!(t.child_towards(1, 8), None);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let err = EventTree::from_parents(&[None, Some(0), Some(0)], &[1.0, 0.5, 0.4]);
        assert!(matches!(err, Err(Error::InvalidTree(_))));
        let err = EventTree::from_parents(&[None, Some(0), Some(0)], &[1.0, 1.2, -0.2]);
        assert!(err.is_err());
    }

    #[test]
    fn renormalizes_tiny_deviation() {
        let third = 0.333_333_333_333_333_3;
        let t = EventTree::from_parents(&[None, Some(0), Some(0), Some(0)], &[1.0, third, third, third])
            .unwrap();
        let s: f64 = t.leaf_probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_unbalanced_depth() {
        // node 1 is a leaf at time 1 while node 3 lives at time 2
        let err = EventTree::from_parents(&[None, Some(0), Some(0), Some(2)], &[1.0, 0.5, 0.5, 1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn conditional_expectation_is_tower_consistent() {
        let t = EventTree::uniform(2, &[0.3, 0.7]).unwrap();
        let payoff: Vec<f64> = (0..t.n_leaves()).map(|i| i as f64).collect();
        let e = t.expectation_process(&payoff);
        assert!((e[0] - t.expect(&payoff)).abs() < 1e-14);
        for n in t.internal_nodes() {
            let s: f64 = t.children(n).map(|c| t.prob(c) * e[c]).sum();
            assert!((s - e[n]).abs() < 1e-14);
        }
    }
}
