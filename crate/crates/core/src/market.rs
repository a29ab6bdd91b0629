//! Market model on a scenario tree: returns `R = (0, rho^1, ..., rho^d)`,
//! the perturbation direction `theta`, and the numeraire family
//! `N^eps = E((eps theta) . R)`.

use crate::error::{Error, Result};
use crate::process::{
    quadratic_covariation, stochastic_exponential, stochastic_integral, AdaptedProcess,
    PredictableProcess,
};
use crate::tree::EventTree;

const THETA_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MarketModel {
    tree: EventTree,
    returns: AdaptedProcess,
    theta: PredictableProcess,
    eps0: f64,
    max_jump: f64,
}

/// Leafwise perturbation statistics `F = Rbar_T` and `G = [Rbar, Rbar]_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationStats {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Largest `c` for which `E[exp(c(|F| + G))]` is finite; always infinite on a finite tree.
    pub c_max: f64,
}

impl PerturbationStats {
    /// `E^Q[exp(c(|F| + G))]` for leaf weights `weights` summing to one.
    pub fn exp_moment(&self, weights: &[f64], c: f64) -> f64 {
        weights
            .iter()
            .zip(self.f.iter().zip(&self.g))
            .map(|(w, (f, g))| w * (c * (f.abs() + g)).exp())
            .sum()
    }
}

impl MarketModel {
    /// Validates and assembles a model. `eps0 = None` selects the largest
    /// value allowed by the jump bound `|d Rbar| <= 1/(2 eps0)`.
    pub fn new(
        tree: EventTree,
        returns: AdaptedProcess,
        theta: PredictableProcess,
        eps0: Option<f64>,
    ) -> Result<Self> {
        let dim = returns.dim();
        if dim < 2 {
            return Err(Error::InvalidModel("at least one risky asset is required".into()));
        }
        if returns.len() != tree.len() {
            return Err(Error::Dimension("returns are not defined on every node".into()));
        }
        if theta.dim() != dim {
            return Err(Error::Dimension(format!(
                "theta has dimension {} but returns have {dim}",
                theta.dim()
            )));
        }
        if returns.at(0).iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidModel("returns must start at 0".into()));
        }
        for node in 0..tree.len() {
            if returns.at(node)[0] != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "bank component of the returns is nonzero at node {node}"
                )));
            }
            if node > 0 {
                let inc = returns.increment(&tree, node);
                if let Some(i) = inc.iter().skip(1).position(|v| *v <= -1.0) {
                    return Err(Error::InvalidModel(format!(
                        "return increment of asset {} at node {node} is <= -1",
                        i + 1
                    )));
                }
            }
        }
        for node in tree.internal_nodes() {
            let s: f64 = theta.at_node(node).iter().sum();
            if (s - 1.0).abs() > THETA_TOL {
                return Err(Error::InvalidModel(format!(
                    "theta components sum to {s} at node {node}"
                )));
            }
        }
        let mut model = Self {
            tree,
            returns,
            theta,
            eps0: f64::INFINITY,
            max_jump: 0.0,
        };
        let max_jump = (1..model.tree.len())
            .map(|n| model.theta_jump(n).abs())
            .fold(0.0, f64::max);
        let eps0_max = if max_jump > 0.0 {
            1.0 / (2.0 * max_jump)
        } else {
            f64::INFINITY
        };
        let eps0 = match eps0 {
            None => eps0_max,
            Some(e) => {
                if !(e > 0.0) {
                    return Err(Error::InvalidModel(format!("eps0 = {e} must be positive")));
                }
                if e > eps0_max * (1.0 + 1e-12) {
                    return Err(Error::InvalidModel(format!(
                        "eps0 = {e} exceeds the jump bound limit {eps0_max}"
                    )));
                }
                e
            }
        };
        model.eps0 = eps0;
        model.max_jump = max_jump;
        Ok(model)
    }

    /// Builds the model from per-node risky return increments (`d` entries;
    /// the root entry is ignored).
    pub fn from_increments(
        tree: EventTree,
        increments: &[Vec<f64>],
        theta: PredictableProcess,
        eps0: Option<f64>,
    ) -> Result<Self> {
        if increments.len() != tree.len() {
            return Err(Error::Dimension("one increment vector per node is required".into()));
        }
        let d = increments.get(1).map(|v| v.len()).unwrap_or(0);
        let mut values = vec![0.0; tree.len() * (d + 1)];
        for node in 1..tree.len() {
            if increments[node].len() != d {
                return Err(Error::Dimension(format!("node {node}: expected {d} return increments")));
            }
            let p = tree.parent(node).unwrap();
            for i in 0..d {
                values[node * (d + 1) + 1 + i] = values[p * (d + 1) + 1 + i] + increments[node][i];
            }
        }
        let returns = AdaptedProcess::from_flat(d + 1, values)?;
        Self::new(tree, returns, theta, eps0)
    }

    /// Same market with a new perturbation direction (eps0 recomputed).
    pub fn with_theta(&self, theta: PredictableProcess) -> Result<Self> {
        Self::new(self.tree.clone(), self.returns.clone(), theta, None)
    }

    pub fn tree(&self) -> &EventTree {
        &self.tree
    }

    /// Number of risky assets `d`.
    pub fn assets(&self) -> usize {
        self.returns.dim() - 1
    }

    pub fn returns(&self) -> &AdaptedProcess {
        &self.returns
    }

    pub fn theta(&self) -> &PredictableProcess {
        &self.theta
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// `max |d Rbar|` over all nodes.
    pub fn max_jump(&self) -> f64 {
        self.max_jump
    }

    /// Return increment `dR` (length `d + 1`) into `node`.
    pub fn dr(&self, node: usize) -> Vec<f64> {
        self.returns.increment(&self.tree, node)
    }

    /// `theta^T dR` on the edge into `node`.
    fn theta_jump(&self, node: usize) -> f64 {
        let th = self.theta.for_child(&self.tree, node);
        th.iter().zip(self.dr(node)).map(|(a, b)| a * b).sum()
    }

    pub fn check_eps(&self, eps: f64) -> Result<()> {
        if eps.abs() < self.eps0 {
            Ok(())
        } else {
            Err(Error::Admissibility { eps, eps0: self.eps0 })
        }
    }

    /// `Rbar = -theta . R`.
    pub fn bar_r(&self) -> AdaptedProcess {
        let th = stochastic_integral(&self.tree, &self.theta, &self.returns)
            .expect("theta and returns share a dimension");
        th.map(|v| -v)
    }

    /// `N^eps = E((eps theta) . R)`.
    pub fn numeraire(&self, eps: f64) -> Result<AdaptedProcess> {
        self.check_eps(eps)?;
        let n = self.numeraire_unchecked(eps);
        if let Some(node) = (0..self.tree.len()).find(|&k| !(n.value(k) > 0.0)) {
            return Err(Error::InvariantViolation(format!(
                "numeraire is {} at node {node} for eps = {eps}",
                n.value(node)
            )));
        }
        Ok(n)
    }

    /// `E((eps theta) . R)` without admissibility or positivity checks.
    pub fn numeraire_unchecked(&self, eps: f64) -> AdaptedProcess {
        let x = self.bar_r().map(|v| -eps * v);
        stochastic_exponential(&self.tree, &x).expect("scalar process")
    }

    /// Undiscounted prices `(1, E(rho^1), ..., E(rho^d))`.
    pub fn prices(&self) -> AdaptedProcess {
        let dim = self.returns.dim();
        let mut values = vec![1.0; self.tree.len() * dim];
        for node in 1..self.tree.len() {
            let p = self.tree.parent(node).unwrap();
            let dr = self.dr(node);
            for i in 1..dim {
                values[node * dim + i] = values[p * dim + i] * (1.0 + dr[i]);
            }
        }
        AdaptedProcess::from_flat(dim, values).expect("consistent shape")
    }

    /// `S^eps = (1/N^eps, E(rho^1)/N^eps, ..., E(rho^d)/N^eps)`.
    pub fn perturbed_prices(&self, eps: f64) -> Result<AdaptedProcess> {
        let n = self.numeraire(eps)?;
        let s = self.prices();
        AdaptedProcess::from_fn(&self.tree, s.dim(), |node| {
            s.at(node).iter().map(|v| v / n.value(node)).collect()
        })
    }

    pub fn perturbation_statistics(&self) -> PerturbationStats {
        let bar = self.bar_r();
        let qv = quadratic_covariation(&self.tree, &bar, &bar).expect("scalar");
        PerturbationStats {
            f: bar.terminal(&self.tree),
            g: qv.terminal(&self.tree),
            c_max: f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn eps0_is_jump_bound() {
        let m = instances::t1(1.0);
        assert!((m.eps0() - 5.0).abs() < 1e-12);
        let bank = instances::t1(0.0);
        assert!(bank.eps0().is_infinite());
    }

    #[test]
    fn rejects_eps0_above_bound() {
        let m = instances::t1(1.0);
        let err = MarketModel::new(m.tree().clone(), m.returns().clone(), m.theta().clone(), Some(6.0));
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        assert!(MarketModel::new(m.tree().clone(), m.returns().clone(), m.theta().clone(), Some(2.0)).is_ok());
    }

    #[test]
    fn rejects_theta_not_summing_to_one() {
        let m = instances::t1(1.0);
        let bad = PredictableProcess::constant(m.tree(), &[0.5, 1.0]);
        assert!(m.with_theta(bad).is_err());
    }

    #[test]
    fn numeraire_examples() {
        let m = instances::t1(1.0);
        let n0 = m.numeraire(0.0).unwrap();
        assert!(n0.values().iter().all(|v| *v == 1.0));
        let n = m.numeraire(0.5).unwrap();
        for (a, b) in n.terminal(m.tree()).iter().zip([1.05, 1.0, 0.95]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(m.numeraire(5.0), Err(Error::Admissibility { .. })));
        let bank = instances::t1(0.0);
        let n = bank.numeraire(3.7).unwrap();
        assert!(n.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn perturbed_price_examples() {
        let m = instances::t1(1.0);
        let s0 = m.perturbed_prices(0.0).unwrap();
        assert_eq!(s0, m.prices());
        let s = m.perturbed_prices(1.0).unwrap();
        for leaf in m.tree().leaves() {
            assert!((s.at(leaf)[1] - 1.0).abs() < 1e-15);
        }
        let s = m.perturbed_prices(0.5).unwrap();
        for (leaf, want) in m.tree().leaves().zip([1.0 / 1.05, 1.0, 1.0 / 0.95]) {
            assert!((s.at(leaf)[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn statistics_examples() {
        let bank = instances::t1(0.0);
        let st = bank.perturbation_statistics();
        assert!(st.f.iter().chain(&st.g).all(|v| *v == 0.0));
        let m = instances::t1(1.0);
        let st = m.perturbation_statistics();
        for (a, b) in st.f.iter().zip([-0.1, 0.0, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in st.g.iter().zip([0.01, 0.0, 0.01]) {
            assert!((a - b).abs() < 1e-16);
        }
        let p = m.tree().leaf_probs();
        let want = ((0.11f64).exp() + 1.0 + (0.11f64).exp()) / 3.0;
        assert!((st.exp_moment(&p, 1.0) - want).abs() < 1e-14);
        assert!(st.c_max.is_infinite());
    }
}
