//! JSON market specification files.
//!
//! ```json
//! {
//!   "steps": 1,
//!   "assets": 1,
//!   "eps0": 2.0,
//!   "utility": { "kind": "power", "params": 0.5 },
//!   "root": {
//!     "theta": [0.0, 1.0],
//!     "branches": [ { "prob": 0.5, "dR": [0.2] }, { "prob": 0.5, "dR": [-0.1] } ]
//!   }
//! }
//! ```
//!
//! `theta` is required at every node with branches. Saving writes the
//! canonical pretty-printed form, so load followed by save of a canonical
//! file reproduces it byte for byte.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::process::PredictableProcess;
use crate::tree::EventTree;
use crate::utility::{Utility, UtilityKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub steps: usize,
    pub assets: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    pub root: RootSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<BranchSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub prob: f64,
    #[serde(rename = "dR")]
    pub dr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<BranchSpec>,
}

impl UtilitySpec {
    pub fn to_utility(&self) -> Result<Utility> {
        let bad = |msg: &str| Error::Format(format!("utility '{}': {msg}", self.kind));
        let kind = match self.kind.as_str() {
            "log" => UtilityKind::Log,
            "power" => UtilityKind::Power(self.params.as_f64().ok_or_else(|| bad("params must be a number"))?),
            "exponential" => UtilityKind::Exponential(self.params.as_f64().unwrap_or(1.0)),
            "mixture" => {
                let arr = self.params.as_array().ok_or_else(|| bad("params must be [[w, p], ...]"))?;
                let mut terms = Vec::with_capacity(arr.len());
                for t in arr {
                    let pair = t.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("terms are [w, p] pairs"))?;
                    let w = pair[0].as_f64().ok_or_else(|| bad("weight must be a number"))?;
                    let p = pair[1].as_f64().ok_or_else(|| bad("exponent must be a number"))?;
                    terms.push((w, p));
                }
                UtilityKind::Mixture(terms)
            }
            other => return Err(Error::Format(format!("unknown utility kind '{other}'"))),
        };
        Utility::new(kind, self.c1, self.c2)
    }

    pub fn from_utility(u: &Utility) -> Self {
        let (kind, params) = match u.kind() {
            UtilityKind::Log => ("log", Value::Null),
            UtilityKind::Power(p) => ("power", Value::from(*p)),
            UtilityKind::Exponential(a) => ("exponential", Value::from(*a)),
            UtilityKind::Mixture(t) => (
                "mixture",
                Value::Array(t.iter().map(|(w, p)| Value::from(vec![*w, *p])).collect()),
            ),
        };
        Self { kind: kind.into(), params, c1: Some(u.c1()), c2: Some(u.c2()) }
    }
}

impl MarketFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form.
    pub fn to_canonical(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical()?)?;
        Ok(())
    }

    pub fn utility(&self) -> Result<Option<Utility>> {
        self.utility.as_ref().map(|u| u.to_utility()).transpose()
    }

    /// Builds the market model (breadth-first node numbering).
    pub fn to_model(&self) -> Result<MarketModel> {
        let d = self.assets;
        let mut parents = vec![None];
        let mut probs = vec![1.0];
        let mut inc = vec![vec![0.0; d]];
        let mut thetas: Vec<Option<Vec<f64>>> = vec![self.root.theta.clone()];
        let mut queue: VecDeque<(usize, &[BranchSpec])> = VecDeque::new();
        queue.push_back((0, &self.root.branches));
        while let Some((node, branches)) = queue.pop_front() {
            for b in branches {
                if b.dr.len() != d {
                    return Err(Error::Format(format!(
                        "branch under node {node} has {} return increments, expected {d}",
                        b.dr.len()
                    )));
                }
                let id = parents.len();
                parents.push(Some(node));
                probs.push(b.prob);
                inc.push(b.dr.clone());
                thetas.push(b.theta.clone());
                queue.push_back((id, &b.branches));
            }
        }
        let tree = EventTree::from_parents(&parents, &probs)?;
        if tree.steps() != self.steps {
            return Err(Error::Format(format!(
                "file declares {} steps but the tree has {}",
                self.steps,
                tree.steps()
            )));
        }
        let mut theta = PredictableProcess::zeros(&tree, d + 1);
        for node in tree.internal_nodes() {
            let t = thetas[node]
                .as_ref()
                .ok_or_else(|| Error::Format(format!("theta missing at node {node}")))?;
            if t.len() != d + 1 {
                return Err(Error::Format(format!(
                    "theta at node {node} has {} components, expected {}",
                    t.len(),
                    d + 1
                )));
            }
            theta.at_node_mut(node).copy_from_slice(t);
        }
        MarketModel::from_increments(tree, &inc, theta, self.eps0)
    }

    /// Canonical file for a model (eps0 written only when finite).
    pub fn from_model(m: &MarketModel, utility: Option<&Utility>) -> Self {
        let tree = m.tree();
        fn build(m: &MarketModel, node: usize) -> BranchSpec {
            let tree = m.tree();
            BranchSpec {
                prob: tree.prob(node),
                dr: m.dr(node)[1..].to_vec(),
                theta: (!tree.is_leaf(node)).then(|| m.theta().at_node(node).to_vec()),
                branches: tree.children(node).map(|c| build(m, c)).collect(),
            }
        }
        Self {
            steps: tree.steps(),
            assets: m.assets(),
            eps0: m.eps0().is_finite().then(|| m.eps0()),
            utility: utility.map(UtilitySpec::from_utility),
            root: RootSpec {
                theta: Some(m.theta().at_node(0).to_vec()),
                branches: tree.children(0).map(|c| build(m, c)).collect(),
            },
        }
    }
}
