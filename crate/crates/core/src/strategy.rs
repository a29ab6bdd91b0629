//! Nearly optimal wealth processes for the perturbed problems.
//!
//! On a tree the continuous part of the returns vanishes, so every
//! numéraire-change formula reduces to its jump term.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sym_pinv;
use crate::market::MarketModel;
use crate::process::{stochastic_exponential, stochastic_integral, AdaptedProcess, PredictableProcess};
use crate::sensitivity::ExpansionReport;
use crate::tree::EventTree;
use crate::utility::Utility;

/// Predictable characteristics of the return process with truncation
/// `h(x) = x 1{|x| <= 1}` (Euclidean norm).
#[derive(Debug, Clone)]
pub struct Characteristics {
    /// Drift `B_t = sum E[dR 1{|dR| <= 1} | F_{t-1}]`.
    pub drift: AdaptedProcess,
    /// Continuous covariation, identically zero.
    pub continuous: AdaptedProcess,
    /// `(x 1{|x| <= 1}) * (mu - nu)`.
    pub small_jumps: AdaptedProcess,
    /// `(x 1{|x| > 1}) * mu`.
    pub large_jumps: AdaptedProcess,
    /// Increasing clock `A` with `dA = sum_i |dB^i| + E[min(1, |dR|^2) | F_{t-1}]`.
    pub clock: AdaptedProcess,
    /// `b = dB/dA` at each decision node (zero where `dA = 0`).
    pub drift_density: PredictableProcess,
    /// Jump law density `eta = p(child)/dA` for every non-root node.
    pub jump_density: Vec<f64>,
}

pub fn characteristics(m: &MarketModel) -> Characteristics {
    let tree = m.tree();
    let dim = m.assets() + 1;
    let small = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt() <= 1.0;
    let mut drift = AdaptedProcess::zeros(tree, dim);
    let mut comp = AdaptedProcess::zeros(tree, dim);
    let mut large = AdaptedProcess::zeros(tree, dim);
    let mut clock = vec![0.0; tree.len()];
    let mut density = PredictableProcess::zeros(tree, dim);
    let mut eta = vec![0.0; tree.len()];
    for node in tree.internal_nodes() {
        let mut db = vec![0.0; dim];
        let mut da = 0.0;
        for c in tree.children(node) {
            let dr = m.dr(c);
            let sq: f64 = dr.iter().map(|a| a * a).sum();
            da += tree.prob(c) * sq.min(1.0);
            if small(&dr) {
                for i in 0..dim {
                    db[i] += tree.prob(c) * dr[i];
                }
            }
        }
        da += db.iter().map(|v| v.abs()).sum::<f64>();
        for c in tree.children(node) {
            let dr = m.dr(c);
            let is_small = small(&dr);
            for i in 0..dim {
                drift.at_mut(c)[i] = drift.at(node)[i] + db[i];
                let s = if is_small { dr[i] } else { 0.0 };
                comp.at_mut(c)[i] = comp.at(node)[i] + s - db[i];
                large.at_mut(c)[i] = large.at(node)[i] + if is_small { 0.0 } else { dr[i] };
            }
            clock[c] = clock[node] + da;
            eta[c] = if da > 0.0 { tree.prob(c) / da } else { 0.0 };
        }
        if da > 0.0 {
            for i in 0..dim {
                density.at_node_mut(node)[i] = db[i] / da;
            }
        }
    }
    Characteristics {
        drift,
        continuous: AdaptedProcess::zeros(tree, dim),
        small_jumps: comp,
        large_jumps: large,
        clock: AdaptedProcess::scalar(clock),
        drift_density: density,
        jump_density: eta,
    }
}

impl Characteristics {
    /// `B + C + small + large`, which must equal `R`.
    pub fn reassemble(&self) -> AdaptedProcess {
        let s = self.drift.zip_with(&self.small_jumps, |a, b| a + b).unwrap();
        let s = s.zip_with(&self.large_jumps, |a, b| a + b).unwrap();
        s.zip_with(&self.continuous, |a, b| a + b).unwrap()
    }
}

/// Returns under the numéraire `E(pi . R)`:
/// `dR^pi = dR - (pi^T dR / (1 + pi^T dR)) dR`.
pub fn discount_direction(m: &MarketModel, pi: &PredictableProcess) -> Result<AdaptedProcess> {
    let tree = m.tree();
    let dim = m.assets() + 1;
    if pi.dim() != dim {
        return Err(Error::Dimension(format!("direction has dimension {}, expected {dim}", pi.dim())));
    }
    let mut out = AdaptedProcess::zeros(tree, dim);
    for c in 1..tree.len() {
        let p = tree.parent(c).unwrap();
        let dr = m.dr(c);
        let j: f64 = pi.at_node(p).iter().zip(&dr).map(|(a, b)| a * b).sum();
        if 1.0 + j <= 0.0 {
            return Err(Error::Domain(format!("1 + pi^T dR = {} at node {c}", 1.0 + j)));
        }
        for i in 0..dim {
            out.at_mut(c)[i] = out.at(p)[i] + dr[i] - j / (1.0 + j) * dr[i];
        }
    }
    Ok(out)
}

/// Returns under `N^eps`: `R^eps = (I - eps 1 theta^T) . R^{eps theta} / (1 - eps)`.
pub fn perturbed_returns(m: &MarketModel, eps: f64) -> Result<AdaptedProcess> {
    if eps == 1.0 {
        return Err(Error::Numerical("(1 - eps) I + eps theta 1^T is singular at eps = 1".into()));
    }
    let tree = m.tree();
    let dim = m.assets() + 1;
    let scaled = scale_predictable(m.theta(), eps);
    let r = discount_direction(m, &scaled)?;
    let mut out = AdaptedProcess::zeros(tree, dim);
    for c in 1..tree.len() {
        let p = tree.parent(c).unwrap();
        let inc = r.increment(tree, c);
        let th = m.theta().at_node(p);
        let t: f64 = th.iter().zip(&inc).map(|(a, b)| a * b).sum();
        for i in 0..dim {
            out.at_mut(c)[i] = out.at(p)[i] + (inc[i] - eps * t) / (1.0 - eps);
        }
    }
    Ok(out)
}

fn scale_predictable(p: &PredictableProcess, s: f64) -> PredictableProcess {
    let mut out = p.clone();
    out.scale(s);
    out
}

#[derive(Debug, Clone)]
pub struct IntegrandRepresentation {
    pub integrand: PredictableProcess,
    /// Largest absolute reproduction error over all nodes.
    pub max_residual: f64,
}

/// Finds `gamma` with `gamma . integrator = target` by a least-squares solve
/// across the siblings of every decision node.
pub fn represent_martingale(
    tree: &EventTree,
    target: &AdaptedProcess,
    integrator: &AdaptedProcess,
) -> Result<IntegrandRepresentation> {
    let dim = integrator.dim();
    let mut gamma = PredictableProcess::zeros(tree, dim);
    for node in tree.internal_nodes() {
        let ch = tree.children(node);
        let k = ch.len();
        let mut a = DMatrix::zeros(k, dim);
        let mut b = DVector::zeros(k);
        for (j, c) in ch.clone().enumerate() {
            let inc = integrator.increment(tree, c);
            for i in 0..dim {
                a[(j, i)] = inc[i];
            }
            b[j] = target.value(c) - target.value(node);
        }
        let scale = b.amax();
        if scale == 0.0 {
            continue;
        }
        let (pinv, _) = sym_pinv(&(a.transpose() * &a));
        let g = pinv * (a.transpose() * &b);
        let res = (&a * &g - &b).amax();
        if res > 1e-10 * scale.max(1.0) {
            return Err(Error::Representation { node, residual: res });
        }
        gamma.at_node_mut(node).copy_from_slice(g.as_slice());
    }
    let rebuilt = stochastic_integral(tree, &gamma, integrator)?;
    let max_residual = (0..tree.len())
        .map(|n| (rebuilt.value(n) - target.value(n) + target.value(0)).abs())
        .fold(0.0, f64::max);
    Ok(IntegrandRepresentation { integrand: gamma, max_residual })
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub process: AdaptedProcess,
    /// Nodes at which the process was frozen.
    pub stopped: Vec<usize>,
}

impl Truncation {
    pub fn is_identity(&self) -> bool {
        self.stopped.is_empty()
    }
}

/// Stops a martingale (start 0) the first time its quadratic variation
/// reaches `n`, or just before it would leave `[-n, n]`.
pub fn truncate_localize(tree: &EventTree, mart: &AdaptedProcess, n: f64) -> Truncation {
    let mut out = mart.values().to_vec();
    let mut qv = vec![0.0; tree.len()];
    let mut frozen = vec![false; tree.len()];
    let mut stopped = Vec::new();
    for node in tree.internal_nodes() {
        let ch = tree.children(node);
        let stop = !frozen[node]
            && (qv[node] >= n || ch.clone().any(|c| mart.value(c).abs() > n));
        if stop {
            stopped.push(node);
        }
        for c in ch {
            if frozen[node] || stop {
                frozen[c] = true;
                out[c] = out[node];
                qv[c] = qv[node];
            } else {
                let d = mart.value(c) - mart.value(node);
                qv[c] = qv[node] + d * d;
            }
        }
    }
    Truncation { process: AdaptedProcess::scalar(out), stopped }
}

/// `theta = e^0 - psi e^i` with the bank absorbing the normalization.
pub fn drift_perturbation_theta(
    m: &MarketModel,
    psi: &PredictableProcess,
    asset: usize,
) -> Result<PredictableProcess> {
    let d = m.assets();
    if asset == 0 || asset > d {
        return Err(Error::Dimension(format!("asset index {asset} outside 1..={d}")));
    }
    if psi.dim() != 1 {
        return Err(Error::Dimension("psi must be scalar".into()));
    }
    PredictableProcess::from_fn(m.tree(), d + 1, |n| {
        let s = psi.at_node(n)[0];
        let mut v = vec![0.0; d + 1];
        v[0] = 1.0 + s;
        v[asset] = -s;
        v
    })
}

/// Truncated correction martingales at one level `n`.
#[derive(Debug, Clone)]
pub struct Level {
    pub n: usize,
    pub m0: Truncation,
    pub m1: Truncation,
    /// Integrands with `gamma . R^{pi} = M/x`, bank entries set so that
    /// `1^T gamma0 = 0` and `1^T gamma1 = 1`.
    pub gamma0: PredictableProcess,
    pub gamma1: PredictableProcess,
    /// Admissibility radius from the jump bounds.
    pub delta: f64,
    /// `min(eps0, 1/(9n))`.
    pub delta_conservative: f64,
}

/// Outcome of the truncation-level selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub n: usize,
    /// Estimated residual envelope at the chosen level.
    pub g_hat: f64,
    /// `m(n)` at the chosen level.
    pub m_n: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    pub n_max: usize,
    /// Floor added to the envelope estimate.
    pub floor: f64,
    /// Number of dyadic scalings `t = 2^{-j}` used to probe rays.
    pub probe_depth: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self { n_max: 1 << 12, floor: 1e-10, probe_depth: 8 }
    }
}

/// The family `X^{dx, eps, n}` built around one expansion.
pub struct StrategyFamily<'a> {
    m: &'a MarketModel,
    u: &'a Utility,
    rep: &'a ExpansionReport,
    r_pi: AdaptedProcess,
}

impl<'a> StrategyFamily<'a> {
    pub fn new(m: &'a MarketModel, u: &'a Utility, rep: &'a ExpansionReport) -> Result<Self> {
        let r_pi = discount_direction(m, &rep.base.primal.strategy)?;
        Ok(Self { m, u, rep, r_pi })
    }

    pub fn x(&self) -> f64 {
        self.rep.base.x
    }

    pub fn optimal_proportions(&self) -> &PredictableProcess {
        &self.rep.base.primal.strategy
    }

    pub fn level(&self, n: usize) -> Result<Level> {
        let tree = self.m.tree();
        let x = self.x();
        let m0 = truncate_localize(tree, &self.rep.aux.a_xx.process, n as f64);
        let m1 = truncate_localize(tree, &self.rep.aux.a_ee.process, n as f64);
        let rep0 = represent_martingale(tree, &m0.process.map(|v| v / x), &self.r_pi)?;
        let rep1 = represent_martingale(tree, &m1.process.map(|v| v / x), &self.r_pi)?;
        let mut gamma0 = rep0.integrand;
        let mut gamma1 = rep1.integrand;
        for node in tree.internal_nodes() {
            let g0 = gamma0.at_node_mut(node);
            g0[0] = -g0[1..].iter().sum::<f64>();
            let g1 = gamma1.at_node_mut(node);
            g1[0] = 1.0 - g1[1..].iter().sum::<f64>();
        }
        let mut delta = self.m.eps0().min(x);
        for c in 1..tree.len() {
            let p = tree.parent(c).unwrap();
            let a = (m0.process.value(c) - m0.process.value(p)) / x;
            let b = (m1.process.value(c) - m1.process.value(p)) / x;
            let j = a.hypot(b);
            if j > 0.0 {
                delta = delta.min(1.0 / j);
            }
            let t: f64 = self.m.theta().at_node(p).iter().zip(self.m.dr(c)).map(|(a, b)| a * b).sum();
            if t != 0.0 {
                delta = delta.min(1.0 / t.abs());
            }
        }
        Ok(Level {
            n,
            m0,
            m1,
            gamma0,
            gamma1,
            delta,
            delta_conservative: self.m.eps0().min(1.0 / (9.0 * n as f64)),
        })
    }

    fn check_ball(&self, lvl: &Level, dx: f64, eps: f64) -> Result<()> {
        if dx.hypot(eps) >= lvl.delta {
            return Err(Error::OutsideBall { dx, eps, delta: lvl.delta });
        }
        Ok(())
    }

    /// `pi + dx gamma0 + eps (gamma1 - theta)`.
    pub fn integrand(&self, lvl: &Level, dx: f64, eps: f64) -> PredictableProcess {
        let pi = self.optimal_proportions();
        let th = self.m.theta();
        let mut v = pi.clone();
        for node in self.m.tree().internal_nodes() {
            let out = v.at_node_mut(node);
            for i in 0..out.len() {
                out[i] += dx * lvl.gamma0.at_node(node)[i]
                    + eps * (lvl.gamma1.at_node(node)[i] - th.at_node(node)[i]);
            }
        }
        v
    }

    /// `(x + dx) E(v . R^{eps theta})`.
    pub fn wealth(&self, lvl: &Level, dx: f64, eps: f64) -> Result<AdaptedProcess> {
        self.check_ball(lvl, dx, eps)?;
        let tree = self.m.tree();
        let r = discount_direction(self.m, &scale_predictable(self.m.theta(), eps))?;
        let v = self.integrand(lvl, dx, eps);
        let e = stochastic_exponential(tree, &stochastic_integral(tree, &v, &r)?)?;
        let w = e.map(|z| (self.x() + dx) * z);
        if let Some(n) = (0..tree.len()).find(|n| w.value(*n) <= 0.0) {
            return Err(Error::InvariantViolation(format!("wealth {} at node {n}", w.value(n))));
        }
        Ok(w)
    }

    pub fn expected_utility(&self, lvl: &Level, dx: f64, eps: f64) -> Result<f64> {
        let w = self.wealth(lvl, dx, eps)?;
        let tree = self.m.tree();
        let mut s = 0.0;
        for l in tree.leaves() {
            s += tree.path_prob(l) * self.u.evaluate(w.value(l))?.u;
        }
        Ok(s)
    }

    /// Proportions in the assets under `N^eps`, `((1 - eps) I + eps theta 1^T) v`.
    pub fn proportions(&self, lvl: &Level, dx: f64, eps: f64) -> Result<PredictableProcess> {
        if eps == 1.0 {
            return Err(Error::Numerical("(1 - eps) I + eps theta 1^T is singular at eps = 1".into()));
        }
        let v = self.integrand(lvl, dx, eps);
        let th = self.m.theta();
        PredictableProcess::from_fn(self.m.tree(), v.dim(), |n| {
            let s: f64 = v.at_node(n).iter().sum();
            (0..v.dim()).map(|i| (1.0 - eps) * v.at_node(n)[i] + eps * th.at_node(n)[i] * s).collect()
        })
    }

    /// Largest gap between `(x + dx) E(P . R^eps)` and the wealth.
    pub fn proportion_round_trip(&self, lvl: &Level, dx: f64, eps: f64) -> Result<f64> {
        let tree = self.m.tree();
        let p = self.proportions(lvl, dx, eps)?;
        let r = perturbed_returns(self.m, eps)?;
        let e = stochastic_exponential(tree, &stochastic_integral(tree, &p, &r)?)?;
        let w = self.wealth(lvl, dx, eps)?;
        Ok((0..tree.len())
            .map(|n| ((self.x() + dx) * e.value(n) - w.value(n)).abs() / w.value(n))
            .fold(0.0, f64::max))
    }

    /// Relative gap between `X N^eps` and a self-financing wealth of the
    /// unperturbed market with the same initial capital.
    pub fn transport_residual(&self, lvl: &Level, dx: f64, eps: f64) -> Result<f64> {
        let tree = self.m.tree();
        let w = self.wealth(lvl, dx, eps)?;
        let n = self.m.numeraire(eps)?;
        let direct = self.integrand(lvl, dx, eps).scaled_add(eps, self.m.theta())?;
        let e = stochastic_exponential(tree, &stochastic_integral(tree, &direct, self.m.returns())?)?;
        Ok((0..tree.len())
            .map(|k| (w.value(k) * n.value(k) - (self.x() + dx) * e.value(k)).abs() / w.value(k))
            .fold(0.0, f64::max))
    }

    /// Gap to the second-order expansion, normalized by `dx^2 + eps^2`.
    pub fn residual_f(&self, lvl: &Level, dx: f64, eps: f64) -> Result<f64> {
        let q = self.rep.quadratic_u(dx, eps);
        Ok((q - self.expected_utility(lvl, dx, eps)?) / (dx * dx + eps * eps))
    }

    fn ladder(n_max: usize) -> Vec<usize> {
        std::iter::successors(Some(1usize), |n| n.checked_mul(2)).take_while(|n| *n <= n_max).collect()
    }

    const DIRECTIONS: usize = 8;

    fn direction(k: usize) -> (f64, f64) {
        let a = std::f64::consts::TAU * k as f64 / Self::DIRECTIONS as f64;
        (a.cos(), a.sin())
    }

    /// Envelope estimate: largest `|f|` on a ring of small probes.
    fn g_raw(&self, lvl: &Level, opts: &SelectOptions) -> Result<f64> {
        let r = 0.5 * lvl.delta.min(1.0) * 0.5f64.powi(opts.probe_depth as i32);
        let mut g: f64 = 0.0;
        for k in 0..Self::DIRECTIONS {
            let (a, b) = Self::direction(k);
            g = g.max(self.residual_f(lvl, r * a, r * b)?.abs());
        }
        Ok(g)
    }

    /// Whether `f(t h, n) <= 2 g` for the dyadic scalings of `h`.
    fn in_phi(&self, lvl: &Level, dx: f64, eps: f64, g: f64, opts: &SelectOptions) -> Result<bool> {
        if dx.hypot(eps) >= lvl.delta {
            return Ok(false);
        }
        for j in 0..=opts.probe_depth {
            let t = 0.5f64.powi(j as i32);
            if self.residual_f(lvl, t * dx, t * eps)? > 2.0 * g {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `2 inf{m >= n : B_{1/m} in Phi(n)}`, searched over doublings of `n`.
    fn m_of(&self, lvl: &Level, g: f64, opts: &SelectOptions) -> Result<f64> {
        let mut m = lvl.n as f64;
        for _ in 0..60 {
            let mut inside = true;
            for k in 0..Self::DIRECTIONS {
                let (a, b) = Self::direction(k);
                if !self.in_phi(lvl, a / m, b / m, g, opts)? {
                    inside = false;
                    break;
                }
            }
            if inside {
                return Ok(2.0 * m);
            }
            m *= 2.0;
        }
        Ok(f64::INFINITY)
    }

    /// Smallest level `n` on the dyadic ladder with `m(n) >= 1/|h|`.
    pub fn select_n(&self, dx: f64, eps: f64, opts: &SelectOptions) -> Result<Selection> {
        let ladder = Self::ladder(opts.n_max);
        let levels = ladder.iter().map(|n| self.level(*n)).collect::<Result<Vec<_>>>()?;
        let mut raw = Vec::with_capacity(levels.len());
        for lvl in &levels {
            raw.push(self.g_raw(lvl, opts)?);
        }
        // monotone envelope
        let mut g = vec![0.0; raw.len()];
        let mut acc: f64 = 0.0;
        for i in (0..raw.len()).rev() {
            acc = acc.max(raw[i]);
            g[i] = acc + opts.floor;
        }
        let target = 1.0 / dx.hypot(eps);
        let mut best = None;
        for (i, lvl) in levels.iter().enumerate() {
            let m_n = self.m_of(lvl, g[i], opts)?;
            if dx.hypot(eps) < lvl.delta {
                best = Some(lvl.n);
            }
            if m_n >= target && dx.hypot(eps) < lvl.delta {
                return Ok(Selection { n: lvl.n, g_hat: g[i], m_n });
            }
        }
        Err(Error::BudgetExhausted { best_n: best.unwrap_or(0) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::process::stochastic_exponential;
    use crate::sensitivity::expand;

    #[test]
    fn characteristics_reassemble() {
        let m = instances::t1(1.0);
        let ch = characteristics(&m);
        assert!(ch.reassemble().max_abs_diff(m.returns()) < 1e-15);
        assert!(ch.drift.at(1)[1].abs() < 1e-17);
        assert!(ch.large_jumps.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn t1_discounted_return() {
        let m = instances::t1(1.0);
        let pi = PredictableProcess::constant(m.tree(), &[0.0, 1.0]);
        let r = discount_direction(&m, &pi).unwrap();
        assert!((r.at(1)[1] - 0.1 / 1.1).abs() < 1e-16);
        let zero = PredictableProcess::zeros(m.tree(), 2);
        assert_eq!(discount_direction(&m, &zero).unwrap(), *m.returns());
    }

    #[test]
    fn truncation_rules() {
        let tree = EventTree::uniform(2, &[0.5, 0.5]).unwrap();
        let mart = AdaptedProcess::scalar(vec![0.0, 0.5, -0.5, 3.0, -2.0, 0.0, -1.0]);
        let t = truncate_localize(&tree, &mart, 10.0);
        assert!(t.is_identity());
        let t = truncate_localize(&tree, &mart, 2.0);
        assert_eq!(t.stopped, vec![1]);
        assert_eq!(t.process.value(3), 0.5);
        assert_eq!(t.process.value(5), 0.0);
    }

    #[test]
    fn zero_perturbation_reproduces_optimum() {
        let m = instances::trinomial_two_period();
        let u = instances::mixture_utility();
        let rep = expand(&m, &u, 1.0).unwrap();
        let fam = StrategyFamily::new(&m, &u, &rep).unwrap();
        let lvl = fam.level(1 << 10).unwrap();
        let w = fam.wealth(&lvl, 0.0, 0.0).unwrap();
        assert!(w.max_abs_diff(&rep.base.primal.wealth) < 1e-13);
        let e = stochastic_exponential(m.tree(), &AdaptedProcess::zeros(m.tree(), 1)).unwrap();
        assert_eq!(e.value(3), 1.0);
        assert!(fam.proportion_round_trip(&lvl, 0.01, 0.02).unwrap() < 1e-12);
        assert!(fam.transport_residual(&lvl, 0.01, 0.02).unwrap() < 1e-12);
    }
}
