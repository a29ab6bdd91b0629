//! Exact primal and dual solves on the tree.
//!
//! A wealth process of the `eps`-model is `X^eps = X^0 / N^eps` with `X^0`
//! a self-financing wealth of the unperturbed market, so the primal problem
//! maximizes `E[U(X^0_T / N^eps_T)]` over holdings in the unperturbed assets.
//! The objective is concave in the holdings and is maximized by damped
//! Newton steps; each Newton direction is a weighted least-squares
//! replication solved by backward induction over the tree.

use crate::error::{Error, Result};
use crate::linalg::{one_step_arbitrage, weighted_replication};
use crate::market::MarketModel;
use crate::process::{AdaptedProcess, PredictableProcess};
use crate::utility::Utility;

const MAX_NEWTON: usize = 200;
/// Bound on the first-order residual for a solve to count as converged.
pub const FOC_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub x: f64,
    pub eps: f64,
    /// Number of units held in each risky asset (`d` components).
    pub holdings: PredictableProcess,
    /// Proportions `pi` (`d + 1` components) of the unperturbed wealth
    /// `X^0 = x E(pi . R)` invested in each asset; `X^eps = X^0 / N^eps`.
    pub strategy: PredictableProcess,
    /// Optimal wealth `X^eps` of the perturbed model.
    pub wealth: AdaptedProcess,
    /// `u(x, eps)`.
    pub value: f64,
    /// `y = u_x(x, eps) = E[U'(X_T) X_T] / x`.
    pub marginal: f64,
    /// Largest one-step first-order residual, relative to the local marginal mass.
    pub foc_residual: f64,
    pub iterations: usize,
    /// Decision nodes with linearly dependent one-step returns.
    pub rank_deficient_nodes: usize,
}

impl PrimalSolution {
    pub fn terminal(&self, m: &MarketModel) -> Vec<f64> {
        self.wealth.terminal(m.tree())
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub y: f64,
    pub eps: f64,
    pub deflator: AdaptedProcess,
    /// `v(y, eps) = E[V(Y_T)]`.
    pub value: f64,
}

/// Worst one-step supermartingale violation of a candidate deflator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflatorReport {
    pub max_violation: f64,
    pub node: Option<usize>,
}

/// Fails with [`Error::Arbitrage`] at the first node admitting a one-step arbitrage.
pub fn check_nupbr(m: &MarketModel) -> Result<()> {
    let tree = m.tree();
    for node in tree.internal_nodes() {
        let delta: Vec<Vec<f64>> = tree.children(node).map(|c| m.dr(c)[1..].to_vec()).collect();
        let probs: Vec<f64> = tree.children(node).map(|c| tree.prob(c)).collect();
        if one_step_arbitrage(&delta, &probs) {
            return Err(Error::Arbitrage { node });
        }
    }
    Ok(())
}

/// Risky price increments `S_c - S_parent` for every non-root node.
pub(crate) fn price_increments(m: &MarketModel) -> Vec<Vec<f64>> {
    let tree = m.tree();
    let s = m.prices();
    (0..tree.len())
        .map(|n| match tree.parent(n) {
            None => vec![0.0; m.assets()],
            Some(p) => (1..=m.assets()).map(|i| s.at(n)[i] - s.at(p)[i]).collect(),
        })
        .collect()
}

pub fn solve_primal(m: &MarketModel, u: &Utility, x: f64, eps: f64) -> Result<PrimalSolution> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("initial wealth x = {x} must be positive")));
    }
    let num = m.numeraire(eps)?;
    check_nupbr(m)?;
    let tree = m.tree();
    let d = m.assets();
    let ds = price_increments(m);
    let n_t = num.terminal(tree);
    let p = tree.leaf_probs();
    let leaves = tree.leaves();

    let mut holdings = PredictableProcess::zeros(tree, d);
    let mut w0 = vec![x; tree.len()];
    let objective = |w: &[f64]| -> f64 {
        leaves.clone().map(|l| {
            let i = tree.leaf_index(l);
            p[i] * u.u(w[l] / n_t[i])
        }).sum()
    };
    let mut f = objective(&w0);
    let mut iterations = 0;
    let mut rank_deficient_nodes = 0;
    let mut polish = false;
    while iterations < MAX_NEWTON {
        iterations += 1;
        let mut a = Vec::with_capacity(p.len());
        let mut b = Vec::with_capacity(p.len());
        for l in leaves.clone() {
            let i = tree.leaf_index(l);
            let e = u.eval_unchecked(w0[l] / n_t[i]);
            a.push(p[i] * e.du / n_t[i]);
            b.push(-p[i] * e.d2u / (n_t[i] * n_t[i]));
        }
        let z: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a / b).collect();
        let rep = weighted_replication(tree, &ds, d, &b, &z, Some(0.0));
        rank_deficient_nodes = rep.rank_deficient;
        let dx = &rep.values;
        let dec: f64 = leaves.clone().map(|l| a[tree.leaf_index(l)] * dx[l]).sum();
        let scale: f64 = leaves.clone().map(|l| a[tree.leaf_index(l)] * w0[l].abs()).sum();
        if dec <= 1e-24 * scale {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            let trial: Vec<f64> = w0.iter().zip(dx).map(|(w, d)| w + t * d).collect();
            if leaves.clone().all(|l| trial[l] > 0.0) {
                let ft = objective(&trial);
                let tiny = dec < 1e-10 * scale;
                if ft >= f + 1e-4 * t * dec || (tiny && t == 1.0) {
                    w0 = trial;
                    f = ft;
                    holdings = holdings.scaled_add(t, &rep.integrand)?;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if polish {
            break;
        }
        if dec < 1e-16 * scale && t == 1.0 {
            polish = true;
        }
    }

    let mut a = Vec::with_capacity(p.len());
    let mut xu = 0.0;
    for l in leaves.clone() {
        let i = tree.leaf_index(l);
        let xh = w0[l] / n_t[i];
        let du = u.du(xh);
        a.push(p[i] * du / n_t[i]);
        xu += p[i] * du * xh;
    }
    let q = tree.aggregate(&a);
    let mut foc = 0.0f64;
    for node in tree.internal_nodes() {
        for i in 0..d {
            let s: f64 = tree.children(node).map(|c| q[c] * ds[c][i]).sum();
            let mag: f64 = tree.children(node).map(|c| q[c] * ds[c][i].abs()).sum();
            if mag > 0.0 {
                foc = foc.max(s.abs() / mag);
            }
        }
    }
    if !(foc <= 1e-8) || !f.is_finite() {
        return Err(Error::Numerical(format!(
            "Newton solve for (x, eps) = ({x}, {eps}) stopped after {iterations} iterations \
             with first-order residual {foc:e} and value {f}"
        )));
    }

    let prices = m.prices();
    let strategy = PredictableProcess::from_fn(tree, d + 1, |node| {
        let h = holdings.at_node(node);
        let mut v = vec![0.0; d + 1];
        for i in 0..d {
            v[i + 1] = h[i] * prices.at(node)[i + 1] / w0[node];
        }
        v[0] = 1.0 - v[1..].iter().sum::<f64>();
        v
    })?;
    let wealth = AdaptedProcess::scalar(w0.iter().zip(num.values()).map(|(w, n)| w / n).collect());
    Ok(PrimalSolution {
        x,
        eps,
        holdings,
        strategy,
        wealth,
        value: f,
        marginal: xu / x,
        foc_residual: foc,
        iterations,
        rank_deficient_nodes,
    })
}

/// Dual optimizer built from a primal solve: `Y_T = U'(X_T)` and
/// `Y_t = E[Y_T X_T | F_t] / X_t`.
pub fn dual_from_primal(m: &MarketModel, u: &Utility, primal: &PrimalSolution) -> Result<DualSolution> {
    let tree = m.tree();
    let xt = primal.terminal(m);
    let yt: Vec<f64> = xt.iter().map(|x| u.du(*x)).collect();
    let prod: Vec<f64> = yt.iter().zip(&xt).map(|(a, b)| a * b).collect();
    let e = tree.expectation_process(&prod);
    let mut vals: Vec<f64> = (0..tree.len()).map(|n| e[n] / primal.wealth.value(n)).collect();
    for l in tree.leaves() {
        vals[l] = yt[tree.leaf_index(l)];
    }
    let p = tree.leaf_probs();
    let mut value = 0.0;
    for (pi, y) in p.iter().zip(&yt) {
        value += pi * u.conjugate(*y)?.v;
    }
    Ok(DualSolution {
        y: vals[0],
        eps: primal.eps,
        deflator: AdaptedProcess::scalar(vals),
        value,
    })
}

/// Dual optimizer for the initial wealth `x` (so that `y = u_x(x, eps)`).
pub fn solve_dual(m: &MarketModel, u: &Utility, x: f64, eps: f64) -> Result<DualSolution> {
    let primal = solve_primal(m, u, x, eps)?;
    dual_from_primal(m, u, &primal)
}

/// Dual solve at a prescribed `y`.
#[derive(Debug, Clone)]
pub struct DualAt {
    /// Wealth `x` with `u_x(x, eps) = y`.
    pub x: f64,
    pub primal: PrimalSolution,
    pub dual: DualSolution,
    /// `v(y, eps)` at the requested `y`.
    pub value: f64,
}

/// Solves the dual problem at `y` by locating `x` with `u_x(x, eps) = y`.
pub fn solve_dual_at(m: &MarketModel, u: &Utility, y: f64, eps: f64) -> Result<DualAt> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Domain(format!("dual variable y = {y} must be positive")));
    }
    let ly = y.ln();
    let eval = |s: f64| -> Result<(f64, PrimalSolution)> {
        let sol = solve_primal(m, u, s.exp(), eps)?;
        Ok((sol.marginal.ln() - ly, sol))
    };
    // ln u_x is decreasing in ln x with slope in [-c2, -c1]
    let (c1, c2) = (u.c1(), u.c2());
    let s0 = 0.0;
    let (g0, sol0) = eval(s0)?;
    let mut best = (g0, s0, sol0);
    if g0 != 0.0 {
        let (mut lo, mut hi) = if g0 > 0.0 {
            (s0 + g0 / c2, s0 + g0 / c1)
        } else {
            (s0 + g0 / c1, s0 + g0 / c2)
        };
        let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        lo -= pad;
        hi += pad;
        let mut s_prev = s0;
        let mut g_prev = g0;
        let mut s = s0 + 2.0 * g0 / (c1 + c2);
        for _ in 0..100 {
            if !(s > lo && s < hi) {
                s = 0.5 * (lo + hi);
            }
            let (g, sol) = eval(s)?;
            if g.abs() < best.0.abs() {
                best = (g, s, sol);
            }
            if g.abs() <= 1e-15 || (hi - lo) <= 1e-15 * (1.0 + s.abs()) {
                break;
            }
            if g > 0.0 {
                lo = lo.max(s);
            } else {
                hi = hi.min(s);
            }
            let slope = (g - g_prev) / (s - s_prev);
            let next = if slope < 0.0 && slope.is_finite() { s - g / slope } else { 0.5 * (lo + hi) };
            s_prev = s;
            g_prev = g;
            if (next - s).abs() <= 1e-16 * (1.0 + s.abs()) {
                break;
            }
            s = next;
        }
    }
    let (g, _, primal) = best;
    if g.abs() > 1e-12 {
        return Err(Error::Numerical(format!(
            "could not match u_x(x, {eps}) = {y}: log residual {g:e}"
        )));
    }
    let dual = dual_from_primal(m, u, &primal)?;
    // first-order correction from the attained y to the requested y (v_y = -x)
    let value = dual.value - primal.x * (y - dual.y);
    Ok(DualAt { x: primal.x, primal, dual, value })
}

/// `dR(x)/dP = X_T Y_T / (xy)` as leaf weights.
pub fn measure_r(m: &MarketModel, primal: &PrimalSolution, dual: &DualSolution) -> Vec<f64> {
    let tree = m.tree();
    let xt = primal.terminal(m);
    let yt = dual.deflator.terminal(tree);
    let p = tree.leaf_probs();
    let xy = primal.x * dual.y;
    p.iter().zip(xt.iter().zip(&yt)).map(|(p, (a, b))| p * a * b / xy).collect()
}

/// One-step supermartingale check for `Y` and for `Y S^{eps,i}`, `i = 0..=d`.
/// Violations are relative to the current value of the tested product.
pub fn verify_deflator(m: &MarketModel, eps: f64, y: &AdaptedProcess) -> Result<DeflatorReport> {
    let tree = m.tree();
    let s = m.perturbed_prices(eps)?;
    let mut report = DeflatorReport { max_violation: 0.0, node: None };
    let mut record = |node: usize, now: f64, next: f64| {
        let v = (next - now) / now.abs().max(f64::MIN_POSITIVE);
        if v > report.max_violation {
            report.max_violation = v;
            report.node = Some(node);
        }
    };
    for node in tree.internal_nodes() {
        let ey: f64 = tree.children(node).map(|c| tree.prob(c) * y.value(c)).sum();
        record(node, y.value(node), ey);
        for i in 0..s.dim() {
            let e: f64 = tree.children(node).map(|c| tree.prob(c) * y.value(c) * s.at(c)[i]).sum();
            record(node, y.value(node) * s.at(node)[i], e);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn t1_log_unperturbed() {
        let m = instances::t1(1.0);
        let u = Utility::log();
        let sol = solve_primal(&m, &u, 2.0, 0.0).unwrap();
        assert!(sol.strategy.at_node(0)[1].abs() < 1e-12);
        assert!((sol.value - 2f64.ln()).abs() < 1e-14);
        assert!((sol.marginal - 0.5).abs() < 1e-14);
        let dual = dual_from_primal(&m, &u, &sol).unwrap();
        for v in dual.deflator.values() {
            assert!((v - 0.5).abs() < 1e-14);
        }
        assert!((dual.value - (-(0.5f64).ln() - 1.0)).abs() < 1e-13);
        let r = measure_r(&m, &sol, &dual);
        for w in r {
            assert!((w - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = instances::t1(1.0);
        let u = Utility::log();
        assert!(matches!(solve_primal(&m, &u, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(solve_primal(&m, &u, 1.0, 5.0), Err(Error::Admissibility { .. })));
    }

    #[test]
    fn arbitrage_is_detected() {
        let tree = crate::EventTree::uniform(1, &[0.5, 0.5]).unwrap();
        let inc = vec![vec![0.0], vec![0.1], vec![0.0]];
        let theta = PredictableProcess::constant(&tree, &[0.0, 1.0]);
        let m = MarketModel::from_increments(tree, &inc, theta, None).unwrap();
        assert!(matches!(
            solve_primal(&m, &Utility::log(), 1.0, 0.0),
            Err(Error::Arbitrage { node: 0 })
        ));
    }

    #[test]
    fn conjugacy_and_deflator() {
        let m = instances::trinomial_two_period();
        let u = instances::mixture_utility();
        for eps in [0.0, 0.1, -0.2] {
            let sol = solve_primal(&m, &u, 1.3, eps).unwrap();
            assert!(sol.foc_residual < FOC_TOL);
            let dual = dual_from_primal(&m, &u, &sol).unwrap();
            assert!((sol.value - dual.value - sol.x * dual.y).abs() < 1e-10);
            assert!((dual.y - sol.marginal).abs() < 1e-12);
            let rep = verify_deflator(&m, eps, &dual.deflator).unwrap();
            assert!(rep.max_violation < 1e-10);
        }
    }

    #[test]
    fn dual_at_prescribed_y() {
        let m = instances::trinomial_two_period();
        let u = instances::mixture_utility();
        let at = solve_dual_at(&m, &u, 0.7, 0.05).unwrap();
        assert!((at.dual.y - 0.7).abs() < 1e-12);
        let sol = solve_primal(&m, &u, at.x, 0.05).unwrap();
        assert!((at.value - (sol.value - at.x * 0.7)).abs() < 1e-11);
    }
}
