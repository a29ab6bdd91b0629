//! Risk-tolerance wealth process and the decomposition of the process `P`
//! that gives an independent route to the second-order coefficients.
//!
//! On a finite tree replication is exact whenever it is possible, so the
//! replicating wealth is automatically the maximal one.

use nalgebra::{DMatrix, DVector};

use crate::duality::price_increments;
use crate::error::{Error, Result};
use crate::linalg::{sym_pinv, weighted_replication};
use crate::market::MarketModel;
use crate::process::{AdaptedProcess, PredictableProcess};
use crate::sensitivity::{conditional_probs, BaseSolution};
use crate::utility::Utility;

/// Replication tolerance relative to the payoff scale.
const REPLICATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct RiskToleranceProcess {
    /// Replicating wealth, or the least-squares approximant when it does not exist.
    pub process: AdaptedProcess,
    /// Share holdings in the risky assets.
    pub holdings: PredictableProcess,
    pub initial: f64,
    pub exists: bool,
    /// Root-mean-square distance of the target payoff to the attainable set.
    pub certificate: f64,
}

/// Replicates `-U'(X_T)/U''(X_T)` with a self-financing wealth process.
pub fn risk_tolerance(m: &MarketModel, u: &Utility, base: &BaseSolution) -> Result<RiskToleranceProcess> {
    let tree = m.tree();
    let target: Vec<f64> = base.xt.iter().map(|x| u.evaluate(*x).map(|e| -e.du / e.d2u)).collect::<Result<_>>()?;
    let phi = price_increments(m);
    let rep = weighted_replication(tree, &phi, m.assets(), &tree.leaf_probs(), &target, None);
    let scale = target.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let exists = rep.distance <= REPLICATION_TOL * scale;
    let mut process = AdaptedProcess::scalar(rep.values);
    if exists {
        // exact leaf values
        for l in tree.leaves() {
            process.at_mut(l)[0] = target[tree.leaf_index(l)];
        }
    }
    Ok(RiskToleranceProcess {
        initial: rep.start,
        process,
        holdings: rep.integrand,
        exists,
        certificate: rep.distance,
    })
}

/// Leaf weights of `R~(x)`, with density `(R_T/R_0)(Y_T/y)`.
pub fn tilde_measure(m: &MarketModel, base: &BaseSolution, rt: &RiskToleranceProcess) -> Result<Vec<f64>> {
    if !rt.exists {
        return Err(Error::NotReplicable { certificate: rt.certificate });
    }
    let tree = m.tree();
    Ok(tree
        .leaves()
        .map(|l| {
            let i = tree.leaf_index(l);
            tree.path_prob(l) * rt.process.value(l) / rt.initial * base.yt[i] / base.y
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct GkwDecomposition {
    pub p0: f64,
    pub p: AdaptedProcess,
    pub m_tilde: AdaptedProcess,
    pub n_tilde: AdaptedProcess,
    /// Leaf weights of `R~(x)`.
    pub tilde: Vec<f64>,
    /// Largest conditional covariance of the two components.
    pub orthogonality: f64,
    pub r0: f64,
}

/// `P = P_0 - M~ - N~` with `M~` an integral of the prices discounted by the
/// risk-tolerance wealth and `N~` orthogonal to them under `R~(x)`.
pub fn gkw_decompose(m: &MarketModel, base: &BaseSolution, rt: &RiskToleranceProcess) -> Result<GkwDecomposition> {
    let tree = m.tree();
    let tilde = tilde_measure(m, base, rt)?;
    let x = base.x;
    let payoff: Vec<f64> = (0..base.a.len()).map(|l| x * base.f[l] * (base.a[l] - 1.0)).collect();
    let p = tree.conditional_expectation(&tilde, &payoff);
    let cond = conditional_probs(tree, &tilde);
    let s = m.prices();
    let r = &rt.process;
    let sr = |n: usize| -> Vec<f64> { s.at(n).iter().map(|v| rt.initial * v / r.value(n)).collect() };
    let dim = s.dim();
    let mut dm = vec![0.0; tree.len()];
    let mut dn = vec![0.0; tree.len()];
    let mut orth: f64 = 0.0;
    for node in tree.internal_nodes() {
        let ch = tree.children(node);
        let k = ch.len();
        let base_sr = sr(node);
        let mut a = DMatrix::zeros(k, dim);
        let mut b = DVector::zeros(k);
        for (j, c) in ch.clone().enumerate() {
            let w = cond[c].sqrt();
            let v = sr(c);
            for i in 0..dim {
                a[(j, i)] = w * (v[i] - base_sr[i]);
            }
            b[j] = w * (p[c] - p[node]);
        }
        let (pinv, _) = sym_pinv(&(a.transpose() * &a));
        let proj = &a * (pinv * (a.transpose() * &b));
        let mut cov = 0.0;
        for (j, c) in ch.enumerate() {
            let w = cond[c].sqrt();
            dm[c] = -proj[j] / w;
            dn[c] = -(b[j] - proj[j]) / w;
            cov += proj[j] * (b[j] - proj[j]);
        }
        orth = orth.max(cov.abs());
    }
    let cumulate = |d: &[f64]| {
        let mut v = vec![0.0; tree.len()];
        for n in 1..tree.len() {
            v[n] = v[tree.parent(n).unwrap()] + d[n];
        }
        AdaptedProcess::scalar(v)
    };
    Ok(GkwDecomposition {
        p0: p[0],
        p: AdaptedProcess::scalar(p),
        m_tilde: cumulate(&dm),
        n_tilde: cumulate(&dn),
        tilde,
        orthogonality: orth,
        r0: rt.initial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkwHessian {
    pub a_xx: f64,
    pub a_ee: f64,
    pub b_ee: f64,
    pub a_xe: f64,
    pub b_ye: f64,
    pub c_a: f64,
    pub c_b: f64,
}

pub fn hessian_from_gkw(m: &MarketModel, dec: &GkwDecomposition, base: &BaseSolution) -> GkwHessian {
    let tree = m.tree();
    let (x, y) = (base.x, base.y);
    let n = base.a.len();
    let c_a = x * x
        * base.expect_r(
            &(0..n)
                .map(|l| base.f[l].powi(2) - base.g[l] - base.f[l].powi(2) / base.a[l])
                .collect::<Vec<_>>(),
        );
    let c_b = y * y
        * base.expect_r(&(0..n).map(|l| base.g[l] + base.f[l].powi(2) * (1.0 - base.a[l])).collect::<Vec<_>>());
    let tilde_sq = |proc: &AdaptedProcess| -> f64 {
        tree.leaves().map(|l| dec.tilde[tree.leaf_index(l)] * proc.value(l).powi(2)).sum()
    };
    let k = dec.r0 / x;
    let a_xx = x / dec.r0;
    let a_ee = k * dec.p0 * dec.p0 + k * tilde_sq(&dec.n_tilde) + c_a;
    let b_ee = k * (y / x).powi(2) * (dec.p0 * dec.p0 + tilde_sq(&dec.m_tilde)) + c_b;
    GkwHessian { a_xx, a_ee, b_ee, a_xe: dec.p0, b_ye: y * dec.p0 / (x * a_xx), c_a, c_b }
}

/// Largest gaps in the maps `M~ = (X/R) M^1` and `N~ = (x/y) N^1`.
pub fn recovery_residuals(
    base: &BaseSolution,
    rt: &RiskToleranceProcess,
    dec: &GkwDecomposition,
    m1: &AdaptedProcess,
    n1: &AdaptedProcess,
) -> (f64, f64) {
    let (x, y) = (base.x, base.y);
    let w = &base.primal.wealth;
    let mut a: f64 = 0.0;
    let mut b: f64 = 0.0;
    for k in 0..w.len() {
        a = a.max((dec.m_tilde.value(k) - w.value(k) / rt.process.value(k) * m1.value(k)).abs());
        b = b.max((dec.n_tilde.value(k) - x / y * n1.value(k)).abs());
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::sensitivity::{base_solution, expand};

    #[test]
    fn power_tolerance_is_scaled_wealth() {
        let m = instances::asymmetric_trinomial(1.0);
        let u = Utility::power(-1.0).unwrap();
        let base = base_solution(&m, &u, 1.0).unwrap();
        let rt = risk_tolerance(&m, &u, &base).unwrap();
        assert!(rt.exists);
        assert!((rt.initial - 0.5).abs() < 1e-13);
        for k in 0..rt.process.len() {
            assert!((rt.process.value(k) - base.primal.wealth.value(k) / 2.0).abs() < 1e-13);
        }
        let t = tilde_measure(&m, &base, &rt).unwrap();
        for (a, b) in t.iter().zip(&base.r) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_on_incomplete_tree_is_not_replicable() {
        let m = instances::trinomial_two_period();
        let u = instances::mixture_utility();
        let base = base_solution(&m, &u, 1.0).unwrap();
        let rt = risk_tolerance(&m, &u, &base).unwrap();
        assert!(!rt.exists && rt.certificate > 1e-8);
        assert!(matches!(gkw_decompose(&m, &base, &rt), Err(Error::NotReplicable { .. })));
    }

    #[test]
    fn gkw_matches_auxiliary_problems() {
        let m = instances::asymmetric_trinomial(1.0);
        let u = Utility::power(0.5).unwrap();
        let rep = expand(&m, &u, 1.0).unwrap();
        let rt = risk_tolerance(&m, &u, &rep.base).unwrap();
        let dec = gkw_decompose(&m, &rep.base, &rt).unwrap();
        let h = hessian_from_gkw(&m, &dec, &rep.base);
        assert!((h.a_xx - rep.aux.a_xx.value).abs() < 1e-10, "{h:?}");
        assert!((h.a_ee - rep.aux.a_ee.value).abs() < 1e-10, "{h:?} {}", rep.aux.a_ee.value);
        assert!((h.b_ee - rep.aux.b_ee.value).abs() < 1e-10, "{h:?} {}", rep.aux.b_ee.value);
        assert!((h.a_xe - rep.aux.a_xe).abs() < 1e-10, "{h:?} {}", rep.aux.a_xe);
        assert!((h.b_ye - rep.aux.b_ye).abs() < 1e-10, "{h:?} {}", rep.aux.b_ye);
        assert!(dec.orthogonality < 1e-14);
        let (a, b) = recovery_residuals(&rep.base, &rt, &dec, &rep.aux.a_ee.process, &rep.aux.b_ee.process);
        assert!(a < 1e-10 && b < 1e-10, "{a} {b}");
    }
}
