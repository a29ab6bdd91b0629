//! Hand-computed reference cases for the public operations.

use numperturb::duality::{dual_from_primal, solve_dual, solve_primal, verify_deflator};
use numperturb::risk_tolerance::{gkw_decompose, hessian_from_gkw, risk_tolerance, tilde_measure};
use numperturb::sensitivity::{base_solution, check_identities, expand, gradient};
use numperturb::strategy::{
    characteristics, discount_direction, drift_perturbation_theta, represent_martingale, SelectOptions,
    StrategyFamily,
};
use numperturb::{instances, AdaptedProcess, EventTree, MarketModel, PredictableProcess, Utility};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn complete_binomial_deflator_is_risk_neutral_density() {
    let m = instances::binomial(1.0);
    let d = solve_dual(&m, &Utility::power(0.5).unwrap(), 1.0, 0.0).unwrap();
    // q_up 0.2 = q_down 0.1
    let dens = [2.0 / 3.0, 4.0 / 3.0];
    for (l, q) in m.tree().leaves().zip(dens) {
        assert!(close(d.deflator.value(l) / d.y, q, 1e-12));
    }
}

#[test]
fn t1_log_dual_and_measure() {
    let m = instances::t1(1.0);
    let u = Utility::log();
    for x in [0.5, 1.0, 3.0] {
        let p = solve_primal(&m, &u, x, 0.0).unwrap();
        let d = dual_from_primal(&m, &u, &p).unwrap();
        assert!(d.deflator.values().iter().all(|y| close(*y, 1.0 / x, 1e-12)));
        assert!(close(d.value, x.ln() - 1.0, 1e-12));
        let base = base_solution(&m, &u, x).unwrap();
        for (r, p) in base.r.iter().zip(m.tree().leaf_probs()) {
            assert!(close(*r, p, 1e-12));
        }
    }
}

#[test]
fn martingale_prices_give_constant_deflator() {
    // T1 is symmetric, so P is already a martingale measure
    let m = instances::t1(0.5);
    let u = Utility::power(-1.0).unwrap();
    let base = base_solution(&m, &u, 2.0).unwrap();
    for (r, p) in base.r.iter().zip(m.tree().leaf_probs()) {
        assert!(close(*r, p, 1e-12));
    }
    let y = AdaptedProcess::constant(m.tree(), 0.7);
    assert_eq!(verify_deflator(&m, 0.0, &y).unwrap().max_violation, 0.0);
}

#[test]
fn transported_deflator_is_a_deflator_of_the_perturbed_model() {
    let m = instances::trinomial_two_period();
    let u = instances::mixture_utility();
    let d = solve_dual(&m, &u, 1.0, 0.0).unwrap();
    for eps in [-0.5, 0.25, 1.0] {
        let n = m.numeraire(eps).unwrap();
        let moved = d.deflator.zip_with(&n, |a, b| a * b).unwrap();
        assert!(verify_deflator(&m, eps, &moved).unwrap().max_violation <= 1e-10);
    }
}

#[test]
fn t1_log_expansion_coefficients() {
    let m = instances::t1(1.0);
    let rep = expand(&m, &Utility::log(), 1.0).unwrap();
    let (gu, _) = gradient(&rep.base);
    assert!(close(gu[0], 1.0, 1e-12) && close(gu[1], 0.0, 1e-14));
    let h = rep.hessian_u;
    assert!(close(h[0][0], -1.0, 1e-12));
    assert!(close(h[0][1], 0.0, 1e-12));
    assert!(close(h[1][1], 1.0 / 150.0, 1e-12));
    assert!(check_identities(m.tree(), &rep.base, &rep.aux).max() <= 1e-12);
}

#[test]
fn complete_binomial_has_trivial_dual_span() {
    let m = instances::binomial_two_period(1.0);
    let rep = expand(&m, &Utility::power(0.5).unwrap(), 1.0).unwrap();
    assert!(rep.basis.dual.is_empty());
    let b_yy = rep.base.expect_r(&rep.base.b);
    assert!(close(rep.aux.b_yy.value, b_yy, 1e-12));
    assert!(check_identities(m.tree(), &rep.base, &rep.aux).max() <= 1e-10);
}

#[test]
fn characteristics_route_jumps_by_size() {
    let m = instances::t1(1.0);
    let c = characteristics(&m);
    assert!(m.tree().leaves().all(|l| c.drift.at(l)[1].abs() < 1e-15));
    assert!(c.large_jumps.values().iter().all(|v| *v == 0.0));

    let tree = EventTree::uniform(1, &[0.5, 0.5]).unwrap();
    let inc = vec![vec![0.0], vec![1.5], vec![-0.5]];
    let theta = PredictableProcess::constant(&tree, &[1.0, 0.0]);
    let m = MarketModel::from_increments(tree, &inc, theta, None).unwrap();
    let c = characteristics(&m);
    assert_eq!(c.large_jumps.at(1)[1], 1.5);
    assert_eq!(c.large_jumps.at(2)[1], 0.0);
    // only the small jump is compensated
    assert!(close(c.drift.at(1)[1], -0.25, 1e-15));
    assert!(c.reassemble().max_abs_diff(m.returns()) < 1e-15);
}

#[test]
fn zero_direction_leaves_returns_unchanged() {
    let m = instances::trinomial_two_period();
    let zero = PredictableProcess::zeros(m.tree(), 2);
    assert_eq!(discount_direction(&m, &zero).unwrap().max_abs_diff(m.returns()), 0.0);
    let psi = PredictableProcess::zeros(m.tree(), 1);
    let th = drift_perturbation_theta(&m, &psi, 1).unwrap();
    assert_eq!(th.max_abs_diff(&PredictableProcess::constant(m.tree(), &[1.0, 0.0])), 0.0);
}

#[test]
fn stock_integral_is_represented_by_a_constant() {
    let m = instances::t1(1.0);
    let tree = m.tree();
    let target = m.returns().component(1).map(|v| 0.7 * v);
    let rep = represent_martingale(tree, &target, m.returns()).unwrap();
    assert!(close(rep.integrand.at_node(0)[1], 0.7, 1e-14));
    assert!(rep.max_residual < 1e-15);
    let zero = AdaptedProcess::zeros(tree, 1);
    let rep = represent_martingale(tree, &zero, m.returns()).unwrap();
    assert!(rep.integrand.at_node(0).iter().all(|g| *g == 0.0));
}

#[test]
fn wealth_only_perturbation_corrects_proportions_linearly() {
    let m = instances::trinomial_two_period();
    let u = instances::mixture_utility();
    let rep = expand(&m, &u, 1.0).unwrap();
    let fam = StrategyFamily::new(&m, &u, &rep).unwrap();
    let lvl = fam.level(8).unwrap();
    let dx = 0.01;
    let p = fam.proportions(&lvl, dx, 0.0).unwrap();
    let expected = fam.optimal_proportions().scaled_add(dx, &lvl.gamma0).unwrap();
    assert!(p.max_abs_diff(&expected) < 1e-15);
}

#[test]
fn selected_level_is_monotone_along_the_dyadic_sequence() {
    let m = instances::trinomial_two_period();
    let u = instances::mixture_utility();
    let rep = expand(&m, &u, 1.0).unwrap();
    let fam = StrategyFamily::new(&m, &u, &rep).unwrap();
    let opts = SelectOptions::default();
    let ns: Vec<usize> = (3..=10)
        .map(|k| {
            let h = 0.5f64.powi(k);
            fam.select_n(h, h, &opts).unwrap().n
        })
        .collect();
    assert!(ns.windows(2).all(|w| w[0] <= w[1]), "{ns:?}");
}

#[test]
fn risk_tolerance_measures_and_log_case() {
    let m = instances::t1(1.0);
    let log = Utility::log();
    let base = base_solution(&m, &log, 1.0).unwrap();
    let rt = risk_tolerance(&m, &log, &base).unwrap();
    let tilde = tilde_measure(&m, &base, &rt).unwrap();
    assert!(tilde.iter().zip(&base.r).all(|(a, b)| close(*a, *b, 1e-14)));
    let dec = gkw_decompose(&m, &base, &rt).unwrap();
    assert!(dec.p.values().iter().all(|v| *v == 0.0));
    let h = hessian_from_gkw(&m, &dec, &base);
    assert_eq!(h.a_xe, 0.0);
    assert!(close(h.a_ee, -1.0 / 150.0, 1e-15));

    let m = instances::asymmetric_trinomial(1.0);
    let pw = Utility::power(-1.0).unwrap();
    let base = base_solution(&m, &pw, 1.0).unwrap();
    let rt = risk_tolerance(&m, &pw, &base).unwrap();
    let tilde = tilde_measure(&m, &base, &rt).unwrap();
    assert!(tilde.iter().zip(&base.r).all(|(a, b)| close(*a, *b, 1e-14)));
}

#[test]
fn bank_direction_has_no_second_order_effect() {
    let m = instances::asymmetric_trinomial(0.0);
    let u = Utility::power(0.5).unwrap();
    let rep = expand(&m, &u, 1.0).unwrap();
    let rt = risk_tolerance(&m, &u, &rep.base).unwrap();
    let dec = gkw_decompose(&m, &rep.base, &rt).unwrap();
    let h = hessian_from_gkw(&m, &dec, &rep.base);
    assert_eq!((h.a_ee, h.b_ee, h.a_xe, h.b_ye), (0.0, 0.0, 0.0, 0.0));
    for eps in [-0.5, 0.5] {
        assert_eq!(solve_primal(&m, &u, 1.0, eps).unwrap().value, rep.base.primal.value);
    }
}

#[test]
fn drift_perturbation_shifts_the_drift_by_the_quadratic_variation() {
    let m = instances::asymmetric_trinomial(1.0);
    let tree = m.tree();
    let psi = PredictableProcess::constant(tree, &[0.8]);
    let theta = drift_perturbation_theta(&m, &psi, 1).unwrap();
    let pm = m.with_theta(theta.clone()).unwrap();
    for eps in [1e-3, 1e-4, 1e-5] {
        let mut scaled = theta.clone();
        scaled.scale(eps);
        let r = discount_direction(&pm, &scaled).unwrap();
        for l in tree.leaves() {
            let d = m.dr(l)[1];
            let first_order = (r.at(l)[1] - d) / eps;
            assert!(close(first_order, 0.8 * d * d, 2.0 * eps), "{first_order} at eps {eps}");
        }
    }
}

#[test]
fn drift_perturbation_of_one_asset_moves_the_others_through_covariation() {
    let m = instances::two_asset_two_period();
    let tree = m.tree();
    let psi = PredictableProcess::constant(tree, &[0.5]);
    let mut theta = drift_perturbation_theta(&m, &psi, 1).unwrap();
    let eps = 1e-6;
    theta.scale(eps);
    let r = discount_direction(&m, &theta).unwrap();
    for c in tree.children(0) {
        let d = m.dr(c);
        // first-order shift of asset j is psi d rho^1 d rho^j
        for j in 1..=2 {
            assert!(close((r.at(c)[j] - d[j]) / eps, 0.5 * d[1] * d[j], 1e-6));
        }
    }
}
