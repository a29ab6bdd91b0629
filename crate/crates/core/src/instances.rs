//! Built-in markets and utilities used by tests, the harness and the CLI.

use rand::Rng;

use crate::market::MarketModel;
use crate::process::PredictableProcess;
use crate::tree::EventTree;
use crate::utility::Utility;

fn one_period(moves: &[f64], probs: &[f64], theta1: f64) -> MarketModel {
    let tree = EventTree::uniform(1, probs).expect("valid one-period tree");
    let mut inc = vec![vec![0.0]];
    inc.extend(moves.iter().map(|m| vec![*m]));
    let theta = PredictableProcess::constant(&tree, &[1.0 - theta1, theta1]);
    MarketModel::from_increments(tree, &inc, theta, None).expect("valid one-period model")
}

fn recombining_moves(tree: &EventTree, moves: &[f64]) -> Vec<Vec<f64>> {
    (0..tree.len())
        .map(|n| match tree.parent(n) {
            None => vec![0.0],
            Some(p) => vec![moves[n - tree.children(p).start]],
        })
        .collect()
}

/// Symmetric trinomial, `d rho in {0.1, 0, -0.1}` with equal probabilities.
pub fn t1(theta1: f64) -> MarketModel {
    let third = 1.0 / 3.0;
    one_period(&[0.1, 0.0, -0.1], &[third, third, third], theta1)
}

/// Trinomial with `d rho in {0.2, 0, -0.1}` and equal probabilities.
pub fn asymmetric_trinomial(theta1: f64) -> MarketModel {
    let third = 1.0 / 3.0;
    one_period(&[0.2, 0.0, -0.1], &[third, third, third], theta1)
}

/// Complete one-period binomial, `d rho in {0.2, -0.1}`.
pub fn binomial(theta1: f64) -> MarketModel {
    one_period(&[0.2, -0.1], &[0.5, 0.5], theta1)
}

/// Two-period complete binomial with the same one-step moves as [`binomial`].
pub fn binomial_two_period(theta1: f64) -> MarketModel {
    let tree = EventTree::uniform(2, &[0.5, 0.5]).unwrap();
    let inc = recombining_moves(&tree, &[0.2, -0.1]);
    let theta = PredictableProcess::constant(&tree, &[1.0 - theta1, theta1]);
    MarketModel::from_increments(tree, &inc, theta, None).unwrap()
}

/// Two-period incomplete trinomial with node-dependent `theta`.
pub fn trinomial_two_period() -> MarketModel {
    let tree = EventTree::uniform(2, &[0.3, 0.4, 0.3]).unwrap();
    let inc = recombining_moves(&tree, &[0.15, 0.02, -0.1]);
    let th = [0.8, 0.5, 1.0, 1.5];
    let theta = PredictableProcess::from_fn(&tree, 2, |n| vec![1.0 - th[n], th[n]]).unwrap();
    MarketModel::from_increments(tree, &inc, theta, None).unwrap()
}

/// Two assets on a two-period tree with four branches per node.
pub fn two_asset_two_period() -> MarketModel {
    let tree = EventTree::uniform(2, &[0.2, 0.3, 0.25, 0.25]).unwrap();
    let moves = [[0.12, 0.05], [0.03, -0.08], [-0.07, 0.1], [-0.02, -0.04]];
    let inc: Vec<Vec<f64>> = (0..tree.len())
        .map(|n| match tree.parent(n) {
            None => vec![0.0, 0.0],
            Some(p) => moves[n - tree.children(p).start].to_vec(),
        })
        .collect();
    let theta = PredictableProcess::from_fn(&tree, 3, |n| {
        let a = 0.3 + 0.1 * n as f64;
        vec![1.0 - a - 0.4, a, 0.4]
    })
    .unwrap();
    MarketModel::from_increments(tree, &inc, theta, None).unwrap()
}

/// `0.5 x^{1/2}/(1/2) + 0.5 log x`.
pub fn mixture_utility() -> Utility {
    Utility::mixture(vec![(0.5, 0.5), (0.5, 0.0)]).unwrap()
}

/// Random model with `steps` periods, between 2 and `max_branches` children
/// per node and `d` assets. One-step increments are centered under a random
/// strictly positive measure, so no node admits an arbitrage.
pub fn random_model<R: Rng>(rng: &mut R, steps: usize, max_branches: usize, d: usize) -> MarketModel {
    assert!(max_branches >= 2);
    let mut parents = vec![None];
    let mut probs = vec![1.0];
    let mut inc = vec![vec![0.0; d]];
    let mut frontier = vec![0usize];
    for _ in 0..steps {
        let mut next = Vec::new();
        for &p in &frontier {
            let k = rng.gen_range(2..=max_branches);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let pr: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let qraw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
            let qs: f64 = qraw.iter().sum();
            let z: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| rng.gen_range(-0.25..0.25)).collect())
                .collect();
            let mean: Vec<f64> = (0..d)
                .map(|i| z.iter().zip(&qraw).map(|(v, q)| v[i] * q / qs).sum())
                .collect();
            for c in 0..k {
                next.push(parents.len());
                parents.push(Some(p));
                probs.push(pr[c]);
                inc.push((0..d).map(|i| z[c][i] - mean[i]).collect());
            }
        }
        frontier = next;
    }
    let tree = EventTree::from_parents(&parents, &probs).unwrap();
    let theta = PredictableProcess::from_fn(&tree, d + 1, |_| {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let s: f64 = v.iter().sum();
        v.insert(0, 1.0 - s);
        v
    })
    .unwrap();
    MarketModel::from_increments(tree, &inc, theta, None).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtins_are_valid() {
        assert_eq!(t1(1.0).tree().n_leaves(), 3);
        assert_eq!(binomial_two_period(1.0).tree().n_leaves(), 4);
        let m = trinomial_two_period();
        assert_eq!(m.tree().n_leaves(), 9);
        assert_eq!(m.theta().at_node(3), &[-0.5, 1.5]);
        assert_eq!(two_asset_two_period().assets(), 2);
    }

    #[test]
    fn random_models_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_model(&mut rng, 3, 4, 2);
            assert!(m.eps0() > 0.0);
            assert_eq!(m.tree().steps(), 3);
        }
    }
}
