//! Random instances and small numerical helpers shared by tests, the
//! acceptance runner and the benchmarks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::instance::Instance;
use crate::mdp::TabularMdp;
use crate::policy::{FeatureMap, SoftmaxPolicy};

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random feature vectors with entries in `[-1, 1]`, rescaled so that no row
/// exceeds `max_norm`.
pub fn random_features<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, dim: usize, max_norm: f64) -> FeatureMap {
    FeatureMap::from_fn(n_states, n_actions, dim, |_, _| {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > max_norm {
            v * (max_norm / n)
        } else {
            v
        }
    })
}

/// A dense random MDP: every transition row strictly positive, rewards in
/// `[-1, 1]`, three-dimensional policy features and tabular critic features.
pub fn random_instance(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_simplex(&mut rng, n_states)).collect())
        .collect();
    let rewards: Vec<Vec<f64>> = (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rho0 = random_simplex(&mut rng, n_states);
    let mdp = TabularMdp::from_tables(&transitions, &rewards, gamma, rho0, Some(1.0)).expect("consistent shapes");
    let pf = random_features(&mut rng, n_states, n_actions, 3, 1.0);
    let cf = FeatureMap::tabular(n_states, n_actions);
    Instance::new(mdp, pf, cf, DVector::zeros(3)).expect("random instance is valid")
}

/// Policy on `inst` with parameters uniform in `[-scale, scale]`.
pub fn random_policy(inst: &Instance, seed: u64, scale: f64) -> SoftmaxPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = inst.policy_features.dim();
    let theta = DVector::from_fn(m, |_, _| rng.random_range(-scale..scale));
    inst.policy_at(theta).expect("matching dimension")
}

pub fn chain3() -> Instance {
    Instance::bundled("chain3").expect("bundled instance")
}

/// A non-uniform policy on the bundled three-state chain.
pub fn chain3_policy(inst: &Instance, seed: u64) -> SoftmaxPolicy {
    random_policy(inst, seed, 1.0)
}

/// Central difference gradient of `f` at `x`.
pub fn central_difference(x: &DVector<f64>, h: f64, mut f: impl FnMut(DVector<f64>) -> f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut up = x.clone();
        up[i] += h;
        let mut down = x.clone();
        down[i] -= h;
        (f(up) - f(down)) / (2.0 * h)
    })
}

pub use crate::linalg::mean_se;
