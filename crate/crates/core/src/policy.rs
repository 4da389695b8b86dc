//! Softmax-linear policies with analytic score and score Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Feature vectors `phi(s, a)` for every state-action pair.
///
/// Used both for policy preferences (dimension `M`) and for the linear critic
/// (dimension `N`). Pairs are indexed as `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    rows: Vec<DVector<f64>>,
}

impl FeatureMap {
    /// Build from a `[s][a][k]` table.
    pub fn new(table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_states = table.len();
        let n_actions = table.first().map(|r| r.len()).unwrap_or(0);
        let dim = table.first().and_then(|r| r.first()).map(|v| v.len()).unwrap_or(0);
        let mut problems = Vec::new();
        if n_states == 0 || n_actions == 0 || dim == 0 {
            problems.push("feature table must be non-empty in every dimension".to_string());
        }
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for (s, per_state) in table.iter().enumerate() {
            if per_state.len() != n_actions {
                problems.push(format!("features[{s}] has {} actions, expected {n_actions}", per_state.len()));
                continue;
            }
            for (a, v) in per_state.iter().enumerate() {
                if v.len() != dim {
                    problems.push(format!("features[{s}][{a}] has length {}, expected {dim}", v.len()));
                } else if v.iter().any(|x| !x.is_finite()) {
                    problems.push(format!("features[{s}][{a}] has a non-finite entry"));
                }
                rows.push(DVector::from_column_slice(v));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self { n_states, n_actions, dim, rows })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, dim: usize, mut f: impl FnMut(usize, usize) -> DVector<f64>) -> Self {
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let v = f(s, a);
                assert_eq!(v.len(), dim, "feature closure returned wrong length");
                rows.push(v);
            }
        }
        Self { n_states, n_actions, dim, rows }
    }

    /// One-hot features, `Phi = I`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self::from_fn(n_states, n_actions, n, |s, a| {
            let mut v = DVector::zeros(n);
            v[s * n_actions + a] = 1.0;
            v
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, s: usize, a: usize) -> &DVector<f64> {
        &self.rows[s * self.n_actions + a]
    }

    pub fn phi_pair(&self, pair: usize) -> &DVector<f64> {
        &self.rows[pair]
    }

    pub fn max_norm(&self) -> f64 {
        self.rows.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// The `|S||A| x dim` feature matrix `Phi`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.dim, |p, k| self.rows[p][k])
    }

    pub fn to_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.phi(s, a).iter().copied().collect()).collect())
            .collect()
    }

    /// Invariant violations for use as critic features: unit-ball rows and a
    /// full-column-rank `Phi`.
    pub fn critic_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let n2 = self.phi(s, a).norm_squared();
                if n2 > 1.0 + 1e-12 {
                    out.push(format!("critic feature (s={s},a={a}) has squared norm {n2} > 1"));
                }
            }
        }
        if let Err(e) = self.check_full_rank() {
            out.push(e.to_string());
        }
        out
    }

    pub fn check_full_rank(&self) -> Result<()> {
        match linalg::first_dependent_column(&self.matrix(), 1e-10) {
            Some((column, depends_on)) => Err(Error::RankDeficient { column, depends_on }),
            None => Ok(()),
        }
    }
}

/// A differentiable stochastic policy `pi_theta(a | s)`.
///
/// Only the softmax-linear class is implemented; other parametrizations plug in
/// here.
pub trait DifferentiablePolicy: Clone + Send + Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Parameter dimension `M`.
    fn dim(&self) -> usize;
    fn theta(&self) -> &DVector<f64>;
    fn with_theta(&self, theta: DVector<f64>) -> Self;
    fn action_probs(&self, s: usize) -> DVector<f64>;
    /// `grad_theta log pi(a | s)`.
    fn score(&self, s: usize, a: usize) -> DVector<f64>;
    /// Hessian of `log pi(a | s)` in `theta`.
    fn score_jacobian(&self, s: usize, a: usize) -> DMatrix<f64>;

    /// Scores for every action of state `s`, sharing one softmax evaluation.
    fn scores(&self, s: usize) -> Vec<DVector<f64>> {
        (0..self.n_actions()).map(|a| self.score(s, a)).collect()
    }
}

/// Softmax over linear preferences `h(s, a) = theta . phi(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    theta: DVector<f64>,
    features: FeatureMap,
}

impl SoftmaxPolicy {
    pub fn new(features: FeatureMap, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != features.dim() {
            return Err(Error::LengthMismatch { left: theta.len(), right: features.dim() });
        }
        Ok(Self { theta, features })
    }

    pub fn zeros(features: FeatureMap) -> Self {
        let theta = DVector::zeros(features.dim());
        Self { theta, features }
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    fn mean_feature(&self, s: usize, probs: &DVector<f64>) -> DVector<f64> {
        let mut mean = DVector::zeros(self.features.dim());
        for (b, &p) in probs.iter().enumerate() {
            mean.axpy(p, self.features.phi(s, b), 1.0);
        }
        mean
    }
}

impl DifferentiablePolicy for SoftmaxPolicy {
    fn n_states(&self) -> usize {
        self.features.n_states()
    }

    fn n_actions(&self) -> usize {
        self.features.n_actions()
    }

    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    fn with_theta(&self, theta: DVector<f64>) -> Self {
        assert_eq!(theta.len(), self.features.dim());
        Self { theta, features: self.features.clone() }
    }

    fn action_probs(&self, s: usize) -> DVector<f64> {
        let n = self.n_actions();
        let prefs: Vec<f64> = (0..n).map(|a| self.theta.dot(self.features.phi(s, a))).collect();
        let max = prefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = prefs.iter().map(|h| (h - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        DVector::from_iterator(n, exps.into_iter().map(|e| e / z))
    }

    fn score(&self, s: usize, a: usize) -> DVector<f64> {
        let probs = self.action_probs(s);
        self.features.phi(s, a) - self.mean_feature(s, &probs)
    }

    fn score_jacobian(&self, s: usize, _a: usize) -> DMatrix<f64> {
        // Independent of the action for softmax-linear: minus the feature
        // covariance under pi(. | s).
        let probs = self.action_probs(s);
        let mean = self.mean_feature(s, &probs);
        let m = self.dim();
        let mut cov = DMatrix::zeros(m, m);
        for (b, &p) in probs.iter().enumerate() {
            let c = self.features.phi(s, b) - &mean;
            cov.ger(p, &c, &c, 1.0);
        }
        -cov
    }

    fn scores(&self, s: usize) -> Vec<DVector<f64>> {
        let probs = self.action_probs(s);
        let mean = self.mean_feature(s, &probs);
        (0..self.n_actions()).map(|a| self.features.phi(s, a) - &mean).collect()
    }
}

/// Certified constants of the policy class: score bound `G`, score-Jacobian
/// bound `B`, and Jacobian Lipschitz constant `iota`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConstants {
    pub g: f64,
    pub b: f64,
    pub iota: f64,
}

/// Constants for softmax-linear policies, all expressed through the largest
/// feature norm: `G = 2 max|phi|`, `B = 4 max|phi|^2`, `iota = 8 max|phi|^3`.
pub fn policy_constants(policy: &SoftmaxPolicy) -> PolicyConstants {
    let f = policy.features().max_norm();
    PolicyConstants { g: 2.0 * f, b: 4.0 * f * f, iota: 8.0 * f * f * f }
}
