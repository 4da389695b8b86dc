//! Exact quantities by direct linear algebra on a tabular MDP: values,
//! objective, visitation measure, gradients, Hessian, smoothness constants,
//! region classification and the linear-critic fixed point.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{induced_chain, StateActionChain, TabularMdp};
use crate::policy::{DifferentiablePolicy, FeatureMap};

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    /// `V(s)`.
    pub v: DVector<f64>,
    /// `Q(s, a)` indexed by pair.
    pub q: DVector<f64>,
}

/// Solve `Q = R + gamma P Q` over pairs, then `V(s) = sum_a pi(a|s) Q(s,a)`.
pub fn value_functions<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P) -> Result<ValueFunctions> {
    let n = mdp.n_pairs();
    let k = mdp.pair_kernel(policy);
    let sys = DMatrix::identity(n, n) - k * mdp.gamma;
    let q = linalg::solve(&sys, &mdp.reward_vector(), "action values")?;
    let v = state_values(mdp, policy, &q);
    Ok(ValueFunctions { v, q })
}

/// `V(s) = sum_a pi(a|s) Q(s, a)` for any pair-indexed `Q`.
pub fn state_values<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, q: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mdp.n_states, |s, _| {
        let probs = policy.action_probs(s);
        (0..mdp.n_actions).map(|a| probs[a] * q[mdp.pair(s, a)]).sum()
    })
}

/// `J(theta) = rho0^T V`.
pub fn objective<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P) -> Result<f64> {
    let vf = value_functions(mdp, policy)?;
    Ok(mdp.rho0.iter().zip(vf.v.iter()).map(|(r, v)| r * v).sum())
}

/// Discounted state-visitation measure, solving `d^T (I - gamma P_pi) = rho0^T`.
pub fn discounted_visitation<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P) -> Result<DVector<f64>> {
    let n = mdp.n_states;
    let sys = DMatrix::identity(n, n) - mdp.state_kernel(policy).transpose() * mdp.gamma;
    linalg::solve(&sys, &DVector::from_column_slice(&mdp.rho0), "discounted visitation")
}

/// `sum_s w(s) sum_a pi(a|s) score(s, a) q(s, a)`.
pub(crate) fn weighted_score_sum<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, state_weight: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(policy.dim());
    for s in 0..mdp.n_states {
        if state_weight[s] == 0.0 {
            continue;
        }
        let probs = policy.action_probs(s);
        let scores = policy.scores(s);
        for a in 0..mdp.n_actions {
            g.axpy(state_weight[s] * probs[a] * q[mdp.pair(s, a)], &scores[a], 1.0);
        }
    }
    g
}

/// Policy gradient theorem in summation form:
/// `sum_s d(s) sum_a pi(a|s) score(s, a) Q(s, a)`.
pub fn exact_gradient<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P) -> Result<DVector<f64>> {
    let d = discounted_visitation(mdp, policy)?;
    let vf = value_functions(mdp, policy)?;
    Ok(weighted_score_sum(mdp, policy, &d, &vf.q))
}

/// Same as [`exact_gradient`] for an arbitrary pair-indexed action-value table.
pub fn gradient_with_q<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, q: &DVector<f64>) -> Result<DVector<f64>> {
    let d = discounted_visitation(mdp, policy)?;
    Ok(weighted_score_sum(mdp, policy, &d, q))
}

/// State marginals `rho_k` for `k = 0..horizon`.
pub fn state_marginals<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Vec<DVector<f64>> {
    let kernel_t = mdp.state_kernel(policy).transpose();
    let mut out = Vec::with_capacity(horizon);
    let mut rho = DVector::from_column_slice(&mdp.rho0);
    for _ in 0..horizon {
        let next = &kernel_t * &rho;
        out.push(rho);
        rho = next;
    }
    out
}

/// `J_H(theta) = E[sum_{t<H} gamma^t R_t]`.
pub fn truncated_objective<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let r_pi = state_values(mdp, policy, &mdp.reward_vector());
    Ok(state_marginals(mdp, policy, horizon)
        .iter()
        .enumerate()
        .map(|(k, rho)| mdp.gamma.powi(k as i32) * rho.dot(&r_pi))
        .sum())
}

/// Exact `grad J_H`.
///
/// Uses `grad J_H = sum_{k<H} gamma^k E[score_k Q^{(H-k)}(s_k, a_k)]` where
/// `Q^{(n)} = R + gamma P Q^{(n-1)}` is the `n`-step truncated action value.
pub fn truncated_gradient<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let kernel = mdp.pair_kernel(policy);
    let r = mdp.reward_vector();
    // q_steps[n - 1] = Q^{(n)}
    let mut q_steps = Vec::with_capacity(horizon);
    q_steps.push(r.clone());
    for n in 1..horizon {
        let next = &r + (&kernel * &q_steps[n - 1]) * mdp.gamma;
        q_steps.push(next);
    }
    let mut g = DVector::zeros(policy.dim());
    for (k, rho) in state_marginals(mdp, policy, horizon).iter().enumerate() {
        let w = rho * mdp.gamma.powi(k as i32);
        g += weighted_score_sum(mdp, policy, &w, &q_steps[horizon - k - 1]);
    }
    Ok(g)
}

/// Unrolled form `sum_{k<H} sum_{t=k}^{H-1} gamma^t E[score_k R_t]`, evaluated
/// term by term from pair marginals. Independent of [`truncated_gradient`].
pub fn temporal_gradient<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let kernel = mdp.pair_kernel(policy);
    let kernel_t = kernel.transpose();
    let r = mdp.reward_vector();
    let n = mdp.n_pairs();
    let mut mu = DVector::from_column_slice(&mdp.initial_pair_distribution(policy));
    let scores: Vec<DVector<f64>> = (0..n).map(|p| {
        let (s, a) = mdp.unpair(p);
        policy.score(s, a)
    }).collect();
    let mut g = DVector::zeros(policy.dim());
    for k in 0..horizon {
        // Expected score-weighted reward t - k steps ahead of time k.
        let mut ahead = r.clone();
        let mut inner = DVector::zeros(n);
        for t in k..horizon {
            inner.axpy(mdp.gamma.powi(t as i32), &ahead, 1.0);
            if t + 1 < horizon {
                ahead = &kernel * &ahead;
            }
        }
        for p in 0..n {
            g.axpy(mu[p] * inner[p], &scores[p], 1.0);
        }
        mu = &kernel_t * &mu;
    }
    Ok(g)
}

/// Finite-difference Hessian of the exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    /// Symmetrized matrix `(A + A^T) / 2`.
    pub matrix: DMatrix<f64>,
    /// `|A - A^T| / |A|` before symmetrization (Frobenius), 0 when `A = 0`.
    pub raw_asymmetry: f64,
    /// Descending eigenvalues of `matrix`.
    pub eigenvalues: DVector<f64>,
    /// Matching eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl HessianEstimate {
    pub fn top_eigenvalue(&self) -> f64 {
        self.eigenvalues.get(0).copied().unwrap_or(0.0)
    }

    /// Eigenvectors whose eigenvalue is strictly positive.
    pub fn positive_directions(&self) -> DMatrix<f64> {
        let k = self.eigenvalues.iter().filter(|&&l| l > 0.0).count();
        self.eigenvectors.columns(0, k).into_owned()
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-4;

pub fn hessian<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, fd_step: f64) -> Result<HessianEstimate> {
    if !(1e-7..=1e-2).contains(&fd_step) {
        return Err(Error::InvalidArgument(format!("fd_step {fd_step} outside [1e-7, 1e-2]")));
    }
    let m = policy.dim();
    let theta = policy.theta().clone();
    let mut raw = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut up = theta.clone();
        up[j] += fd_step;
        let mut down = theta.clone();
        down[j] -= fd_step;
        let gu = exact_gradient(mdp, &policy.with_theta(up))?;
        let gd = exact_gradient(mdp, &policy.with_theta(down))?;
        raw.set_column(j, &((gu - gd) / (2.0 * fd_step)));
    }
    let norm = raw.norm();
    let raw_asymmetry = if norm > 0.0 { (&raw - raw.transpose()).norm() / norm } else { 0.0 };
    let matrix = linalg::symmetrize(&raw);
    let (eigenvalues, eigenvectors) = linalg::sym_eigen_desc(&matrix);
    Ok(HessianEstimate { matrix, raw_asymmetry, eigenvalues, eigenvectors })
}

/// Lipschitz constants of the gradient (`l`) and of the Hessian (`chi`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l: f64,
    pub chi: f64,
}

pub fn smoothness_constants(r_max: f64, g: f64, b: f64, iota: f64, gamma: f64) -> SmoothnessConstants {
    let om = 1.0 - gamma;
    let l = r_max * b / om.powi(2) + (1.0 + gamma) * r_max * g * g / om.powi(3);
    let inner = [
        b,
        g * g * gamma / om,
        if g > 0.0 { iota / g } else { 0.0 },
        b * gamma / om,
        (g * g * (1.0 + gamma) + b * om * gamma) / om.powi(2),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let chi = r_max * g * b / om.powi(2) + r_max * g.powi(3) * (1.0 + gamma) / om.powi(3) + r_max * g / om * inner;
    SmoothnessConstants { l, chi }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    LargeGradient,
    StrictSaddle,
    SecondOrderStationary,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::LargeGradient => "large_gradient",
            Region::StrictSaddle => "strict_saddle",
            Region::SecondOrderStationary => "second_order_stationary",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionThresholds {
    pub mu: f64,
    pub ell: f64,
    pub delta: f64,
    pub omega: f64,
}

impl RegionThresholds {
    /// Squared-gradient level `mu ell (1 + 1/delta)` above which a point is in
    /// the large-gradient region.
    pub fn gradient_level(&self) -> f64 {
        self.mu * self.ell * (1.0 + 1.0 / self.delta)
    }

    pub fn region_of(&self, grad_norm: f64, top_eig: f64) -> Region {
        if grad_norm * grad_norm >= self.gradient_level() {
            Region::LargeGradient
        } else if top_eig >= self.omega {
            Region::StrictSaddle
        } else {
            Region::SecondOrderStationary
        }
    }
}

/// `ell = L sigma^2 - D^2 mu`.
pub fn default_ell(l: f64, sigma: f64, d: f64, mu: f64) -> f64 {
    l * sigma * sigma - d * d * mu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub hessian_top_eig: f64,
    pub region: Region,
    pub thresholds: RegionThresholds,
}

pub fn classify<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, thresholds: RegionThresholds) -> Result<StationarityReport> {
    for (name, v) in [("mu", thresholds.mu), ("ell", thresholds.ell), ("delta", thresholds.delta), ("omega", thresholds.omega)] {
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    let grad_norm = exact_gradient(mdp, policy)?.norm();
    let hessian_top_eig = hessian(mdp, policy, DEFAULT_FD_STEP)?.top_eigenvalue();
    Ok(StationarityReport { grad_norm, hessian_top_eig, region: thresholds.region_of(grad_norm, hessian_top_eig), thresholds })
}

/// The linear system of the TD(0) fixed point under the stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSystem {
    /// `A = E_eta[phi (phi - gamma phi')^T]`.
    pub a: DMatrix<f64>,
    /// `b = E_eta[R phi]`.
    pub b: DVector<f64>,
    /// `lambda_min(A + A^T)`.
    pub lambda_min_sym: f64,
    /// Stationary law over pairs.
    pub eta: DVector<f64>,
}

pub fn critic_system(mdp: &TabularMdp, chain: &StateActionChain, features: &FeatureMap) -> CriticSystem {
    let phi = features.matrix();
    let eta = chain.stationary.clone();
    let d = DMatrix::from_diagonal(&eta);
    let a = phi.transpose() * &d * (&phi - (&chain.kernel * &phi) * mdp.gamma);
    let b = phi.transpose() * (&d * mdp.reward_vector());
    let lambda_min_sym = linalg::min_eigenvalue(&(&a + a.transpose()));
    CriticSystem { a, b, lambda_min_sym, eta }
}

pub fn critic_matrix<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, features: &FeatureMap) -> Result<CriticSystem> {
    let chain = induced_chain(mdp, policy)?;
    Ok(critic_system(mdp, &chain, features))
}

/// `w* = A^{-1} b`, after checking that `Phi` has full column rank.
pub fn critic_fixed_point<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, features: &FeatureMap) -> Result<DVector<f64>> {
    features.check_full_rank()?;
    let sys = critic_matrix(mdp, policy, features)?;
    linalg::solve(&sys.a, &sys.b, "critic fixed point")
}

/// `|Phi w - Proj (R + gamma P Phi w)|_eta` with the `eta`-weighted projection
/// onto the span of `Phi`.
pub fn projected_bellman_residual(mdp: &TabularMdp, chain: &StateActionChain, features: &FeatureMap, w: &DVector<f64>) -> Result<f64> {
    let phi = features.matrix();
    let eta = &chain.stationary;
    let d = DMatrix::from_diagonal(eta);
    let q = &phi * w;
    let target = mdp.reward_vector() + (&chain.kernel * &q) * mdp.gamma;
    let gram = phi.transpose() * &d * &phi;
    let coef = linalg::solve(&gram, &(phi.transpose() * (&d * target)), "eta-weighted projection")?;
    let diff = q - &phi * coef;
    Ok(diff.iter().zip(eta.iter()).map(|(x, e)| e * x * x).sum::<f64>().sqrt())
}
