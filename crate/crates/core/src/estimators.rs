//! Stochastic policy-gradient estimators and their exact noise/bias split.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, Trajectory};
use crate::oracle::{self, weighted_score_sum};
use crate::policy::{DifferentiablePolicy, FeatureMap};
use crate::td0::{run_td0, CriticW, StartDistribution, StepSchedule, TdConfig, TdProblem};

/// Reward-to-go estimator
/// `sum_h score(s_h, a_h) sum_{i >= h} gamma^i R(s_i, a_i)`.
pub fn gpomdp<P: DifferentiablePolicy>(policy: &P, traj: &Trajectory, gamma: f64) -> Result<DVector<f64>> {
    if traj.steps.is_empty() {
        return Err(Error::ZeroHorizon);
    }
    let mut g = DVector::zeros(policy.dim());
    let mut to_go = 0.0;
    for (i, st) in traj.steps.iter().enumerate().rev() {
        to_go += gamma.powi(i as i32) * st.reward;
        g.axpy(to_go, &policy.score(st.state, st.action), 1.0);
    }
    Ok(g)
}

/// Critic-weighted estimator `sum_h gamma^h Q_w(s_h, a_h) score(s_h, a_h)`.
pub fn ac_estimator<P: DifferentiablePolicy>(
    policy: &P,
    traj: &Trajectory,
    gamma: f64,
    features: &FeatureMap,
    w_bar: &DVector<f64>,
) -> Result<DVector<f64>> {
    if traj.steps.is_empty() {
        return Err(Error::ZeroHorizon);
    }
    let mut g = DVector::zeros(policy.dim());
    for (h, st) in traj.steps.iter().enumerate() {
        let q = features.phi(st.state, st.action).dot(w_bar);
        g.axpy(gamma.powi(h as i32) * q, &policy.score(st.state, st.action), 1.0);
    }
    Ok(g)
}

/// TD(0) critic for the actor-critic estimator, started from `rho0 x pi`.
/// Returns the averaged parameter, which stays in the ball by convexity.
pub fn ac_inner_loop<R: Rng + ?Sized>(
    problem: &TdProblem,
    w0: &DVector<f64>,
    k: usize,
    schedule: StepSchedule,
    rng: &mut R,
) -> Result<CriticW> {
    let cfg = TdConfig { k, schedule, start: StartDistribution::Initial, w0: Some(w0.iter().copied().collect()), record_path: false };
    let stats = run_td0(problem, &cfg, rng)?;
    Ok(CriticW { w: stats.w_bar, radius: problem.radius })
}

/// One estimator output split as `g_hat = grad J + xi + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSample {
    pub g_hat: Vec<f64>,
    pub exact_grad: Vec<f64>,
    /// `E[g_hat]` given the current parameters (and critic).
    pub mean_est: Vec<f64>,
    pub noise_xi: Vec<f64>,
    pub bias_d: Vec<f64>,
    /// Truncation part of the actor-critic bias.
    pub bias_p: Option<Vec<f64>>,
    /// Critic-error part of the actor-critic bias.
    pub bias_q: Option<Vec<f64>>,
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl GradSample {
    pub fn xi_norm(&self) -> f64 {
        norm(&self.noise_xi)
    }

    pub fn d_norm(&self) -> f64 {
        norm(&self.bias_d)
    }

    pub fn p_norm(&self) -> Option<f64> {
        self.bias_p.as_deref().map(norm)
    }

    pub fn q_norm(&self) -> Option<f64> {
        self.bias_q.as_deref().map(norm)
    }

    /// Largest entry of `|g_hat - (grad J + xi + d)|`.
    pub fn identity_residual(&self) -> f64 {
        (0..self.g_hat.len())
            .map(|i| (self.g_hat[i] - (self.exact_grad[i] + self.noise_xi[i] + self.bias_d[i])).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact reference quantities for the vanilla estimator at fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaReference {
    pub exact_grad: DVector<f64>,
    pub truncated_grad: DVector<f64>,
    pub horizon: usize,
}

impl VanillaReference {
    pub fn new<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Result<Self> {
        Ok(Self {
            exact_grad: oracle::exact_gradient(mdp, policy)?,
            truncated_grad: oracle::truncated_gradient(mdp, policy, horizon)?,
            horizon,
        })
    }

    pub fn decompose(&self, g_hat: &DVector<f64>) -> GradSample {
        GradSample {
            g_hat: to_vec(g_hat),
            exact_grad: to_vec(&self.exact_grad),
            mean_est: to_vec(&self.truncated_grad),
            noise_xi: to_vec(&(g_hat - &self.truncated_grad)),
            bias_d: to_vec(&(&self.truncated_grad - &self.exact_grad)),
            bias_p: None,
            bias_q: None,
        }
    }
}

pub fn decompose_vanilla<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, traj: &Trajectory, horizon: usize) -> Result<GradSample> {
    if traj.horizon() != horizon {
        return Err(Error::InvalidArgument(format!("trajectory has horizon {}, expected {horizon}", traj.horizon())));
    }
    let g = gpomdp(policy, traj, mdp.gamma)?;
    Ok(VanillaReference::new(mdp, policy, horizon)?.decompose(&g))
}

/// `G_H = sum_{h<H} gamma^h E[Q_w(s_h, a_h) score(s_h, a_h)]`, exactly.
pub fn ac_truncated_mean<P: DifferentiablePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    features: &FeatureMap,
    w: &DVector<f64>,
    horizon: usize,
) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let q = features.matrix() * w;
    let mut g = DVector::zeros(policy.dim());
    for (h, rho) in oracle::state_marginals(mdp, policy, horizon).iter().enumerate() {
        g += weighted_score_sum(mdp, policy, &(rho * mdp.gamma.powi(h as i32)), &q);
    }
    Ok(g)
}

/// `G_inf = sum_s d(s) sum_a pi(a|s) score(s, a) Q_w(s, a)`.
pub fn ac_infinite_mean<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, features: &FeatureMap, w: &DVector<f64>) -> Result<DVector<f64>> {
    oracle::gradient_with_q(mdp, policy, &(features.matrix() * w))
}

/// Exact reference quantities for the actor-critic estimator at fixed
/// parameters and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticReference {
    pub exact_grad: DVector<f64>,
    pub truncated_mean: DVector<f64>,
    pub infinite_mean: DVector<f64>,
}

impl ActorCriticReference {
    pub fn new<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, features: &FeatureMap, w: &DVector<f64>, horizon: usize) -> Result<Self> {
        Self::with_exact(oracle::exact_gradient(mdp, policy)?, mdp, policy, features, w, horizon)
    }

    pub fn with_exact<P: DifferentiablePolicy>(
        exact_grad: DVector<f64>,
        mdp: &TabularMdp,
        policy: &P,
        features: &FeatureMap,
        w: &DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        Ok(Self {
            exact_grad,
            truncated_mean: ac_truncated_mean(mdp, policy, features, w, horizon)?,
            infinite_mean: ac_infinite_mean(mdp, policy, features, w)?,
        })
    }

    pub fn decompose(&self, g_hat: &DVector<f64>) -> GradSample {
        let p = &self.truncated_mean - &self.infinite_mean;
        let q = &self.infinite_mean - &self.exact_grad;
        let d = &p + &q;
        GradSample {
            g_hat: to_vec(g_hat),
            exact_grad: to_vec(&self.exact_grad),
            mean_est: to_vec(&self.truncated_mean),
            noise_xi: to_vec(&(g_hat - &self.truncated_mean)),
            bias_d: to_vec(&d),
            bias_p: Some(to_vec(&p)),
            bias_q: Some(to_vec(&q)),
        }
    }
}

pub fn decompose_ac<P: DifferentiablePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    traj: &Trajectory,
    w_bar: &DVector<f64>,
    features: &FeatureMap,
    horizon: usize,
) -> Result<GradSample> {
    if traj.horizon() != horizon {
        return Err(Error::InvalidArgument(format!("trajectory has horizon {}, expected {horizon}", traj.horizon())));
    }
    let g = ac_estimator(policy, traj, mdp.gamma, features, w_bar)?;
    Ok(ActorCriticReference::new(mdp, policy, features, w_bar, horizon)?.decompose(&g))
}

/// `(1/(1-gamma) + H)^{1/2} gamma^H`, the horizon factor of the truncation bias.
pub fn truncation_factor(gamma: f64, horizon: usize) -> f64 {
    (1.0 / (1.0 - gamma) + horizon as f64).sqrt() * gamma.powi(horizon as i32)
}

/// Smallest `H >= 1` with `(1/(1-gamma) + H)^{1/2} gamma^H <= mu`, by scanning.
pub fn horizon_for_mu(mu: f64, gamma: f64) -> Result<usize> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidArgument(format!("mu must lie in (0,1), got {mu}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let mut h = 1;
    while truncation_factor(gamma, h) > mu {
        h += 1;
    }
    Ok(h)
}

/// Inner TD steps `ceil(c ln^2(mu^-4) / mu^4)`.
pub fn inner_steps_for_mu(mu: f64, c: f64) -> usize {
    let l = (mu.powi(-4)).ln();
    (c * l * l / mu.powi(4)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Vanilla,
    ActorCritic,
}

/// Critic-side constants needed by the actor-critic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticConstants {
    /// `F = R_max + 2 R`.
    pub f: f64,
    pub varsigma: f64,
    /// Mixing rate `r` of the certified envelope.
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBundle {
    pub kind: EstimatorKind,
    /// Pathwise bound on the estimator norm.
    pub sigma: f64,
    /// Bias constant.
    pub d: f64,
    pub d_p: Option<f64>,
    pub d_q: Option<f64>,
    pub h_required: usize,
}

/// Estimator constants. `radius` is the critic ball radius and is ignored for
/// the vanilla estimator; the actor-critic bundle needs `critic`.
pub fn bound_bundle(
    kind: EstimatorKind,
    g: f64,
    r_max: f64,
    radius: f64,
    gamma: f64,
    mu: f64,
    critic: Option<CriticConstants>,
) -> Result<BoundBundle> {
    let h_required = horizon_for_mu(mu, gamma)?;
    match kind {
        EstimatorKind::Vanilla => Ok(BoundBundle {
            kind,
            sigma: g * r_max / (1.0 - gamma).powi(2),
            d: g * r_max / (1.0 - gamma),
            d_p: None,
            d_q: None,
            h_required,
        }),
        EstimatorKind::ActorCritic => {
            let c = critic.ok_or_else(|| Error::InvalidArgument("actor-critic bounds need critic constants".into()))?;
            let d_p = g * radius / (1.0 - gamma);
            let lr = (1.0 / c.r).ln();
            let d_q = g * (192.0 * c.f * c.f * radius * radius / (c.varsigma * c.varsigma * lr * lr)).powf(0.25);
            Ok(BoundBundle {
                kind,
                sigma: d_p,
                d: 2.0 * (d_p.powi(4) + d_q.powi(4)).powf(0.25),
                d_p: Some(d_p),
                d_q: Some(d_q),
                h_required,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;
    use crate::instance::Instance;
    use crate::testkit;

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon_for_mu(0.1, 0.9).unwrap(), 41);
        assert!(truncation_factor(0.9, 40) > 0.1);
        assert!(truncation_factor(0.9, 41) <= 0.1);
        let big = truncation_factor(0.5, 1);
        assert_eq!(horizon_for_mu(big.min(0.999), 0.5).unwrap(), 1);
    }

    #[test]
    fn bundle_examples() {
        let v = bound_bundle(EstimatorKind::Vanilla, 2.0, 1.0, 0.0, 0.9, 0.1, None).unwrap();
        assert!((v.sigma - 200.0).abs() < 1e-9);
        assert!((v.d - 20.0).abs() < 1e-12);
        let c = CriticConstants { f: 3.0, varsigma: 0.5, r: 0.5 };
        let a = bound_bundle(EstimatorKind::ActorCritic, 1.0, 1.0, 1.0, 0.5, 0.1, Some(c)).unwrap();
        assert!((a.sigma - 2.0).abs() < 1e-15);
        assert_eq!(a.d_p, Some(2.0));
    }

    #[test]
    fn single_step_estimators() {
        let inst = Instance::bundled("chain3").unwrap();
        let pol = testkit::chain3_policy(&inst, 1);
        let traj = Trajectory { steps: vec![Step { state: 1, action: 0, reward: inst.mdp.r(1, 0) }] };
        let g = gpomdp(&pol, &traj, 0.9).unwrap();
        assert_eq!(g, pol.score(1, 0) * inst.mdp.r(1, 0));
        let w = DVector::from_fn(6, |i, _| i as f64 * 0.1);
        let ga = ac_estimator(&pol, &traj, 0.9, &inst.critic_features, &w).unwrap();
        assert_eq!(ga, pol.score(1, 0) * w[2]);
        let z = ac_estimator(&pol, &traj, 0.9, &inst.critic_features, &DVector::zeros(6)).unwrap();
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn inner_steps_schedule() {
        // mu = 0.5: ln(16)^2 * 16
        let expected = (16f64.ln().powi(2) * 16.0).ceil() as usize;
        assert_eq!(inner_steps_for_mu(0.5, 1.0), expected);
    }
}
