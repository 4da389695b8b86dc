//! Projected TD(0) with linear features on the state-action chain, with every
//! pathwise quantity exposed for checking against its bound.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{induced_chain, StateActionChain, TabularMdp};
use crate::oracle::{critic_system, CriticSystem};
use crate::policy::{DifferentiablePolicy, FeatureMap};
use crate::rng::{sample_index, SeedStream, StreamRole};

/// A critic parameter together with the radius of the ball it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticW {
    pub w: Vec<f64>,
    pub radius: f64,
}

/// One observed transition `(s, a, s', a')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub a_next: usize,
}

/// `g = (R(s,a) + gamma w^T phi(s',a') - w^T phi(s,a)) phi(s,a)`.
pub fn td_semigradient(mdp: &TabularMdp, features: &FeatureMap, w: &DVector<f64>, o: Transition) -> DVector<f64> {
    let phi = features.phi(o.s, o.a);
    let phi_next = features.phi(o.s_next, o.a_next);
    let delta = mdp.r(o.s, o.a) + mdp.gamma * w.dot(phi_next) - w.dot(phi);
    phi * delta
}

/// Euclidean projection onto the centered ball of the given radius.
pub fn project_ball(w: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = w.norm();
    if n <= radius {
        w.clone()
    } else {
        w * (radius / n)
    }
}

/// Where the first pair of a TD run is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartDistribution {
    /// `s_0 ~ rho0`, `a_0 ~ pi(.|s_0)`.
    Initial,
    Stationary,
    PointMass(usize),
    /// Point mass on the pair farthest from stationarity after one step.
    WorstCase,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant(f64),
    /// `alpha = 1 / sqrt(K)`.
    InvSqrtK,
    /// `alpha_t = 1 / ((t + 1) varsigma)`.
    Diminishing,
}

impl StepSchedule {
    pub fn step(&self, t: usize, k: usize, varsigma: f64) -> f64 {
        match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::InvSqrtK => 1.0 / (k as f64).sqrt(),
            StepSchedule::Diminishing => 1.0 / ((t as f64 + 1.0) * varsigma),
        }
    }
}

/// Everything about a policy evaluation problem that does not depend on the
/// random path: chain, fixed point, ball radius and the bound constants.
#[derive(Debug, Clone)]
pub struct TdProblem {
    pub mdp: TabularMdp,
    pub features: FeatureMap,
    pub action_probs: Vec<DVector<f64>>,
    pub chain: StateActionChain,
    pub system: CriticSystem,
    pub w_star: DVector<f64>,
    /// Radius `R` of the feasible ball.
    pub radius: f64,
    /// `F = R_max + 2 R`.
    pub f_const: f64,
    /// `lambda_min(A + A^T)`.
    pub varsigma: f64,
}

impl TdProblem {
    /// Ball radius defaults to `2 |w*| + 1`, which contains `w*`.
    pub fn new<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, features: &FeatureMap) -> Result<Self> {
        features.check_full_rank()?;
        let chain = induced_chain(mdp, policy)?;
        Self::from_chain(mdp, policy, features, chain)
    }

    pub fn from_chain<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P, features: &FeatureMap, chain: StateActionChain) -> Result<Self> {
        let system = critic_system(mdp, &chain, features);
        let w_star = linalg::solve(&system.a, &system.b, "critic fixed point")?;
        let radius = 2.0 * w_star.norm() + 1.0;
        let varsigma = system.lambda_min_sym;
        Ok(Self {
            mdp: mdp.clone(),
            features: features.clone(),
            action_probs: (0..mdp.n_states).map(|s| policy.action_probs(s)).collect(),
            chain,
            system,
            w_star,
            radius,
            f_const: mdp.r_max + 2.0 * radius,
            varsigma,
        })
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self.f_const = self.mdp.r_max + 2.0 * radius;
        self
    }

    pub fn semigradient(&self, w: &DVector<f64>, o: Transition) -> DVector<f64> {
        td_semigradient(&self.mdp, &self.features, w, o)
    }

    /// `E_eta[g(w)]` by explicit summation over the pair law and the kernel.
    pub fn mean_semigradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.chain.n_pairs();
        let na = self.mdp.n_actions;
        let mut g = DVector::zeros(self.features.dim());
        for p in 0..n {
            let eta = self.chain.stationary[p];
            for q in 0..n {
                let k = self.chain.kernel[(p, q)];
                if k == 0.0 {
                    continue;
                }
                let o = Transition { s: p / na, a: p % na, s_next: q / na, a_next: q % na };
                g.axpy(eta * k, &self.semigradient(w, o), 1.0);
            }
        }
        g
    }

    /// `b - A w`.
    pub fn mean_semigradient_linear(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.system.b - &self.system.a * w
    }

    /// `(g(w) - g_bar(w))^T (w - w*)`.
    pub fn zeta(&self, w: &DVector<f64>, o: Transition) -> f64 {
        (self.semigradient(w, o) - self.mean_semigradient_linear(w)).dot(&(w - &self.w_star))
    }

    /// `|Q_{w*} - Q_w|^2_eta`.
    pub fn q_sq_error(&self, w: &DVector<f64>) -> f64 {
        let diff = &self.w_star - w;
        (0..self.chain.n_pairs())
            .map(|p| {
                let x = self.features.phi_pair(p).dot(&diff);
                self.chain.stationary[p] * x * x
            })
            .sum()
    }

    pub fn start_law(&self, start: &StartDistribution) -> Result<Vec<f64>> {
        let n = self.chain.n_pairs();
        let point = |p: usize| -> Result<Vec<f64>> {
            if p >= n {
                return Err(Error::InvalidArgument(format!("start pair {p} out of range (n_pairs = {n})")));
            }
            let mut v = vec![0.0; n];
            v[p] = 1.0;
            Ok(v)
        };
        match start {
            StartDistribution::Initial => {
                let mut out = vec![0.0; n];
                for s in 0..self.mdp.n_states {
                    for a in 0..self.mdp.n_actions {
                        out[self.mdp.pair(s, a)] = self.mdp.rho0[s] * self.action_probs[s][a];
                    }
                }
                Ok(out)
            }
            StartDistribution::Stationary => Ok(self.chain.stationary.iter().copied().collect()),
            StartDistribution::PointMass(p) => point(*p),
            StartDistribution::WorstCase => point(self.chain.worst_start()),
            StartDistribution::Custom(v) => {
                if v.len() != n {
                    return Err(Error::LengthMismatch { left: v.len(), right: n });
                }
                Ok(v.clone())
            }
        }
    }

    /// Next pair from `pair` using two uniforms: one for `s'`, one for `a'`.
    pub fn step_pair(&self, pair: usize, u_state: f64, u_action: f64) -> usize {
        let (s, a) = self.mdp.unpair(pair);
        let s2 = sample_index(self.mdp.next_state_probs(s, a), u_state);
        let a2 = sample_index(self.action_probs[s2].as_slice(), u_action);
        self.mdp.pair(s2, a2)
    }

    /// Mixing time of the certified envelope at accuracy `eps`.
    pub fn tau_mix(&self, eps: f64) -> usize {
        self.chain.envelope.mixing_time(eps)
    }

    /// Constant-step bound for a run of `k` steps started at `w0`.
    pub fn average_bound(&self, k: usize, w0: &DVector<f64>) -> f64 {
        let env = self.chain.envelope;
        td_average_bound(
            k,
            (&self.w_star - w0).norm(),
            self.f_const,
            self.tau_mix(1.0 / (k as f64).sqrt()),
            env.m,
            env.r,
            self.mdp.gamma,
        )
    }

    /// Constant-step bound for a run started from the stationary law.
    pub fn stationary_bound(&self, k: usize, w0: &DVector<f64>) -> f64 {
        stationary_td_bound(k, (&self.w_star - w0).norm(), self.f_const, self.tau_mix(1.0 / (k as f64).sqrt()), self.mdp.gamma)
    }
}

/// Bound on `E|Q_{w*} - Q_{w_bar}|^2_eta` after `k` steps with `alpha = 1/sqrt(k)`
/// from an arbitrary start:
/// `(|w* - w0|^2 + F^2 (17 + 12 tau)) / (2 (1 - gamma) sqrt(k)) + 10 F^2 m / ((1 - r)(1 - gamma) k)`.
pub fn td_average_bound(k: usize, w0_dist: f64, f: f64, tau_mix: usize, m: f64, r: f64, gamma: f64) -> f64 {
    let k = k as f64;
    let f2 = f * f;
    (w0_dist * w0_dist + f2 * (17.0 + 12.0 * tau_mix as f64)) / (2.0 * (1.0 - gamma) * k.sqrt())
        + 10.0 * f2 * m / ((1.0 - r) * (1.0 - gamma) * k)
}

/// The same bound for a stationary start: constant 9 and no transient term.
pub fn stationary_td_bound(k: usize, w0_dist: f64, f: f64, tau_mix: usize, gamma: f64) -> f64 {
    let k = k as f64;
    (w0_dist * w0_dist + f * f * (9.0 + 12.0 * tau_mix as f64)) / (2.0 * (1.0 - gamma) * k.sqrt())
}

/// Leading term of the fourth-moment bound under diminishing steps:
/// `192 F^2 R^2 / (varsigma^2 ln^2(1/r)) * ln^2(k) / k`.
pub fn fourth_moment_envelope(f: f64, radius: f64, varsigma: f64, r: f64, k: usize) -> f64 {
    let lk = (k as f64).ln();
    let lr = (1.0 / r).ln();
    192.0 * f * f * radius * radius / (varsigma * varsigma * lr * lr) * lk * lk / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub k: usize,
    pub schedule: StepSchedule,
    pub start: StartDistribution,
    /// Defaults to the zero vector.
    pub w0: Option<Vec<f64>>,
    /// Keep `|Q_{w*} - Q_{w_k}|^2_eta` for every `k`.
    pub record_path: bool,
}

impl TdConfig {
    pub fn new(k: usize, schedule: StepSchedule, start: StartDistribution) -> Self {
        Self { k, schedule, start, w0: None, record_path: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdRunStats {
    pub k: usize,
    /// `(1/K) sum_{k<K} w_k`.
    pub w_bar: Vec<f64>,
    pub per_step_sq_error: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub final_sq_error: f64,
    /// `|w* - w_bar|^4` for this path.
    pub fourth_moment: f64,
    pub bound_value: f64,
    pub stationary_bound_value: f64,
    pub f_const: f64,
    pub radius: f64,
    pub tau_mix: usize,
    pub max_grad_norm: f64,
    pub max_abs_zeta: f64,
    pub max_iterate_norm: f64,
}

/// Run projected TD(0) on a Markovian sample path.
///
/// The start pair always consumes one uniform and every step consumes two, so
/// runs that differ only in their start law share the same random numbers.
pub fn run_td0<R: Rng + ?Sized>(problem: &TdProblem, cfg: &TdConfig, rng: &mut R) -> Result<TdRunStats> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if matches!(cfg.schedule, StepSchedule::Diminishing) && !(problem.varsigma > 0.0) {
        return Err(Error::Precondition(format!("diminishing steps need varsigma > 0, got {}", problem.varsigma)));
    }
    let dim = problem.features.dim();
    let w0 = match &cfg.w0 {
        Some(v) if v.len() != dim => return Err(Error::LengthMismatch { left: v.len(), right: dim }),
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(dim),
    };
    if w0.norm() > problem.radius {
        return Err(Error::Precondition(format!("|w0| = {} exceeds radius {}", w0.norm(), problem.radius)));
    }
    let start = problem.start_law(&cfg.start)?;
    let na = problem.mdp.n_actions;
    let mut pair = sample_index(&start, rng.random());
    let mut w = w0.clone();
    let mut sum = DVector::zeros(dim);
    let mut per_step = Vec::with_capacity(if cfg.record_path { cfg.k } else { 0 });
    let mut steps = Vec::with_capacity(if cfg.record_path { cfg.k } else { 0 });
    let (mut max_g, mut max_zeta, mut max_w) = (0.0f64, 0.0f64, w.norm());
    for t in 0..cfg.k {
        sum += &w;
        if cfg.record_path {
            per_step.push(problem.q_sq_error(&w));
        }
        let u_state: f64 = rng.random();
        let u_action: f64 = rng.random();
        let next = problem.step_pair(pair, u_state, u_action);
        let o = Transition { s: pair / na, a: pair % na, s_next: next / na, a_next: next % na };
        let g = problem.semigradient(&w, o);
        let zeta = (&g - problem.mean_semigradient_linear(&w)).dot(&(&w - &problem.w_star));
        max_g = max_g.max(g.norm());
        max_zeta = max_zeta.max(zeta.abs());
        let alpha = cfg.schedule.step(t, cfg.k, problem.varsigma);
        if cfg.record_path {
            steps.push(alpha);
        }
        w = project_ball(&(&w + g * alpha), problem.radius);
        if !w.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { t, detail: "non-finite critic iterate".into() });
        }
        max_w = max_w.max(w.norm());
        pair = next;
    }
    let w_bar = sum / cfg.k as f64;
    let dist = (&problem.w_star - &w_bar).norm();
    Ok(TdRunStats {
        k: cfg.k,
        w_bar: w_bar.iter().copied().collect(),
        per_step_sq_error: per_step,
        step_sizes: steps,
        final_sq_error: problem.q_sq_error(&w_bar),
        fourth_moment: dist.powi(4),
        bound_value: problem.average_bound(cfg.k, &w0),
        stationary_bound_value: problem.stationary_bound(cfg.k, &w0),
        f_const: problem.f_const,
        radius: problem.radius,
        tau_mix: problem.tau_mix(1.0 / (cfg.k as f64).sqrt()),
        max_grad_norm: max_g,
        max_abs_zeta: max_zeta,
        max_iterate_norm: max_w,
    })
}

/// Run one TD path per seed in parallel; results come back in seed order.
pub fn run_td0_seeds(problem: &TdProblem, cfg: &TdConfig, seeds: &[u64]) -> Result<Vec<TdRunStats>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = SeedStream::new(seed).child(StreamRole::Critic, 0);
            run_td0(problem, cfg, &mut rng)
        })
        .collect()
}

/// Seed average of `|w* - w_bar_K|^4` under diminishing steps from the
/// initial law.
pub fn fourth_moment_estimate(problem: &TdProblem, k: usize, seeds: &[u64]) -> Result<f64> {
    let cfg = TdConfig::new(k, StepSchedule::Diminishing, StartDistribution::Initial);
    let runs = run_td0_seeds(problem, &cfg, seeds)?;
    Ok(runs.iter().map(|r| r.fourth_moment).sum::<f64>() / runs.len() as f64)
}
