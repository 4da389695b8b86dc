//! Finite MDPs, the state-action chain a policy induces on them, trajectory
//! sampling, stationary distributions and geometric mixing envelopes.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::DifferentiablePolicy;
use crate::rng::sample_index;

const PROB_TOL: f64 = 1e-12;

/// A finite discounted MDP. Pairs `(s, a)` are indexed as `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `P[s][a][s']`, flattened row-major.
    pub transition: Vec<f64>,
    /// `R[s][a]`, flattened row-major.
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    /// Declared reward bound; `max |R|` when not declared.
    pub r_max: f64,
}

impl TabularMdp {
    /// Assemble an MDP without checking invariants; see [`validate_mdp`].
    pub fn from_tables(
        transitions: &[Vec<Vec<f64>>],
        rewards: &[Vec<f64>],
        gamma: f64,
        rho0: Vec<f64>,
        r_max: Option<f64>,
    ) -> Result<Self> {
        let n_states = transitions.len();
        let n_actions = transitions.first().map(|r| r.len()).unwrap_or(0);
        let mut problems = Vec::new();
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_state) in transitions.iter().enumerate() {
            if per_state.len() != n_actions {
                problems.push(format!("transitions[{s}] has {} actions, expected {n_actions}", per_state.len()));
                continue;
            }
            for (a, row) in per_state.iter().enumerate() {
                if row.len() != n_states {
                    problems.push(format!("transitions[{s}][{a}] has length {}, expected {n_states}", row.len()));
                    continue;
                }
                transition.extend_from_slice(row);
            }
        }
        if rewards.len() != n_states {
            problems.push(format!("rewards has {} rows, expected {n_states}", rewards.len()));
        }
        let mut reward = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rewards.iter().enumerate() {
            if row.len() != n_actions {
                problems.push(format!("rewards[{s}] has length {}, expected {n_actions}", row.len()));
                continue;
            }
            reward.extend_from_slice(row);
        }
        if rho0.len() != n_states {
            problems.push(format!("rho0 has length {}, expected {n_states}", rho0.len()));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let r_max = r_max.unwrap_or_else(|| reward.iter().map(|r| r.abs()).fold(0.0, f64::max));
        Ok(Self { n_states, n_actions, transition, reward, gamma, rho0, r_max })
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn unpair(&self, p: usize) -> (usize, usize) {
        (p / self.n_actions, p % self.n_actions)
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.next_state_probs(s, a)[s_next]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[self.pair(s, a)]
    }

    pub fn transitions_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.next_state_probs(s, a).to_vec()).collect())
            .collect()
    }

    pub fn rewards_table(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.reward[s * self.n_actions..(s + 1) * self.n_actions].to_vec()).collect()
    }

    pub fn reward_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reward)
    }

    /// State-to-state matrix `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn state_kernel<P: DifferentiablePolicy>(&self, policy: &P) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n_states, self.n_states);
        for s in 0..self.n_states {
            let probs = policy.action_probs(s);
            for a in 0..self.n_actions {
                for (s2, &p) in self.next_state_probs(s, a).iter().enumerate() {
                    k[(s, s2)] += probs[a] * p;
                }
            }
        }
        k
    }

    /// Pair-to-pair matrix with entry `P(s'|s,a) pi(a'|s')`.
    pub fn pair_kernel<P: DifferentiablePolicy>(&self, policy: &P) -> DMatrix<f64> {
        let n = self.n_pairs();
        let probs: Vec<DVector<f64>> = (0..self.n_states).map(|s| policy.action_probs(s)).collect();
        let mut k = DMatrix::zeros(n, n);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.pair(s, a);
                for (s2, &p) in self.next_state_probs(s, a).iter().enumerate() {
                    for a2 in 0..self.n_actions {
                        k[(row, self.pair(s2, a2))] = p * probs[s2][a2];
                    }
                }
            }
        }
        k
    }

    /// Joint law of `(s_0, a_0)` when `s_0 ~ rho0` and `a_0 ~ pi(.|s_0)`.
    pub fn initial_pair_distribution<P: DifferentiablePolicy>(&self, policy: &P) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pairs()];
        for s in 0..self.n_states {
            let probs = policy.action_probs(s);
            for a in 0..self.n_actions {
                out[self.pair(s, a)] = self.rho0[s] * probs[a];
            }
        }
        out
    }
}

/// Every invariant violation found on an MDP; empty means well-formed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self.violations))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut v = Vec::new();
    if mdp.n_states == 0 {
        v.push("n_states must be positive".to_string());
    }
    if mdp.n_actions == 0 {
        v.push("n_actions must be positive".to_string());
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if mdp.transition.len() != ns * na * ns {
        v.push(format!("transition tensor has {} entries, expected {}", mdp.transition.len(), ns * na * ns));
    } else {
        for s in 0..ns {
            for a in 0..na {
                let row = mdp.next_state_probs(s, a);
                for (s2, &p) in row.iter().enumerate() {
                    if !p.is_finite() {
                        v.push(format!("transition P[s={s}][a={a}][s'={s2}] is not finite"));
                    } else if p < 0.0 {
                        v.push(format!("negative probability P[s={s}][a={a}][s'={s2}] = {p}"));
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    v.push(format!("row (s={s},a={a}) sums to {sum}"));
                }
            }
        }
    }
    if mdp.reward.len() != ns * na {
        v.push(format!("reward table has {} entries, expected {}", mdp.reward.len(), ns * na));
    } else {
        for s in 0..ns {
            for a in 0..na {
                let r = mdp.r(s, a);
                if !r.is_finite() {
                    v.push(format!("reward R[s={s}][a={a}] is not finite"));
                } else if r.abs() > mdp.r_max {
                    v.push(format!("reward R[s={s}][a={a}] = {r} exceeds r_max = {}", mdp.r_max));
                }
            }
        }
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        v.push(format!("gamma out of (0,1): {}", mdp.gamma));
    }
    if mdp.rho0.len() != ns {
        v.push(format!("rho0 has length {}, expected {ns}", mdp.rho0.len()));
    } else {
        for (s, &p) in mdp.rho0.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                v.push(format!("negative probability rho0[s={s}] = {p}"));
            }
        }
        let sum: f64 = mdp.rho0.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            v.push(format!("rho0 sums to {sum}"));
        }
    }
    ValidationReport { violations: v }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// True when every reward matches the MDP's reward table.
    pub fn is_consistent_with(&self, mdp: &TabularMdp) -> bool {
        self.steps.iter().all(|st| st.state < mdp.n_states && st.action < mdp.n_actions && st.reward == mdp.r(st.state, st.action))
    }
}

/// Roll out `horizon` steps from `s_0 ~ rho0` under `policy`.
pub fn sample_trajectory<P: DifferentiablePolicy, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut s = sample_index(&mdp.rho0, rng.random());
    for k in 0..horizon {
        let probs = policy.action_probs(s);
        let a = sample_index(probs.as_slice(), rng.random());
        steps.push(Step { state: s, action: a, reward: mdp.r(s, a) });
        if k + 1 < horizon {
            s = sample_index(mdp.next_state_probs(s, a), rng.random());
        }
    }
    Ok(Trajectory { steps })
}

/// Total-variation distance `(1/2) sum |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Certified geometric envelope `sup_start TV(P^t(start, .), eta) <= m r^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingEnvelope {
    pub m: f64,
    pub r: f64,
    /// Number of leading `t` values (starting at 0) the envelope was fitted on.
    pub window: usize,
}

impl MixingEnvelope {
    /// Smallest `t >= 0` with `m r^t <= eps`.
    pub fn mixing_time(&self, eps: f64) -> usize {
        mixing_time_of(self.m, self.r, eps)
    }
}

pub fn mixing_time_of(m: f64, r: f64, eps: f64) -> usize {
    assert!(eps > 0.0 && r > 0.0 && r < 1.0);
    if m <= eps {
        return 0;
    }
    let mut t = ((eps / m).ln() / r.ln()).ceil().max(0.0) as usize;
    while t > 0 && m * r.powi(t as i32 - 1) <= eps {
        t -= 1;
    }
    while m * r.powi(t as i32) > eps {
        t += 1;
    }
    t
}

/// Smallest `t >= 0` with `m r^t <= eps` for the chain's envelope.
pub fn mixing_time(chain: &StateActionChain, eps: f64) -> usize {
    chain.envelope.mixing_time(eps)
}

/// Default length of the exact TV profile used to fit `(m, r)`.
pub const DEFAULT_FIT_HORIZON: usize = 200;
/// TV values below this are treated as numerically zero and end the fit window.
pub const TV_FLOOR: f64 = 1e-12;
const MIN_RATE: f64 = 1e-6;
const MAX_RATE: f64 = 1.0 - 1e-9;

/// The Markov chain on state-action pairs induced by a policy.
#[derive(Debug, Clone)]
pub struct StateActionChain {
    pub n_states: usize,
    pub n_actions: usize,
    pub kernel: DMatrix<f64>,
    pub stationary: DVector<f64>,
    pub envelope: MixingEnvelope,
    /// `sup_start TV(kernel^t(start, .), eta)` for `t = 0..=fit horizon`.
    pub tv_profile: Vec<f64>,
}

impl StateActionChain {
    pub fn n_pairs(&self) -> usize {
        self.kernel.nrows()
    }

    /// Pair whose point mass is farthest from `eta` after one step.
    pub fn worst_start(&self) -> usize {
        let k1 = &self.kernel;
        let eta = self.stationary.as_slice();
        (0..self.n_pairs())
            .map(|p| {
                let row: Vec<f64> = k1.row(p).iter().copied().collect();
                (p, tv_distance(&row, eta).unwrap())
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    /// Law after `t` steps from an initial pair distribution.
    pub fn propagate(&self, init: &[f64], t: usize) -> DVector<f64> {
        let mut row = DVector::from_column_slice(init).transpose();
        for _ in 0..t {
            row *= &self.kernel;
        }
        row.transpose()
    }
}

pub fn induced_chain<P: DifferentiablePolicy>(mdp: &TabularMdp, policy: &P) -> Result<StateActionChain> {
    chain_from_kernel(mdp.n_states, mdp.n_actions, mdp.pair_kernel(policy), DEFAULT_FIT_HORIZON)
}

/// Certify ergodicity of `kernel`, solve for its stationary law and fit the
/// mixing envelope on `t = 0..=fit_horizon`.
pub fn chain_from_kernel(n_states: usize, n_actions: usize, kernel: DMatrix<f64>, fit_horizon: usize) -> Result<StateActionChain> {
    check_ergodic(&kernel, n_actions)?;
    let stationary = stationary_distribution(&kernel)?;
    let tv_profile = sup_tv_profile(&kernel, &stationary, fit_horizon);
    let envelope = fit_envelope(&tv_profile);
    Ok(StateActionChain { n_states, n_actions, kernel, stationary, envelope, tv_profile })
}

fn pair_name(p: usize, n_actions: usize) -> String {
    format!("(s={},a={})", p / n_actions, p % n_actions)
}

fn reach(kernel: &DMatrix<f64>, from: usize, transpose: bool) -> Vec<Option<usize>> {
    let n = kernel.nrows();
    let mut level = vec![None; n];
    level[from] = Some(0);
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let w = if transpose { kernel[(v, u)] } else { kernel[(u, v)] };
            if w > 0.0 && level[v].is_none() {
                level[v] = Some(level[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Irreducibility via forward and backward reachability from pair 0, and
/// aperiodicity via the gcd of `level(u) + 1 - level(v)` over support edges.
pub fn check_ergodic(kernel: &DMatrix<f64>, n_actions: usize) -> Result<()> {
    let n = kernel.nrows();
    let fwd = reach(kernel, 0, false);
    if let Some(p) = fwd.iter().position(|l| l.is_none()) {
        return Err(Error::NotErgodic(format!(
            "pair {} is unreachable from {}",
            pair_name(p, n_actions),
            pair_name(0, n_actions)
        )));
    }
    let bwd = reach(kernel, 0, true);
    if let Some(p) = bwd.iter().position(|l| l.is_none()) {
        return Err(Error::NotErgodic(format!(
            "pair {} cannot reach {}",
            pair_name(p, n_actions),
            pair_name(0, n_actions)
        )));
    }
    let mut period = 0;
    for u in 0..n {
        for v in 0..n {
            if kernel[(u, v)] > 0.0 {
                let (lu, lv) = (fwd[u].unwrap() as i64, fwd[v].unwrap() as i64);
                period = gcd(period, (lu + 1 - lv).unsigned_abs() as usize);
            }
        }
    }
    if period != 1 {
        return Err(Error::NotErgodic(format!("chain is periodic with period {period}")));
    }
    Ok(())
}

/// Left fixed vector of a stochastic matrix, normalized to sum one.
///
/// Solves `[K^T - I; 1^T] eta = [0; 1]` in the least-squares sense and falls
/// back to power iteration when the residual is not at solver precision.
pub fn stationary_distribution(kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    let mut sys = DMatrix::zeros(n + 1, n);
    sys.view_mut((0, 0), (n, n)).copy_from(&(kernel.transpose() - DMatrix::identity(n, n)));
    sys.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let direct = sys.svd(true, true).solve(&rhs, 1e-14).ok();
    let residual = |eta: &DVector<f64>| (eta.transpose() * kernel - eta.transpose()).amax();
    let eta = match direct {
        Some(eta) if eta.iter().all(|x| x.is_finite()) && residual(&eta) < 1e-10 => eta,
        _ => power_iteration(kernel)?,
    };
    let eta = eta.map(|x| x.max(0.0));
    let total = eta.sum();
    Ok(eta / total)
}

fn power_iteration(kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    let mut row = DVector::from_element(n, 1.0 / n as f64).transpose();
    for _ in 0..1_000_000 {
        let next = &row * kernel;
        let diff = (&next - &row).amax();
        row = next;
        if diff < 1e-15 {
            return Ok(row.transpose());
        }
    }
    Err(Error::Singular("stationary distribution: power iteration did not converge".into()))
}

/// `sup over start pairs of TV(kernel^t(start, .), eta)` for `t = 0..=horizon`.
pub fn sup_tv_profile(kernel: &DMatrix<f64>, eta: &DVector<f64>, horizon: usize) -> Vec<f64> {
    let n = kernel.nrows();
    let eta = eta.as_slice();
    let mut pt = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if t > 0 {
            pt = &pt * kernel;
        }
        let sup = (0..n)
            .map(|i| {
                let row: Vec<f64> = pt.row(i).iter().copied().collect();
                tv_distance(&row, eta).unwrap()
            })
            .fold(0.0, f64::max);
        out.push(sup);
    }
    out
}

/// Fit `(m, r)` so that `m r^t` dominates every profile value in the window.
///
/// The window runs from `t = 0` up to (not including) the first value below
/// [`TV_FLOOR`]. `r` is the largest one-step ratio inside the window, clipped
/// to `[1e-6, 1 - 1e-9]`; `m` is the smallest constant making the envelope hold.
pub fn fit_envelope(profile: &[f64]) -> MixingEnvelope {
    let window = profile.iter().position(|&tv| tv < TV_FLOOR).unwrap_or(profile.len());
    let mut r = MIN_RATE;
    for t in 1..window {
        r = r.max(profile[t] / profile[t - 1]);
    }
    let r = r.clamp(MIN_RATE, MAX_RATE);
    let m = (0..window).map(|t| profile[t] / r.powi(t as i32)).fold(0.0, f64::max);
    MixingEnvelope { m, r, window }
}

/// `|E v(X, Y) - E v(X', Y')|` where `X` is the pair at time `t` from `init`,
/// `Y` the pair `tau` steps later, and `(X', Y')` independent copies with the
/// same marginals. Both expectations are exact sums over the chain.
pub fn dependence_gap(chain: &StateActionChain, init: &[f64], t: usize, tau: usize, v: &DMatrix<f64>) -> f64 {
    let n = chain.n_pairs();
    let mu_t = chain.propagate(init, t);
    let mut k_tau = DMatrix::<f64>::identity(n, n);
    for _ in 0..tau {
        k_tau = &k_tau * &chain.kernel;
    }
    let mu_later = (mu_t.transpose() * &k_tau).transpose();
    let mut gap = 0.0;
    for x in 0..n {
        for y in 0..n {
            gap += v[(x, y)] * (mu_t[x] * k_tau[(x, y)] - mu_t[x] * mu_later[y]);
        }
    }
    gap.abs()
}
