//! The stochastic gradient ascent loop, iteration budgets, saddle-escape
//! experiments and empirical noise diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    ac_estimator, ac_inner_loop, bound_bundle, gpomdp, horizon_for_mu, ActorCriticReference, CriticConstants, EstimatorKind,
    GradSample, VanillaReference,
};
use crate::instance::Instance;
use crate::linalg::{self, mean_se};
use crate::mdp::{sample_trajectory, TabularMdp};
use crate::oracle::{self, default_ell, smoothness_constants, Region, RegionThresholds};
use crate::policy::{policy_constants, DifferentiablePolicy};
use crate::rng::{SeedStream, StreamRole};
use crate::td0::{StepSchedule, TdProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EstimatorSpec {
    Vanilla,
    ActorCritic {
        /// Inner TD(0) steps per outer iteration.
        k: usize,
        schedule: StepSchedule,
        /// Start each inner loop from the previous critic instead of `w0 = 0`.
        #[serde(default)]
        warm_start: bool,
    },
}

impl EstimatorSpec {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorSpec::Vanilla => EstimatorKind::Vanilla,
            EstimatorSpec::ActorCritic { .. } => EstimatorKind::ActorCritic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonSpec {
    /// Smallest horizon whose truncation factor is at most `mu`.
    Auto,
    Fixed(usize),
}

fn one() -> usize {
    1
}

fn fifty() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimator: EstimatorSpec,
    pub mu: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "H")]
    pub horizon: HorizonSpec,
    pub delta: f64,
    pub omega: f64,
    /// Region threshold `ell`; defaults to `L sigma^2 - D^2 mu`.
    #[serde(default)]
    pub ell: Option<f64>,
    /// Defaults to the instance's `theta0`.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default = "one")]
    pub batch: usize,
    /// Hessian and region are evaluated every `log_every` iterations.
    #[serde(default = "fifty")]
    pub log_every: usize,
    /// Variance of isotropic Gaussian noise added to every update.
    #[serde(default)]
    pub inject_variance: f64,
    /// Replace the estimator by the exact gradient.
    #[serde(default)]
    pub exact_gradient_updates: bool,
    /// Critic ball radius; defaults to `2 |w*(theta0)| + 1`.
    #[serde(default)]
    pub critic_radius: Option<f64>,
}

impl RunConfig {
    pub fn vanilla(mu: f64, t: usize, seed: u64) -> Self {
        Self {
            estimator: EstimatorSpec::Vanilla,
            mu,
            t,
            horizon: HorizonSpec::Auto,
            delta: 1.0,
            omega: 0.1,
            ell: None,
            theta0: None,
            seed,
            batch: 1,
            log_every: 50,
            inject_variance: 0.0,
            exact_gradient_updates: false,
            critic_radius: None,
        }
    }
}

/// Constants of one configured run on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConstants {
    pub g: f64,
    pub b: f64,
    pub iota: f64,
    pub l: f64,
    pub chi: f64,
    pub sigma: f64,
    pub d: f64,
    pub ell: f64,
    pub horizon: usize,
    pub critic_radius: Option<f64>,
}

impl RunConstants {
    pub fn thresholds(&self, cfg: &RunConfig) -> RegionThresholds {
        RegionThresholds { mu: cfg.mu, ell: self.ell, delta: cfg.delta, omega: cfg.omega }
    }

    /// `L sigma^2 + D^2 mu`, the noise-and-bias level of one step.
    pub fn step_level(&self, mu: f64) -> f64 {
        self.l * self.sigma * self.sigma + self.d * self.d * mu
    }
}

fn theta0_of(inst: &Instance, cfg: &RunConfig) -> Result<DVector<f64>> {
    match &cfg.theta0 {
        Some(t) if t.len() != inst.policy_features.dim() => Err(Error::LengthMismatch { left: t.len(), right: inst.policy_features.dim() }),
        Some(t) => Ok(DVector::from_column_slice(t)),
        None => Ok(inst.theta0.clone()),
    }
}

/// Check a configuration against an instance and derive its constants.
/// Every invalid field is reported at once.
pub fn prepare(inst: &Instance, cfg: &RunConfig) -> Result<RunConstants> {
    let mdp = &inst.mdp;
    let pc = policy_constants(&inst.policy());
    let sc = smoothness_constants(mdp.r_max, pc.g, pc.b, pc.iota, mdp.gamma);
    let mut problems = Vec::new();
    if !(cfg.mu >= 0.0 && cfg.mu.is_finite()) {
        problems.push(format!("mu must be non-negative, got {}", cfg.mu));
    } else if sc.l > 0.0 && cfg.mu >= 1.0 / sc.l {
        problems.push(format!("mu = {} must be below 1/L = {}", cfg.mu, 1.0 / sc.l));
    }
    if !(cfg.delta > 0.0) {
        problems.push(format!("delta must be positive, got {}", cfg.delta));
    }
    if !(cfg.omega > 0.0) {
        problems.push(format!("omega must be positive, got {}", cfg.omega));
    }
    if cfg.batch == 0 {
        problems.push("batch must be at least 1".into());
    }
    if cfg.log_every == 0 {
        problems.push("log_every must be at least 1".into());
    }
    if !(cfg.inject_variance >= 0.0) {
        problems.push(format!("inject_variance must be non-negative, got {}", cfg.inject_variance));
    }
    if let Some(e) = cfg.ell {
        if !(e > 0.0) {
            problems.push(format!("ell must be positive, got {e}"));
        }
    }
    if let HorizonSpec::Fixed(0) = cfg.horizon {
        problems.push("H must be at least 1".into());
    }
    if let EstimatorSpec::ActorCritic { k: 0, .. } = cfg.estimator {
        problems.push("K must be at least 1".into());
    }
    if let Err(e) = theta0_of(inst, cfg) {
        problems.push(e.to_string());
    }
    let horizon = match cfg.horizon {
        HorizonSpec::Fixed(h) => h,
        HorizonSpec::Auto => match horizon_for_mu(cfg.mu, mdp.gamma) {
            Ok(h) => h,
            Err(e) => {
                problems.push(format!("H = auto: {e}"));
                0
            }
        },
    };
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let theta0 = theta0_of(inst, cfg)?;
    // The bundle's horizon is unused here; any mu in (0,1) will do.
    let bundle_mu = if cfg.mu > 0.0 && cfg.mu < 1.0 { cfg.mu } else { 0.5 };
    let (sigma, d, critic_radius) = match cfg.estimator {
        EstimatorSpec::Vanilla => {
            let b = bound_bundle(EstimatorKind::Vanilla, pc.g, mdp.r_max, 0.0, mdp.gamma, bundle_mu, None)?;
            (b.sigma, b.d, None)
        }
        EstimatorSpec::ActorCritic { .. } => {
            let pol = inst.policy_at(theta0)?;
            let mut problem = TdProblem::new(mdp, &pol, &inst.critic_features)?;
            if let Some(r) = cfg.critic_radius {
                problem = problem.with_radius(r);
            }
            let cc = CriticConstants { f: problem.f_const, varsigma: problem.varsigma, r: problem.chain.envelope.r };
            let b = bound_bundle(EstimatorKind::ActorCritic, pc.g, mdp.r_max, problem.radius, mdp.gamma, bundle_mu, Some(cc))?;
            (b.sigma, b.d, Some(problem.radius))
        }
    };
    let ell = cfg.ell.unwrap_or_else(|| default_ell(sc.l, sigma, d, cfg.mu));
    Ok(RunConstants { g: pc.g, b: pc.b, iota: pc.iota, l: sc.l, chi: sc.chi, sigma, d, ell, horizon, critic_radius })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub theta: Vec<f64>,
    pub j: f64,
    pub grad_norm: f64,
    /// Present on logged iterations only.
    pub top_eig: Option<f64>,
    pub region: Option<Region>,
    pub sample: GradSample,
    /// `theta_{t+1} - theta_t`.
    pub step: Vec<f64>,
}

impl IterationRecord {
    pub fn xi_norm(&self) -> f64 {
        self.sample.xi_norm()
    }

    pub fn d_norm(&self) -> f64 {
        self.sample.d_norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub constants: RunConstants,
    pub records: Vec<IterationRecord>,
    pub final_theta: Vec<f64>,
    pub final_j: f64,
    pub final_grad_norm: f64,
    /// Set when a stop condition ended the run early.
    pub stopped_at: Option<usize>,
}

impl RunLog {
    pub fn initial_j(&self) -> f64 {
        self.records.first().map(|r| r.j).unwrap_or(self.final_j)
    }
}

/// Run `T` ascent iterations.
pub fn run(inst: &Instance, cfg: &RunConfig) -> Result<RunLog> {
    run_with(inst, cfg, |_| false)
}

/// Run ascent iterations, stopping after the first record for which `stop`
/// returns true.
pub fn run_with(inst: &Instance, cfg: &RunConfig, mut stop: impl FnMut(&IterationRecord) -> bool) -> Result<RunLog> {
    let consts = prepare(inst, cfg)?;
    let mdp = &inst.mdp;
    let seeds = SeedStream::new(cfg.seed);
    let mut injection_rng = seeds.child(StreamRole::Injection, 0);
    let thresholds = consts.thresholds(cfg);
    let dim = inst.policy_features.dim();
    let mut theta = theta0_of(inst, cfg)?;
    let mut critic_w: Option<DVector<f64>> = None;
    let mut records = Vec::with_capacity(cfg.t);
    let mut stopped_at = None;
    for t in 0..cfg.t {
        let pol = inst.policy_at(theta.clone())?;
        let j = oracle::objective(mdp, &pol)?;
        let exact = oracle::exact_gradient(mdp, &pol)?;
        let logged = t % cfg.log_every == 0 || t + 1 == cfg.t;
        let top_eig = if logged { Some(oracle::hessian(mdp, &pol, oracle::DEFAULT_FD_STEP)?.top_eigenvalue()) } else { None };
        let region = top_eig.map(|e| thresholds.region_of(exact.norm(), e));

        let mut sample = if cfg.exact_gradient_updates {
            GradSample {
                g_hat: exact.iter().copied().collect(),
                exact_grad: exact.iter().copied().collect(),
                mean_est: exact.iter().copied().collect(),
                noise_xi: vec![0.0; dim],
                bias_d: vec![0.0; dim],
                bias_p: None,
                bias_q: None,
            }
        } else {
            match cfg.estimator {
                EstimatorSpec::Vanilla => {
                    let mut g = DVector::zeros(dim);
                    for b in 0..cfg.batch {
                        let mut rng = seeds.child(StreamRole::Actor, (t * cfg.batch + b) as u64);
                        let traj = sample_trajectory(mdp, &pol, consts.horizon, &mut rng)?;
                        g += gpomdp(&pol, &traj, mdp.gamma)?;
                    }
                    g /= cfg.batch as f64;
                    let reference = VanillaReference {
                        exact_grad: exact.clone(),
                        truncated_grad: oracle::truncated_gradient(mdp, &pol, consts.horizon)?,
                        horizon: consts.horizon,
                    };
                    reference.decompose(&g)
                }
                EstimatorSpec::ActorCritic { k, schedule, warm_start } => {
                    let radius = consts.critic_radius.expect("actor-critic constants carry a radius");
                    let problem = TdProblem::new(mdp, &pol, &inst.critic_features)?.with_radius(radius);
                    let w0 = match (&critic_w, warm_start) {
                        (Some(w), true) => w.clone(),
                        _ => DVector::zeros(inst.critic_features.dim()),
                    };
                    let mut critic_rng = seeds.child(StreamRole::Critic, t as u64);
                    let w_bar = DVector::from_vec(ac_inner_loop(&problem, &w0, k, schedule, &mut critic_rng)?.w);
                    let mut g = DVector::zeros(dim);
                    for b in 0..cfg.batch {
                        let mut rng = seeds.child(StreamRole::Actor, (t * cfg.batch + b) as u64);
                        let traj = sample_trajectory(mdp, &pol, consts.horizon, &mut rng)?;
                        g += ac_estimator(&pol, &traj, mdp.gamma, &inst.critic_features, &w_bar)?;
                    }
                    g /= cfg.batch as f64;
                    let reference = ActorCriticReference::with_exact(exact.clone(), mdp, &pol, &inst.critic_features, &w_bar, consts.horizon)?;
                    critic_w = Some(w_bar);
                    reference.decompose(&g)
                }
            }
        };
        if cfg.inject_variance > 0.0 {
            let sd = cfg.inject_variance.sqrt();
            for i in 0..dim {
                let z: f64 = injection_rng.sample(StandardNormal);
                sample.g_hat[i] += sd * z;
                sample.noise_xi[i] += sd * z;
            }
        }
        let step: Vec<f64> = sample.g_hat.iter().map(|g| cfg.mu * g).collect();
        let next = &theta + DVector::from_column_slice(&step);
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { t, detail: format!("non-finite parameters after update from {:?}", theta.as_slice()) });
        }
        let record = IterationRecord {
            t,
            theta: theta.iter().copied().collect(),
            j,
            grad_norm: exact.norm(),
            top_eig,
            region,
            sample,
            step,
        };
        let halt = stop(&record);
        records.push(record);
        theta = next;
        if halt {
            stopped_at = Some(t);
            break;
        }
    }
    let pol = inst.policy_at(theta.clone())?;
    Ok(RunLog {
        seed: cfg.seed,
        constants: consts,
        records,
        final_j: oracle::objective(mdp, &pol)?,
        final_grad_norm: oracle::exact_gradient(mdp, &pol)?.norm(),
        final_theta: theta.iter().copied().collect(),
        stopped_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Bound on the number of outer iterations.
    pub t_budget: f64,
    /// Escape-time factor `ln(2 M sigma^2 / sigma_l^2 + 1) / ln(1 + 2 mu omega)`.
    pub script_t: f64,
}

/// `T <= 4 R_max / (mu^2 (1 - gamma)(L sigma^2 + D^2 mu) delta) * script_T`.
#[allow(clippy::too_many_arguments)]
pub fn iteration_budget(
    r_max: f64,
    gamma: f64,
    mu: f64,
    l: f64,
    sigma: f64,
    d: f64,
    delta: f64,
    omega: f64,
    m_dim: usize,
    sigma_sq_over_sigma_l_sq: f64,
) -> Budget {
    let script_t = (2.0 * m_dim as f64 * sigma_sq_over_sigma_l_sq + 1.0).ln() / (1.0 + 2.0 * mu * omega).ln();
    let t_budget = 4.0 * r_max / (mu * mu * (1.0 - gamma) * (l * sigma * sigma + d * d * mu) * delta) * script_t;
    Budget { t_budget, script_t }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeConfig {
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    /// Required gain in `J`; defaults to `mu M sigma^2 / 4`.
    #[serde(default)]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeStats {
    pub seeds: Vec<u64>,
    pub escaped: Vec<bool>,
    /// First logged iteration outside the saddle region with enough gain.
    pub first_exit: Vec<Option<usize>>,
    pub final_j: Vec<f64>,
    pub fraction: f64,
    pub margin: f64,
    pub j0: f64,
    pub exit_quantiles: Option<[f64; 3]>,
    pub initial_top_eig: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Run from a verified strict saddle once per seed and record which runs
/// leave it with a gain of at least the margin.
pub fn escape_experiment(inst: &Instance, cfg: &EscapeConfig) -> Result<EscapeStats> {
    let consts = prepare(inst, &cfg.run)?;
    let theta0 = theta0_of(inst, &cfg.run)?;
    let pol0 = inst.policy_at(theta0)?;
    let report = oracle::classify(&inst.mdp, &pol0, consts.thresholds(&cfg.run))?;
    if report.region != Region::StrictSaddle {
        return Err(Error::Precondition(format!(
            "starting point is not a strict saddle: region {}, |grad J| = {}, top eigenvalue = {}",
            report.region, report.grad_norm, report.hessian_top_eig
        )));
    }
    let j0 = oracle::objective(&inst.mdp, &pol0)?;
    let m_dim = inst.policy_features.dim() as f64;
    let margin = cfg.margin.unwrap_or(cfg.run.mu * m_dim * consts.sigma * consts.sigma / 4.0);
    let outcomes: Vec<Result<(Option<usize>, f64)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = RunConfig { seed, ..cfg.run.clone() };
            let mut exit = None;
            let log = run_with(inst, &run_cfg, |rec| {
                let out = matches!(rec.region, Some(r) if r != Region::StrictSaddle) && rec.j - j0 >= margin;
                if out {
                    exit = Some(rec.t);
                }
                out
            })?;
            Ok((exit, log.final_j))
        })
        .collect();
    let mut first_exit = Vec::with_capacity(outcomes.len());
    let mut final_j = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (e, j) = o?;
        first_exit.push(e);
        final_j.push(j);
    }
    let escaped: Vec<bool> = first_exit.iter().map(|e| e.is_some()).collect();
    let n_esc = escaped.iter().filter(|&&e| e).count();
    let mut exits: Vec<f64> = first_exit.iter().flatten().map(|&t| t as f64).collect();
    exits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let exit_quantiles = if exits.is_empty() { None } else { Some([quantile(&exits, 0.25), quantile(&exits, 0.5), quantile(&exits, 0.75)]) };
    Ok(EscapeStats {
        seeds: cfg.seeds.clone(),
        escaped,
        first_exit,
        final_j,
        fraction: if cfg.seeds.is_empty() { 0.0 } else { n_esc as f64 / cfg.seeds.len() as f64 },
        margin,
        j0,
        exit_quantiles,
        initial_top_eig: report.hessian_top_eig,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentReport {
    pub region: Region,
    pub n_samples: usize,
    pub mean_change: f64,
    pub se: f64,
    /// Closed-form threshold the mean change is compared against.
    pub bound: f64,
    /// `mean_change >= bound - 3 se`.
    pub passes: bool,
}

/// Monte-Carlo one-step change `E[J(theta + mu g_hat) - J(theta)]` for the
/// vanilla estimator, compared to the sufficient-ascent threshold of the
/// point's region: `+mu^2 (L sigma^2 + D^2 mu) / (2 delta)` for large
/// gradients and `-mu^2 (L sigma^2 + D^2 mu) / 2` near second-order
/// stationary points.
pub fn sufficient_ascent_check(
    inst: &Instance,
    theta: &DVector<f64>,
    expected: Region,
    cfg: &RunConfig,
    samples: usize,
) -> Result<AscentReport> {
    let consts = prepare(inst, cfg)?;
    let mdp = &inst.mdp;
    let pol = inst.policy_at(theta.clone())?;
    let report = oracle::classify(mdp, &pol, consts.thresholds(cfg))?;
    if report.region != expected {
        return Err(Error::Precondition(format!("point is in region {}, not {}", report.region, expected)));
    }
    let level = consts.step_level(cfg.mu);
    let bound = match expected {
        Region::LargeGradient => cfg.mu * cfg.mu * level / (2.0 * cfg.delta),
        Region::SecondOrderStationary => -cfg.mu * cfg.mu * level / 2.0,
        Region::StrictSaddle => return Err(Error::InvalidArgument("sufficient ascent is defined for large-gradient and second-order points".into())),
    };
    let j0 = oracle::objective(mdp, &pol)?;
    let seeds = SeedStream::new(cfg.seed);
    let changes: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = seeds.child(StreamRole::Sampling, i as u64);
            let traj = sample_trajectory(mdp, &pol, consts.horizon, &mut rng)?;
            let g = gpomdp(&pol, &traj, mdp.gamma)?;
            let next = pol.with_theta(theta + g * cfg.mu);
            Ok(oracle::objective(mdp, &next)? - j0)
        })
        .collect::<Result<_>>()?;
    let (mean_change, se) = mean_se(&changes);
    Ok(AscentReport { region: expected, n_samples: samples, mean_change, se, bound, passes: mean_change >= bound - 3.0 * se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub inject_variance: f64,
    /// Use the exact gradient as the base estimator, so all noise is injected.
    #[serde(default)]
    pub exact_gradient: bool,
    pub thresholds: RegionThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointNoise {
    pub theta: Vec<f64>,
    pub region: Region,
    /// Sample covariance of the noise, row-major.
    pub covariance: Vec<f64>,
    /// Smallest noise variance along positive-curvature directions; absent
    /// when the Hessian has none.
    pub sigma_l_sq: Option<f64>,
    pub sigma_l_sq_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDiagnostics {
    /// Smallest `sigma_l^2` over the supplied strict-saddle points.
    pub sigma_l_sq_est: Option<f64>,
    /// `(beta_R, nu)` from a log-log fit of covariance distance against
    /// parameter distance; `nu` is clipped to `(0, 4]`.
    pub covariance_lipschitz: Option<(f64, f64)>,
    pub n_samples: usize,
    pub per_point: Vec<PointNoise>,
}

fn sample_noise<P: DifferentiablePolicy>(mdp: &TabularMdp, pol: &P, cfg: &DiagnosticsConfig, point: usize) -> Result<Vec<DVector<f64>>> {
    let dim = pol.dim();
    let mean = if cfg.exact_gradient { oracle::exact_gradient(mdp, pol)? } else { oracle::truncated_gradient(mdp, pol, cfg.horizon)? };
    let seeds = SeedStream::new(cfg.seed);
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let idx = (point * cfg.samples + i) as u64;
            let mut g = if cfg.exact_gradient {
                mean.clone()
            } else {
                let mut rng = seeds.child(StreamRole::Sampling, idx);
                let traj = sample_trajectory(mdp, pol, cfg.horizon, &mut rng)?;
                gpomdp(pol, &traj, mdp.gamma)?
            };
            if cfg.inject_variance > 0.0 {
                let mut rng = seeds.child(StreamRole::Injection, idx);
                let sd = cfg.inject_variance.sqrt();
                for k in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    g[k] += sd * z;
                }
            }
            Ok(g - &mean)
        })
        .collect()
}

pub fn noise_diagnostics(inst: &Instance, points: &[DVector<f64>], cfg: &DiagnosticsConfig) -> Result<NoiseDiagnostics> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("noise diagnostics need at least two points".into()));
    }
    if cfg.samples < 2 {
        return Err(Error::InvalidArgument("noise diagnostics need at least two samples per point".into()));
    }
    let mdp = &inst.mdp;
    let mut per_point = Vec::with_capacity(points.len());
    let mut covs = Vec::with_capacity(points.len());
    for (i, theta) in points.iter().enumerate() {
        let pol = inst.policy_at(theta.clone())?;
        let xi = sample_noise(mdp, &pol, cfg, i)?;
        let n = xi.len() as f64;
        let dim = pol.dim();
        let mut cov = DMatrix::zeros(dim, dim);
        for x in &xi {
            cov += x * x.transpose();
        }
        cov /= n;
        let h = oracle::hessian(mdp, &pol, oracle::DEFAULT_FD_STEP)?;
        let grad_norm = oracle::exact_gradient(mdp, &pol)?.norm();
        let region = cfg.thresholds.region_of(grad_norm, h.top_eigenvalue());
        let v = h.positive_directions();
        let (sigma_l_sq, sigma_l_sq_se) = if v.ncols() == 0 {
            (None, None)
        } else {
            let proj = v.transpose() * &cov * &v;
            let (vals, vecs) = linalg::sym_eigen_desc(&proj);
            let k = vals.len() - 1;
            let dir = &v * vecs.column(k);
            let sq: Vec<f64> = xi.iter().map(|x| x.dot(&dir).powi(2)).collect();
            let (_, se) = mean_se(&sq);
            (Some(vals[k].max(0.0)), Some(se))
        };
        per_point.push(PointNoise {
            theta: theta.iter().copied().collect(),
            region,
            covariance: cov.transpose().iter().copied().collect(),
            sigma_l_sq,
            sigma_l_sq_se,
        });
        covs.push(cov);
    }
    let sigma_l_sq_est = per_point
        .iter()
        .filter(|p| p.region == Region::StrictSaddle)
        .filter_map(|p| p.sigma_l_sq)
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dt = (&points[i] - &points[j]).norm();
            let dc = (&covs[i] - &covs[j]).norm();
            if dt > 0.0 && dc > 0.0 {
                xs.push(dt.ln());
                ys.push(dc.ln());
            }
        }
    }
    let distinct = xs.iter().any(|&x| (x - xs[0]).abs() > 1e-12);
    let covariance_lipschitz = if xs.len() >= 2 && distinct {
        let (slope, intercept) = linalg::ols_slope(&xs, &ys);
        Some((intercept.exp(), slope.clamp(1e-6, 4.0)))
    } else {
        None
    };
    Ok(NoiseDiagnostics { sigma_l_sq_est, covariance_lipschitz, n_samples: cfg.samples, per_point })
}
