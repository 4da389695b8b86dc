//! Acceptance runner: one pass/fail line per criterion, then a rerun of every
//! criterion to confirm byte-identical results. Exits nonzero on any failure.

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pgsaddle_core::estimators::{ac_inner_loop, ac_truncated_mean, truncation_factor};
use pgsaddle_core::linalg::ols_slope;
use pgsaddle_core::mdp::{induced_chain, Step, Trajectory};
use pgsaddle_core::oracle::{self, projected_bellman_residual, DEFAULT_FD_STEP};
use pgsaddle_core::report::fmt_f64;
use pgsaddle_core::td0::{fourth_moment_envelope, fourth_moment_estimate, run_td0_seeds};
use pgsaddle_core::testkit::{self, central_difference, mean_se};
use pgsaddle_core::*;

struct Outcome {
    pass: bool,
    detail: String,
    /// Every number the verdict depends on, formatted exactly.
    fingerprint: String,
}

impl Outcome {
    fn new(pass: bool, detail: String, numbers: &[f64]) -> Self {
        let fingerprint = numbers.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",");
        Self { pass, detail, fingerprint }
    }
}

type Criterion = fn() -> Result<Outcome>;

/// Allowance for comparing a difference of two computed sums whose terms are
/// of size `scale` against an envelope that can fall below their resolution.
fn roundoff(scale: f64) -> f64 {
    64.0 * f64::EPSILON * scale
}

fn policy_g(pol: &SoftmaxPolicy) -> f64 {
    policy_constants(pol).g
}

/// 1. Exact gradient against finite differences; Hessian Taylor remainder.
fn gradient_oracle() -> Result<Outcome> {
    let mut worst_rel: f64 = 0.0;
    let mut worst_slope = f64::INFINITY;
    let mut nums = Vec::new();
    for seed in 1..=5u64 {
        let inst = testkit::random_instance(seed, 3, 2, 0.9);
        let pol = testkit::random_policy(&inst, 100 + seed, 1.0);
        let mdp = &inst.mdp;
        let theta = pol.theta().clone();
        let j = |t: DVector<f64>| oracle::objective(mdp, &pol.with_theta(t)).unwrap();
        let g = oracle::exact_gradient(mdp, &pol)?;
        let fd = central_difference(&theta, 1e-5, j);
        let rel = (&g - &fd).norm() / g.norm();
        worst_rel = worst_rel.max(rel);

        let h = oracle::hessian(mdp, &pol, DEFAULT_FD_STEP)?.matrix;
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let v = DVector::from_fn(theta.len(), |_, _| rng.random_range(-1.0..1.0)).normalize();
        let j0 = j(theta.clone());
        let gv = g.dot(&v);
        let vhv = v.dot(&(&h * &v));
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for eps in [0.08, 0.04, 0.02, 0.01] {
            let rem = (j(&theta + &v * eps) - j0 - eps * gv - 0.5 * eps * eps * vhv).abs();
            xs.push(f64::ln(eps));
            ys.push(rem.ln());
        }
        let slope = ols_slope(&xs, &ys).0;
        worst_slope = worst_slope.min(slope);
        nums.extend([rel, slope]);
    }
    let pass = worst_rel < 1e-5 && worst_slope >= 2.7;
    Ok(Outcome::new(pass, format!("max rel err {worst_rel:.2e}, min remainder slope {worst_slope:.3}"), &nums))
}

fn enumerate_paths(mdp: &TabularMdp, pol: &SoftmaxPolicy, horizon: usize) -> Vec<(f64, Trajectory)> {
    let mut out = Vec::new();
    let mut stack: Vec<(f64, Vec<Step>, usize)> = (0..mdp.n_states).map(|s| (mdp.rho0[s], Vec::new(), s)).collect();
    while let Some((p, steps, s)) = stack.pop() {
        let probs = pol.action_probs(s);
        for a in 0..mdp.n_actions {
            let mut next = steps.clone();
            next.push(Step { state: s, action: a, reward: mdp.r(s, a) });
            let pa = p * probs[a];
            if next.len() == horizon {
                out.push((pa, Trajectory { steps: next }));
            } else {
                for s2 in 0..mdp.n_states {
                    stack.push((pa * mdp.p(s, a, s2), next.clone(), s2));
                }
            }
        }
    }
    out
}

/// 2. GPOMDP is unbiased for the truncated gradient.
fn gpomdp_unbiased() -> Result<Outcome> {
    let inst = testkit::random_instance(7, 2, 2, 0.9);
    let pol = testkit::random_policy(&inst, 8, 1.0);
    let mdp = &inst.mdp;
    let mut worst_enum: f64 = 0.0;
    let mut nums = Vec::new();
    for h in 1..=4 {
        let mut mean = DVector::zeros(pol.dim());
        for (p, traj) in enumerate_paths(mdp, &pol, h) {
            mean += gpomdp(&pol, &traj, mdp.gamma)? * p;
        }
        let err = (&mean - oracle::truncated_gradient(mdp, &pol, h)?).amax();
        worst_enum = worst_enum.max(err);
        nums.push(err);
    }
    let h = 4;
    let n = 200_000;
    let seeds = SeedStream::new(2024);
    let samples: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.child(StreamRole::Sampling, i as u64);
            gpomdp(&pol, &sample_trajectory(mdp, &pol, h, &mut rng)?, mdp.gamma)
        })
        .collect::<Result<_>>()?;
    let target = oracle::truncated_gradient(mdp, &pol, h)?;
    let mut worst_z: f64 = 0.0;
    for k in 0..pol.dim() {
        let xs: Vec<f64> = samples.iter().map(|g| g[k]).collect();
        let (m, se) = mean_se(&xs);
        let z = (m - target[k]).abs() / se;
        worst_z = worst_z.max(z);
        nums.extend([m, se]);
    }
    let pass = worst_enum < 1e-10 && worst_z <= 3.0;
    Ok(Outcome::new(pass, format!("enumeration max err {worst_enum:.2e}, Monte-Carlo max |z| {worst_z:.2}"), &nums))
}

/// 3. Truncation bias stays inside its envelope.
fn truncation_envelope() -> Result<Outcome> {
    let mut violations = 0;
    let mut checked = 0;
    let mut worst_ratio: f64 = 0.0;
    for gamma in [0.5, 0.9] {
        let mut cases: Vec<Instance> = (1..=3).map(|s| testkit::random_instance(s, 3, 2, gamma)).collect();
        let mut c3 = testkit::chain3();
        c3.mdp.gamma = gamma;
        cases.push(c3);
        for (i, inst) in cases.iter().enumerate() {
            let pol = testkit::random_policy(inst, 30 + i as u64, 1.5);
            let d = policy_g(&pol) * inst.mdp.r_max / (1.0 - gamma);
            let exact = oracle::exact_gradient(&inst.mdp, &pol)?;
            for h in 1..=60 {
                let bias = (&exact - oracle::truncated_gradient(&inst.mdp, &pol, h)?).norm();
                let bound = d * truncation_factor(gamma, h);
                let allowed = bound + roundoff(d);
                checked += 1;
                if bias > allowed {
                    violations += 1;
                }
                worst_ratio = worst_ratio.max(bias / allowed);
            }
        }
    }
    let h41 = horizon_for_mu(0.1, 0.9)?;
    let pass = violations == 0 && h41 == 41;
    Ok(Outcome::new(
        pass,
        format!("{violations}/{checked} violations, max bias/bound {worst_ratio:.3}, horizon_for_mu(0.1, 0.9) = {h41}"),
        &[violations as f64, worst_ratio, h41 as f64],
    ))
}

struct MomentCheck {
    max_norm: f64,
    m2: (f64, f64),
    m4: (f64, f64),
}

fn moments(samples: &[(f64, f64)]) -> MomentCheck {
    let max_norm = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let sq: Vec<f64> = samples.iter().map(|s| s.1 * s.1).collect();
    let quad: Vec<f64> = sq.iter().map(|x| x * x).collect();
    MomentCheck { max_norm, m2: mean_se(&sq), m4: mean_se(&quad) }
}

/// 4. Pathwise norm bounds and noise moments for both estimators.
fn estimator_moments() -> Result<Outcome> {
    let inst = testkit::chain3();
    let pol = testkit::chain3_policy(&inst, 1);
    let mdp = &inst.mdp;
    let mu = 0.1;
    let h = horizon_for_mu(mu, mdp.gamma)?;
    let g = policy_g(&pol);
    let n = 100_000;
    let seeds = SeedStream::new(4);

    let sigma_v = bound_bundle(EstimatorKind::Vanilla, g, mdp.r_max, 0.0, mdp.gamma, mu, None)?.sigma;
    let mean_v = oracle::truncated_gradient(mdp, &pol, h)?;
    let vanilla: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.child(StreamRole::Sampling, i as u64);
            let gh = gpomdp(&pol, &sample_trajectory(mdp, &pol, h, &mut rng)?, mdp.gamma)?;
            Ok((gh.norm(), (&gh - &mean_v).norm()))
        })
        .collect::<Result<_>>()?;

    let problem = TdProblem::new(mdp, &pol, &inst.critic_features)?;
    let mut crng = seeds.child(StreamRole::Critic, 0);
    let w = DVector::from_vec(ac_inner_loop(&problem, &DVector::zeros(problem.features.dim()), 2000, StepSchedule::InvSqrtK, &mut crng)?.w);
    let sigma_ac = g * problem.radius / (1.0 - mdp.gamma);
    let mean_ac = ac_truncated_mean(mdp, &pol, &inst.critic_features, &w, h)?;
    let ac: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.child(StreamRole::Actor, i as u64);
            let gh = ac_estimator(&pol, &sample_trajectory(mdp, &pol, h, &mut rng)?, mdp.gamma, &inst.critic_features, &w)?;
            Ok((gh.norm(), (&gh - &mean_ac).norm()))
        })
        .collect::<Result<_>>()?;

    let mut pass = true;
    let mut detail = String::new();
    let mut nums = Vec::new();
    for (name, m, sigma) in [("vanilla", moments(&vanilla), sigma_v), ("actor-critic", moments(&ac), sigma_ac)] {
        let s2 = sigma * sigma;
        pass &= m.max_norm <= sigma && m.m2.0 - 3.0 * m.m2.1 <= s2 && m.m4.0 - 3.0 * m.m4.1 <= 4.0 * s2 * s2;
        let _ = write!(detail, "{name}: max|G|/sigma {:.3}, E|xi|^2/sigma^2 {:.2e}, E|xi|^4/sigma^4 {:.2e}; ", m.max_norm / sigma, m.m2.0 / s2, m.m4.0 / (s2 * s2));
        nums.extend([sigma, m.max_norm, m.m2.0, m.m2.1, m.m4.0, m.m4.1]);
    }
    Ok(Outcome::new(pass, detail.trim_end_matches("; ").to_string(), &nums))
}

/// 5. TD fixed point equals Q for tabular features and solves the projected
/// Bellman equation for general features.
fn td_fixed_point() -> Result<Outcome> {
    let inst = testkit::chain3();
    let mdp = &inst.mdp;
    let mut worst_tab: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for seed in 1..=5u64 {
        let pol = testkit::chain3_policy(&inst, seed);
        let w = oracle::critic_fixed_point(mdp, &pol, &inst.critic_features)?;
        let q = oracle::value_functions(mdp, &pol)?.q;
        worst_tab = worst_tab.max((inst.critic_features.matrix() * w - q).amax());

        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let feats = testkit::random_features(&mut rng, mdp.n_states, mdp.n_actions, 4, 1.0);
        feats.check_full_rank()?;
        let w = oracle::critic_fixed_point(mdp, &pol, &feats)?;
        let chain = induced_chain(mdp, &pol)?;
        worst_res = worst_res.max(projected_bellman_residual(mdp, &chain, &feats, &w)?);
    }
    let pass = worst_tab < 1e-8 && worst_res < 1e-9;
    Ok(Outcome::new(pass, format!("tabular max |Phi w* - Q| {worst_tab:.2e}, projected Bellman residual {worst_res:.2e}"), &[worst_tab, worst_res]))
}

fn seed_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// 6. TD(0) errors stay below the mixing-aware bound from both stationary and
/// point-mass starts; the point-mass excess decays like 1/K.
fn td_rate() -> Result<Outcome> {
    let mut inst = testkit::chain3();
    inst.mdp.gamma = 0.5;
    let pol = testkit::chain3_policy(&inst, 1);
    let problem = TdProblem::new(&inst.mdp, &pol, &inst.critic_features)?;
    let env = problem.chain.envelope;
    let certified = problem.chain.tv_profile[..env.window].iter().enumerate().all(|(t, &tv)| tv <= env.m * env.r.powi(t as i32) * (1.0 + 1e-12));
    let seeds: Vec<u64> = (0..50).collect();
    let (mut violations, mut xs, mut ys, mut nums) = (0, Vec::new(), Vec::new(), vec![env.m, env.r]);
    let mut detail = String::new();
    for k in [100usize, 400, 1600, 6400] {
        let stat = run_td0_seeds(&problem, &TdConfig::new(k, StepSchedule::InvSqrtK, StartDistribution::Stationary), &seeds)?;
        let point = run_td0_seeds(&problem, &TdConfig::new(k, StepSchedule::InvSqrtK, StartDistribution::WorstCase), &seeds)?;
        let bound = stat[0].bound_value;
        let e_stat = seed_mean(stat.iter().map(|r| r.final_sq_error));
        let e_point = seed_mean(point.iter().map(|r| r.final_sq_error));
        violations += usize::from(e_stat > bound) + usize::from(e_point > bound) + usize::from(e_stat > stat[0].stationary_bound_value);
        let excess = seed_mean(stat.iter().zip(&point).map(|(a, b)| (b.final_sq_error - a.final_sq_error).abs()));
        xs.push((k as f64).ln());
        ys.push(excess.ln());
        let _ = write!(detail, "K={k}: {e_point:.3e} vs bound {bound:.3e}; ");
        nums.extend([e_stat, e_point, bound, stat[0].stationary_bound_value, excess]);
    }
    let slope = ols_slope(&xs, &ys).0;
    nums.push(slope);
    let pass = certified && violations == 0 && slope <= -0.8;
    Ok(Outcome::new(pass, format!("envelope certified {certified}, {violations} violations, excess slope {slope:.3}; {}", detail.trim_end_matches("; ")), &nums))
}

/// 7. Fourth moment of the averaged critic under diminishing steps.
fn fourth_moment() -> Result<Outcome> {
    let inst = testkit::chain3();
    let pol = testkit::chain3_policy(&inst, 1);
    let problem = TdProblem::new(&inst.mdp, &pol, &inst.critic_features)?;
    let seeds: Vec<u64> = (0..50).collect();
    let mut pass = true;
    let mut nums = Vec::new();
    let mut detail = String::new();
    for k in [1_000usize, 10_000] {
        let est = fourth_moment_estimate(&problem, k, &seeds)?;
        let env = fourth_moment_envelope(problem.f_const, problem.radius, problem.varsigma, problem.chain.envelope.r, k);
        pass &= est <= env;
        let _ = write!(detail, "K={k}: {est:.3e} vs envelope {env:.3e}; ");
        nums.extend([est, env]);
    }
    Ok(Outcome::new(pass, detail.trim_end_matches("; ").to_string(), &nums))
}

/// 8. Actor-critic bias splits into truncation and critic parts; both behave.
fn actor_critic_bias() -> Result<Outcome> {
    let inst = testkit::chain3();
    let pol = testkit::chain3_policy(&inst, 1);
    let mdp = &inst.mdp;
    let feats = &inst.critic_features;
    let problem = TdProblem::new(mdp, &pol, feats)?;
    let g = policy_g(&pol);
    let dim = feats.dim();
    let exact = oracle::exact_gradient(mdp, &pol)?;

    let mut crng = SeedStream::new(8).child(StreamRole::Critic, 0);
    let w = DVector::from_vec(ac_inner_loop(&problem, &DVector::zeros(dim), 1000, StepSchedule::InvSqrtK, &mut crng)?.w);
    let h = horizon_for_mu(0.1, mdp.gamma)?;
    let reference = estimators::ActorCriticReference::with_exact(exact.clone(), mdp, &pol, feats, &w, h)?;
    let seeds = SeedStream::new(8);
    let mut split_err: f64 = 0.0;
    for i in 0..2000u64 {
        let mut rng = seeds.child(StreamRole::Actor, i);
        let gh = ac_estimator(&pol, &sample_trajectory(mdp, &pol, h, &mut rng)?, mdp.gamma, feats, &w)?;
        let s = reference.decompose(&gh);
        let (p, q) = (s.bias_p.as_ref().unwrap(), s.bias_q.as_ref().unwrap());
        let e = (0..s.bias_d.len()).map(|k| (s.bias_d[k] - p[k] - q[k]).abs()).fold(s.identity_residual(), f64::max);
        split_err = split_err.max(e / (1.0 + gh.amax()));
    }

    let g_inf = oracle::gradient_with_q(mdp, &pol, &(feats.matrix() * &w))?;
    let mut p_violations = 0;
    for hh in 1..=60 {
        let p = (ac_truncated_mean(mdp, &pol, feats, &w, hh)? - &g_inf).norm();
        if p > g * problem.radius / (1.0 - mdp.gamma) * mdp.gamma.powi(hh as i32) + roundoff(g * problem.radius / (1.0 - mdp.gamma)) {
            p_violations += 1;
        }
    }

    let q_mean = |k: usize| -> Result<f64> {
        let qs: Vec<f64> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let mut rng = SeedStream::new(seed).child(StreamRole::Critic, 0);
                let w = DVector::from_vec(ac_inner_loop(&problem, &DVector::zeros(dim), k, StepSchedule::InvSqrtK, &mut rng)?.w);
                Ok((oracle::gradient_with_q(mdp, &pol, &(feats.matrix() * w))? - &exact).norm())
            })
            .collect::<Result<_>>()?;
        Ok(seed_mean(qs.into_iter()))
    };
    let (q_small, q_large) = (q_mean(1_000)?, q_mean(100_000)?);
    let ratio = q_large / q_small;
    let pass = split_err < 1e-12 && p_violations == 0 && ratio < 0.25;
    Ok(Outcome::new(
        pass,
        format!("split residual {split_err:.1e}, {p_violations}/60 truncation violations, mean |q| {q_small:.3e} -> {q_large:.3e} (ratio {ratio:.3})"),
        &[split_err, p_violations as f64, q_small, q_large],
    ))
}

/// 9. Regions partition parameter space; one-step ascent meets its region's
/// threshold.
fn regions_and_ascent() -> Result<Outcome> {
    let inst = testkit::chain3();
    let mdp = &inst.mdp;
    let base = RunConfig::vanilla(1e-6, 1, 9);
    let consts = ascent::prepare(&inst, &base)?;
    let thresholds = consts.thresholds(&base);

    let points: Vec<(DVector<f64>, f64, f64)> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let pol = testkit::random_policy(&inst, 10_000 + i, 3.0);
            let r = oracle::classify(mdp, &pol, thresholds)?;
            Ok((pol.theta().clone(), r.grad_norm, r.hessian_top_eig))
        })
        .collect::<Result<_>>()?;
    let mut overlaps = 0;
    let mut counts = [0usize; 3];
    for (_, gn, eig) in &points {
        let in_g = gn * gn >= thresholds.gradient_level();
        let in_h = !in_g && *eig >= thresholds.omega;
        let in_m = !in_g && *eig < thresholds.omega;
        let members = [in_g, in_h, in_m];
        if members.iter().filter(|&&b| b).count() != 1 {
            overlaps += 1;
        }
        let region = thresholds.region_of(*gn, *eig);
        let idx = match region {
            Region::LargeGradient => 0,
            Region::StrictSaddle => 1,
            Region::SecondOrderStationary => 2,
        };
        if !members[idx] {
            overlaps += 1;
        }
        counts[idx] += 1;
    }

    // Large-gradient point: the steepest sample, with mu set so that its
    // squared gradient is twice the region level.
    let (theta_g, gn_g, _) = points.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let mu_g = gn_g * gn_g / (4.0 * consts.l * consts.sigma * consts.sigma);
    let cfg_g = RunConfig { mu: mu_g, ..RunConfig::vanilla(mu_g, 1, 91) };
    let rep_g = sufficient_ascent_check(&inst, theta_g, Region::LargeGradient, &cfg_g, 10_000)?;

    // Second-order point: the flattest sample at a step size whose gradient
    // level exceeds every attainable gradient.
    let (theta_m, _, eig_m) = points.iter().min_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
    let mu_m = 0.5 / consts.l;
    let cfg_m = RunConfig::vanilla(mu_m, 1, 92);
    let rep_m = sufficient_ascent_check(&inst, theta_m, Region::SecondOrderStationary, &cfg_m, 10_000)?;

    let pass = overlaps == 0 && rep_g.passes && rep_m.passes;
    Ok(Outcome::new(
        pass,
        format!(
            "regions G/H/M = {}/{}/{}, {overlaps} partition errors; G step {:.3e} vs bound {:.3e} (se {:.1e}); M step {:.3e} vs bound {:.3e} (se {:.1e}, top eig {eig_m:.3})",
            counts[0], counts[1], counts[2], rep_g.mean_change, rep_g.bound, rep_g.se, rep_m.mean_change, rep_m.bound, rep_m.se
        ),
        &[counts[0] as f64, counts[1] as f64, counts[2] as f64, rep_g.mean_change, rep_g.se, rep_m.mean_change, rep_m.se],
    ))
}

/// 10. Noisy ascent escapes the bandit saddle; exact ascent stays.
fn saddle_escape() -> Result<Outcome> {
    let inst = Instance::bundled("saddle_bandit")?;
    let mut run = RunConfig::vanilla(0.01, 2000, 0);
    run.omega = 0.5;
    run.log_every = 10;
    let seeds: Vec<u64> = (0..50).collect();
    let noisy = escape_experiment(&inst, &EscapeConfig { run: run.clone(), seeds: seeds.clone(), margin: None })?;
    let control = escape_experiment(&inst, &EscapeConfig { run: RunConfig { exact_gradient_updates: true, ..run }, seeds, margin: None })?;
    let escaped = noisy.escaped.iter().filter(|&&e| e).count();
    let control_escaped = control.escaped.iter().filter(|&&e| e).count();
    let control_drift = control.final_j.iter().map(|j| (j - control.j0).abs()).fold(0.0, f64::max);
    let pass = escaped >= 45 && control_escaped == 0 && control_drift < control.margin;
    let median = noisy.exit_quantiles.map_or(f64::NAN, |q| q[1]);
    let mut nums = vec![escaped as f64, control_escaped as f64, control_drift, median];
    nums.extend(&noisy.final_j);
    Ok(Outcome::new(
        pass,
        format!("{escaped}/50 escaped (margin {:.3}, median exit {median}), control escaped {control_escaped}, control max |J - J0| {control_drift:.1e}", noisy.margin),
        &nums,
    ))
}

/// 11. Iteration budget closed forms.
fn budget() -> Result<Outcome> {
    let b = iteration_budget(1.0, 0.9, 0.01, 1.0, 1.0, 1.0, 1.0, 0.1, 2, 1.0);
    let reference = 5f64.ln() / 1.002f64.ln();
    let rel = (b.script_t - reference).abs() / reference;
    let wider = iteration_budget(1.0, 0.9, 0.01, 1.0, 1.0, 1.0, 1.0, 0.2, 2, 1.0);
    let doubled = iteration_budget(2.0, 0.9, 0.01, 1.0, 1.0, 1.0, 1.0, 0.1, 2, 1.0);
    let monotone = wider.script_t < b.script_t && (doubled.t_budget / b.t_budget - 2.0).abs() < 1e-12;
    let pass = rel < 5e-7 && monotone;
    Ok(Outcome::new(pass, format!("script_T = {:.6} (reference {reference:.6}), monotone {monotone}", b.script_t), &[b.script_t, b.t_budget, wider.script_t, doubled.t_budget]))
}

const CRITERIA: [(&str, Criterion, u64); 11] = [
    ("gradient oracle consistency", gradient_oracle, 10),
    ("GPOMDP unbiasedness", gpomdp_unbiased, 60),
    ("truncation-bias envelope", truncation_envelope, 10),
    ("estimator norm and moment bounds", estimator_moments, 60),
    ("TD fixed point", td_fixed_point, 5),
    ("TD(0) nonstationary rate", td_rate, 300),
    ("fourth-moment envelope", fourth_moment, 180),
    ("actor-critic bias split", actor_critic_bias, 300),
    ("region partition and sufficient ascent", regions_and_ascent, 120),
    ("saddle escape", saddle_escape, 300),
    ("budget formulas", budget, 1),
];

fn run_one(f: Criterion) -> (Result<Outcome>, Duration) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed())
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut prints = Vec::new();
    for (i, (name, f, limit)) in CRITERIA.iter().enumerate() {
        let (out, elapsed) = run_one(*f);
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (pass, detail, fp) = match out {
            Ok(o) => (o.pass && in_time, o.detail, Some(o.fingerprint)),
            Err(e) => (false, format!("error: {e}"), None),
        };
        all_pass &= pass;
        println!(
            "[{}] C{} {name}: {detail} ({:.2}s, limit {limit}s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
        prints.push(fp);
    }

    let t0 = Instant::now();
    let mut mismatched = Vec::new();
    for (i, (_, f, _)) in CRITERIA.iter().enumerate() {
        let again = f().ok().map(|o| o.fingerprint);
        if prints[i].is_none() || again != prints[i] {
            mismatched.push(format!("C{}", i + 1));
        }
    }
    let pass = mismatched.is_empty();
    all_pass &= pass;
    println!(
        "[{}] C12 determinism: {} ({:.2}s)",
        if pass { "PASS" } else { "FAIL" },
        if pass { "all criteria reproduced byte-for-byte".to_string() } else { format!("differs: {}", mismatched.join(", ")) },
        t0.elapsed().as_secs_f64()
    );
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
