use std::path::Path;

use anyhow::bail;
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;

use pgsaddle_core::ascent::{prepare, DiagnosticsConfig};
use pgsaddle_core::estimators::truncation_factor;
use pgsaddle_core::oracle::{self, projected_bellman_residual, smoothness_constants, DEFAULT_FD_STEP};
use pgsaddle_core::report::{fmt_f64, write_ascent_csv, write_td_summary_csv, write_td_trace_csv, TdSummaryRow};
use pgsaddle_core::td0::run_td0_seeds;
use pgsaddle_core::testkit::central_difference;
use pgsaddle_core::{
    escape_experiment, noise_diagnostics, policy_constants, run, DifferentiablePolicy, EscapeConfig, EstimatorSpec, HorizonSpec, Instance,
    RunConfig, RunLog, SoftmaxPolicy, StartDistribution, StepSchedule, TdConfig, TdProblem,
};

use crate::input::{self, invalid};
use crate::{Common, RunArgs};

fn load(common: &Common, default: &str) -> anyhow::Result<Instance> {
    input::instance(common.instance.as_deref().unwrap_or(default))
}

fn policy_at(inst: &Instance, theta: Option<&str>) -> anyhow::Result<SoftmaxPolicy> {
    let theta = match theta {
        Some(t) => input::vector("theta", t, inst.policy_features.dim())?,
        None => inst.theta0.clone(),
    };
    Ok(inst.policy_at(theta)?)
}

fn vec_str(v: &DVector<f64>) -> String {
    v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ")
}

/// Writes `bytes` to `<out>/<name>`, or to stdout when no directory is set.
fn emit(out: Option<&Path>, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(dir) => input::write_file(dir, name, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

pub fn oracle(common: &Common, theta: Option<&str>, mu: Option<f64>, omega: f64, delta: f64) -> anyhow::Result<()> {
    let inst = load(common, "chain3")?;
    let mdp = &inst.mdp;
    let pol = policy_at(&inst, theta)?;
    let j = oracle::objective(mdp, &pol)?;
    let grad = oracle::exact_gradient(mdp, &pol)?;
    let hess = oracle::hessian(mdp, &pol, DEFAULT_FD_STEP)?;
    let pc = policy_constants(&pol);
    let sc = smoothness_constants(mdp.r_max, pc.g, pc.b, pc.iota, mdp.gamma);
    let mu = mu.unwrap_or(0.1 / sc.l);
    let mut cfg = RunConfig::vanilla(mu, 0, 0);
    cfg.omega = omega;
    cfg.delta = delta;
    cfg.theta0 = Some(pol.theta().iter().copied().collect());
    let consts = prepare(&inst, &cfg)?;
    let thresholds = consts.thresholds(&cfg);
    let region = thresholds.region_of(grad.norm(), hess.top_eigenvalue());

    println!("J = {}", fmt_f64(j));
    println!("grad J = [{}]", vec_str(&grad));
    println!("|grad J| = {}", fmt_f64(grad.norm()));
    println!("hessian eigenvalues = [{}]", vec_str(&hess.eigenvalues));
    println!("region = {region} (mu = {}, ell = {}, delta = {delta}, omega = {omega})", fmt_f64(mu), fmt_f64(consts.ell));
    println!("G = {}, B = {}, iota = {}", fmt_f64(pc.g), fmt_f64(pc.b), fmt_f64(pc.iota));
    println!("L = {}", fmt_f64(sc.l));
    println!("chi = {}", fmt_f64(sc.chi));
    let mut report = json!({
        "J": j,
        "grad": grad.as_slice(),
        "grad_norm": grad.norm(),
        "hessian_eigenvalues": hess.eigenvalues.as_slice(),
        "region": region,
        "thresholds": thresholds,
        "G": pc.g, "B": pc.b, "iota": pc.iota, "L": sc.l, "chi": sc.chi,
    });
    match TdProblem::new(mdp, &pol, &inst.critic_features) {
        Ok(p) => {
            println!("w* = [{}]", vec_str(&p.w_star));
            println!("varsigma = {}", fmt_f64(p.varsigma));
            println!("m = {}", fmt_f64(p.chain.envelope.m));
            println!("r = {}", fmt_f64(p.chain.envelope.r));
            report["w_star"] = json!(p.w_star.as_slice());
            report["varsigma"] = json!(p.varsigma);
            report["m"] = json!(p.chain.envelope.m);
            report["r"] = json!(p.chain.envelope.r);
        }
        Err(e) => println!("critic = unavailable ({e})"),
    }
    if let Some(dir) = &common.out {
        input::write_file(dir, "oracle.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

fn horizon(text: &str) -> anyhow::Result<HorizonSpec> {
    if text == "auto" {
        return Ok(HorizonSpec::Auto);
    }
    text.parse::<usize>().map(HorizonSpec::Fixed).map_err(|_| invalid(format!("--H must be `auto` or a positive integer, got {text:?}")))
}

fn run_config(args: &RunArgs, actor_critic: bool) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => input::json_file::<RunConfig>(path)?,
        None => {
            let mu = args.mu.ok_or_else(|| invalid("--mu is required when no --config is given"))?;
            RunConfig::vanilla(mu, 1000, 0)
        }
    };
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(h) = &args.h {
        cfg.horizon = horizon(h)?;
    }
    if let Some(w) = args.omega {
        cfg.omega = w;
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(l) = args.log_every {
        cfg.log_every = l;
    }
    if let Some(v) = args.inject_noise {
        cfg.inject_variance = v;
    }
    match (actor_critic, cfg.estimator) {
        (true, EstimatorSpec::Vanilla) => {
            cfg.estimator = EstimatorSpec::ActorCritic { k: args.k.unwrap_or(1000), schedule: StepSchedule::InvSqrtK, warm_start: false };
        }
        (true, EstimatorSpec::ActorCritic { schedule, warm_start, k }) => {
            cfg.estimator = EstimatorSpec::ActorCritic { k: args.k.unwrap_or(k), schedule, warm_start };
        }
        (false, EstimatorSpec::ActorCritic { .. }) => return Err(invalid("config selects the actor-critic estimator; use the `ac` subcommand")),
        (false, EstimatorSpec::Vanilla) => {
            if args.k.is_some() {
                return Err(invalid("--K only applies to the actor-critic estimator"));
            }
        }
    }
    Ok(cfg)
}

pub fn ascent(args: &RunArgs, actor_critic: bool) -> anyhow::Result<()> {
    let inst = load(&args.common, "chain3")?;
    let cfg = run_config(args, actor_critic)?;
    let seeds = input::seeds(args.common.seeds.as_deref(), &[cfg.seed])?;
    prepare(&inst, &cfg)?;
    let name = if actor_critic { "ac" } else { "vpg" };
    let logs: Vec<(String, RunLog)> = seeds
        .par_iter()
        .map(|&seed| run(&inst, &RunConfig { seed, ..cfg.clone() }).map(|log| (format!("{name}-seed{seed}"), log)))
        .collect::<Result<_, _>>()?;
    let mut logs = logs;
    logs.sort_by(|a, b| a.0.cmp(&b.0));

    let refs: Vec<(String, &RunLog)> = logs.iter().map(|(id, l)| (id.clone(), l)).collect();
    let mut csv = Vec::new();
    write_ascent_csv(&mut csv, &refs)?;
    emit(args.common.out.as_deref(), "ascent.csv", &csv)?;

    let summary: Vec<_> = logs
        .iter()
        .map(|(id, l)| {
            eprintln!(
                "{id}: J {} -> {}, |grad J| -> {}{}",
                fmt_f64(l.initial_j()),
                fmt_f64(l.final_j),
                fmt_f64(l.final_grad_norm),
                l.stopped_at.map(|t| format!(", stopped at t = {t}")).unwrap_or_default()
            );
            json!({
                "run_id": id,
                "seed": l.seed,
                "initial_J": l.initial_j(),
                "final_J": l.final_j,
                "final_grad_norm": l.final_grad_norm,
                "final_theta": l.final_theta,
                "constants": l.constants,
            })
        })
        .collect();
    if let Some(dir) = &args.common.out {
        let body = json!({ "config": cfg, "runs": summary });
        input::write_file(dir, "summary.json", serde_json::to_string_pretty(&body)?.as_bytes())?;
    }
    Ok(())
}

fn start(text: &str) -> anyhow::Result<StartDistribution> {
    match text {
        "stationary" => Ok(StartDistribution::Stationary),
        "point" => Ok(StartDistribution::WorstCase),
        "initial" => Ok(StartDistribution::Initial),
        other => match other.strip_prefix("point:").map(str::parse::<usize>) {
            Some(Ok(p)) => Ok(StartDistribution::PointMass(p)),
            _ => Err(invalid(format!("unknown start {other:?}; expected stationary, point, point:<pair> or initial"))),
        },
    }
}

fn schedule(text: &str) -> anyhow::Result<StepSchedule> {
    match text {
        "inv-sqrt-k" => Ok(StepSchedule::InvSqrtK),
        "diminishing" => Ok(StepSchedule::Diminishing),
        other => match other.parse::<f64>() {
            Ok(a) if a > 0.0 => Ok(StepSchedule::Constant(a)),
            _ => Err(invalid(format!("--schedule must be inv-sqrt-k, diminishing or a positive constant, got {other:?}"))),
        },
    }
}

pub fn td0(common: &Common, k_list: &str, starts: &str, sched: &str, theta: Option<&str>, trace: bool) -> anyhow::Result<()> {
    let inst = load(common, "chain3")?;
    let pol = policy_at(&inst, theta)?;
    let ks = input::usizes("K", k_list)?;
    if ks.contains(&0) {
        return Err(invalid("--K entries must be at least 1"));
    }
    let labels: Vec<&str> = starts.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if labels.is_empty() {
        return Err(invalid("--starts must not be empty"));
    }
    let start_laws = labels.iter().map(|l| start(l)).collect::<anyhow::Result<Vec<_>>>()?;
    let schedule = schedule(sched)?;
    let seeds = input::seeds(common.seeds.as_deref(), &[0])?;
    let problem = TdProblem::new(&inst.mdp, &pol, &inst.critic_features)?;

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &k in &ks {
        for (label, law) in labels.iter().zip(&start_laws) {
            let cfg = TdConfig { record_path: trace, ..TdConfig::new(k, schedule, law.clone()) };
            let run_id = format!("K{k}-{label}");
            let stats = run_td0_seeds(&problem, &cfg, &seeds)?;
            for (&seed, s) in seeds.iter().zip(stats) {
                rows.push(TdSummaryRow {
                    run_id: run_id.clone(),
                    k,
                    start: label.to_string(),
                    seed,
                    sq_error: s.final_sq_error,
                    bound: s.bound_value,
                    stationary_bound: s.stationary_bound_value,
                    tau_mix: s.tau_mix,
                    fourth_moment: s.fourth_moment,
                });
                if trace {
                    traces.push((run_id.clone(), seed, s));
                }
            }
        }
    }
    let mut csv = Vec::new();
    write_td_summary_csv(&mut csv, &rows)?;
    emit(common.out.as_deref(), "td0.csv", &csv)?;
    if trace {
        let refs: Vec<_> = traces.iter().map(|(id, seed, s)| (id.clone(), *seed, s)).collect();
        let mut csv = Vec::new();
        write_td_trace_csv(&mut csv, &refs)?;
        match &common.out {
            Some(dir) => input::write_file(dir, "td0_trace.csv", &csv)?,
            None => eprintln!("--trace needs --out; trace not written"),
        }
    }
    eprintln!(
        "varsigma = {}, radius = {}, F = {}, m = {}, r = {}",
        fmt_f64(problem.varsigma),
        fmt_f64(problem.radius),
        fmt_f64(problem.f_const),
        fmt_f64(problem.chain.envelope.m),
        fmt_f64(problem.chain.envelope.r)
    );
    Ok(())
}

pub fn escape(args: &RunArgs, margin: Option<f64>) -> anyhow::Result<()> {
    let inst = load(&args.common, "saddle_bandit")?;
    let run = run_config(args, false)?;
    let seeds = input::seeds(args.common.seeds.as_deref(), &(0..50).collect::<Vec<_>>())?;
    let stats = escape_experiment(&inst, &EscapeConfig { run, seeds, margin })?;
    let escaped = stats.escaped.iter().filter(|&&e| e).count();
    println!("escaped = {escaped}/{}", stats.seeds.len());
    println!("fraction = {}", fmt_f64(stats.fraction));
    println!("margin = {}", fmt_f64(stats.margin));
    println!("initial top eigenvalue = {}", fmt_f64(stats.initial_top_eig));
    if let Some(q) = stats.exit_quantiles {
        println!("exit iteration quartiles = {}, {}, {}", q[0], q[1], q[2]);
    }
    if let Some(dir) = &args.common.out {
        input::write_file(dir, "escape.json", serde_json::to_string_pretty(&stats)?.as_bytes())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn diagnose(
    common: &Common,
    points: Option<&str>,
    samples: usize,
    h: Option<usize>,
    inject: f64,
    exact: bool,
    mu: Option<f64>,
    omega: f64,
) -> anyhow::Result<()> {
    let inst = load(common, "saddle_bandit")?;
    let dim = inst.policy_features.dim();
    let points: Vec<DVector<f64>> = match points {
        Some(text) => text.split(';').map(|p| input::vector("points", p, dim)).collect::<anyhow::Result<_>>()?,
        None => {
            let mut v = vec![inst.theta0.clone()];
            for i in 0..dim {
                let mut p = inst.theta0.clone();
                p[i] += 0.25;
                v.push(p);
            }
            v
        }
    };
    let pol = inst.policy();
    let pc = policy_constants(&pol);
    let l = smoothness_constants(inst.mdp.r_max, pc.g, pc.b, pc.iota, inst.mdp.gamma).l;
    let mut cfg = RunConfig::vanilla(mu.unwrap_or(0.1 / l), 0, 0);
    cfg.omega = omega;
    let consts = prepare(&inst, &cfg)?;
    let seed = input::seeds(common.seeds.as_deref(), &[0])?[0];
    let dcfg = DiagnosticsConfig {
        horizon: h.unwrap_or(consts.horizon),
        samples,
        seed,
        inject_variance: inject,
        exact_gradient: exact,
        thresholds: consts.thresholds(&cfg),
    };
    let diag = noise_diagnostics(&inst, &points, &dcfg)?;
    for p in &diag.per_point {
        println!("theta = [{}]: region {}, sigma_l^2 = {}", p.theta.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", "), p.region, p.sigma_l_sq.map(fmt_f64).unwrap_or_else(|| "n/a".into()));
    }
    println!("sigma_l^2 estimate = {}", diag.sigma_l_sq_est.map(fmt_f64).unwrap_or_else(|| "n/a (no strict-saddle point)".into()));
    match diag.covariance_lipschitz {
        Some((beta, nu)) => println!("beta_R = {}, nu = {}", fmt_f64(beta), fmt_f64(nu)),
        None => println!("beta_R, nu = n/a"),
    }
    if let Some(dir) = &common.out {
        input::write_file(dir, "diagnostics.json", serde_json::to_string_pretty(&diag)?.as_bytes())?;
    }
    Ok(())
}

struct Check {
    name: &'static str,
    outcome: Result<String, String>,
}

fn check_gradient(inst: &Instance, pol: &SoftmaxPolicy) -> Result<String, String> {
    let mdp = &inst.mdp;
    let mut worst: f64 = 0.0;
    for shift in [0.0, 0.5, -0.7] {
        let theta = pol.theta().map(|x| x + shift);
        let p = pol.with_theta(theta.clone());
        let g = oracle::exact_gradient(mdp, &p).map_err(|e| e.to_string())?;
        let fd = central_difference(&theta, 1e-5, |t| oracle::objective(mdp, &pol.with_theta(t)).unwrap_or(f64::NAN));
        worst = worst.max((&g - &fd).norm() / g.norm().max(1.0));
    }
    if worst < 1e-5 {
        Ok(format!("finite-difference relative error {worst:.2e}"))
    } else {
        Err(format!("finite-difference relative error {worst:.2e} exceeds 1e-5"))
    }
}

fn check_scores(pol: &SoftmaxPolicy) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for s in 0..pol.n_states() {
        let probs = pol.action_probs(s);
        let mean = (0..pol.n_actions()).fold(DVector::zeros(pol.dim()), |acc, a| acc + pol.score(s, a) * probs[a]);
        worst = worst.max(mean.amax());
    }
    if worst < 1e-12 {
        Ok(format!("policy-weighted score mean {worst:.1e}"))
    } else {
        Err(format!("policy-weighted score mean {worst:.1e} is not zero"))
    }
}

fn check_truncation(inst: &Instance, pol: &SoftmaxPolicy) -> Result<String, String> {
    let mdp = &inst.mdp;
    let d = policy_constants(pol).g * mdp.r_max / (1.0 - mdp.gamma);
    let exact = oracle::exact_gradient(mdp, pol).map_err(|e| e.to_string())?;
    let slack = 64.0 * f64::EPSILON * d;
    for h in 1..=60 {
        let bias = (&exact - oracle::truncated_gradient(mdp, pol, h).map_err(|e| e.to_string())?).norm();
        let bound = d * truncation_factor(mdp.gamma, h);
        if bias > bound + slack {
            return Err(format!("H = {h}: bias {bias:.3e} exceeds envelope {bound:.3e}"));
        }
    }
    Ok("truncation bias within envelope for H = 1..60".into())
}

fn check_critic(inst: &Instance, pol: &SoftmaxPolicy) -> Vec<Check> {
    let mdp = &inst.mdp;
    let problem = match TdProblem::new(mdp, pol, &inst.critic_features) {
        Ok(p) => p,
        Err(e) => return vec![Check { name: "critic", outcome: Err(e.to_string()) }],
    };
    let env = problem.chain.envelope;
    let certified = problem.chain.tv_profile[..env.window].iter().enumerate().all(|(t, &tv)| tv <= env.m * env.r.powi(t as i32) * (1.0 + 1e-12));
    let mixing = if certified {
        Ok(format!("TV profile under m r^t with m = {:.4}, r = {:.4} on {} steps", env.m, env.r, env.window))
    } else {
        Err("TV profile exceeds the fitted envelope".into())
    };
    let residual = projected_bellman_residual(mdp, &problem.chain, &problem.features, &problem.w_star).map_err(|e| e.to_string());
    let fixed_point = residual.and_then(|r| if r < 1e-9 { Ok(format!("projected Bellman residual {r:.1e}")) } else { Err(format!("projected Bellman residual {r:.1e}")) });
    let mut out = vec![Check { name: "mixing envelope", outcome: mixing }, Check { name: "critic fixed point", outcome: fixed_point }];
    if problem.features.dim() == mdp.n_pairs() {
        let q = oracle::value_functions(mdp, pol).map(|v| v.q);
        let outcome = match q {
            Ok(q) => {
                let err = (problem.features.matrix() * &problem.w_star - q).amax();
                if err < 1e-8 {
                    Ok(format!("max |Phi w* - Q| {err:.1e}"))
                } else {
                    Err(format!("max |Phi w* - Q| {err:.1e}"))
                }
            }
            Err(e) => Err(e.to_string()),
        };
        out.push(Check { name: "tabular critic", outcome });
    }
    let pos = problem.varsigma > 0.0;
    out.push(Check {
        name: "critic curvature",
        outcome: if pos { Ok(format!("varsigma = {:.4e}", problem.varsigma)) } else { Err(format!("varsigma = {:.4e} is not positive", problem.varsigma)) },
    });
    out
}

pub fn check(common: &Common) -> anyhow::Result<()> {
    let inst = load(common, "chain3")?;
    let pol = inst.policy();
    let mut checks = vec![
        Check { name: "instance", outcome: Ok("parsed and validated".into()) },
        Check { name: "score mean", outcome: check_scores(&pol) },
        Check { name: "exact gradient", outcome: check_gradient(&inst, &pol) },
        Check { name: "truncation bias", outcome: check_truncation(&inst, &pol) },
    ];
    checks.push(Check {
        name: "hessian symmetry",
        outcome: match oracle::hessian(&inst.mdp, &pol, DEFAULT_FD_STEP) {
            Ok(h) if h.raw_asymmetry < 1e-4 => Ok(format!("relative asymmetry {:.1e}", h.raw_asymmetry)),
            Ok(h) => Err(format!("relative asymmetry {:.1e}", h.raw_asymmetry)),
            Err(e) => Err(e.to_string()),
        },
    });
    checks.extend(check_critic(&inst, &pol));
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(msg) => println!("[PASS] {}: {msg}", c.name),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {}: {msg}", c.name);
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(())
}
