use std::path::PathBuf;
use std::process::{Command, Output};

use pgsaddle_core::td0::run_td0_seeds;
use pgsaddle_core::{Instance, StartDistribution, StepSchedule, TdConfig, TdProblem};

fn pgsaddle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgsaddle")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn oracle_on_single_state_prints_reward_over_one_minus_gamma() {
    let out = pgsaddle(&["oracle", "--instance", "single_state"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let j: f64 = text.lines().find_map(|l| l.strip_prefix("J = ")).unwrap().parse().unwrap();
    assert!((j - 10.0).abs() < 1e-12, "{j}");
    for key in ["|grad J| = ", "hessian eigenvalues = ", "region = ", "w* = ", "varsigma = ", "L = ", "chi = ", "m = ", "r = "] {
        assert!(text.lines().any(|l| l.starts_with(key)), "missing {key}");
    }
}

#[test]
fn zero_iteration_run_writes_header_only() {
    let out = pgsaddle(&["vpg", "--mu", "1e-5", "--T", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("run_id,seed,t,J,grad_norm,top_eig,region,xi_norm,d_norm,p_norm,q_norm"));
}

#[test]
fn td0_sweep_rows_match_the_library() {
    let dir = scratch("td0_sweep");
    let out = pgsaddle(&["td0", "--K", "100,400,1600", "--starts", "stationary,point", "--seeds", "3,4", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_path(dir.join("td0.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["run_id", "K", "start", "seed", "sq_error", "bound", "stationary_bound", "tau_mix", "fourth_moment"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * 2 * 2);

    let inst = Instance::bundled("chain3").unwrap();
    let problem = TdProblem::new(&inst.mdp, &inst.policy(), &inst.critic_features).unwrap();
    let mut i = 0;
    for k in [100usize, 400, 1600] {
        for (label, start) in [("stationary", StartDistribution::Stationary), ("point", StartDistribution::WorstCase)] {
            let stats = run_td0_seeds(&problem, &TdConfig::new(k, StepSchedule::InvSqrtK, start), &[3, 4]).unwrap();
            for s in stats {
                let row = &rows[i];
                assert_eq!(&row[1], k.to_string());
                assert_eq!(&row[2], label);
                assert_eq!(row[4].parse::<f64>().unwrap(), s.final_sq_error);
                assert_eq!(row[5].parse::<f64>().unwrap(), s.bound_value);
                assert_eq!(row[6].parse::<f64>().unwrap(), s.stationary_bound_value);
                assert_eq!(row[7].parse::<usize>().unwrap(), s.tau_mix);
                i += 1;
            }
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = scratch("rerun_a");
    let b = scratch("rerun_b");
    for dir in [&a, &b] {
        let out = pgsaddle(&["vpg", "--mu", "1e-5", "--T", "30", "--seeds", "1,2,3", "--log-every", "7", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["ascent.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rows = std::fs::read_to_string(a.join("ascent.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3 * 30);
}

#[test]
fn malformed_instance_exits_one_with_location() {
    let dir = scratch("bad_instance");
    let path = dir.join("bad.json");
    std::fs::write(&path, "{\n  \"n_states\": 1,\n  \"n_actions\": 1,\n  \"gamma\": 0.9,\n  \"rho0\": [1.0],\n  \"rewards\": [[1.0]],\n  \"transitions\": [[[1.0]]\n}\n").unwrap();
    let out = pgsaddle(&["oracle", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));

    std::fs::write(&path, r#"{"n_states":1,"n_actions":2,"gamma":0.9,"rho0":[1.0],"rewards":[[1.0,0.0]],"transitions":[[[1.0],[-0.5]]]}"#).unwrap();
    let out = pgsaddle(&["oracle", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("negative probability"), "{}", stderr(&out));

    let out = pgsaddle(&["oracle", "--instance", dir.join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_configuration_exits_one() {
    assert_eq!(pgsaddle(&["vpg", "--mu", "0.5"]).status.code(), Some(1));
    assert_eq!(pgsaddle(&["vpg", "--T", "5"]).status.code(), Some(1));
    assert_eq!(pgsaddle(&["td0", "--starts", "sideways"]).status.code(), Some(1));
    assert_eq!(pgsaddle(&["oracle", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn escape_from_a_non_saddle_is_a_runtime_failure() {
    let out = pgsaddle(&["escape", "--instance", "chain3", "--mu", "1e-5", "--T", "5", "--omega", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not a strict saddle"), "{}", stderr(&out));
}

#[test]
fn escape_and_diagnose_on_the_saddle() {
    let out = pgsaddle(&["escape", "--mu", "0.01", "--T", "2000", "--omega", "0.5", "--log-every", "10", "--seeds", "0,1,2,3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("escaped = 4/4"), "{}", stdout(&out));

    let out = pgsaddle(&["diagnose", "--samples", "300"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("sigma_l^2 estimate = "));
}

#[test]
fn check_passes_on_bundled_instances() {
    for name in ["single_state", "chain3", "saddle_bandit"] {
        let out = pgsaddle(&["check", "--instance", name]);
        assert!(out.status.success(), "{name}: {}", stdout(&out));
        assert!(!stdout(&out).contains("[FAIL]"));
    }
}

#[test]
fn actor_critic_logs_bias_parts() {
    let out = pgsaddle(&["ac", "--mu", "1e-5", "--T", "3", "--K", "200", "--log-every", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    for r in rdr.records() {
        let r = r.unwrap();
        assert!(!r[9].is_empty() && !r[10].is_empty());
        assert_ne!(&r[6], "unlabeled");
    }
}
