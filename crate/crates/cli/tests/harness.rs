use std::fs;
use std::path::Path;
use std::process::Command;

use ppa_cli::commands::{self, AGGREGATE_HEADER, TRACE_HEADER};
use ppa_cli::settings::parse_entries;
use ppa_cli::{HarnessError, RunConfig, OUTPUT_ROOT_VAR};
use ppa_core::agent::Policy;

fn tiny(extra: &[&str]) -> RunConfig {
    let mut overrides: Vec<String> = [
        "preset=desk",
        "nn.hidden_width=8",
        "nn.hidden_layers=1",
        "agent.batch_size=16",
        "run.episodes=3",
        "run.eval_episodes=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(None, &overrides).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = tiny(&["run.seeds=0,1"]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = commands::train(&cfg, a.path()).unwrap();
    let rb = commands::train(&cfg, b.path()).unwrap();
    assert_eq!(ra.run_id, rb.run_id);
    let (fa, fb) = (files(&ra.dir), files(&rb.dir));
    assert!(fa.iter().any(|(n, _)| n == "checkpoint_seed_1.bin"));
    assert_eq!(fa, fb);
}

#[test]
fn ten_seeds_give_ten_traces_and_an_aggregate() {
    let cfg = tiny(&["run.seeds=0..10", "run.checkpoint=false"]);
    let root = tempfile::tempdir().unwrap();
    let report = commands::train(&cfg, root.path()).unwrap();
    let mut returns = Vec::new();
    for seed in 0..10 {
        let csv = fs::read_to_string(report.dir.join(format!("seed_{seed}.csv"))).unwrap();
        assert_eq!(csv.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(csv.lines().count(), 1 + 3);
        assert!(column(&csv, "seed").iter().all(|s| *s == seed.to_string()));
        returns.push(column(&csv, "return").iter().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>());
    }
    assert!(!report.dir.join("checkpoint_seed_0.bin").exists());
    let agg = fs::read_to_string(report.dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().next().unwrap(), AGGREGATE_HEADER);
    let means = column(&agg, "return_mean");
    assert_eq!(means.len(), 3);
    for (ep, m) in means.iter().enumerate() {
        let expected = returns.iter().map(|r| r[ep]).sum::<f64>() / 10.0;
        assert!((m.parse::<f64>().unwrap() - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }
    assert!(column(&agg, "seeds").iter().all(|s| s == "10"));
}

#[test]
fn window_one_leaves_returns_unsmoothed() {
    let cfg = tiny(&["run.smoothing_window=1", "run.checkpoint=false"]);
    let root = tempfile::tempdir().unwrap();
    let report = commands::train(&cfg, root.path()).unwrap();
    let csv = fs::read_to_string(report.dir.join("seed_0.csv")).unwrap();
    assert_eq!(column(&csv, "return"), column(&csv, "return_smoothed"));
}

#[test]
fn resolved_config_is_echoed_and_names_the_run() {
    let cfg = tiny(&["sim.num_users=4", "nn.architecture=fc", "run.checkpoint=false"]);
    let root = tempfile::tempdir().unwrap();
    let report = commands::train(&cfg, root.path()).unwrap();
    assert_eq!(report.dir.file_name().unwrap().to_str().unwrap(), report.run_id);
    assert_eq!(report.run_id.len(), 12);
    let text = fs::read_to_string(report.dir.join("config.resolved")).unwrap();
    let back = RunConfig::from_entries(&parse_entries(&text).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.run_id(), report.run_id);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["run_id"], report.run_id.as_str());
    assert_eq!(manifest["command"], "train");
    let csv = fs::read_to_string(report.dir.join("seed_0.csv")).unwrap();
    assert!(column(&csv, "run_id").iter().all(|r| *r == report.run_id));
}

#[test]
fn untrained_checkpoint_evaluates() {
    let cfg = tiny(&["run.episodes=1"]);
    let root = tempfile::tempdir().unwrap();
    let trained = commands::train(&cfg, root.path()).unwrap();
    let report = commands::eval(&cfg, &trained.dir.join("checkpoint_seed_0.bin"), root.path()).unwrap();
    assert_eq!(report.rows.len(), 2 * cfg.run.eval_episodes);
    for policy in [Policy::Greedy, Policy::Random] {
        let [ret, energy, penalty, _] = report.summary(policy);
        assert!(ret.is_finite() && energy >= 0.0 && penalty >= 0.0);
        assert!((ret + energy + cfg.sim.penalty_coefficient * penalty).abs() < 1e-9 * energy.max(1.0));
    }
    let csv = fs::read_to_string(report.dir.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let cfg = tiny(&["run.episodes=1"]);
    let root = tempfile::tempdir().unwrap();
    let trained = commands::train(&cfg, root.path()).unwrap();
    let ckpt = trained.dir.join("checkpoint_seed_0.bin");
    let other = tiny(&["nn.architecture=fc"]);
    let err = commands::eval(&other, &ckpt, root.path()).unwrap_err();
    assert_eq!(err.kind(), "checkpoint");
    let msg = err.to_string();
    assert!(msg.contains("pe[") && msg.contains("fc["), "{msg}");
    let wider = tiny(&["sim.num_users=4"]);
    assert!(commands::eval(&wider, &ckpt, root.path()).is_err());
    assert!(matches!(
        commands::eval(&cfg, &root.path().join("missing.bin"), root.path()),
        Err(HarnessError::Io { .. })
    ));
}

#[test]
fn oracle_command_writes_plans() {
    let cfg = tiny(&["run.seeds=3"]);
    let root = tempfile::tempdir().unwrap();
    let report = commands::run_oracle(&cfg, root.path()).unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert!(row.expected_energy <= row.equal_rate_energy * (1.0 + 1e-9));
        assert!(row.expected_energy <= row.just_in_time_energy * (1.0 + 1e-9));
    }
    let plan = fs::read_to_string(report.dir.join("plan_seed_3.csv")).unwrap();
    assert_eq!(plan.lines().next().unwrap(), "user,frame,rate,expected_energy");
}

fn ppa(args: &[&str], root: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ppa"))
        .args(args)
        .env(OUTPUT_ROOT_VAR, root)
        .output()
        .unwrap()
}

#[test]
fn binary_reports_errors_as_json() {
    let root = tempfile::tempdir().unwrap();
    let out = ppa(&["train", "--set", "sim.bogus=1", "--set", "nn.nothing=2"], root.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("sim.bogus") && msg.contains("nn.nothing"), "{msg}");

    let out = ppa(&["count-params", "--set", "sim.num_users=7"], root.path());
    assert_eq!(out.status.code(), Some(2));

    let missing = root.path().join("none.bin");
    let out = ppa(&["eval", "--checkpoint", missing.to_str().unwrap()], root.path());
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn binary_counts_parameters() {
    let root = tempfile::tempdir().unwrap();
    let out = ppa(&["count-params"], root.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("5893200") || text.contains("5,893,200"), "{text}");
}

#[test]
fn binary_honours_output_root() {
    let env_root = tempfile::tempdir().unwrap();
    let flag_root = tempfile::tempdir().unwrap();
    let args = [
        "oracle",
        "--set",
        "preset=desk",
        "--set",
        "run.eval_episodes=1",
        "--seeds",
        "0",
    ];
    let out = ppa(&args, env_root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(env_root.path()).unwrap().count(), 1);

    let mut with_flag = vec!["--out", flag_root.path().to_str().unwrap()];
    with_flag.extend(args);
    let out = ppa(&with_flag, env_root.path());
    assert!(out.status.success());
    assert_eq!(fs::read_dir(flag_root.path()).unwrap().count(), 1);
    assert_eq!(fs::read_dir(env_root.path()).unwrap().count(), 1);
}
