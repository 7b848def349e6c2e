//! The four harness commands as library functions. Each writes its outputs
//! under `<root>/<run_id>/` next to the resolved configuration and a
//! manifest, and returns what it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ppa_core::agent::{episode_seed, run_episode, train as train_agent, Agent, AgentError, EpisodeRecord, Policy};
use ppa_core::oracle::{self, OracleError};
use ppa_core::sim::{Env, SimError};
use ppa_nn::{Architecture, NetDims, NnError, ParamCount, Scalar};
use serde::Serialize;
use thiserror::Error;

use crate::settings::{hash_hex, Precision, RunConfig, SettingsError};

pub const TRACE_HEADER: &str = "run_id,seed,episode,return,energy_J,penalty,stalls,noise_std,return_smoothed";
pub const EVAL_HEADER: &str = "run_id,seed,episode,return,energy_J,penalty,stalls,noise_std,policy";
pub const AGGREGATE_HEADER: &str =
    "run_id,episode,seeds,return_mean,return_std,energy_J_mean,penalty_mean,stalls_mean,return_smoothed_mean";
pub const ORACLE_HEADER: &str = "run_id,seed,episode,return,energy_J,penalty,stalls,expected_energy_J,equal_rate_energy_J,just_in_time_energy_J,power_feasible";

/// Evaluation episodes use environment seeds disjoint from training.
const EVAL_SALT: u64 = 0x0E7A_1000_5EED;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("hidden width {width} is not divisible by the number of users {users}; the symmetric networks split each hidden layer into one block per user")]
    Indivisible { width: usize, users: usize },
    #[error(transparent)]
    Nn(NnError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Indivisible { width, users } => HarnessError::Indivisible { width, users },
            other => HarnessError::Nn(other),
        }
    }
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Settings(_) => "config",
            HarnessError::Agent(AgentError::Checkpoint(_)) => "checkpoint",
            HarnessError::Agent(_) => "agent",
            HarnessError::Oracle(_) => "oracle",
            HarnessError::Sim(_) => "simulation",
            HarnessError::Indivisible { .. } => "config",
            HarnessError::Nn(_) => "network",
            HarnessError::Io { .. } => "io",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Trailing moving average; early entries average what is available.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(if window == 1 { v } else { sum / (i + 1).min(window) as f64 });
    }
    out
}

/// Describes one output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub config: Vec<(String, String)>,
    pub files: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, run_id: &str, cfg: &RunConfig) -> Self {
        Self {
            run_id: run_id.to_string(),
            command: command.to_string(),
            version: concat!("ppa-", env!("CARGO_PKG_VERSION")).to_string(),
            seeds: cfg.run.seeds.clone(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            files: vec!["config.resolved".into(), "manifest.json".into()],
        }
    }

    fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), format!("{json}\n").as_bytes())
    }
}

fn prepare_dir(root: &Path, run_id: &str, cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    let dir = root.join(run_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join("config.resolved"), cfg.to_text().as_bytes())?;
    Ok(dir)
}

/// Runs `job` for every seed on all available cores, keeping seed order.
fn per_seed<R: Send>(
    seeds: &[u64],
    job: impl Fn(u64) -> Result<R, HarnessError> + Sync,
) -> Result<Vec<R>, HarnessError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R, HarnessError>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = job(seeds[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every seed ran")).collect()
}

fn new_agent<T: Scalar>(cfg: &RunConfig, seed: u64) -> Result<Agent<T>, HarnessError> {
    Ok(Agent::new(
        cfg.agent.clone(),
        cfg.sim.num_users,
        cfg.sim.state_width(),
        cfg.sim.rate_ceiling(),
        seed,
    )?)
}

/// Trains one seed and returns its episode records and final checkpoint.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<(Vec<EpisodeRecord>, Vec<u8>), HarnessError> {
    fn go<T: Scalar>(cfg: &RunConfig, seed: u64) -> Result<(Vec<EpisodeRecord>, Vec<u8>), HarnessError> {
        let mut env = Env::new(cfg.sim.clone())?;
        let mut agent = new_agent::<T>(cfg, seed)?;
        let records = train_agent(&mut env, &mut agent, cfg.run.episodes, seed, |_| {})?;
        Ok((records, agent.to_checkpoint_bytes()))
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, seed),
        Precision::F64 => go::<f64>(cfg, seed),
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub run_id: String,
    pub dir: PathBuf,
    pub records: Vec<(u64, Vec<EpisodeRecord>)>,
}

/// Trains every configured seed and writes `seed_<s>.csv`,
/// `aggregate.csv` and (optionally) `checkpoint_seed_<s>.bin`.
pub fn train(cfg: &RunConfig, root: &Path) -> Result<TrainReport, HarnessError> {
    let run_id = cfg.run_id();
    let dir = prepare_dir(root, &run_id, cfg)?;
    let mut manifest = RunManifest::new("train", &run_id, cfg);
    let results = per_seed(&cfg.run.seeds, |seed| train_seed(cfg, seed))?;

    let mut smoothed_all = Vec::new();
    for (&seed, (records, ckpt)) in cfg.run.seeds.iter().zip(&results) {
        let returns: Vec<f64> = records.iter().map(|r| r.ret).collect();
        let smoothed = smooth(&returns, cfg.run.smoothing_window);
        let mut csv = format!("{TRACE_HEADER}\n");
        for (r, s) in records.iter().zip(&smoothed) {
            writeln!(
                csv,
                "{run_id},{seed},{},{},{},{},{},{},{s}",
                r.episode, r.ret, r.energy, r.penalty, r.stalls, r.noise_std
            )
            .unwrap();
        }
        let name = format!("seed_{seed}.csv");
        write_file(&dir.join(&name), csv.as_bytes())?;
        manifest.files.push(name);
        if cfg.run.checkpoint {
            let name = format!("checkpoint_seed_{seed}.bin");
            write_file(&dir.join(&name), ckpt)?;
            manifest.files.push(name);
        }
        smoothed_all.push(smoothed);
    }

    let mut agg = format!("{AGGREGATE_HEADER}\n");
    let n = results.len() as f64;
    for ep in 0..cfg.run.episodes {
        let col = |f: &dyn Fn(&EpisodeRecord) -> f64| results.iter().map(|(r, _)| f(&r[ep])).collect::<Vec<_>>();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let ret = col(&|r| r.ret);
        let m = mean(&ret);
        let std = (ret.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        let sm: f64 = smoothed_all.iter().map(|s| s[ep]).sum::<f64>() / n;
        writeln!(
            agg,
            "{run_id},{ep},{},{m},{std},{},{},{},{sm}",
            results.len(),
            mean(&col(&|r| r.energy)),
            mean(&col(&|r| r.penalty)),
            mean(&col(&|r| r.stalls as f64)),
        )
        .unwrap();
    }
    write_file(&dir.join("aggregate.csv"), agg.as_bytes())?;
    manifest.files.push("aggregate.csv".into());
    manifest.write(&dir)?;

    Ok(TrainReport {
        run_id,
        dir,
        records: cfg.run.seeds.iter().copied().zip(results.into_iter().map(|(r, _)| r)).collect(),
    })
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    pub policy: Policy,
    pub record: EpisodeRecord,
}

#[derive(Debug)]
pub struct EvalReport {
    pub run_id: String,
    pub dir: PathBuf,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Mean return, energy, penalty and stalls of one policy.
    pub fn summary(&self, policy: Policy) -> [f64; 4] {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.policy == policy).collect();
        let n = rows.len().max(1) as f64;
        let mut out = [0.0; 4];
        for r in rows {
            out[0] += r.record.ret / n;
            out[1] += r.record.energy / n;
            out[2] += r.record.penalty / n;
            out[3] += r.record.stalls as f64 / n;
        }
        out
    }
}

pub fn eval_env_seed(seed: u64, episode: usize) -> u64 {
    episode_seed(seed ^ EVAL_SALT, episode)
}

/// Greedy episodes of a checkpointed actor next to random-action episodes on
/// the same environment seeds.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: &[u8], seed: u64) -> Result<Vec<EvalRow>, HarnessError> {
    fn go<T: Scalar>(cfg: &RunConfig, checkpoint: &[u8], seed: u64) -> Result<Vec<EvalRow>, HarnessError> {
        let agent =
            Agent::<T>::read_compatible(checkpoint, &cfg.agent, cfg.sim.num_users, cfg.sim.state_width())?;
        let mut env = Env::new(cfg.sim.clone())?;
        let ceiling = cfg.sim.rate_ceiling();
        let mut rows = Vec::new();
        for policy in [Policy::Greedy, Policy::Random] {
            for ep in 0..cfg.run.eval_episodes {
                let mut record = run_episode(&mut env, Some(&agent), policy, eval_env_seed(seed, ep), ceiling)?;
                record.episode = ep;
                rows.push(EvalRow { seed, policy, record });
            }
        }
        Ok(rows)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, checkpoint, seed),
        Precision::F64 => go::<f64>(cfg, checkpoint, seed),
    }
}

pub fn eval(cfg: &RunConfig, checkpoint_path: &Path, root: &Path) -> Result<EvalReport, HarnessError> {
    let checkpoint = fs::read(checkpoint_path).map_err(io_err(checkpoint_path))?;
    let run_id = hash_hex(format!("{}eval {}", cfg.to_text(), hash_hex(&checkpoint)).as_bytes());
    let dir = prepare_dir(root, &run_id, cfg)?;
    let mut manifest = RunManifest::new("eval", &run_id, cfg);
    let rows: Vec<EvalRow> = per_seed(&cfg.run.seeds, |seed| evaluate_checkpoint(cfg, &checkpoint, seed))?
        .into_iter()
        .flatten()
        .collect();
    let mut csv = format!("{EVAL_HEADER}\n");
    for row in &rows {
        let r = &row.record;
        let policy = match row.policy {
            Policy::Greedy => "greedy",
            Policy::Random => "random",
        };
        writeln!(
            csv,
            "{run_id},{},{},{},{},{},{},{},{policy}",
            row.seed, r.episode, r.ret, r.energy, r.penalty, r.stalls, r.noise_std
        )
        .unwrap();
    }
    write_file(&dir.join("eval.csv"), csv.as_bytes())?;
    manifest.files.push("eval.csv".into());
    manifest.write(&dir)?;
    Ok(EvalReport { run_id, dir, rows })
}

/// Free-parameter counts for one `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRow {
    pub users: usize,
    /// `None` when `K` does not divide the hidden width.
    pub symmetric: Option<(ParamCount, ParamCount)>,
    pub dense: (ParamCount, ParamCount),
}

impl CountRow {
    /// Symmetric over fully-connected weight count, mains and targets.
    pub fn ratio(&self) -> Option<f64> {
        self.symmetric.map(|(_, s)| s.weights as f64 / self.dense.1.weights as f64)
    }
}

fn count_row(cfg: &RunConfig, users: usize) -> Result<CountRow, HarnessError> {
    let dims = NetDims {
        users,
        ..cfg.agent.dims(users, cfg.sim.state_width())
    };
    let dense = (
        ParamCount::of_agent(Architecture::FullyConnected, dims, false)?,
        ParamCount::of_agent(Architecture::FullyConnected, dims, true)?,
    );
    let symmetric = match ParamCount::of_agent(Architecture::Symmetric, dims, false) {
        Ok(mains) => Some((mains, ParamCount::of_agent(Architecture::Symmetric, dims, true)?)),
        Err(NnError::Indivisible { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(CountRow { users, symmetric, dense })
}

/// Rows for the configured `K` followed by `K` in {2, 5, 10}. The configured
/// `K` must divide the hidden width.
pub fn count_params(cfg: &RunConfig) -> Result<Vec<CountRow>, HarnessError> {
    let k = cfg.sim.num_users;
    let first = count_row(cfg, k)?;
    if first.symmetric.is_none() {
        return Err(HarnessError::Indivisible {
            width: cfg.agent.hidden_width,
            users: k,
        });
    }
    let mut rows = vec![first];
    for users in [2, 5, 10] {
        if users != k {
            rows.push(count_row(cfg, users)?);
        }
    }
    Ok(rows)
}

pub fn format_counts(cfg: &RunConfig, rows: &[CountRow]) -> String {
    let mut out = format!(
        "hidden width {}, {} hidden layers, state width {}\n",
        cfg.agent.hidden_width,
        cfg.agent.hidden_layers,
        cfg.sim.state_width()
    );
    writeln!(
        out,
        "{:>3} {:>5} {:>12} {:>12} {:>14} {:>14} {:>8} {:>8}",
        "K", "arch", "w mains", "w +targets", "w+b mains", "w+b +targets", "ratio", "2/K^2"
    )
    .unwrap();
    for row in rows {
        let (m, t) = row.dense;
        writeln!(
            out,
            "{:>3} {:>5} {:>12} {:>12} {:>14} {:>14} {:>8} {:>8}",
            row.users,
            "fc",
            m.weights,
            t.weights,
            m.total(),
            t.total(),
            "",
            ""
        )
        .unwrap();
        match row.symmetric {
            Some((m, t)) => writeln!(
                out,
                "{:>3} {:>5} {:>12} {:>12} {:>14} {:>14} {:>8.5} {:>8.5}",
                row.users,
                "pepi",
                m.weights,
                t.weights,
                m.total(),
                t.total(),
                row.ratio().unwrap(),
                2.0 / (row.users * row.users) as f64
            )
            .unwrap(),
            None => writeln!(out, "{:>3} {:>5} (K does not divide the hidden width)", row.users, "pepi").unwrap(),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub seed: u64,
    pub episode: usize,
    pub evaluation: oracle::PlanEvaluation,
    pub expected_energy: f64,
    pub equal_rate_energy: f64,
    pub just_in_time_energy: f64,
    pub power_feasible: bool,
}

#[derive(Debug)]
pub struct OracleReport {
    pub run_id: String,
    pub dir: PathBuf,
    pub rows: Vec<OracleRow>,
}

/// Plans and executes the oracle on one evaluation episode.
pub fn oracle_episode(cfg: &RunConfig, seed: u64, episode: usize) -> Result<(OracleRow, oracle::EpisodePlan), HarnessError> {
    let env_seed = eval_env_seed(seed, episode);
    let plan = oracle::plan_episode(&cfg.sim, env_seed)?;
    let traj = oracle::gain_trajectory(&cfg.sim, env_seed)?;
    let wf = cfg.sim.waterfill();
    let horizon = plan.horizon();
    let (mut equal, mut jit) = (0.0, 0.0);
    for (k, gains) in traj.gains.iter().enumerate() {
        let d = oracle::deadlines_for(&cfg.sim, k);
        equal += oracle::plan_energy(&wf, gains, &oracle::equal_rate_plan(horizon, &d, cfg.sim.frame_duration))?;
        jit += oracle::plan_energy(&wf, gains, &oracle::just_in_time_plan(horizon, &d, cfg.sim.frame_duration))?;
    }
    let mut env = Env::new(cfg.sim.clone())?;
    let rates: Vec<Vec<f64>> = plan.users.iter().map(|u| u.rates.clone()).collect();
    let evaluation = oracle::evaluate_plan(&mut env, env_seed, &rates)?;
    Ok((
        OracleRow {
            seed,
            episode,
            evaluation,
            expected_energy: plan.total_energy(),
            equal_rate_energy: equal,
            just_in_time_energy: jit,
            power_feasible: plan.power_feasible,
        },
        plan,
    ))
}

/// Runs the oracle on the evaluation episodes of every seed; writes
/// `oracle.csv` and the plan of each seed's first episode.
pub fn run_oracle(cfg: &RunConfig, root: &Path) -> Result<OracleReport, HarnessError> {
    let run_id = hash_hex(format!("{}oracle", cfg.to_text()).as_bytes());
    let dir = prepare_dir(root, &run_id, cfg)?;
    let mut manifest = RunManifest::new("oracle", &run_id, cfg);
    let per = per_seed(&cfg.run.seeds, |seed| {
        let mut rows = Vec::new();
        let mut first_plan = None;
        for ep in 0..cfg.run.eval_episodes {
            let (row, plan) = oracle_episode(cfg, seed, ep)?;
            rows.push(row);
            first_plan.get_or_insert(plan);
        }
        Ok((rows, first_plan))
    })?;
    let mut csv = format!("{ORACLE_HEADER}\n");
    let mut all = Vec::new();
    for (&seed, (rows, plan)) in cfg.run.seeds.iter().zip(per) {
        for r in &rows {
            let e = &r.evaluation;
            writeln!(
                csv,
                "{run_id},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.episode,
                e.ret,
                e.energy,
                e.penalty,
                e.stalls,
                r.expected_energy,
                r.equal_rate_energy,
                r.just_in_time_energy,
                r.power_feasible
            )
            .unwrap();
        }
        if let Some(plan) = plan {
            let name = format!("plan_seed_{seed}.csv");
            let mut bytes = Vec::new();
            plan.write_csv(&mut bytes).expect("writing to memory");
            write_file(&dir.join(&name), &bytes)?;
            manifest.files.push(name);
        }
        all.extend(rows);
    }
    write_file(&dir.join("oracle.csv"), csv.as_bytes())?;
    manifest.files.push("oracle.csv".into());
    manifest.write(&dir)?;
    Ok(OracleReport { run_id, dir, rows: all })
}
