//! Experiment orchestration: task sets, agents, evaluation sweeps, timing
//! profiles and trajectory replay.
//!
//! Reports are split in two: everything deterministic (outcomes, step counts,
//! rates, config echo) goes in `report.json`/`report.txt`; wall-clock
//! measurements go in `timing.json`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{read_ndjson, write_ndjson, DatagenError, LearnerFactory};
use crate::env::{Action, Env, EnvConfig, Observation, Outcome, TrajectoryRecord};
use crate::expert::{expert_action, ExpertContext};
use crate::imagine::{CorruptedDynamics, CorruptionConfig, CorruptionMode, DynamicsModel, OracleDynamics};
use crate::mcts::{search, SearchConfig};
use crate::policy::prompt::describe;
use crate::policy::{
    EndorsingReflector, Endpoint, ExternalPolicy, HeuristicReflector, NoisedExpert, Policy, PolicyError,
    ProposalRequest, ScriptedLearner, WithReflector,
};
use crate::reflect::{plan_step, PlanError, PlannerConfig};
use crate::rng;
use crate::taskgen::{generate_task_reseeding, GenParams, TaskGenError, TaskInstance};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error("task set {0} is empty")]
    EmptyTaskSet(PathBuf),
    #[error("bad agent spec {0:?}: {1}")]
    AgentSpec(String, String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- task sets

pub fn write_task_set(path: &Path, tasks: &[TaskInstance]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_ndjson(path, tasks).map_err(io_err(path))
}

/// NDJSON reader whose errors name the file.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    read_ndjson(path).map_err(|e| match e {
        DatagenError::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        DatagenError::Parse { line, message } => HarnessError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other.into(),
    })
}

pub fn read_task_set(path: &Path) -> Result<Vec<Arc<TaskInstance>>, HarnessError> {
    let tasks: Vec<TaskInstance> = read_lines(path)?;
    if tasks.is_empty() {
        return Err(HarnessError::EmptyTaskSet(path.to_path_buf()));
    }
    Ok(tasks.into_iter().map(Arc::new).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSplit {
    Train,
    Eval,
}

impl FromStr for TaskSplit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(TaskSplit::Train),
            "eval" => Ok(TaskSplit::Eval),
            _ => Err(format!("unknown split {s:?}; expected train or eval")),
        }
    }
}

/// Board seeds of the evaluation split start here, so the two splits never
/// share a board as long as the training split has fewer boards.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Generates `boards` boards of one split with `inits` starting
/// configurations each. Board i of the training split uses seed
/// `seed + i`; the evaluation split adds [`EVAL_SEED_OFFSET`]. Task ids
/// equal `board_seed * inits + j`.
pub fn generate_split(
    split: TaskSplit,
    boards: usize,
    inits: usize,
    params: &GenParams,
    seed: u64,
) -> Result<Vec<TaskInstance>, HarnessError> {
    if inits == 0 {
        return Err(HarnessError::Config("at least one initial configuration per board".into()));
    }
    if split == TaskSplit::Train && boards as u64 > EVAL_SEED_OFFSET {
        return Err(HarnessError::Config("training split would overlap the evaluation seeds".into()));
    }
    let offset = match split {
        TaskSplit::Train => seed,
        TaskSplit::Eval => seed + EVAL_SEED_OFFSET,
    };
    let per_board: Vec<Vec<TaskInstance>> = (0..boards as u64)
        .into_par_iter()
        .map(|i| {
            let board_seed = offset + i;
            let base = generate_task_reseeding(params, board_seed, board_seed * inits as u64)?;
            let mut out = vec![base.clone()];
            for j in 1..inits as u64 {
                let mut t = base.reinitialized(params, rng::derive_seed(board_seed, &[rng::label("init"), j]));
                t.task_id = board_seed * inits as u64 + j;
                out.push(t);
            }
            Ok(out)
        })
        .collect::<Result<_, TaskGenError>>()?;
    Ok(per_board.into_iter().flatten().collect())
}

// ------------------------------------------------------------------- agents

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsSpec {
    Sim,
    Corrupted { delta: f64, mode: CorruptionMode },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    Expert,
    Noised(f64),
    Scripted,
    /// Reflective planning whose reflection always endorses the plan.
    ScriptedEndorse(DynamicsSpec),
    ScriptedReflect(DynamicsSpec),
    /// Tree search; proposals from the scripted learner or the expert.
    Mcts { expert_proposals: bool },
    External { endpoint: Endpoint, reflect: Option<DynamicsSpec> },
}

impl FromStr for AgentSpec {
    type Err = String;

    /// Accepted forms: `expert`, `noised:P`, `scripted`,
    /// `scripted+endorse[:DYN]`, `scripted+reflect[:DYN]`, `mcts`,
    /// `mcts:expert`, `external:ENDPOINT`, `external+reflect:ENDPOINT`,
    /// where DYN is `sim` or `corrupted:DELTA[:freeze|scramble]`.
    fn from_str(s: &str) -> Result<Self, String> {
        let dynamics = |rest: &str| -> Result<DynamicsSpec, String> {
            let parts: Vec<&str> = rest.split(':').collect();
            match parts.as_slice() {
                [""] | ["sim"] => Ok(DynamicsSpec::Sim),
                ["corrupted", delta, mode @ ..] => {
                    let delta: f64 = delta.parse().map_err(|_| format!("bad delta {delta:?}"))?;
                    if !(0.0..=1.0).contains(&delta) {
                        return Err("delta must lie in [0, 1]".into());
                    }
                    let mode = match mode {
                        [] | ["freeze"] => CorruptionMode::Freeze,
                        ["scramble"] => CorruptionMode::Scramble,
                        _ => return Err(format!("bad corruption mode in {rest:?}")),
                    };
                    Ok(DynamicsSpec::Corrupted { delta, mode })
                }
                _ => Err(format!("unknown dynamics {rest:?}")),
            }
        };
        let after = |prefix: &str| s.strip_prefix(prefix).map(|r| r.strip_prefix(':').unwrap_or(r));
        if s == "expert" {
            return Ok(AgentSpec::Expert);
        }
        if s == "scripted" {
            return Ok(AgentSpec::Scripted);
        }
        if s == "mcts" {
            return Ok(AgentSpec::Mcts {
                expert_proposals: false,
            });
        }
        if s == "mcts:expert" {
            return Ok(AgentSpec::Mcts { expert_proposals: true });
        }
        if let Some(p) = s.strip_prefix("noised:") {
            let p: f64 = p.parse().map_err(|_| format!("bad noise level {p:?}"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err("noise level must lie in [0, 1]".into());
            }
            return Ok(AgentSpec::Noised(p));
        }
        if let Some(rest) = after("scripted+endorse") {
            return Ok(AgentSpec::ScriptedEndorse(dynamics(rest)?));
        }
        if let Some(rest) = after("scripted+reflect") {
            return Ok(AgentSpec::ScriptedReflect(dynamics(rest)?));
        }
        if let Some(rest) = s.strip_prefix("external+reflect:") {
            return Ok(AgentSpec::External {
                endpoint: rest.parse()?,
                reflect: Some(DynamicsSpec::Sim),
            });
        }
        if let Some(rest) = s.strip_prefix("external:") {
            return Ok(AgentSpec::External {
                endpoint: rest.parse()?,
                reflect: None,
            });
        }
        Err("unknown agent".into())
    }
}

/// Parameters shared by every agent in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    pub horizon: usize,
    pub history_len: usize,
    pub search: SearchConfig,
    pub corruption_seed: u64,
    /// Seconds to wait for an external policy.
    pub external_timeout: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            horizon: 5,
            history_len: 5,
            search: SearchConfig::default(),
            corruption_seed: 0,
            external_timeout: 30.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// An action plus the planning trace that produced it, if any.
pub struct Decision {
    pub action: Action,
    pub plan: Option<serde_json::Value>,
}

pub trait Agent: Send {
    fn begin(&mut self) {}
    fn act(&mut self, env: &Env, goal: &Observation, obs: &Observation) -> Result<Decision, AgentError>;
    fn after_step(&mut self, _before: &Observation, _action: &Action, _after: &Observation) {}
}

struct ExpertAgent;

impl Agent for ExpertAgent {
    fn act(&mut self, env: &Env, _: &Observation, _: &Observation) -> Result<Decision, AgentError> {
        Ok(Decision {
            action: expert_action(env.state(), &ExpertContext::new(&env.task().deps)),
            plan: None,
        })
    }
}

struct PolicyAgent(Box<dyn Policy>);

impl Agent for PolicyAgent {
    fn begin(&mut self) {
        self.0.begin_episode();
    }
    fn act(&mut self, _: &Env, goal: &Observation, obs: &Observation) -> Result<Decision, AgentError> {
        Ok(Decision {
            action: self.0.propose(&ProposalRequest::new(goal, obs), 1)?.first(),
            plan: None,
        })
    }
    fn after_step(&mut self, before: &Observation, action: &Action, after: &Observation) {
        self.0.observe_transition(before, action, after);
    }
}

struct ReflectiveAgent {
    policy: Box<dyn Policy>,
    dynamics: Box<dyn DynamicsModel>,
    cfg: PlannerConfig,
}

impl Agent for ReflectiveAgent {
    fn begin(&mut self) {
        self.policy.begin_episode();
    }
    fn act(&mut self, _: &Env, goal: &Observation, obs: &Observation) -> Result<Decision, AgentError> {
        let (action, trace) = plan_step(&mut self.policy, &*self.dynamics, goal, obs, &self.cfg)?;
        Ok(Decision {
            action,
            plan: Some(trace.to_log()),
        })
    }
    fn after_step(&mut self, before: &Observation, action: &Action, after: &Observation) {
        self.policy.observe_transition(before, action, after);
    }
}

struct MctsAgent {
    policy: Box<dyn Policy>,
    cfg: SearchConfig,
}

impl Agent for MctsAgent {
    fn begin(&mut self) {
        self.policy.begin_episode();
    }
    fn act(&mut self, env: &Env, goal: &Observation, _: &Observation) -> Result<Decision, AgentError> {
        Ok(Decision {
            action: search(env, goal, &mut self.policy, &self.cfg)?,
            plan: None,
        })
    }
    fn after_step(&mut self, before: &Observation, action: &Action, after: &Observation) {
        self.policy.observe_transition(before, action, after);
    }
}

fn build_dynamics(spec: &DynamicsSpec, task: &Arc<TaskInstance>, params: &AgentParams, seed: u64) -> Box<dyn DynamicsModel> {
    let oracle = OracleDynamics::new(task.clone(), params.history_len);
    match *spec {
        DynamicsSpec::Sim => Box::new(oracle),
        DynamicsSpec::Corrupted { delta, mode } => Box::new(CorruptedDynamics::new(
            oracle,
            CorruptionConfig {
                delta,
                mode,
                seed: rng::derive_seed(params.corruption_seed, &[seed]),
            },
        )),
    }
}

/// Builds a fresh agent for one episode.
pub fn build_agent(
    spec: &AgentSpec,
    task: &Arc<TaskInstance>,
    params: &AgentParams,
    seed: u64,
) -> Result<Box<dyn Agent>, AgentError> {
    let planner = |reflection| PlannerConfig {
        horizon: params.horizon,
        reflection,
    };
    Ok(match spec {
        AgentSpec::Expert => Box::new(ExpertAgent),
        AgentSpec::Noised(p) => Box::new(PolicyAgent(Box::new(NoisedExpert::new(task.clone(), *p, seed)))),
        AgentSpec::Scripted => Box::new(PolicyAgent(Box::new(ScriptedLearner::new()))),
        AgentSpec::ScriptedEndorse(d) => Box::new(ReflectiveAgent {
            policy: Box::new(WithReflector::new(ScriptedLearner::new(), EndorsingReflector)),
            dynamics: build_dynamics(d, task, params, seed),
            cfg: planner(true),
        }),
        AgentSpec::ScriptedReflect(d) => Box::new(ReflectiveAgent {
            policy: Box::new(WithReflector::new(ScriptedLearner::new(), HeuristicReflector::new(task.clone()))),
            dynamics: build_dynamics(d, task, params, seed),
            cfg: planner(true),
        }),
        AgentSpec::Mcts { expert_proposals } => {
            let policy: Box<dyn Policy> = if *expert_proposals {
                Box::new(NoisedExpert::new(task.clone(), 0.0, seed))
            } else {
                Box::new(ScriptedLearner::new())
            };
            Box::new(MctsAgent {
                policy,
                cfg: params.search,
            })
        }
        AgentSpec::External { endpoint, reflect } => {
            let timeout = std::time::Duration::from_secs_f64(params.external_timeout);
            let policy = Box::new(ExternalPolicy::connect(endpoint)?.with_timeout(timeout));
            match reflect {
                None => Box::new(PolicyAgent(policy)),
                Some(d) => Box::new(ReflectiveAgent {
                    policy,
                    dynamics: build_dynamics(d, task, params, seed),
                    cfg: planner(true),
                }),
            }
        }
    })
}

struct Unreachable(String);

impl Policy for Unreachable {
    fn propose(&mut self, _: &ProposalRequest, _: usize) -> Result<crate::policy::RankedActions, PolicyError> {
        Err(PolicyError::Unavailable(self.0.clone()))
    }
}

/// Learner constructor for data collection. Accepts `scripted`, `noised:P`
/// and `external:ENDPOINT`.
pub fn learner_factory(spec: &AgentSpec, params: &AgentParams, seed: u64) -> Result<Box<LearnerFactory>, HarnessError> {
    let timeout = std::time::Duration::from_secs_f64(params.external_timeout);
    Ok(match spec.clone() {
        AgentSpec::Scripted => Box::new(|_: &Arc<TaskInstance>| Box::new(ScriptedLearner::new()) as Box<dyn Policy>),
        AgentSpec::Noised(p) => Box::new(move |task: &Arc<TaskInstance>| {
            let s = rng::derive_seed(seed, &[rng::label("learner"), task.task_id]);
            Box::new(NoisedExpert::new(task.clone(), p, s)) as Box<dyn Policy>
        }),
        AgentSpec::External { endpoint, reflect: None } => Box::new(move |_: &Arc<TaskInstance>| {
            match ExternalPolicy::connect(&endpoint) {
                Ok(p) => Box::new(p.with_timeout(timeout)) as Box<dyn Policy>,
                Err(e) => Box::new(Unreachable(e.to_string())),
            }
        }),
        other => {
            return Err(HarnessError::AgentSpec(
                format!("{other:?}"),
                "learners must be scripted, noised:P or external:ENDPOINT".into(),
            ))
        }
    })
}

// ----------------------------------------------------------------- episodes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: u64,
    pub seed_index: usize,
    pub success: bool,
    pub steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// An episode plus its measurements.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub actions: Vec<Action>,
    /// Seconds spent choosing each executed action.
    pub step_times: Vec<f64>,
    pub trajectory: Option<Vec<TrajectoryRecord>>,
}

/// Seed of the environment stream for one (task, seed index) pair.
pub fn episode_seed(master: u64, task_id: u64, seed_index: usize) -> u64 {
    rng::derive_seed(master, &[rng::label("episode"), task_id, seed_index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub epsilon: f64,
    pub episode_len: u32,
    pub master_seed: u64,
    pub agent: AgentParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            episode_len: 50,
            master_seed: 0,
            agent: AgentParams::default(),
        }
    }
}

pub fn run_episode(
    task: &Arc<TaskInstance>,
    spec: &AgentSpec,
    seed_index: usize,
    cfg: &EpisodeConfig,
    record: bool,
) -> EpisodeRun {
    let seed = episode_seed(cfg.master_seed, task.task_id, seed_index);
    let env_cfg = EnvConfig {
        epsilon: cfg.epsilon,
        episode_len: cfg.episode_len,
        history_len: cfg.agent.history_len,
        seed,
    };
    let mut env = Env::reset(task.clone(), env_cfg);
    let mut run = EpisodeRun {
        result: EpisodeResult {
            task_id: task.task_id,
            seed_index,
            success: env.is_success(),
            steps: 0,
            error: None,
        },
        actions: Vec::new(),
        step_times: Vec::new(),
        trajectory: record.then(Vec::new),
    };
    let agent_seed = rng::derive_seed(seed, &[rng::label("agent")]);
    let mut agent = match build_agent(spec, task, &cfg.agent, agent_seed) {
        Ok(a) => a,
        Err(e) => {
            run.result.error = Some(e.to_string());
            return run;
        }
    };
    agent.begin();
    let goal = env.goal_observation();
    let mut obs = env.observe();
    while !env.is_finished() && !run.result.success {
        let started = Instant::now();
        let decision = match agent.act(&env, &goal, &obs) {
            Ok(d) => d,
            Err(e) => {
                run.result.error = Some(e.to_string());
                break;
            }
        };
        run.step_times.push(started.elapsed().as_secs_f64());
        let step = env.step(&decision.action).expect("loop stops at episode end");
        agent.after_step(&obs, &decision.action, &step.observation);
        run.actions.push(decision.action);
        run.result.steps = env.state().t;
        run.result.success = step.outcome == Outcome::Success;
        if let Some(log) = run.trajectory.as_mut() {
            log.push(TrajectoryRecord {
                t: env.state().t,
                action: decision.action.to_string(),
                outcome: step.outcome,
                observation: step.observation.clone(),
                plan: decision.plan,
            });
        }
        obs = step.observation;
    }
    run
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

/// Runs every (task, seed) episode on `workers` threads. Results come back
/// in (task order, seed index) order regardless of scheduling.
pub fn run_episodes(
    tasks: &[Arc<TaskInstance>],
    spec: &AgentSpec,
    seeds: usize,
    cfg: &EpisodeConfig,
    workers: usize,
    record: bool,
) -> Result<Vec<EpisodeRun>, HarnessError> {
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..seeds).map(move |s| (t, s))).collect();
    Ok(pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(t, s)| run_episode(&tasks[t], spec, s, cfg, record))
            .collect()
    }))
}

// -------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tasks: PathBuf,
    pub agent: String,
    pub seeds: usize,
    #[serde(flatten)]
    pub episode: EpisodeConfig,
    pub out: PathBuf,
    /// Also write one trajectory log per episode.
    pub trajectories: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tasks: PathBuf::from("tasks.ndjson"),
            agent: "scripted".into(),
            seeds: 5,
            episode: EpisodeConfig::default(),
            out: PathBuf::from("eval-out"),
            trajectories: false,
        }
    }
}

impl EvalConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn agent_spec(&self) -> Result<AgentSpec, HarnessError> {
        self.agent
            .parse()
            .map_err(|e| HarnessError::AgentSpec(self.agent.clone(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed_index: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub tasks: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub agent: String,
    pub config: EvalConfig,
    pub episodes: Vec<EpisodeResult>,
    pub per_seed: Vec<SeedSummary>,
    /// Success rate in percent across seeds.
    pub overall: RateSummary,
    /// Same, restricted to tasks that start with a piece seated.
    pub preinserted: RateSummary,
    pub errors: usize,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn rates(results: &[EpisodeResult], seeds: usize, keep: impl Fn(u64) -> bool) -> RateSummary {
    let mut per_seed = Vec::with_capacity(seeds);
    let mut tasks = 0;
    for s in 0..seeds {
        let runs: Vec<&EpisodeResult> = results.iter().filter(|r| r.seed_index == s && keep(r.task_id)).collect();
        tasks = runs.len();
        if runs.is_empty() {
            continue;
        }
        per_seed.push(100.0 * runs.iter().filter(|r| r.success).count() as f64 / runs.len() as f64);
    }
    let (mean, std) = mean_std(&per_seed);
    RateSummary { tasks, mean, std }
}

pub fn summarize(config: &EvalConfig, tasks: &[Arc<TaskInstance>], episodes: Vec<EpisodeResult>) -> EvalReport {
    let per_seed = (0..config.seeds)
        .map(|s| {
            let runs: Vec<&EpisodeResult> = episodes.iter().filter(|r| r.seed_index == s).collect();
            let n = runs.len().max(1) as f64;
            SeedSummary {
                seed_index: s,
                success_rate: 100.0 * runs.iter().filter(|r| r.success).count() as f64 / n,
                mean_steps: runs.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            }
        })
        .collect();
    let preinserted: Vec<u64> = tasks.iter().filter(|t| t.has_preinserted()).map(|t| t.task_id).collect();
    EvalReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        agent: config.agent.clone(),
        config: config.clone(),
        overall: rates(&episodes, config.seeds, |_| true),
        preinserted: rates(&episodes, config.seeds, |id| preinserted.contains(&id)),
        errors: episodes.iter().filter(|r| r.error.is_some()).count(),
        per_seed,
        episodes,
    }
}

impl EvalReport {
    /// Plain-text table: one row per seed, then the aggregate rows.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "agent: {}", self.agent);
        let _ = writeln!(s, "tasks: {}  seeds: {}", self.overall.tasks, self.config.seeds);
        let _ = writeln!(s, "{:<14}{:>12}{:>12}", "seed", "success %", "mean steps");
        for p in &self.per_seed {
            let _ = writeln!(s, "{:<14}{:>12.1}{:>12.1}", p.seed_index, p.success_rate, p.mean_steps);
        }
        let _ = writeln!(
            s,
            "{:<14}{:>12}",
            "all tasks",
            format!("{:.1} ± {:.1}", self.overall.mean, self.overall.std)
        );
        let _ = writeln!(
            s,
            "{:<14}{:>12}   ({} tasks)",
            "pre-inserted",
            format!("{:.1} ± {:.1}", self.preinserted.mean, self.preinserted.std),
            self.preinserted.tasks
        );
        if self.errors > 0 {
            let _ = writeln!(s, "episodes with errors: {}", self.errors);
        }
        s
    }
}

/// Latency summary in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub steps: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Timing {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let pct = |q: f64| {
            if v.is_empty() {
                0.0
            } else {
                let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
                v[rank - 1]
            }
        };
        Self {
            steps: v.len(),
            mean: if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 },
            p50: pct(0.5),
            p90: pct(0.9),
            p99: pct(0.99),
            max: v.last().copied().unwrap_or(0.0),
        }
    }
}

pub struct EvalOutput {
    pub report: EvalReport,
    pub timing: Timing,
    pub runs: Vec<EpisodeRun>,
}

pub fn run_eval(cfg: &EvalConfig, workers: usize) -> Result<EvalOutput, HarnessError> {
    let spec = cfg.agent_spec()?;
    if cfg.seeds == 0 {
        return Err(HarnessError::Config("seeds must be at least 1".into()));
    }
    let tasks = read_task_set(&cfg.tasks)?;
    let runs = run_episodes(&tasks, &spec, cfg.seeds, &cfg.episode, workers, cfg.trajectories)?;
    let samples: Vec<f64> = runs.iter().flat_map(|r| r.step_times.iter().copied()).collect();
    let report = summarize(cfg, &tasks, runs.iter().map(|r| r.result.clone()).collect());
    Ok(EvalOutput {
        report,
        timing: Timing::from_samples(&samples),
        runs,
    })
}

/// Writes `report.json`, `report.txt`, `timing.json` and, when recorded,
/// `trajectories/task<ID>-seed<S>.ndjson` under `dir`.
pub fn write_eval(out: &EvalOutput, dir: &Path) -> Result<(), HarnessError> {
    write_file(&dir.join("report.json"), &to_pretty_json(&out.report))?;
    write_file(&dir.join("report.txt"), &out.report.table())?;
    write_file(&dir.join("timing.json"), &to_pretty_json(&out.timing))?;
    for run in &out.runs {
        if let Some(log) = &run.trajectory {
            let path = dir
                .join("trajectories")
                .join(format!("task{}-seed{}.ndjson", run.result.task_id, run.result.seed_index));
            write_trajectory(&path, log)?;
        }
    }
    Ok(())
}

pub fn write_trajectory(path: &Path, log: &[TrajectoryRecord]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_ndjson(path, log).map_err(io_err(path))
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln_choose = |k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
    };
    (wins..=n)
        .map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0)
}

// --------------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub agent: String,
    pub timing: Timing,
    /// Share of search time spent expanding nodes and rolling out the
    /// expert (tree-search agents only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_share: Option<f64>,
}

/// Deterministic side of a benchmark: what ran and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub agent: String,
    pub tasks: Vec<u64>,
    pub steps: usize,
    pub successes: usize,
}

/// Per-step latency of each agent on the same tasks, one seed each.
pub fn bench(
    tasks: &[Arc<TaskInstance>],
    agents: &[String],
    cfg: &EpisodeConfig,
    workers: usize,
) -> Result<(Vec<BenchPlan>, Vec<BenchEntry>), HarnessError> {
    let mut plans = Vec::new();
    let mut entries = Vec::new();
    for name in agents {
        let spec: AgentSpec = name.parse().map_err(|e| HarnessError::AgentSpec(name.clone(), e))?;
        let runs = run_episodes(tasks, &spec, 1, cfg, workers, false)?;
        let samples: Vec<f64> = runs.iter().flat_map(|r| r.step_times.iter().copied()).collect();
        let search_share = match spec {
            AgentSpec::Mcts { .. } => Some(mcts_search_share(tasks, &spec, cfg)),
            _ => None,
        };
        plans.push(BenchPlan {
            agent: name.clone(),
            tasks: tasks.iter().map(|t| t.task_id).collect(),
            steps: samples.len(),
            successes: runs.iter().filter(|r| r.result.success).count(),
        });
        entries.push(BenchEntry {
            agent: name.clone(),
            timing: Timing::from_samples(&samples),
            search_share,
        });
    }
    Ok((plans, entries))
}

/// Fraction of one search's wall clock spent in expansion (which includes
/// the expert rollout), measured from each task's starting state.
fn mcts_search_share(tasks: &[Arc<TaskInstance>], spec: &AgentSpec, cfg: &EpisodeConfig) -> f64 {
    let mut inner = 0.0;
    let mut total = 0.0;
    for task in tasks {
        let env = Env::reset(task.clone(), EnvConfig::default());
        let goal = env.goal_observation();
        let AgentSpec::Mcts { expert_proposals } = spec else {
            return 0.0;
        };
        let mut policy: Box<dyn Policy> = if *expert_proposals {
            Box::new(NoisedExpert::new(task.clone(), 0.0, 0))
        } else {
            Box::new(ScriptedLearner::new())
        };
        if let Ok(tree) = crate::mcts::search_tree(&env, &goal, &mut policy, &cfg.agent.search) {
            inner += tree.stats.expand_time.as_secs_f64();
            total += tree.stats.total_time.as_secs_f64();
        }
    }
    if total > 0.0 {
        inner / total
    } else {
        0.0
    }
}

// -------------------------------------------------------------------- replay

/// Human-readable rendering of a trajectory log.
pub fn render_trajectory(log: &[TrajectoryRecord]) -> String {
    let mut s = String::new();
    for rec in log {
        let _ = writeln!(s, "t={:<3} {:<22} -> {:?}", rec.t, rec.action, rec.outcome);
        if let Some(plan) = rec.plan.as_ref().and_then(|p| p.get("plan")).and_then(|p| p.as_array()) {
            let steps: Vec<&str> = plan.iter().filter_map(|a| a.as_str()).collect();
            let _ = writeln!(s, "      plan: {}", steps.join(", "));
        }
        let hand = rec.observation.hand.map_or("empty".to_string(), |p| p.to_string());
        let _ = writeln!(s, "      hand: {hand}");
        let _ = writeln!(s, "{}", describe(&rec.observation));
    }
    let last = log.last().map(|r| r.outcome);
    let _ = writeln!(
        s,
        "{} steps, final outcome {}",
        log.len(),
        last.map_or("none".into(), |o| format!("{o:?}"))
    );
    s
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    read_lines(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::chain_task;
    use crate::taskgen::PieceId;

    #[test]
    fn agent_specs_parse() {
        assert_eq!("expert".parse(), Ok(AgentSpec::Expert));
        assert_eq!("scripted+reflect".parse(), Ok(AgentSpec::ScriptedReflect(DynamicsSpec::Sim)));
        assert_eq!("scripted+reflect:sim".parse(), Ok(AgentSpec::ScriptedReflect(DynamicsSpec::Sim)));
        assert_eq!(
            "scripted+reflect:corrupted:0.2:scramble".parse(),
            Ok(AgentSpec::ScriptedReflect(DynamicsSpec::Corrupted {
                delta: 0.2,
                mode: CorruptionMode::Scramble
            }))
        );
        assert_eq!("mcts".parse(), Ok(AgentSpec::Mcts { expert_proposals: false }));
        assert!(matches!(
            "external:tcp:127.0.0.1:9".parse(),
            Ok(AgentSpec::External { reflect: None, .. })
        ));
        assert!("scripted+reflect:corrupted:1.5".parse::<AgentSpec>().is_err());
        assert!("robot".parse::<AgentSpec>().is_err());
    }

    #[test]
    fn sign_test_reference_values() {
        assert!((sign_test(5, 0) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test(0, 0) - 1.0).abs() < 1e-12);
        // P(X >= 8 | n = 10) = 56 / 1024
        assert!((sign_test(8, 2) - 56.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn timing_percentiles_use_nearest_rank() {
        let t = Timing::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(t.p50, 2.0);
        assert_eq!(t.p90, 4.0);
        assert_eq!(t.mean, 2.5);
        assert_eq!(Timing::from_samples(&[]).steps, 0);
    }

    #[test]
    fn expert_episode_succeeds_and_records() {
        let task = Arc::new(chain_task(3, &[PieceId(2)], &[PieceId(4)]));
        let run = run_episode(&task, &AgentSpec::Expert, 0, &EpisodeConfig::default(), true);
        assert!(run.result.success);
        assert_eq!(run.step_times.len(), run.result.steps as usize);
        let log = run.trajectory.unwrap();
        assert_eq!(log.len(), run.result.steps as usize);
        assert!(render_trajectory(&log).contains("Success"));
    }

    #[test]
    fn unreachable_external_policy_is_a_recorded_failure() {
        let task = Arc::new(chain_task(1, &[], &[]));
        let spec: AgentSpec = "external:cmd:/nonexistent/policy-binary".parse().unwrap();
        let run = run_episode(&task, &spec, 0, &EpisodeConfig::default(), false);
        assert!(!run.result.success);
        assert!(run.result.error.is_some());
    }

    #[test]
    fn splits_do_not_share_boards() {
        let params = GenParams::default();
        let train = generate_split(TaskSplit::Train, 3, 2, &params, 0).unwrap();
        let eval = generate_split(TaskSplit::Eval, 2, 1, &params, 0).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(train[0].grid, train[1].grid);
        let ids: std::collections::BTreeSet<u64> = train.iter().chain(&eval).map(|t| t.task_id).collect();
        assert_eq!(ids.len(), 8);
        assert!(eval.iter().all(|e| train.iter().all(|t| t.seed != e.seed)));
    }
}
