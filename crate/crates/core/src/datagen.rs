//! Training data collection.
//!
//! [`collect`] runs the interactive loop: learner and expert act side by
//! side, a coin with bias `p` decides whose action is executed, and every
//! finished episode is relabeled into one proposal and one reflection example
//! per step. [`collect_transitions`] rolls out a noised expert to build a
//! transition dataset for dynamics-model training.
//!
//! Observations are stored once, keyed by [`obs_ref`]; examples and
//! transition records refer to them by key.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Env, EnvConfig, Observation, Outcome};
use crate::expert::{expert_action, ExpertContext};
use crate::policy::prompt::{obs_ref, render_proposal, render_reflection};
use crate::policy::{NoisedExpert, Policy, ProposalRequest, ReflectionRequest};
use crate::rng;
use crate::taskgen::{generate_task_reseeding, GenParams, TaskGenError, TaskInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    /// Number of collection iterations (K).
    pub iterations: usize,
    /// Episodes per iteration (N).
    pub per_iter: usize,
    /// Expert-only episodes forming the initial dataset.
    pub demonstrations: usize,
    pub episode_len: u32,
    pub horizon: usize,
    /// Probability of executing the learner's action.
    pub p: f64,
    pub history_len: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            per_iter: 100,
            demonstrations: 100,
            episode_len: 50,
            horizon: 5,
            p: 0.5,
            history_len: 5,
            epsilon: 0.0,
            seed: 0,
        }
    }
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(DatagenError::Config(format!("p = {} outside [0, 1]", self.p)));
        }
        if self.per_iter == 0 || self.episode_len == 0 || self.horizon == 0 {
            return Err(DatagenError::Config("per_iter, episode_len and horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no tasks to collect from")]
    NoTasks,
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error("training hook failed: {0}")]
    Hook(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Content-addressed observation store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationStore(BTreeMap<String, Observation>);

#[derive(Serialize, Deserialize)]
struct StoreLine {
    #[serde(rename = "ref")]
    key: String,
    observation: Observation,
}

impl ObservationStore {
    pub fn insert(&mut self, obs: &Observation) -> String {
        let key = obs_ref(obs);
        self.0.entry(key.clone()).or_insert_with(|| obs.clone());
        key
    }

    pub fn get(&self, key: &str) -> Option<&Observation> {
        self.0.get(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn extend(&mut self, other: ObservationStore) {
        for (k, v) in other.0 {
            self.0.entry(k).or_insert(v);
        }
    }

    pub fn write_ndjson(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (key, observation) in &self.0 {
            let line = StoreLine {
                key: key.clone(),
                observation: observation.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_ndjson(path: &Path) -> Result<Self, DatagenError> {
        let lines: Vec<StoreLine> = read_ndjson(path)?;
        Ok(Self(lines.into_iter().map(|l| (l.key, l.observation)).collect()))
    }
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatagenError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatagenError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Proposal,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub iteration: usize,
    pub episode: String,
    pub task_id: u64,
    pub t: usize,
    pub kind: ExampleKind,
    pub prompt: String,
    pub goal: String,
    pub current: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<Action>>,
    pub label: Action,
}

/// One collected episode. `observations` has one more entry than `actions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    pub iteration: usize,
    pub task_id: u64,
    pub seed: u64,
    pub goal: String,
    pub observations: Vec<String>,
    pub actions: Vec<Action>,
    pub expert: Vec<Action>,
    pub learner_executed: Vec<bool>,
    pub outcomes: Vec<Outcome>,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Aggregated examples with the episodes and observations they refer to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<TrainingExample>,
    pub episodes: Vec<EpisodeRecord>,
    pub store: ObservationStore,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.examples.extend(other.examples);
        self.episodes.extend(other.episodes);
        self.store.extend(other.store);
    }

    /// Writes `examples.ndjson`, `episodes.ndjson` and `observations.ndjson`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_ndjson(&dir.join("examples.ndjson"), &self.examples)?;
        write_ndjson(&dir.join("episodes.ndjson"), &self.episodes)?;
        self.store.write_ndjson(&dir.join("observations.ndjson"))
    }

    pub fn read(dir: &Path) -> Result<Self, DatagenError> {
        Ok(Self {
            examples: read_ndjson(&dir.join("examples.ndjson"))?,
            episodes: read_ndjson(&dir.join("episodes.ndjson"))?,
            store: ObservationStore::read_ndjson(&dir.join("observations.ndjson"))?,
        })
    }
}

/// Receives the dataset after each iteration, where a trainer would
/// finetune the learner.
pub trait TrainingHook {
    fn on_iteration(&mut self, iteration: usize, added: &Dataset, total: &Dataset) -> Result<(), DatagenError>;
}

/// Does nothing.
#[derive(Debug, Default)]
pub struct NoTraining;

impl TrainingHook for NoTraining {
    fn on_iteration(&mut self, _: usize, _: &Dataset, _: &Dataset) -> Result<(), DatagenError> {
        Ok(())
    }
}

/// Builds a fresh learner for an episode on the given task.
pub type LearnerFactory = dyn Fn(&Arc<TaskInstance>) -> Box<dyn Policy> + Sync;

/// Turns one finished trajectory into `2 * actions.len()` examples.
///
/// For step t the reflection example looks `horizon` steps ahead, clamped to
/// the final observation, and its plan is the executed actions in between.
pub fn relabel(
    episode: &EpisodeRecord,
    goal: &Observation,
    observations: &[Observation],
    horizon: usize,
) -> Vec<TrainingExample> {
    let len = episode.actions.len();
    assert_eq!(observations.len(), len + 1, "one observation per step plus the initial one");
    let goal_key = obs_ref(goal);
    let mut out = Vec::with_capacity(2 * len);
    for t in 0..len {
        let current = &observations[t];
        let end = (t + horizon).min(len);
        let label = episode.expert[t];
        let base = |kind, prompt| TrainingExample {
            iteration: episode.iteration,
            episode: episode.id.clone(),
            task_id: episode.task_id,
            t,
            kind,
            prompt,
            goal: goal_key.clone(),
            current: episode.observations[t].clone(),
            future: None,
            plan: None,
            label,
        };
        out.push(base(
            ExampleKind::Proposal,
            render_proposal(&ProposalRequest::new(goal, current)),
        ));
        let plan = episode.actions[t..end].to_vec();
        let req = ReflectionRequest {
            goal: goal.clone(),
            current: current.clone(),
            future: observations[end].clone(),
            plan: plan.clone(),
            history: current.history.clone(),
        };
        out.push(TrainingExample {
            future: Some(episode.observations[end].clone()),
            plan: Some(plan),
            ..base(ExampleKind::Reflection, render_reflection(&req))
        });
    }
    out
}

struct Job {
    iteration: usize,
    index: usize,
    task: Arc<TaskInstance>,
    p: f64,
}

fn run_episode(job: &Job, learner: Option<&LearnerFactory>, cfg: &CollectionConfig) -> Dataset {
    let seed = rng::derive_seed(cfg.seed, &[rng::label("episode"), job.iteration as u64, job.index as u64]);
    let env_cfg = EnvConfig {
        epsilon: cfg.epsilon,
        episode_len: cfg.episode_len,
        history_len: cfg.history_len,
        seed,
    };
    let mut env = Env::reset(job.task.clone(), env_cfg);
    let mut coin = rng::stream(seed, &[rng::label("mix")]);
    let mut learner = learner.map(|f| f(&job.task));
    if let Some(l) = learner.as_mut() {
        l.begin_episode();
    }
    let goal = env.goal_observation();
    let ctx_deps = job.task.deps.clone();
    let ctx = ExpertContext::new(&ctx_deps);

    let mut store = ObservationStore::default();
    let mut observations = vec![env.observe()];
    let mut ep = EpisodeRecord {
        id: format!("i{}-e{}", job.iteration, job.index),
        iteration: job.iteration,
        task_id: job.task.task_id,
        seed,
        goal: store.insert(&goal),
        observations: vec![store.insert(&observations[0])],
        actions: Vec::new(),
        expert: Vec::new(),
        learner_executed: Vec::new(),
        outcomes: Vec::new(),
        success: env.is_success(),
        error: None,
    };
    while !env.is_finished() && !ep.success {
        let before = observations.last().expect("nonempty").clone();
        let star = expert_action(env.state(), &ctx);
        let dagger = match learner.as_mut() {
            Some(l) => match l.propose(&ProposalRequest::new(&goal, &before), 1) {
                Ok(r) => Some(r.first()),
                Err(e) => {
                    ep.error = Some(e.to_string());
                    break;
                }
            },
            None => None,
        };
        let use_learner = coin.gen::<f64>() < job.p;
        let action = match dagger {
            Some(a) if use_learner => a,
            _ => star,
        };
        let step = env.step(&action).expect("loop stops at episode end");
        if let Some(l) = learner.as_mut() {
            l.observe_transition(&before, &action, &step.observation);
        }
        ep.observations.push(store.insert(&step.observation));
        ep.actions.push(action);
        ep.expert.push(star);
        ep.learner_executed.push(dagger.is_some() && use_learner);
        ep.outcomes.push(step.outcome);
        ep.success = step.outcome == Outcome::Success;
        observations.push(step.observation);
    }
    let examples = relabel(&ep, &goal, &observations, cfg.horizon);
    Dataset {
        examples,
        episodes: vec![ep],
        store,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, DatagenError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DatagenError::Pool(e.to_string()))
}

fn run_jobs(
    mut jobs: Vec<Job>,
    learner: Option<&LearnerFactory>,
    cfg: &CollectionConfig,
    workers: usize,
) -> Result<Dataset, DatagenError> {
    jobs.sort_by_key(|j| (j.task.task_id, j.index));
    let parts: Vec<Dataset> = pool(workers)?.install(|| jobs.par_iter().map(|j| run_episode(j, learner, cfg)).collect());
    let mut out = Dataset::default();
    for part in parts {
        out.extend(part);
    }
    Ok(out)
}

fn sample_jobs(tasks: &[Arc<TaskInstance>], count: usize, iteration: usize, p: f64, seed: u64) -> Vec<Job> {
    let mut r = rng::stream(seed, &[rng::label("sample-tasks"), iteration as u64]);
    (0..count)
        .map(|index| Job {
            iteration,
            index,
            task: tasks[r.gen_range(0..tasks.len())].clone(),
            p,
        })
        .collect()
}

/// One iteration's data: `cfg.per_iter` episodes on tasks drawn with
/// replacement, in (task id, episode index) order.
pub fn collect_iteration(
    tasks: &[Arc<TaskInstance>],
    learner: &LearnerFactory,
    cfg: &CollectionConfig,
    iteration: usize,
    workers: usize,
) -> Result<Dataset, DatagenError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(DatagenError::NoTasks);
    }
    let jobs = sample_jobs(tasks, cfg.per_iter, iteration, cfg.p, cfg.seed);
    run_jobs(jobs, Some(learner), cfg, workers)
}

/// Expert-only episodes relabeled the same way, tagged iteration 0.
pub fn collect_demonstrations(
    tasks: &[Arc<TaskInstance>],
    cfg: &CollectionConfig,
    workers: usize,
) -> Result<Dataset, DatagenError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(DatagenError::NoTasks);
    }
    let jobs = sample_jobs(tasks, cfg.demonstrations, 0, 0.0, cfg.seed);
    run_jobs(jobs, None, cfg, workers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub dataset: Dataset,
    /// Dataset size after the demonstrations and after each iteration.
    pub sizes: Vec<usize>,
}

/// The full loop: demonstrations, then `cfg.iterations` rounds of
/// collection, aggregating without deduplication.
pub fn collect(
    tasks: &[Arc<TaskInstance>],
    learner: &LearnerFactory,
    cfg: &CollectionConfig,
    workers: usize,
    hook: &mut dyn TrainingHook,
) -> Result<Collection, DatagenError> {
    let mut dataset = collect_demonstrations(tasks, cfg, workers)?;
    let mut sizes = vec![dataset.len()];
    for i in 1..=cfg.iterations {
        let added = collect_iteration(tasks, learner, cfg, i, workers)?;
        let snapshot = added.clone();
        dataset.extend(added);
        sizes.push(dataset.len());
        hook.on_iteration(i, &snapshot, &dataset)?;
    }
    Ok(Collection { dataset, sizes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionConfig {
    pub boards: usize,
    pub noise_levels: Vec<f64>,
    pub episodes_per_level: usize,
    pub max_len: u32,
    /// Records sampled into the evaluation split.
    pub eval_records: usize,
    pub history_len: usize,
    pub epsilon: f64,
    pub params: GenParams,
    pub seed: u64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            boards: 100,
            noise_levels: vec![0.2, 0.5, 0.7, 0.9, 1.0],
            episodes_per_level: 10,
            max_len: 50,
            eval_records: 500,
            history_len: 5,
            epsilon: 0.0,
            params: GenParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode: String,
    pub board: u64,
    pub p_rand: f64,
    pub t: usize,
    pub observation: String,
    pub action: Action,
    pub next: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionDataset {
    pub records: Vec<TransitionRecord>,
    pub store: ObservationStore,
    /// Number of records in each episode, in record order.
    pub episode_lengths: Vec<usize>,
}

impl TransitionDataset {
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_ndjson(&dir.join("transitions.ndjson"), &self.records)?;
        self.store.write_ndjson(&dir.join("observations.ndjson"))
    }
}

fn transition_episode(
    task: &Arc<TaskInstance>,
    board: usize,
    level: usize,
    p_rand: f64,
    episode: usize,
    cfg: &TransitionConfig,
) -> (Vec<TransitionRecord>, ObservationStore) {
    let seed = rng::derive_seed(
        cfg.seed,
        &[rng::label("transition-episode"), board as u64, level as u64, episode as u64],
    );
    let task = Arc::new(task.reinitialized(&cfg.params, seed));
    let env_cfg = EnvConfig {
        epsilon: cfg.epsilon,
        episode_len: cfg.max_len,
        history_len: cfg.history_len,
        seed,
    };
    let mut env = Env::reset(task.clone(), env_cfg);
    let mut actor = NoisedExpert::new(task, p_rand, seed);
    let mut store = ObservationStore::default();
    let mut records = Vec::new();
    let id = format!("b{board}-p{level}-e{episode}");
    let mut obs = env.observe();
    while !env.is_finished() && !env.is_success() {
        let action = actor.act(env.state());
        let next = env.step(&action).expect("loop stops at episode end").observation;
        records.push(TransitionRecord {
            episode: id.clone(),
            board: board as u64,
            p_rand,
            t: records.len(),
            observation: store.insert(&obs),
            action,
            next: store.insert(&next),
            split: Split::Train,
        });
        obs = next;
    }
    (records, store)
}

/// Generates `cfg.boards` boards and rolls out a noised expert
/// `episodes_per_level` times per noise level on each, from freshly sampled
/// starting configurations.
pub fn collect_transitions(cfg: &TransitionConfig, workers: usize) -> Result<TransitionDataset, DatagenError> {
    if cfg.boards == 0 {
        return Err(DatagenError::Config("boards must be at least 1".into()));
    }
    if cfg.noise_levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(DatagenError::Config("noise levels must lie in [0, 1]".into()));
    }
    let tasks: Vec<Arc<TaskInstance>> = (0..cfg.boards)
        .map(|b| {
            let seed = rng::derive_seed(cfg.seed, &[rng::label("transition-board"), b as u64]);
            generate_task_reseeding(&cfg.params, seed, b as u64).map(Arc::new)
        })
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.boards)
        .flat_map(|b| {
            (0..cfg.noise_levels.len()).flat_map(move |l| (0..cfg.episodes_per_level).map(move |e| (b, l, e)))
        })
        .collect();
    let parts: Vec<(Vec<TransitionRecord>, ObservationStore)> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(b, l, e)| transition_episode(&tasks[b], b, l, cfg.noise_levels[l], e, cfg))
            .collect()
    });
    let mut out = TransitionDataset::default();
    for (records, store) in parts {
        out.episode_lengths.push(records.len());
        out.records.extend(records);
        out.store.extend(store);
    }
    let n_eval = cfg.eval_records.min(out.records.len());
    let mut r = rng::stream(cfg.seed, &[rng::label("transition-split")]);
    for i in sample(&mut r, out.records.len(), n_eval) {
        out.records[i].split = Split::Eval;
    }
    Ok(out)
}
