//! Dynamics models that predict the next observation from an observation and
//! an action, without touching the live environment.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{goal_ref, Action, Env, EnvConfig, Observation, ReconstructionError, WorldState};
use crate::rng;
use crate::taskgen::TaskInstance;

pub trait DynamicsModel: Send + Sync {
    fn predict(&self, obs: &Observation, action: &Action) -> Result<Observation, ReconstructionError>;
}

/// Exact simulator: rebuilds the world state behind the observation and
/// steps a noiseless shadow copy of the environment.
#[derive(Debug, Clone)]
pub struct OracleDynamics {
    task: Arc<TaskInstance>,
    history_len: usize,
    goal_ref: Arc<str>,
}

impl OracleDynamics {
    pub fn new(task: Arc<TaskInstance>, history_len: usize) -> Self {
        let goal_ref = goal_ref(&task).into();
        Self {
            task,
            history_len,
            goal_ref,
        }
    }

    pub fn task(&self) -> &Arc<TaskInstance> {
        &self.task
    }

    fn shadow(&self, obs: &Observation) -> Result<Env, ReconstructionError> {
        if obs.goal != *self.goal_ref {
            return Err(ReconstructionError("observation belongs to a different goal".into()));
        }
        let state = WorldState::from_observation(obs, &self.task)?;
        let cfg = EnvConfig {
            epsilon: 0.0,
            episode_len: u32::MAX,
            history_len: self.history_len,
            seed: 0,
        };
        Ok(Env::from_parts(
            self.task.clone(),
            cfg,
            state,
            obs.history.clone(),
            self.goal_ref.clone(),
        ))
    }
}

impl DynamicsModel for OracleDynamics {
    fn predict(&self, obs: &Observation, action: &Action) -> Result<Observation, ReconstructionError> {
        let mut env = self.shadow(obs)?;
        let step = env.step(action).expect("shadow episode never ends before stepping");
        Ok(step.observation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Predict that nothing happens.
    Freeze,
    /// Predict the effect of a different, randomly chosen action.
    Scramble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Misprediction probability.
    pub delta: f64,
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            mode: CorruptionMode::Freeze,
            seed: 0,
        }
    }
}

/// The oracle with seeded mispredictions, standing in for an imperfect
/// learned model. Whether a call is corrupted depends only on the
/// observation, the action and the seed.
#[derive(Debug, Clone)]
pub struct CorruptedDynamics {
    oracle: OracleDynamics,
    cfg: CorruptionConfig,
}

impl CorruptedDynamics {
    pub fn new(oracle: OracleDynamics, cfg: CorruptionConfig) -> Self {
        assert!((0.0..=1.0).contains(&cfg.delta), "delta outside [0, 1]");
        Self { oracle, cfg }
    }

    /// Prediction plus whether it was corrupted.
    pub fn predict_traced(
        &self,
        obs: &Observation,
        action: &Action,
    ) -> Result<(Observation, bool), ReconstructionError> {
        let truth = self.oracle.predict(obs, action)?;
        let key = rng::label(&format!("{}|{action}", obs.to_canonical_json()));
        let mut r = rng::stream(self.cfg.seed, &[rng::label("corrupt"), key]);
        if !r.gen_bool(self.cfg.delta) {
            return Ok((truth, false));
        }
        let wrong = match self.cfg.mode {
            CorruptionMode::Freeze => obs.clone(),
            CorruptionMode::Scramble => {
                let others: Vec<Action> = Action::all_for(&self.oracle.task)
                    .into_iter()
                    .filter(|a| a != action)
                    .collect();
                match others.choose(&mut r) {
                    Some(other) => self.oracle.predict(obs, other)?,
                    None => obs.clone(),
                }
            }
        };
        // The action text still enters the history; only the physical outcome
        // is wrong.
        Ok((
            Observation {
                history: truth.history,
                ..wrong
            },
            true,
        ))
    }
}

impl DynamicsModel for CorruptedDynamics {
    fn predict(&self, obs: &Observation, action: &Action) -> Result<Observation, ReconstructionError> {
        self.predict_traced(obs, action).map(|(o, _)| o)
    }
}
