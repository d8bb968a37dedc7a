//! Proposal and reflection policies.
//!
//! A [`Policy`] answers two kinds of query: propose a ranked list of next
//! actions from the goal and current observations, and reflect on an
//! imagined plan (its future observation and action sequence) to settle on
//! the action to execute.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{
    classify_all, Action, ActionParseError, Observation, PieceStatus, ReconstructionError, WorldState,
};
use crate::expert::{expert_action, ExpertContext};
use crate::rng;
use crate::taskgen::{PieceId, TaskInstance};

pub mod external;
pub mod prompt;
mod scripted;

pub use external::{Endpoint, ExternalPolicy};
pub use prompt::{render_prompt, PromptKind};
pub use scripted::ScriptedLearner;

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRequest {
    pub goal: Observation,
    pub current: Observation,
    /// Most recent executed action texts, oldest first.
    pub history: Vec<String>,
}

impl ProposalRequest {
    pub fn new(goal: &Observation, current: &Observation) -> Self {
        Self {
            goal: goal.clone(),
            current: current.clone(),
            history: current.history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionRequest {
    pub goal: Observation,
    pub current: Observation,
    /// Imagined observation after executing the whole plan.
    pub future: Observation,
    pub plan: Vec<Action>,
    pub history: Vec<String>,
}

/// Distinct actions, best first, never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedActions(Vec<Action>);

impl RankedActions {
    /// Drops duplicates (keeping first occurrences) and truncates to `k`.
    pub fn new(actions: impl IntoIterator<Item = Action>, k: usize) -> Option<Self> {
        let mut out: Vec<Action> = Vec::new();
        for a in actions {
            if out.len() >= k {
                break;
            }
            if !out.contains(&a) {
                out.push(a);
            }
        }
        (!out.is_empty()).then_some(Self(out))
    }

    pub fn first(&self) -> Action {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps only actions that address movable pieces of `task`.
    pub fn restricted_to(self, task: &TaskInstance) -> Option<Self> {
        let kept: Vec<Action> = self.0.into_iter().filter(|a| a.fits(task)).collect();
        (!kept.is_empty()).then_some(Self(kept))
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy unavailable: {0}")]
    Unavailable(String),
    #[error("policy did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    ActionParse(#[from] ActionParseError),
    #[error(transparent)]
    Reconstruction(#[from] ReconstructionError),
    #[error("policy returned no actions")]
    Empty,
}

pub trait Policy: Send {
    fn propose(&mut self, req: &ProposalRequest, k: usize) -> Result<RankedActions, PolicyError>;

    /// Endorses the plan's first action unless overridden.
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        req.plan.first().copied().ok_or(PolicyError::Empty)
    }

    /// Called before the first step of a real episode.
    fn begin_episode(&mut self) {}

    /// Called after every real (never imagined) transition.
    fn observe_transition(&mut self, _before: &Observation, _action: &Action, _after: &Observation) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn propose(&mut self, req: &ProposalRequest, k: usize) -> Result<RankedActions, PolicyError> {
        (**self).propose(req, k)
    }
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        (**self).reflect(req)
    }
    fn begin_episode(&mut self) {
        (**self).begin_episode()
    }
    fn observe_transition(&mut self, before: &Observation, action: &Action, after: &Observation) {
        (**self).observe_transition(before, action, after)
    }
}

pub trait Reflector: Send {
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError>;
}

/// Always executes the plan's first action.
#[derive(Debug, Clone, Copy, Default)]
pub struct EndorsingReflector;

impl Reflector for EndorsingReflector {
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        req.plan.first().copied().ok_or(PolicyError::Empty)
    }
}

/// Overrides the plan when the imagined future shows no assembly progress.
///
/// The proxy for a trained reflector: it reads piece statuses through the
/// task's dependency graph. If the future has fewer finished pieces than one
/// more than now, it returns a remediation instead of the plan's first
/// action: pick up a blocking piece when the hand is empty, or put down a
/// held piece that cannot be seated.
#[derive(Debug, Clone)]
pub struct HeuristicReflector {
    task: Arc<TaskInstance>,
}

impl HeuristicReflector {
    pub fn new(task: Arc<TaskInstance>) -> Self {
        Self { task }
    }
}

impl Reflector for HeuristicReflector {
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        let planned = req.plan.first().copied().ok_or(PolicyError::Empty)?;
        let deps = &self.task.deps;
        let now = WorldState::from_observation(&req.current, &self.task)?;
        let future = WorldState::from_observation(&req.future, &self.task)?;
        let status = classify_all(&now, deps);
        let done = |s: &[PieceStatus]| s.iter().filter(|&&x| x == PieceStatus::Done).count();
        let bound = (done(&status) + 1).min(status.len());
        if done(&classify_all(&future, deps)) >= bound {
            return Ok(planned);
        }
        let of = |p: PieceId| status[p.index() - 2];
        match now.hand {
            None => {
                let blocking = now
                    .pieces
                    .iter()
                    .map(|p| p.id)
                    .filter(|&p| of(p) == PieceStatus::BadB)
                    .min_by_key(|&p| {
                        let seated = deps.successors(p).iter().filter(|&&s| now.in_board(s)).count();
                        (seated, p)
                    });
                Ok(blocking.map_or(planned, Action::pick_up))
            }
            Some(held) if matches!(of(held), PieceStatus::BlockedP | PieceStatus::BlockedS) => {
                Ok(Action::put_down(held))
            }
            Some(_) => Ok(planned),
        }
    }
}

/// Answers every reflection with the expert's action for the current state.
#[derive(Debug, Clone)]
pub struct OracleReflector {
    task: Arc<TaskInstance>,
}

impl OracleReflector {
    pub fn new(task: Arc<TaskInstance>) -> Self {
        Self { task }
    }
}

impl Reflector for OracleReflector {
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        let now = WorldState::from_observation(&req.current, &self.task)?;
        Ok(expert_action(&now, &ExpertContext::new(&self.task.deps)))
    }
}

/// Pairs a proposer with a separate reflector.
pub struct WithReflector<P, R> {
    pub proposer: P,
    pub reflector: R,
}

impl<P, R> WithReflector<P, R> {
    pub fn new(proposer: P, reflector: R) -> Self {
        Self { proposer, reflector }
    }
}

impl<P: Policy, R: Reflector> Policy for WithReflector<P, R> {
    fn propose(&mut self, req: &ProposalRequest, k: usize) -> Result<RankedActions, PolicyError> {
        self.proposer.propose(req, k)
    }
    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        self.reflector.reflect(req)
    }
    fn begin_episode(&mut self) {
        self.proposer.begin_episode()
    }
    fn observe_transition(&mut self, before: &Observation, action: &Action, after: &Observation) {
        self.proposer.observe_transition(before, action, after)
    }
}

/// The expert with probability `1 - p_rand`, otherwise a uniformly random
/// well-formed action. Privileged: it sees the dependency graph.
#[derive(Debug, Clone)]
pub struct NoisedExpert {
    task: Arc<TaskInstance>,
    p_rand: f64,
    actions: Vec<Action>,
    rng: ChaCha8Rng,
}

impl NoisedExpert {
    pub fn new(task: Arc<TaskInstance>, p_rand: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&p_rand), "p_rand outside [0, 1]");
        let actions = Action::all_for(&task);
        let rng = rng::stream(seed, &[rng::label("noised-expert"), task.task_id]);
        Self {
            task,
            p_rand,
            actions,
            rng,
        }
    }

    pub fn p_rand(&self) -> f64 {
        self.p_rand
    }

    /// Number of well-formed actions a random draw chooses from.
    pub fn action_space(&self) -> usize {
        self.actions.len()
    }

    /// Expected agreement with the expert: `1 - p_rand (1 - 1/|A|)`.
    pub fn expected_agreement(&self) -> f64 {
        1.0 - self.p_rand * (1.0 - 1.0 / self.actions.len() as f64)
    }

    pub fn act(&mut self, state: &WorldState) -> Action {
        let expert = expert_action(state, &ExpertContext::new(&self.task.deps));
        // Always draw both numbers so the stream advances identically.
        let u: f64 = self.rng.gen();
        let random = *self.actions.choose(&mut self.rng).expect("nonempty action space");
        if u < self.p_rand {
            random
        } else {
            expert
        }
    }
}

impl Policy for NoisedExpert {
    fn propose(&mut self, req: &ProposalRequest, k: usize) -> Result<RankedActions, PolicyError> {
        let state = WorldState::from_observation(&req.current, &self.task)?;
        let chosen = self.act(&state);
        let expert = expert_action(&state, &ExpertContext::new(&self.task.deps));
        // Ranked by likelihood; random actions have none when p_rand is 0.
        let rest = if self.p_rand > 0.0 { &self.actions[..] } else { &[] };
        let ranked = std::iter::once(chosen)
            .chain(std::iter::once(expert))
            .chain(rest.iter().copied());
        RankedActions::new(ranked, k.max(1)).ok_or(PolicyError::Empty)
    }

    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        let state = WorldState::from_observation(&req.current, &self.task)?;
        Ok(expert_action(&state, &ExpertContext::new(&self.task.deps)))
    }
}
