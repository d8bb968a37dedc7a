//! Symbolic assembly environment: privileged world state, the four
//! manipulation primitives with a per-primitive failure rate, piece and task
//! status classification, and observations that omit the dependency graph.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng;
use crate::taskgen::{DependencyGraph, Location, Orientation, PieceId, TaskInstance};

pub const DEFAULT_EPISODE_LEN: u32 = 50;
pub const DEFAULT_HISTORY_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    PickUp,
    Insert,
    Reorient,
    PutDown,
    Done,
}

impl Verb {
    pub const PRIMITIVES: [Verb; 4] = [Verb::PickUp, Verb::Insert, Verb::Reorient, Verb::PutDown];

    pub fn text(self) -> &'static str {
        match self {
            Verb::PickUp => "pick up",
            Verb::Insert => "insert",
            Verb::Reorient => "reorient",
            Verb::PutDown => "put down",
            Verb::Done => "done",
        }
    }
}

/// A primitive applied to a piece, or the terminal `done` claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    pub verb: Verb,
    pub target: Option<PieceId>,
}

impl Action {
    pub const DONE: Action = Action {
        verb: Verb::Done,
        target: None,
    };

    pub fn new(verb: Verb, target: PieceId) -> Self {
        debug_assert!(verb != Verb::Done);
        Self {
            verb,
            target: Some(target),
        }
    }

    pub fn pick_up(p: PieceId) -> Self {
        Self::new(Verb::PickUp, p)
    }
    pub fn put_down(p: PieceId) -> Self {
        Self::new(Verb::PutDown, p)
    }
    pub fn reorient(p: PieceId) -> Self {
        Self::new(Verb::Reorient, p)
    }
    pub fn insert(p: PieceId) -> Self {
        Self::new(Verb::Insert, p)
    }

    /// Every well-formed action for a task: four primitives per movable piece
    /// plus `done`.
    pub fn all_for(task: &TaskInstance) -> Vec<Action> {
        let mut all: Vec<Action> = task
            .movable()
            .flat_map(|p| Verb::PRIMITIVES.iter().map(move |&v| Action::new(v, p)))
            .collect();
        all.push(Action::DONE);
        all
    }

    /// Action names a movable piece of the task (or is `done`).
    pub fn fits(&self, task: &TaskInstance) -> bool {
        match self.target {
            None => self.verb == Verb::Done,
            Some(p) => self.verb != Verb::Done && p != PieceId::BASE && task.piece(p).is_some(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target {
            Some(p) => write!(f, "{} {}", self.verb.text(), p.color()),
            None => f.write_str(self.verb.text()),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("cannot parse action from {0:?}")]
pub struct ActionParseError(pub String);

impl FromStr for Action {
    type Err = ActionParseError;

    /// `[act] [obj]` with `act` one of the four primitives and `obj` a palette
    /// color, or the bare word `done`. Surrounding whitespace and a trailing
    /// period are tolerated; nothing else is.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ActionParseError(s.to_string());
        let text = s.trim();
        let text = text.strip_suffix('.').unwrap_or(text).trim().to_ascii_lowercase();
        if text == "done" {
            return Ok(Action::DONE);
        }
        for verb in Verb::PRIMITIVES {
            if let Some(rest) = text.strip_prefix(verb.text()) {
                let Some(color) = rest.strip_prefix(' ') else {
                    continue;
                };
                let target = PieceId::from_color(color).ok_or_else(err)?;
                return Ok(Action::new(verb, target));
            }
        }
        Err(err())
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PieceStatus {
    Done,
    Ready,
    BadB,
    BadD,
    BlockedP,
    BlockedS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    Done,
    Ready,
    BadB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    PrimitiveFailed,
    Invalid,
    Success,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Per-primitive failure probability.
    pub epsilon: f64,
    pub episode_len: u32,
    pub history_len: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            episode_len: DEFAULT_EPISODE_LEN,
            history_len: DEFAULT_HISTORY_LEN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PieceState {
    pub id: PieceId,
    pub location: Location,
    pub orientation: Orientation,
}

/// Full privileged state. `pieces[k]` describes piece `k + 2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub pieces: Vec<PieceState>,
    pub hand: Option<PieceId>,
    pub t: u32,
}

impl WorldState {
    pub fn initial(task: &TaskInstance) -> Self {
        let mut pieces: Vec<PieceState> = task
            .init
            .iter()
            .map(|i| PieceState {
                id: i.piece,
                location: i.location,
                orientation: i.orientation,
            })
            .collect();
        pieces.sort_by_key(|p| p.id);
        Self {
            pieces,
            hand: None,
            t: 0,
        }
    }

    /// Every movable piece seated, hand empty.
    pub fn assembled(task: &TaskInstance) -> Self {
        Self {
            pieces: task
                .movable()
                .map(|id| PieceState {
                    id,
                    location: Location::InBoard,
                    orientation: Orientation::Up,
                })
                .collect(),
            hand: None,
            t: 0,
        }
    }

    pub fn piece(&self, id: PieceId) -> Option<&PieceState> {
        self.pieces.get(id.index().wrapping_sub(2))
    }

    fn piece_mut(&mut self, id: PieceId) -> &mut PieceState {
        &mut self.pieces[id.index() - 2]
    }

    pub fn location(&self, id: PieceId) -> Location {
        self.piece(id).map_or(Location::InBoard, |p| p.location)
    }

    pub fn in_board(&self, id: PieceId) -> bool {
        self.location(id) == Location::InBoard
    }

    /// Board occupancy: base cells plus the goal cells of seated pieces.
    pub fn board(&self, task: &TaskInstance) -> Vec<u32> {
        task.grid
            .cells
            .iter()
            .map(|&v| {
                if v == PieceId::BASE.0 || (v != 0 && self.in_board(PieceId(v))) {
                    v
                } else {
                    0
                }
            })
            .collect()
    }

    /// Rebuilds the state an observation was rendered from. The step counter
    /// is not observable and comes back as 0.
    pub fn from_observation(obs: &Observation, task: &TaskInstance) -> Result<Self, ReconstructionError> {
        let movable: Vec<PieceId> = task.movable().collect();
        let listed: Vec<PieceId> = obs.pieces.iter().map(|p| p.id).collect();
        if listed != movable {
            return Err(ReconstructionError("piece table does not match the task".into()));
        }
        let pieces: Vec<PieceState> = obs
            .pieces
            .iter()
            .map(|p| PieceState {
                id: p.id,
                location: p.location,
                orientation: p.orientation,
            })
            .collect();
        let held: Vec<PieceId> = pieces
            .iter()
            .filter(|p| p.location == Location::InHand)
            .map(|p| p.id)
            .collect();
        if held.len() > 1 || held.first().copied() != obs.hand {
            return Err(ReconstructionError("hand does not match piece locations".into()));
        }
        let state = Self {
            pieces,
            hand: obs.hand,
            t: 0,
        };
        if obs.dims != task.grid.dims || obs.board != state.board(task) {
            return Err(ReconstructionError("board occupancy disagrees with piece locations".into()));
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("observation cannot be reconstructed: {0}")]
pub struct ReconstructionError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PieceView {
    pub id: PieceId,
    pub color: String,
    pub location: Location,
    pub orientation: Orientation,
}

/// What a policy sees: everything in the world state except the dependency
/// graph, plus recent action history. Field order is fixed, so the compact
/// JSON form is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    /// Content hash of the goal grid.
    pub goal: String,
    pub dims: [usize; 3],
    pub board: Vec<u32>,
    pub pieces: Vec<PieceView>,
    pub hand: Option<PieceId>,
    pub history: Vec<String>,
}

impl Observation {
    pub fn render(state: &WorldState, task: &TaskInstance, goal_ref: &str, history: &[String]) -> Self {
        Self {
            goal: goal_ref.to_string(),
            dims: task.grid.dims,
            board: state.board(task),
            pieces: state
                .pieces
                .iter()
                .map(|p| PieceView {
                    id: p.id,
                    color: p.id.color().to_string(),
                    location: p.location,
                    orientation: p.orientation,
                })
                .collect(),
            hand: state.hand,
            history: history.to_vec(),
        }
    }

    /// The fully assembled board, as seen in the goal image.
    pub fn goal_of(task: &TaskInstance) -> Self {
        Self::render(&WorldState::assembled(task), task, &goal_ref(task), &[])
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("observation serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    pub fn piece(&self, id: PieceId) -> Option<&PieceView> {
        self.pieces.iter().find(|p| p.id == id)
    }

    /// Highest goal layer each piece reaches, read off a goal observation's
    /// board.
    pub fn piece_heights(&self) -> Vec<(PieceId, usize)> {
        let layer = self.dims[0] * self.dims[1];
        self.pieces
            .iter()
            .map(|p| {
                let top = self
                    .board
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v == p.id.0)
                    .map(|(i, _)| i / layer)
                    .max()
                    .unwrap_or(0);
                (p.id, top)
            })
            .collect()
    }
}

pub fn goal_ref(task: &TaskInstance) -> String {
    let bytes = serde_json::to_vec(&task.grid).expect("grid serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Status of every movable piece, indexed like `WorldState::pieces`.
pub fn classify_all(state: &WorldState, deps: &DependencyGraph) -> Vec<PieceStatus> {
    let order = deps
        .topological_order()
        .expect("dependency graph is acyclic by construction");
    let mut done = vec![false; state.pieces.len()];
    let slot = |p: PieceId| p.index() - 2;
    for &p in &order {
        done[slot(p)] = state.in_board(p) && deps.predecessors(p).iter().all(|&q| done[slot(q)]);
    }
    state
        .pieces
        .iter()
        .map(|ps| {
            let p = ps.id;
            if ps.location == Location::InBoard {
                if done[slot(p)] {
                    PieceStatus::Done
                } else {
                    PieceStatus::BadB
                }
            } else if deps.successors(p).iter().any(|&s| state.in_board(s)) {
                PieceStatus::BlockedS
            } else if deps.predecessors(p).iter().any(|&q| !done[slot(q)]) {
                PieceStatus::BlockedP
            } else if ps.orientation == Orientation::Down {
                PieceStatus::BadD
            } else {
                PieceStatus::Ready
            }
        })
        .collect()
}

pub fn classify_piece(state: &WorldState, deps: &DependencyGraph, piece: PieceId) -> PieceStatus {
    classify_all(state, deps)[piece.index() - 2]
}

pub fn global_status_of(statuses: &[PieceStatus]) -> TaskStatus {
    if statuses.iter().all(|&s| s == PieceStatus::Done) {
        TaskStatus::Done
    } else if statuses
        .iter()
        .any(|&s| matches!(s, PieceStatus::Ready | PieceStatus::BadD))
    {
        TaskStatus::Ready
    } else {
        TaskStatus::BadB
    }
}

pub fn global_status(state: &WorldState, deps: &DependencyGraph) -> TaskStatus {
    global_status_of(&classify_all(state, deps))
}

pub fn is_success(state: &WorldState, deps: &DependencyGraph) -> bool {
    global_status(state, deps) == TaskStatus::Done
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("episode already ended")]
    EpisodeOver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub outcome: Outcome,
    pub observation: Observation,
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: u32,
    pub action: String,
    pub outcome: Outcome,
    pub observation: Observation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<serde_json::Value>,
}

/// A live episode. Single-threaded; clone it for a shadow simulation.
#[derive(Debug, Clone)]
pub struct Env {
    task: Arc<TaskInstance>,
    cfg: EnvConfig,
    state: WorldState,
    rng: ChaCha8Rng,
    history: Vec<String>,
    goal_ref: Arc<str>,
    finished: bool,
}

impl Env {
    pub fn reset(task: Arc<TaskInstance>, cfg: EnvConfig) -> Self {
        let state = WorldState::initial(&task);
        Self::from_state(task, cfg, state, Vec::new())
    }

    /// Starts an episode from an arbitrary state and action history.
    pub fn from_state(task: Arc<TaskInstance>, cfg: EnvConfig, state: WorldState, history: Vec<String>) -> Self {
        let rng = rng::stream(cfg.seed, &[rng::label("env"), task.task_id]);
        let goal_ref: Arc<str> = goal_ref(&task).into();
        Self {
            task,
            cfg,
            state,
            rng,
            history,
            goal_ref,
            finished: false,
        }
    }

    /// Like [`Env::from_state`] with a precomputed goal hash.
    pub fn from_parts(
        task: Arc<TaskInstance>,
        cfg: EnvConfig,
        state: WorldState,
        history: Vec<String>,
        goal_ref: Arc<str>,
    ) -> Self {
        let rng = rng::stream(cfg.seed, &[rng::label("env"), task.task_id]);
        Self {
            task,
            cfg,
            state,
            rng,
            history,
            goal_ref,
            finished: false,
        }
    }

    /// Shares the goal hash of an existing episode, skipping a rehash.
    pub fn shadow(&self, state: WorldState, history: Vec<String>) -> Self {
        let cfg = EnvConfig {
            epsilon: 0.0,
            episode_len: u32::MAX,
            ..self.cfg.clone()
        };
        Self {
            task: self.task.clone(),
            rng: self.rng.clone(),
            cfg,
            state,
            history,
            goal_ref: self.goal_ref.clone(),
            finished: false,
        }
    }

    pub fn task(&self) -> &Arc<TaskInstance> {
        &self.task
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn history(&self) -> &[String] {
        &self.history
    }

    pub fn recent_history(&self) -> &[String] {
        let h = self.cfg.history_len;
        &self.history[self.history.len().saturating_sub(h)..]
    }

    pub fn goal_ref(&self) -> &str {
        &self.goal_ref
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn is_success(&self) -> bool {
        is_success(&self.state, &self.task.deps)
    }

    pub fn observe(&self) -> Observation {
        Observation::render(&self.state, &self.task, &self.goal_ref, self.recent_history())
    }

    pub fn goal_observation(&self) -> Observation {
        Observation::render(&WorldState::assembled(&self.task), &self.task, &self.goal_ref, &[])
    }

    pub fn classify(&self) -> Vec<PieceStatus> {
        classify_all(&self.state, &self.task.deps)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.finished || self.state.t >= self.cfg.episode_len {
            return Err(EnvError::EpisodeOver);
        }
        self.state.t += 1;
        self.history.push(action.to_string());
        let mut outcome = self.apply(action);
        if outcome != Outcome::Success && self.is_success() {
            outcome = Outcome::Success;
        }
        if outcome == Outcome::Success {
            self.finished = true;
        } else if self.state.t >= self.cfg.episode_len {
            outcome = Outcome::Timeout;
            self.finished = true;
        }
        Ok(StepResult {
            outcome,
            observation: self.observe(),
        })
    }

    fn apply(&mut self, action: &Action) -> Outcome {
        if !action.fits(&self.task) {
            return Outcome::Invalid;
        }
        let Some(x) = action.target else {
            return if self.is_success() {
                Outcome::Success
            } else {
                Outcome::Invalid
            };
        };
        let draw: f64 = self.rng.gen();
        if draw < self.cfg.epsilon {
            return Outcome::PrimitiveFailed;
        }
        let deps = &self.task.deps;
        let held = self.state.hand == Some(x);
        match action.verb {
            Verb::PickUp => {
                if self.state.hand.is_some() {
                    return Outcome::Invalid;
                }
                self.state.piece_mut(x).location = Location::InHand;
                self.state.hand = Some(x);
            }
            Verb::PutDown => {
                if !held {
                    return Outcome::Invalid;
                }
                self.state.piece_mut(x).location = Location::OnTable;
                self.state.hand = None;
            }
            Verb::Reorient => {
                if !held {
                    return Outcome::Invalid;
                }
                self.state.piece_mut(x).orientation = Orientation::Up;
            }
            Verb::Insert => {
                let seatable = held
                    && self.state.piece(x).map(|p| p.orientation) == Some(Orientation::Up)
                    && deps.predecessors(x).iter().all(|&p| self.state.in_board(p))
                    && !deps.successors(x).iter().any(|&s| self.state.in_board(s));
                if !seatable {
                    return Outcome::Invalid;
                }
                self.state.piece_mut(x).location = Location::InBoard;
                self.state.hand = None;
            }
            Verb::Done => unreachable!("handled above"),
        }
        Outcome::Ok
    }
}
