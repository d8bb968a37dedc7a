//! Privileged rule-based expert. It reads the full world state and the
//! dependency graph, classifies every piece, and acts on the task status.

use std::sync::Arc;

use thiserror::Error;

use crate::env::{
    classify_all, global_status_of, Action, Env, EnvConfig, PieceStatus, TaskStatus, WorldState,
};
use crate::taskgen::{DependencyGraph, PieceId, TaskInstance};

/// Expert inputs beyond the state: the dependency graph. Candidate pieces are
/// considered in ascending id order.
#[derive(Debug, Clone, Copy)]
pub struct ExpertContext<'a> {
    pub deps: &'a DependencyGraph,
}

impl<'a> ExpertContext<'a> {
    pub fn new(deps: &'a DependencyGraph) -> Self {
        Self { deps }
    }
}

pub fn expert_action(state: &WorldState, ctx: &ExpertContext<'_>) -> Action {
    let status = classify_all(state, ctx.deps);
    let of = |p: PieceId| status[p.index() - 2];

    if let Some(held) = state.hand {
        let preds_done = ctx
            .deps
            .predecessors(held)
            .iter()
            .all(|&q| of(q) == PieceStatus::Done);
        return if !preds_done {
            Action::put_down(held)
        } else {
            match of(held) {
                PieceStatus::BadD => Action::reorient(held),
                PieceStatus::BlockedS => Action::put_down(held),
                _ => Action::insert(held),
            }
        };
    }

    match global_status_of(&status) {
        TaskStatus::Ready => {
            let pick = state
                .pieces
                .iter()
                .map(|p| p.id)
                .find(|&p| matches!(of(p), PieceStatus::Ready | PieceStatus::BadD))
                .expect("READY task has a READY or BAD_D piece");
            Action::pick_up(pick)
        }
        TaskStatus::BadB => {
            // Fewest seated successors unblocks soonest.
            let pick = state
                .pieces
                .iter()
                .map(|p| p.id)
                .filter(|&p| of(p) == PieceStatus::BadB)
                .min_by_key(|&p| {
                    let seated = ctx
                        .deps
                        .successors(p)
                        .iter()
                        .filter(|&&s| state.in_board(s))
                        .count();
                    (seated, p)
                })
                .expect("BAD_B task has a BAD_B piece");
            Action::pick_up(pick)
        }
        TaskStatus::Done => Action::DONE,
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("expert did not reach the goal within {limit} steps")]
pub struct Unsolvable {
    pub limit: u32,
}

/// Steps the expert needs from `env`'s current state on a noiseless clone.
/// Zero iff the state is already assembled.
pub fn expert_rollout_length(env: &Env, limit: u32) -> Result<u32, Unsolvable> {
    if env.is_success() {
        return Ok(0);
    }
    let mut shadow = env.shadow(env.state().clone(), Vec::new());
    let ctx = ExpertContext::new(&env.task().deps);
    for steps in 1..=limit {
        let action = expert_action(shadow.state(), &ctx);
        shadow.step(&action).map_err(|_| Unsolvable { limit })?;
        if shadow.is_success() {
            return Ok(steps);
        }
    }
    Err(Unsolvable { limit })
}

/// Same as [`expert_rollout_length`] but from a bare state.
pub fn rollout_length_from(
    task: &Arc<TaskInstance>,
    state: &WorldState,
    limit: u32,
) -> Result<u32, Unsolvable> {
    let env = Env::from_state(task.clone(), EnvConfig::default(), state.clone(), Vec::new());
    expert_rollout_length(&env, limit)
}

/// Runs the expert in a real episode with no primitive failures.
pub fn expert_solves(task: &TaskInstance, episode_len: u32) -> bool {
    let cfg = EnvConfig {
        epsilon: 0.0,
        episode_len,
        ..EnvConfig::default()
    };
    let mut env = Env::reset(Arc::new(task.clone()), cfg);
    if env.is_success() {
        return true;
    }
    let deps = env.task().deps.clone();
    let ctx = ExpertContext::new(&deps);
    while !env.is_finished() {
        let a = expert_action(env.state(), &ctx);
        if env.step(&a).is_err() {
            return false;
        }
    }
    env.is_success()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Outcome;
    use crate::fixtures::{chain_task, custom_task};
    use crate::taskgen::{Location, Orientation};

    fn holding(task: &TaskInstance, p: PieceId, orientation: Orientation) -> WorldState {
        let mut s = WorldState::initial(task);
        s.pieces[p.index() - 2].location = Location::InHand;
        s.pieces[p.index() - 2].orientation = orientation;
        s.hand = Some(p);
        s
    }

    #[test]
    fn reorients_held_down_piece_with_done_predecessors() {
        let task = chain_task(1, &[], &[]);
        let s = holding(&task, PieceId(2), Orientation::Down);
        let a = expert_action(&s, &ExpertContext::new(&task.deps));
        assert_eq!(a.to_string(), "reorient red");
    }

    #[test]
    fn puts_down_held_piece_with_unfinished_predecessor() {
        let task = chain_task(2, &[], &[]);
        let s = holding(&task, PieceId(3), Orientation::Up);
        let a = expert_action(&s, &ExpertContext::new(&task.deps));
        assert_eq!(a.to_string(), "put down green");
    }

    #[test]
    fn claims_done_on_assembled_board() {
        let task = chain_task(2, &[], &[PieceId(2), PieceId(3)]);
        let s = WorldState::initial(&task);
        assert_eq!(expert_action(&s, &ExpertContext::new(&task.deps)), Action::DONE);
    }

    #[test]
    fn lowest_ready_id_is_picked() {
        // A(2) and C(4) are ready, B(3) waits on A.
        let task = custom_task(3, &[(PieceId(2), PieceId(3))], &[], &[]);
        let s = WorldState::initial(&task);
        let a = expert_action(&s, &ExpertContext::new(&task.deps));
        assert_eq!(a, Action::pick_up(PieceId(2)));
    }

    #[test]
    fn bad_b_choice_prefers_fewest_seated_successors() {
        // 2 -> 3, 2 -> 4, 3 -> 4 with 3 and 4 seated: both BAD_B.
        let (a, b, c) = (PieceId(2), PieceId(3), PieceId(4));
        let task = custom_task(3, &[(a, b), (a, c), (b, c)], &[], &[b, c]);
        let s = WorldState::initial(&task);
        assert_eq!(expert_action(&s, &ExpertContext::new(&task.deps)), Action::pick_up(c));
    }

    #[test]
    fn rollout_lengths() {
        let done = Arc::new(chain_task(1, &[], &[PieceId(2)]));
        assert_eq!(rollout_length_from(&done, &WorldState::initial(&done), 50), Ok(0));
        let up = Arc::new(chain_task(1, &[], &[]));
        assert_eq!(rollout_length_from(&up, &WorldState::initial(&up), 50), Ok(2));
        let down = Arc::new(chain_task(1, &[PieceId(2)], &[]));
        assert_eq!(rollout_length_from(&down, &WorldState::initial(&down), 50), Ok(3));
        assert_eq!(
            rollout_length_from(&down, &WorldState::initial(&down), 2),
            Err(Unsolvable { limit: 2 })
        );
    }

    #[test]
    fn removes_out_of_order_piece_first() {
        let task = chain_task(2, &[], &[PieceId(3)]);
        let s = WorldState::initial(&task);
        assert_eq!(expert_action(&s, &ExpertContext::new(&task.deps)), Action::pick_up(PieceId(3)));
        assert!(expert_solves(&task, 50));
    }

    #[test]
    fn chain_rollout_ends_with_every_piece_done() {
        let task = Arc::new(chain_task(3, &[PieceId(3)], &[]));
        let mut env = Env::reset(task.clone(), EnvConfig::default());
        let ctx = ExpertContext::new(&task.deps);
        let mut last = Outcome::Ok;
        while !env.is_finished() {
            last = env.step(&expert_action(env.state(), &ctx)).unwrap().outcome;
        }
        assert_eq!(last, Outcome::Success);
        assert!(env.classify().iter().all(|&s| s == PieceStatus::Done));
    }
}
