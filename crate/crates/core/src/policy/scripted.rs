use std::collections::BTreeSet;

use super::{Policy, PolicyError, ProposalRequest, RankedActions};
use crate::env::{Action, Observation, Verb};
use crate::taskgen::{Location, Orientation, PieceId};

/// Observation-only learner used in place of a finetuned model.
///
/// It tries pieces lowest goal footprint first, reorients held pieces that
/// are upside down, and puts a piece back after its insert fails. Once every
/// table piece has failed since the last successful insert it pulls a seated
/// piece out, highest first, and starts over. It never sees the dependency
/// graph, so out-of-order starts cost it dearly.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLearner {
    failed: BTreeSet<PieceId>,
    removed: BTreeSet<PieceId>,
    removing: Option<PieceId>,
    heights: Option<(String, Vec<(PieceId, usize)>)>,
}

impl ScriptedLearner {
    pub fn new() -> Self {
        Self::default()
    }

    fn order(&mut self, goal: &Observation) -> Vec<PieceId> {
        let stale = self.heights.as_ref().is_none_or(|(g, _)| *g != goal.goal);
        if stale {
            let mut h = goal.piece_heights();
            h.sort_by_key(|&(p, top)| (top, p));
            self.heights = Some((goal.goal.clone(), h));
        }
        self.heights
            .as_ref()
            .map(|(_, h)| h.iter().map(|&(p, _)| p).collect())
            .unwrap_or_default()
    }

    fn ranked(&mut self, goal: &Observation, obs: &Observation) -> Vec<Action> {
        let order = self.order(goal);
        let loc = |p: PieceId| obs.piece(p).map(|v| v.location);
        if let Some(held) = obs.hand {
            let down = obs.piece(held).map(|v| v.orientation) == Some(Orientation::Down);
            let head = if self.removing == Some(held) || self.failed.contains(&held) {
                Action::put_down(held)
            } else if down {
                Action::reorient(held)
            } else {
                Action::insert(held)
            };
            return vec![
                head,
                Action::insert(held),
                Action::put_down(held),
                Action::reorient(held),
            ];
        }

        let on_table: Vec<PieceId> = order
            .iter()
            .copied()
            .filter(|&p| loc(p) == Some(Location::OnTable))
            .collect();
        let seated: Vec<PieceId> = order
            .iter()
            .rev()
            .copied()
            .filter(|&p| loc(p) == Some(Location::InBoard))
            .collect();
        let fresh: Vec<PieceId> = on_table
            .iter()
            .copied()
            .filter(|p| !self.failed.contains(p))
            .collect();

        let mut out: Vec<Action> = Vec::new();
        if on_table.is_empty() {
            out.push(Action::DONE);
        } else if fresh.is_empty() && !seated.is_empty() {
            let pull = seated
                .iter()
                .copied()
                .find(|p| !self.removed.contains(p))
                .unwrap_or(seated[0]);
            out.push(Action::pick_up(pull));
        }
        out.extend(fresh.iter().map(|&p| Action::pick_up(p)));
        out.extend(on_table.iter().map(|&p| Action::pick_up(p)));
        out.extend(seated.iter().map(|&p| Action::pick_up(p)));
        out.push(Action::DONE);
        out
    }
}

impl Policy for ScriptedLearner {
    fn propose(&mut self, req: &ProposalRequest, k: usize) -> Result<RankedActions, PolicyError> {
        let ranked = self.ranked(&req.goal, &req.current);
        RankedActions::new(ranked, k.max(1)).ok_or(PolicyError::Empty)
    }

    fn begin_episode(&mut self) {
        self.failed.clear();
        self.removed.clear();
        self.removing = None;
    }

    fn observe_transition(&mut self, before: &Observation, action: &Action, after: &Observation) {
        let Some(p) = action.target else {
            return;
        };
        let loc_before = before.piece(p).map(|v| v.location);
        let loc_after = after.piece(p).map(|v| v.location);
        match action.verb {
            Verb::Insert if loc_after == Some(Location::InBoard) => {
                self.failed.clear();
            }
            Verb::Insert if before.hand == Some(p) && loc_after == Some(Location::InHand) => {
                self.failed.insert(p);
            }
            Verb::PickUp if loc_before == Some(Location::InBoard) && after.hand == Some(p) => {
                self.removing = Some(p);
                self.removed.insert(p);
            }
            Verb::PickUp if after.hand == Some(p) => {
                self.failed.remove(&p);
            }
            Verb::PutDown if loc_after == Some(Location::OnTable) && before.hand == Some(p) => {
                if self.removing == Some(p) {
                    self.removing = None;
                    self.failed.clear();
                } else {
                    self.failed.insert(p);
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{Env, EnvConfig};
    use crate::fixtures::chain_task;

    fn run(task: Arc<crate::TaskInstance>, steps: usize) -> (Env, Vec<Action>) {
        let mut env = Env::reset(task, EnvConfig::default());
        let mut learner = ScriptedLearner::new();
        learner.begin_episode();
        let goal = env.goal_observation();
        let mut acts = Vec::new();
        for _ in 0..steps {
            if env.is_finished() {
                break;
            }
            let before = env.observe();
            let a = learner.propose(&ProposalRequest::new(&goal, &before), 5).unwrap().first();
            env.step(&a).unwrap();
            learner.observe_transition(&before, &a, &env.observe());
            acts.push(a);
        }
        (env, acts)
    }

    #[test]
    fn fresh_single_piece_starts_with_pick_up() {
        let task = Arc::new(chain_task(1, &[], &[]));
        let env = Env::reset(task, EnvConfig::default());
        let mut learner = ScriptedLearner::new();
        let r = learner
            .propose(&ProposalRequest::new(&env.goal_observation(), &env.observe()), 5)
            .unwrap();
        assert_eq!(r.first().to_string(), "pick up red");
    }

    #[test]
    fn reorients_before_inserting() {
        let (env, acts) = run(Arc::new(chain_task(1, &[PieceId(2)], &[])), 10);
        assert!(env.is_success());
        let texts: Vec<String> = acts.iter().map(|a| a.to_string()).collect();
        assert_eq!(texts, ["pick up red", "reorient red", "insert red"]);
    }

    #[test]
    fn recovers_from_a_failed_insert() {
        // All pieces share the same goal height, so the learner starts with
        // red; make green the only root by reversing the chain.
        let edges = [(PieceId(3), PieceId(2))];
        let task = Arc::new(crate::fixtures::custom_task(2, &edges, &[], &[]));
        let (env, acts) = run(task, 20);
        assert!(env.is_success());
        let texts: Vec<String> = acts.iter().map(|a| a.to_string()).collect();
        assert_eq!(
            texts,
            [
                "pick up red",
                "insert red",
                "put down red",
                "pick up green",
                "insert green",
                "pick up red",
                "insert red"
            ]
        );
    }

    #[test]
    fn ranked_list_has_no_duplicates() {
        let task = Arc::new(chain_task(4, &[], &[PieceId(3)]));
        let env = Env::reset(task, EnvConfig::default());
        let mut learner = ScriptedLearner::new();
        let r = learner
            .propose(&ProposalRequest::new(&env.goal_observation(), &env.observe()), 50)
            .unwrap();
        let mut seen = std::collections::HashSet::new();
        assert!(r.as_slice().iter().all(|a| seen.insert(*a)));
    }
}
