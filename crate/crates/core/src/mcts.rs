//! Tree search baseline: policy proposals as edges, UCB selection, values
//! from expert rollout length, replanning from scratch every real step.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, Observation};
use crate::expert::expert_rollout_length;
use crate::policy::{Policy, PolicyError, ProposalRequest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub c_explore: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// Proposals requested per node.
    pub k: usize,
    /// Expert rollouts longer than this count as this many steps.
    pub rollout_limit: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_explore: 0.5,
            lambda: 0.1,
            iterations: 50,
            k: 5,
            rollout_limit: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeStats {
    pub n: u64,
    pub w: f64,
}

impl EdgeStats {
    pub fn q(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.w / self.n as f64
        }
    }

    fn record(&mut self, v: f64) {
        self.n += 1;
        self.w += v;
    }
}

/// `c * sqrt(total) / (1 + n)` where `total` sums the visits of all sibling
/// edges.
pub fn ucb(c_explore: f64, total: u64, n: u64) -> f64 {
    c_explore * (total as f64).sqrt() / (1.0 + n as f64)
}

/// `exp(-lambda * steps)`.
pub fn value_of(lambda: f64, steps: u32) -> f64 {
    (-lambda * steps as f64).exp()
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct Edge {
    pub action: Action,
    pub stats: EdgeStats,
    pub child: Option<NodeId>,
    /// Every value backed up through this edge, in order.
    pub backups: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub env: Env,
    /// Proposal-ranked edges; `None` until the node is first selected from.
    pub edges: Option<Vec<Edge>>,
    /// Value from the expert rollout when the node was created.
    pub value: f64,
    /// Times the search stopped here because the state was already solved.
    pub terminal_hits: u64,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        self.env.is_success()
    }

    pub fn child_visits(&self) -> u64 {
        self.edges.iter().flatten().map(|e| e.stats.n).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SearchStats {
    /// Expand phases run, one per iteration.
    pub expansions: usize,
    /// Of those, how many created a new node.
    pub nodes_added: usize,
    pub proposal_calls: usize,
    #[serde(with = "secs")]
    pub expand_time: Duration,
    #[serde(with = "secs")]
    pub rollout_time: Duration,
    #[serde(with = "secs")]
    pub total_time: Duration,
}

mod secs {
    use std::time::Duration;

    pub fn serialize<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
}

/// A finished search, kept for inspection.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<Node>,
    pub stats: SearchStats,
    pub chosen: Action,
}

impl SearchTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.nodes.iter().flat_map(|n| n.edges.iter().flatten())
    }
}

struct Search<'a, P: ?Sized> {
    policy: &'a mut P,
    goal: &'a Observation,
    cfg: &'a SearchConfig,
    nodes: Vec<Node>,
    stats: SearchStats,
}

impl<P: Policy + ?Sized> Search<'_, P> {
    fn ensure_edges(&mut self, id: NodeId) -> Result<(), PolicyError> {
        if self.nodes[id].edges.is_some() {
            return Ok(());
        }
        let obs = self.nodes[id].env.observe();
        let ranked = self.policy.propose(&ProposalRequest::new(self.goal, &obs), self.cfg.k)?;
        self.stats.proposal_calls += 1;
        let edges = ranked
            .as_slice()
            .iter()
            .map(|&action| Edge {
                action,
                stats: EdgeStats::default(),
                child: None,
                backups: Vec::new(),
            })
            .collect();
        self.nodes[id].edges = Some(edges);
        Ok(())
    }

    /// First maximum of Q + U; edges are already in proposal-rank order.
    fn select(&self, id: NodeId) -> usize {
        let edges = self.nodes[id].edges.as_ref().expect("edges proposed");
        let total = self.nodes[id].child_visits();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, e) in edges.iter().enumerate() {
            let score = e.stats.q() + ucb(self.cfg.c_explore, total, e.stats.n);
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        best
    }

    fn evaluate(&mut self, env: &Env) -> f64 {
        let started = Instant::now();
        let steps = expert_rollout_length(env, self.cfg.rollout_limit).unwrap_or(self.cfg.rollout_limit);
        self.stats.rollout_time += started.elapsed();
        value_of(self.cfg.lambda, steps)
    }

    fn iterate(&mut self) -> Result<(), PolicyError> {
        let mut path: Vec<(NodeId, usize)> = Vec::new();
        let mut id = 0;
        let value = loop {
            if self.nodes[id].is_terminal() {
                self.nodes[id].terminal_hits += 1;
                break self.nodes[id].value;
            }
            self.ensure_edges(id)?;
            let e = self.select(id);
            path.push((id, e));
            let edge = &self.nodes[id].edges.as_ref().expect("edges proposed")[e];
            match edge.child {
                Some(child) => id = child,
                None => {
                    let started = Instant::now();
                    let action = edge.action;
                    let mut env = self.nodes[id].env.clone();
                    env.step(&action).expect("shadow search env never times out");
                    let v = self.evaluate(&env);
                    self.nodes.push(Node {
                        env,
                        edges: None,
                        value: v,
                        terminal_hits: 0,
                    });
                    let child = self.nodes.len() - 1;
                    self.nodes[id].edges.as_mut().expect("edges proposed")[e].child = Some(child);
                    self.stats.nodes_added += 1;
                    self.stats.expand_time += started.elapsed();
                    break v;
                }
            }
        };
        self.stats.expansions += 1;
        for (node, e) in path {
            let edge = &mut self.nodes[node].edges.as_mut().expect("edges proposed")[e];
            edge.stats.record(value);
            edge.backups.push(value);
        }
        Ok(())
    }
}

/// Runs one search from `env`'s current state and returns the whole tree.
/// The root action is the first edge (by proposal rank) with maximal Q.
pub fn search_tree<P: Policy + ?Sized>(
    env: &Env,
    goal: &Observation,
    policy: &mut P,
    cfg: &SearchConfig,
) -> Result<SearchTree, PolicyError> {
    let started = Instant::now();
    let root = Node {
        env: env.shadow(env.state().clone(), env.history().to_vec()),
        edges: None,
        value: 0.0,
        terminal_hits: 0,
    };
    let mut s = Search {
        policy,
        goal,
        cfg,
        nodes: vec![root],
        stats: SearchStats::default(),
    };
    s.ensure_edges(0)?;
    for _ in 0..cfg.iterations {
        s.iterate()?;
    }
    let edges = s.nodes[0].edges.as_ref().expect("root edges proposed");
    let mut chosen = edges[0].action;
    let mut best = edges[0].stats.q();
    for e in &edges[1..] {
        if e.stats.q() > best {
            best = e.stats.q();
            chosen = e.action;
        }
    }
    let mut stats = s.stats;
    stats.total_time = started.elapsed();
    Ok(SearchTree {
        nodes: s.nodes,
        stats,
        chosen,
    })
}

pub fn search<P: Policy + ?Sized>(
    env: &Env,
    goal: &Observation,
    policy: &mut P,
    cfg: &SearchConfig,
) -> Result<Action, PolicyError> {
    search_tree(env, goal, policy, cfg).map(|t| t.chosen)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::EnvConfig;
    use crate::fixtures::{chain_task, custom_task};
    use crate::policy::{NoisedExpert, ScriptedLearner};
    use crate::taskgen::PieceId;

    fn check_bookkeeping(tree: &SearchTree, iterations: usize) {
        assert_eq!(tree.stats.expansions, iterations);
        assert_eq!(tree.root().child_visits(), iterations as u64);
        for e in tree.edges() {
            let sum: f64 = e.backups.iter().sum();
            assert_eq!(e.stats.n as usize, e.backups.len());
            assert!((e.stats.w - sum).abs() < 1e-12);
            assert!((e.stats.q() * e.stats.n as f64 - e.stats.w).abs() < 1e-12);
            assert!(e.backups.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        for node in &tree.nodes {
            for e in node.edges.iter().flatten() {
                if let Some(c) = e.child {
                    let child = &tree.nodes[c];
                    assert_eq!(e.stats.n, 1 + child.child_visits() + child.terminal_hits);
                }
            }
        }
    }

    #[test]
    fn formulas_at_reference_points() {
        assert_eq!(ucb(0.5, 0, 0), 0.0);
        assert!((ucb(0.5, 1, 1) - 0.25).abs() < 1e-15);
        assert!((value_of(0.1, 1) - 0.904_837_418_035_959_6).abs() < 1e-12);
        assert_eq!(value_of(0.1, 0), 1.0);
    }

    #[test]
    fn zero_iterations_fall_back_to_top_proposal() {
        let task = Arc::new(chain_task(3, &[], &[]));
        let env = Env::reset(task, EnvConfig::default());
        let cfg = SearchConfig {
            iterations: 0,
            ..SearchConfig::default()
        };
        let mut learner = ScriptedLearner::new();
        let goal = env.goal_observation();
        let top = learner
            .propose(&ProposalRequest::new(&goal, &env.observe()), 5)
            .unwrap()
            .first();
        assert_eq!(search(&env, &goal, &mut learner, &cfg).unwrap(), top);
    }

    #[test]
    fn bookkeeping_holds_after_full_search() {
        let (a, b) = (PieceId(2), PieceId(3));
        let task = Arc::new(custom_task(3, &[(a, b)], &[PieceId(4)], &[b]));
        let env = Env::reset(task, EnvConfig::default());
        let tree = search_tree(
            &env,
            &env.goal_observation(),
            &mut ScriptedLearner::new(),
            &SearchConfig::default(),
        )
        .unwrap();
        check_bookkeeping(&tree, 50);
    }

    #[test]
    fn search_does_not_touch_live_env() {
        let task = Arc::new(chain_task(3, &[], &[]));
        let env = Env::reset(task, EnvConfig {
            epsilon: 0.2,
            ..EnvConfig::default()
        });
        let before = format!("{env:?}");
        search(&env, &env.goal_observation(), &mut ScriptedLearner::new(), &SearchConfig::default()).unwrap();
        assert_eq!(format!("{env:?}"), before);
    }

    #[test]
    fn expert_proposer_solves_chain() {
        let task = Arc::new(chain_task(4, &[PieceId(3)], &[PieceId(5)]));
        let mut env = Env::reset(task.clone(), EnvConfig::default());
        let goal = env.goal_observation();
        let mut proposer = NoisedExpert::new(task, 0.0, 0);
        while !env.is_finished() {
            let a = search(&env, &goal, &mut proposer, &SearchConfig::default()).unwrap();
            env.step(&a).unwrap();
        }
        assert!(env.is_success());
    }

    #[test]
    fn search_is_deterministic() {
        let task = Arc::new(chain_task(4, &[PieceId(2)], &[PieceId(4)]));
        let env = Env::reset(task.clone(), EnvConfig::default());
        let goal = env.goal_observation();
        let run = || {
            let mut p = NoisedExpert::new(task.clone(), 0.5, 7);
            search_tree(&env, &goal, &mut p, &SearchConfig::default()).unwrap()
        };
        let (x, y) = (run(), run());
        assert_eq!(x.chosen, y.chosen);
        let ws = |t: &SearchTree| t.edges().map(|e| e.stats.w).collect::<Vec<_>>();
        assert_eq!(ws(&x), ws(&y));
    }
}
