use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use interlock::datagen::{collect_iteration, CollectionConfig, ExampleKind, LearnerFactory};
use interlock::imagine::{CorruptedDynamics, CorruptionConfig, CorruptionMode, DynamicsModel, OracleDynamics};
use interlock::mcts::{search_tree, SearchConfig};
use interlock::policy::{NoisedExpert, Policy, ScriptedLearner};
use interlock::taskgen::{generate_task, Location};
use interlock::{Action, Env, EnvConfig, GenParams, Outcome, PieceId, TaskInstance};
use proptest::prelude::*;

fn task(seed: u64) -> Arc<TaskInstance> {
    Arc::new(generate_task(&GenParams::default(), seed, seed).expect("default params generate"))
}

/// Kahn's algorithm over the raw edge list.
fn acyclic(nodes: &[PieceId], edges: &[(PieceId, PieceId)]) -> bool {
    let mut indeg: BTreeMap<PieceId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for (_, b) in edges {
        *indeg.get_mut(b).unwrap() += 1;
    }
    let mut ready: Vec<PieceId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for (a, b) in edges {
            if *a == n {
                let d = indeg.get_mut(b).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(*b);
                }
            }
        }
    }
    seen == nodes.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_boards_are_disjoint_acyclic_and_consistent(seed in any::<u64>()) {
        let t = task(seed);
        let mut owner = BTreeMap::new();
        for p in &t.pieces {
            for c in &p.cells {
                prop_assert!(owner.insert(*c, p.id).is_none(), "cell {:?} claimed twice", c);
                prop_assert_eq!(t.grid.get(*c), p.id.0);
            }
        }
        prop_assert_eq!(owner.len(), t.grid.nonzero_count());
        let nodes: Vec<PieceId> = t.movable().collect();
        for (a, b) in t.deps.edges() {
            prop_assert!(nodes.contains(a) && nodes.contains(b) && a != b);
        }
        prop_assert!(acyclic(&nodes, t.deps.edges()));
    }

    #[test]
    fn tasks_round_trip_through_json(seed in any::<u64>()) {
        let t = task(seed);
        let back: TaskInstance = serde_json::from_str(&serde_json::to_string(&*t).unwrap()).unwrap();
        prop_assert_eq!(&back, &*t);
    }

    #[test]
    fn action_text_round_trips(seed in 0u64..500) {
        for a in Action::all_for(&task(seed)) {
            prop_assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
    }

    #[test]
    fn env_state_stays_well_formed(seed in 0u64..10_000, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..60)) {
        let t = task(seed);
        let actions = Action::all_for(&t);
        let cfg = EnvConfig { epsilon: 0.2, seed, ..EnvConfig::default() };
        let mut env = Env::reset(t.clone(), cfg.clone());
        for (i, pick) in picks.iter().enumerate() {
            if env.is_finished() {
                break;
            }
            let before = env.state().clone();
            let a = actions[pick.index(actions.len())];
            let step = env.step(&a).unwrap();
            let s = env.state();
            prop_assert_eq!(s.t as usize, i + 1);
            let held: Vec<PieceId> = s.pieces.iter().filter(|p| p.location == Location::InHand).map(|p| p.id).collect();
            prop_assert!(held.len() <= 1);
            prop_assert_eq!(held.first().copied(), s.hand);
            let seated: usize = s.pieces.iter()
                .filter(|p| p.location == Location::InBoard)
                .map(|p| t.piece(p.id).unwrap().cells.len())
                .sum();
            let base = t.piece(PieceId::BASE).unwrap().cells.len();
            prop_assert_eq!(step.observation.board.iter().filter(|&&v| v != 0).count(), base + seated);
            prop_assert!(step.observation.history.len() <= cfg.history_len);
            prop_assert_eq!(step.observation.history.last().unwrap(), &a.to_string());
            if matches!(step.outcome, Outcome::Invalid | Outcome::PrimitiveFailed) {
                prop_assert_eq!(&s.pieces, &before.pieces);
                prop_assert_eq!(s.hand, before.hand);
            }
        }
    }

    #[test]
    fn oracle_dynamics_match_a_noiseless_step(seed in 0u64..10_000, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..30)) {
        let t = task(seed);
        let actions = Action::all_for(&t);
        let cfg = EnvConfig { epsilon: 0.3, seed, ..EnvConfig::default() };
        let oracle = OracleDynamics::new(t.clone(), cfg.history_len);
        let mut env = Env::reset(t.clone(), cfg.clone());
        for pick in picks {
            if env.is_finished() {
                break;
            }
            let a = actions[pick.index(actions.len())];
            let mut exact = Env::from_state(t.clone(), EnvConfig { epsilon: 0.0, ..cfg.clone() }, env.state().clone(), env.history().to_vec());
            let want = exact.step(&a).unwrap().observation;
            prop_assert_eq!(oracle.predict(&env.observe(), &a).unwrap().to_canonical_json(), want.to_canonical_json());
            env.step(&a).unwrap();
        }
    }

    #[test]
    fn corrupted_dynamics_are_pure_and_keep_history(seed in 0u64..10_000, delta in 0.0f64..=1.0, scramble in any::<bool>(), pick in any::<prop::sample::Index>()) {
        let t = task(seed);
        let actions = Action::all_for(&t);
        let a = actions[pick.index(actions.len())];
        let env = Env::reset(t.clone(), EnvConfig::default());
        let mode = if scramble { CorruptionMode::Scramble } else { CorruptionMode::Freeze };
        let model = CorruptedDynamics::new(OracleDynamics::new(t.clone(), 5), CorruptionConfig { delta, mode, seed });
        let obs = env.observe();
        let (first, corrupted) = model.predict_traced(&obs, &a).unwrap();
        let (again, _) = model.predict_traced(&obs, &a).unwrap();
        prop_assert_eq!(&first, &again);
        let truth = OracleDynamics::new(t, 5).predict(&obs, &a).unwrap();
        prop_assert_eq!(&first.history, &truth.history);
        if !corrupted {
            prop_assert_eq!(&first, &truth);
        }
        if delta == 0.0 {
            prop_assert!(!corrupted);
        }
    }

    #[test]
    fn noised_expert_with_zero_noise_is_the_expert(seed in 0u64..10_000) {
        let t = task(seed);
        let mut pol = NoisedExpert::new(t.clone(), 0.0, seed);
        let mut env = Env::reset(t.clone(), EnvConfig::default());
        let goal = env.goal_observation();
        while !env.is_finished() {
            let ranked = pol.propose(&interlock::policy::ProposalRequest::new(&goal, &env.observe()), 5).unwrap();
            prop_assert_eq!(ranked.len(), 1);
            env.step(&ranked.first()).unwrap();
        }
        prop_assert!(env.is_success());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn search_bookkeeping_holds(seed in 0u64..10_000, iterations in 0usize..40, c in 0.0f64..2.0, steps in 0usize..6) {
        let t = task(seed);
        let mut env = Env::reset(t.clone(), EnvConfig { epsilon: 0.1, seed, ..EnvConfig::default() });
        let mut walker = NoisedExpert::new(t.clone(), 0.5, seed);
        for _ in 0..steps {
            if env.is_finished() { break; }
            let a = walker.act(env.state());
            env.step(&a).unwrap();
        }
        let goal = env.goal_observation();
        let cfg = SearchConfig { iterations, c_explore: c, ..SearchConfig::default() };
        let tree = search_tree(&env, &goal, &mut ScriptedLearner::new(), &cfg).unwrap();
        prop_assert_eq!(tree.root().child_visits(), iterations as u64);
        prop_assert_eq!(tree.stats.expansions, iterations);
        for (i, node) in tree.nodes.iter().enumerate() {
            // The root is never evaluated.
            prop_assert!(i == 0 || (node.value > 0.0 && node.value <= 1.0));
            for e in node.edges.iter().flatten() {
                let sum: f64 = e.backups.iter().sum();
                prop_assert!((e.stats.w - sum).abs() <= 1e-12);
                prop_assert_eq!(e.stats.n as usize, e.backups.len());
                if let Some(child) = e.child {
                    let ch = &tree.nodes[child];
                    prop_assert_eq!(e.stats.n, 1 + ch.child_visits() + ch.terminal_hits);
                }
            }
        }
    }

    #[test]
    fn relabeled_examples_line_up_with_episodes(seed in any::<u64>(), p in 0.0f64..=1.0, horizon in 1usize..8) {
        let tasks: Vec<_> = (0..4).map(|i| task(seed.wrapping_add(i))).collect();
        let cfg = CollectionConfig { per_iter: 4, horizon, p, epsilon: 0.05, seed, ..CollectionConfig::default() };
        let factory: Box<LearnerFactory> = Box::new(|_| Box::new(ScriptedLearner::new()) as Box<dyn Policy>);
        let data = collect_iteration(&tasks, &*factory, &cfg, 1, 2).unwrap();
        let mut by_episode: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for ex in &data.examples {
            by_episode.entry(ex.episode.as_str()).or_default().push(ex);
        }
        let ids: BTreeSet<&str> = data.episodes.iter().map(|e| e.id.as_str()).collect();
        prop_assert_eq!(ids.len(), data.episodes.len());
        for ep in &data.episodes {
            let l = ep.actions.len();
            prop_assert_eq!(ep.observations.len(), l + 1);
            let exs = by_episode.remove(ep.id.as_str()).unwrap_or_default();
            prop_assert_eq!(exs.len(), 2 * l);
            for ex in exs {
                prop_assert_eq!(ex.label, ep.expert[ex.t]);
                prop_assert_eq!(&ex.current, &ep.observations[ex.t]);
                if ex.kind == ExampleKind::Reflection {
                    let end = (ex.t + horizon).min(l);
                    prop_assert_eq!(ex.future.as_deref(), Some(ep.observations[end].as_str()));
                    prop_assert_eq!(ex.plan.as_deref(), Some(&ep.actions[ex.t..end]));
                }
            }
            for r in &ep.observations {
                prop_assert!(data.store.get(r).is_some());
            }
        }
        prop_assert!(by_episode.is_empty());
    }
}
