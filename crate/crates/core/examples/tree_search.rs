//! One tree search from a task's start state: the root edges' statistics,
//! the budget bookkeeping, and a full episode with per-step replanning.
//!
//!     cargo run --release --example tree_search

use std::sync::Arc;

use interlock::mcts::{search, search_tree, SearchConfig};
use interlock::policy::ScriptedLearner;
use interlock::taskgen::generate_task;
use interlock::{Env, EnvConfig, GenParams};

fn main() {
    let task = Arc::new(generate_task(&GenParams::default(), 11, 0).unwrap());
    let env = Env::reset(task.clone(), EnvConfig::default());
    let goal = env.goal_observation();
    let cfg = SearchConfig::default();

    let tree = search_tree(&env, &goal, &mut ScriptedLearner::new(), &cfg).unwrap();
    println!("{:<22}{:>4}{:>10}{:>10}", "root edge", "N", "W", "Q");
    for e in tree.root().edges.iter().flatten() {
        println!("{:<22}{:>4}{:>10.4}{:>10.4}", e.action.to_string(), e.stats.n, e.stats.w, e.stats.q());
    }
    println!(
        "chosen: {}  expansions: {}  new nodes: {}  proposal calls: {}",
        tree.chosen, tree.stats.expansions, tree.stats.nodes_added, tree.stats.proposal_calls
    );

    let mut env = env;
    let mut learner = ScriptedLearner::new();
    let mut times = Vec::new();
    while !env.is_finished() {
        let started = std::time::Instant::now();
        let a = search(&env, &goal, &mut learner, &cfg).unwrap();
        times.push(started.elapsed().as_secs_f64());
        env.step(&a).unwrap();
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    println!(
        "episode: success={} in {} steps, {:.2} ms per search",
        env.is_success(),
        env.state().t,
        1e3 * mean
    );
}
