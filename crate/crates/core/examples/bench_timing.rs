//! Per-step latency of the plain learner, reflective planning and tree
//! search on the same 20 tasks, plus the share of search time spent in
//! expansion and expert rollouts.
//!
//!     cargo run --release --example bench_timing

use std::sync::Arc;

use interlock::harness::{bench, generate_split, EpisodeConfig, TaskSplit};
use interlock::GenParams;

fn main() {
    let tasks: Vec<Arc<_>> = generate_split(TaskSplit::Eval, 20, 1, &GenParams::default(), 0)
        .unwrap()
        .into_iter()
        .map(Arc::new)
        .collect();
    let agents: Vec<String> = ["scripted", "scripted+reflect:sim", "mcts"].map(String::from).to_vec();
    let (_, entries) = bench(&tasks, &agents, &EpisodeConfig::default(), 1).unwrap();
    println!("{:<24}{:>8}{:>14}{:>14}{:>14}", "agent", "steps", "mean ms", "p50 ms", "p99 ms");
    for e in &entries {
        let t = &e.timing;
        println!(
            "{:<24}{:>8}{:>14.4}{:>14.4}{:>14.4}",
            e.agent,
            t.steps,
            1e3 * t.mean,
            1e3 * t.p50,
            1e3 * t.p99
        );
    }
    if let Some(share) = entries[2].search_share {
        println!("tree search spends {:.1}% of its time expanding and rolling out", 100.0 * share);
    }
}
