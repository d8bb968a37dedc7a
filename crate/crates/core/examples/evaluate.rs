//! Evaluation sweep over a generated task set: success rates of several
//! agents across seeds, and a sign test of reflection against the plain
//! learner on tasks that start with a misplaced piece.
//!
//!     cargo run --release --example evaluate

use std::sync::Arc;

use interlock::harness::{generate_split, run_episodes, sign_test, AgentSpec, EpisodeConfig, TaskSplit};
use interlock::GenParams;

fn main() {
    let tasks: Vec<Arc<_>> = generate_split(TaskSplit::Eval, 100, 1, &GenParams::default(), 0)
        .unwrap()
        .into_iter()
        .map(Arc::new)
        .collect();
    let cfg = EpisodeConfig {
        epsilon: 0.05,
        ..EpisodeConfig::default()
    };
    let seeds = 5;
    let agents = ["expert", "scripted", "scripted+reflect:sim", "scripted+reflect:corrupted:0.3:scramble"];
    let mut outcomes = Vec::new();
    println!("{:<42}{:>10}", "agent", "success %");
    for name in agents {
        let spec: AgentSpec = name.parse().unwrap();
        let runs = run_episodes(&tasks, &spec, seeds, &cfg, 8, false).unwrap();
        let rate = 100.0 * runs.iter().filter(|r| r.result.success).count() as f64 / runs.len() as f64;
        println!("{name:<42}{rate:>10.1}");
        outcomes.push(runs);
    }

    let (mut wins, mut losses) = (0, 0);
    for (plain, reflect) in outcomes[1].iter().zip(&outcomes[2]) {
        let task = tasks.iter().find(|t| t.task_id == plain.result.task_id).unwrap();
        if !task.has_preinserted() {
            continue;
        }
        match (plain.result.success, reflect.result.success) {
            (false, true) => wins += 1,
            (true, false) => losses += 1,
            _ => {}
        }
    }
    println!(
        "pre-inserted tasks: reflection wins {wins}, loses {losses}, one-sided sign test p = {:.2e}",
        sign_test(wins, losses)
    );
}
