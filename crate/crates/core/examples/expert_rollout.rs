//! Runs the privileged expert on a task with an out-of-order piece and
//! primitive failures, printing every step.
//!
//!     cargo run --example expert_rollout

use std::sync::Arc;

use interlock::env::Outcome;
use interlock::expert::{expert_action, expert_rollout_length, ExpertContext};
use interlock::taskgen::generate_task;
use interlock::{Env, EnvConfig, GenParams};

fn main() {
    let params = GenParams {
        r_bad: 1.0,
        q_down: 0.5,
        ..GenParams::default()
    };
    let task = Arc::new(generate_task(&params, 3, 0).unwrap());
    let mut env = Env::reset(
        task.clone(),
        EnvConfig {
            epsilon: 0.1,
            seed: 42,
            ..EnvConfig::default()
        },
    );
    println!(
        "expert needs {} steps without failures",
        expert_rollout_length(&env, 100).unwrap()
    );

    let ctx = ExpertContext::new(&task.deps);
    while !env.is_finished() {
        let statuses = env.classify();
        let action = expert_action(env.state(), &ctx);
        let step = env.step(&action).unwrap();
        let marker = if step.outcome == Outcome::PrimitiveFailed { "  (retry)" } else { "" };
        println!(
            "t={:<2} {:<20} {:?}{marker}  statuses before: {:?}",
            env.state().t,
            action.to_string(),
            step.outcome,
            statuses
        );
    }
    println!("success: {}", env.is_success());
}
