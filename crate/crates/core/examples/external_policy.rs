//! Drives an episode with a policy running in another process. The bundled
//! Python script speaks the newline-delimited JSON protocol on stdin/stdout.
//!
//!     cargo run --example external_policy
//!
//! Any program (or a TCP server, with `tcp:HOST:PORT`) that answers each
//! request line `{"id", "kind", "prompt", "observations"}` with
//! `{"id", "action"}` can be plugged in the same way.

use std::sync::Arc;

use interlock::policy::{Endpoint, ExternalPolicy, Policy, ProposalRequest};
use interlock::taskgen::generate_task;
use interlock::{Env, EnvConfig, GenParams};

fn main() {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/policies/greedy_policy.py");
    let endpoint: Endpoint = format!("cmd:python3 {script}").parse().unwrap();
    let mut policy = match ExternalPolicy::connect(&endpoint) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("could not start the policy process: {e}");
            return;
        }
    };

    let task = Arc::new(generate_task(&GenParams::default(), 5, 0).unwrap());
    let mut env = Env::reset(task, EnvConfig::default());
    let goal = env.goal_observation();
    while !env.is_finished() {
        let obs = env.observe();
        let action = match policy.propose(&ProposalRequest::new(&goal, &obs), 1) {
            Ok(r) => r.first(),
            Err(e) => {
                eprintln!("policy failed: {e}");
                return;
            }
        };
        let step = env.step(&action).unwrap();
        println!("t={:<2} {:<20} {:?}", env.state().t, action.to_string(), step.outcome);
    }
    println!("success: {}", env.is_success());
}
