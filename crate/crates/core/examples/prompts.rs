//! Renders the proposal and reflection prompts for a live state, showing how
//! observations are referenced from the text.
//!
//!     cargo run --example prompts

use std::sync::Arc;

use interlock::imagine::OracleDynamics;
use interlock::policy::prompt::{describe, render_proposal, render_reflection};
use interlock::policy::{EndorsingReflector, ProposalRequest, ScriptedLearner, WithReflector};
use interlock::reflect::{plan_step, PlannerConfig};
use interlock::taskgen::generate_task;
use interlock::{Env, EnvConfig, GenParams};

fn main() {
    let task = Arc::new(generate_task(&GenParams::default(), 2, 0).unwrap());
    let mut env = Env::reset(task.clone(), EnvConfig::default());
    let goal = env.goal_observation();
    let first = task.movable().next().unwrap();
    env.step(&interlock::Action::pick_up(first)).unwrap();
    let obs = env.observe();

    println!("current state:\n{}\n", describe(&obs));
    println!("--- proposal prompt ---\n{}\n", render_proposal(&ProposalRequest::new(&goal, &obs)));

    let mut policy = WithReflector::new(ScriptedLearner::new(), EndorsingReflector);
    let dynamics = OracleDynamics::new(task, 5);
    let (_, trace) = plan_step(&mut policy, &dynamics, &goal, &obs, &PlannerConfig::default()).unwrap();
    let req = interlock::policy::ReflectionRequest {
        goal,
        current: obs.clone(),
        future: trace.future().unwrap().clone(),
        plan: trace.plan.clone(),
        history: obs.history.clone(),
    };
    println!("--- reflection prompt ---\n{}", render_reflection(&req));
}
