//! Compares the scripted learner with and without reflection on a task that
//! starts with a piece seated out of order, printing each planning trace.
//!
//!     cargo run --example reflective_planning

use std::sync::Arc;

use interlock::imagine::OracleDynamics;
use interlock::policy::{HeuristicReflector, Policy, ScriptedLearner, WithReflector};
use interlock::reflect::{plan_step, PlannerConfig};
use interlock::taskgen::generate_task;
use interlock::{Env, EnvConfig, GenParams, TaskInstance};

fn run(task: &Arc<TaskInstance>, reflection: bool) -> (bool, u32) {
    let mut env = Env::reset(task.clone(), EnvConfig::default());
    let mut policy = WithReflector::new(ScriptedLearner::new(), HeuristicReflector::new(task.clone()));
    policy.begin_episode();
    let dynamics = OracleDynamics::new(task.clone(), env.config().history_len);
    let cfg = PlannerConfig {
        horizon: 5,
        reflection,
    };
    let goal = env.goal_observation();
    while !env.is_finished() {
        let obs = env.observe();
        let (action, trace) = plan_step(&mut policy, &dynamics, &goal, &obs, &cfg).unwrap();
        if reflection {
            let plan: Vec<String> = trace.plan.iter().map(|a| a.to_string()).collect();
            let mark = if trace.overridden() { "OVERRIDE" } else { "endorse" };
            println!("  t={:<2} plan [{}] -> {mark} {action}", env.state().t, plan.join(", "));
        }
        let step = env.step(&action).unwrap();
        policy.observe_transition(&obs, &action, &step.observation);
    }
    (env.is_success(), env.state().t)
}

fn main() {
    let params = GenParams {
        r_bad: 1.0,
        ..GenParams::default()
    };
    let task = (0..)
        .map(|s| Arc::new(generate_task(&params, s, s).unwrap()))
        .find(|t| t.has_preinserted() && t.movable().count() >= 4)
        .unwrap();
    println!("task {} with {} pieces", task.task_id, task.movable().count());

    let (ok, steps) = run(&task, false);
    println!("without reflection: success={ok} after {steps} steps");
    println!("with reflection:");
    let (ok, steps) = run(&task, true);
    println!("with reflection: success={ok} after {steps} steps");
}
