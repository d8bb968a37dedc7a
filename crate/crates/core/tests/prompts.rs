mod common;

use std::sync::Arc;

use common::{colors_value, history_value, unfill, PROPOSE_GOLDEN, REFLECT_GOLDEN};
use interlock::policy::prompt::{render_proposal, render_reflection, render_zero_shot};
use interlock::policy::{NoisedExpert, ProposalRequest, ReflectionRequest};
use interlock::taskgen::generate_task;
use interlock::{Env, EnvConfig, GenParams, Observation};

/// Observations along a noisy walk, so histories and hands vary.
fn walk(seed: u64, steps: usize) -> (Observation, Vec<Observation>) {
    let task = Arc::new(generate_task(&GenParams::default(), seed, seed).unwrap());
    let mut env = Env::reset(task.clone(), EnvConfig { epsilon: 0.1, seed, ..EnvConfig::default() });
    let mut noisy = NoisedExpert::new(task, 0.6, seed);
    let mut seen = vec![env.observe()];
    for _ in 0..steps {
        if env.is_finished() {
            break;
        }
        let a = noisy.act(env.state());
        seen.push(env.step(&a).unwrap().observation);
    }
    (env.goal_observation(), seen)
}

#[test]
fn proposal_prompts_unfill_to_golden() {
    for seed in 0..20 {
        let (goal, seen) = walk(seed, 12);
        for obs in &seen {
            let req = ProposalRequest::new(&goal, obs);
            let rendered = render_proposal(&req);
            let slots = [("history", history_value(&obs.history)), ("colors", colors_value(&goal))];
            let got = unfill(PROPOSE_GOLDEN, &rendered, &[&goal, obs], &slots).unwrap();
            assert_eq!(got, PROPOSE_GOLDEN);
        }
    }
}

#[test]
fn reflection_prompts_unfill_to_golden() {
    for seed in 0..20 {
        let (goal, seen) = walk(seed, 12);
        for w in seen.windows(3) {
            let plan: Vec<_> = w[2].history.iter().rev().take(2).rev().map(|s| s.parse().unwrap()).collect();
            let req = ReflectionRequest {
                goal: goal.clone(),
                current: w[0].clone(),
                future: w[2].clone(),
                plan: plan.clone(),
                history: w[0].history.clone(),
            };
            let rendered = render_reflection(&req);
            let plan_text = plan.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ");
            let slots = [
                ("history", history_value(&w[0].history)),
                ("init_plan", plan_text),
                ("colors", colors_value(&goal)),
            ];
            let got = unfill(REFLECT_GOLDEN, &rendered, &[&goal, &w[0], &w[2]], &slots).unwrap();
            assert_eq!(got, REFLECT_GOLDEN);
        }
    }
}

#[test]
fn empty_history_renders_as_none() {
    let (goal, seen) = walk(3, 0);
    let rendered = render_proposal(&ProposalRequest::new(&goal, &seen[0]));
    assert!(rendered.contains("executed actions are: none."));
}

#[test]
fn zero_shot_wraps_the_proposal_prompt() {
    let (goal, seen) = walk(5, 4);
    let req = ProposalRequest::new(&goal, seen.last().unwrap());
    assert!(render_zero_shot(&req).contains(&render_proposal(&req)));
}

#[test]
fn tampered_rendering_is_detected() {
    let (goal, seen) = walk(1, 2);
    let obs = seen.last().unwrap();
    let rendered = render_proposal(&ProposalRequest::new(&goal, obs)).replace("manipulataed", "manipulated");
    let slots = [("history", history_value(&obs.history)), ("colors", colors_value(&goal))];
    assert!(unfill(PROPOSE_GOLDEN, &rendered, &[&goal, obs], &slots).is_err());
}
