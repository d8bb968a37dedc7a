//! Reflective planning: imagine a short plan with the dynamics model, then
//! let the policy revise the first action after seeing where the plan leads.

use serde::Serialize;
use thiserror::Error;

use crate::env::{Action, Observation, ReconstructionError, Verb};
use crate::imagine::DynamicsModel;
use crate::policy::prompt::obs_ref;
use crate::policy::{Policy, PolicyError, ProposalRequest, ReflectionRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub reflection: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            reflection: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("dynamics model failed: {0}")]
    Dynamics(#[from] ReconstructionError),
    #[error("imagination horizon must be at least 1")]
    ZeroHorizon,
}

/// What happened inside one planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTrace {
    /// Imagined actions, one per imagined observation.
    pub plan: Vec<Action>,
    /// Observations predicted after each plan action.
    pub imagined: Vec<Observation>,
    pub chosen: Action,
}

impl PlanTrace {
    /// The imagined observation the reflection looked at.
    pub fn future(&self) -> Option<&Observation> {
        self.imagined.last()
    }

    pub fn overridden(&self) -> bool {
        self.plan.first() != Some(&self.chosen)
    }

    /// Compact form for trajectory logs.
    pub fn to_log(&self) -> serde_json::Value {
        serde_json::json!({
            "plan": self.plan.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            "imagined": self.imagined.iter().map(obs_ref).collect::<Vec<_>>(),
            "chosen": self.chosen.to_string(),
        })
    }
}

/// One step of reflective planning from the live observation `obs`.
///
/// Imagination stops early after an imagined `done`; that action and its
/// predicted observation are still part of the plan.
pub fn plan_step<P, D>(
    policy: &mut P,
    dynamics: &D,
    goal: &Observation,
    obs: &Observation,
    cfg: &PlannerConfig,
) -> Result<(Action, PlanTrace), PlanError>
where
    P: Policy + ?Sized,
    D: DynamicsModel + ?Sized,
{
    if cfg.horizon == 0 {
        return Err(PlanError::ZeroHorizon);
    }
    let first = policy.propose(&ProposalRequest::new(goal, obs), 1)?.first();
    if !cfg.reflection {
        return Ok((
            first,
            PlanTrace {
                plan: vec![first],
                imagined: Vec::new(),
                chosen: first,
            },
        ));
    }

    let mut plan = Vec::with_capacity(cfg.horizon);
    let mut imagined: Vec<Observation> = Vec::with_capacity(cfg.horizon);
    let mut action = first;
    loop {
        let from = imagined.last().unwrap_or(obs);
        let next = dynamics.predict(from, &action)?;
        plan.push(action);
        imagined.push(next);
        if plan.len() == cfg.horizon || action.verb == Verb::Done {
            break;
        }
        let cur = imagined.last().expect("just pushed");
        action = policy.propose(&ProposalRequest::new(goal, cur), 1)?.first();
    }

    let req = ReflectionRequest {
        goal: goal.clone(),
        current: obs.clone(),
        future: imagined.last().expect("horizon >= 1").clone(),
        plan: plan.clone(),
        history: obs.history.clone(),
    };
    let chosen = policy.reflect(&req)?;
    Ok((
        chosen,
        PlanTrace {
            plan,
            imagined,
            chosen,
        },
    ))
}
