//! The ReAct agent loop: prompt assembly, model-output parsing, policies and
//! episode rollout.

mod policy;

use serde_json::Value;
use sha2::{Digest, Sha256};

pub use policy::{
    AgentError, AgentPolicy, EpisodeInfo, FailPolicy, LlmAgent, OraclePolicy, PolicyFactory, PolicyKind,
    RandomWalkPolicy, ScriptedAgent,
};

use crate::action::{parse_call, Action, ActionParseError};
use crate::simenv::Environment;
use crate::types::{Observation, StepRecord, TerminatedBy, Trajectory};
use crate::urls::CanonicalUrl;

const INSTRUCTIONS: &str = include_str!("../../prompts/agent_instructions.txt");
const EXAMPLES: &str = include_str!("../../prompts/agent_examples.txt");
const NEXT_ACTION: &str = include_str!("../../prompts/agent_next_action.txt");
const NAV_EXPLORER_GOAL: &str = include_str!("../../prompts/nav_explorer_goal.txt");
const PAGE_EXPLORER_GOAL: &str = include_str!("../../prompts/page_explorer_goal.txt");

/// Goal given to the navigation-task explorer agent.
pub fn nav_explorer_goal() -> &'static str {
    NAV_EXPLORER_GOAL.trim_end()
}

/// Goal given to the page-local task explorer agent.
pub fn page_explorer_goal() -> &'static str {
    PAGE_EXPLORER_GOAL.trim_end()
}

/// Renders the full agent prompt for one step.
pub fn build_prompt(obs: &Observation, action_space_doc: &str) -> String {
    let mut out = String::new();
    let mut section = |header: &str, body: &str| {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("# ");
        out.push_str(header);
        out.push('\n');
        out.push_str(body.trim_end());
        out.push('\n');
    };
    section("Instructions", INSTRUCTIONS);
    section("Goal", &obs.goal);
    section("Action Space", &format!("{}\n\n{}", action_space_doc.trim_end(), EXAMPLES));
    section("Current Accessibility Tree", &obs.axtree);
    section("Error Message from Last Action", obs.last_action_error.as_deref().unwrap_or(""));
    section("History of Past Actions", &obs.action_history.join("\n"));
    section("Next Action", NEXT_ACTION);
    out
}

/// Extracts `(thought, action)` from the first JSON object in `output`.
pub fn parse_action(output: &str) -> Result<(String, Action), ActionParseError> {
    let document = first_json_object(output).ok_or(ActionParseError::NoDocument)?;
    let action = document
        .get("action")
        .and_then(Value::as_str)
        .ok_or(ActionParseError::MissingAction)?;
    let thought = match document.get("thought") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    Ok((thought, parse_call(action)?))
}

fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Serialized `(thought, action)` document, the inverse of [`parse_action`].
pub fn render_output(thought: &str, action: &Action) -> String {
    serde_json::json!({ "thought": thought, "action": action.render() }).to_string()
}

/// Deterministic 64-bit seed from a base seed and labels.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub goal: String,
    pub start_url: CanonicalUrl,
    pub seed: u64,
    /// Offer `add_tasks_to_dataset` to the policy.
    pub explorer_actions: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    /// Observation after the last step; `None` when reset failed.
    pub final_observation: Option<Observation>,
}

/// Runs one episode. The returned trajectory is unscored and has empty
/// `id`/`task_id`; callers fill those in.
pub fn rollout(policy: &mut dyn AgentPolicy, env: &mut dyn Environment, cfg: &RolloutConfig) -> RolloutResult {
    assert!(cfg.horizon >= 1, "horizon must be at least 1");
    let mut traj = Trajectory {
        id: String::new(),
        task_id: String::new(),
        goal: cfg.goal.clone(),
        start_url: cfg.start_url.clone(),
        steps: Vec::new(),
        reward: None,
        sampler: policy.id().to_string(),
        prefixed: false,
        terminated_by: TerminatedBy::Horizon,
        final_url: cfg.start_url.clone(),
        final_state: Default::default(),
        error: None,
    };
    let mut obs = match env.reset(&cfg.start_url, &cfg.goal) {
        Ok(o) => o,
        Err(e) => {
            traj.terminated_by = TerminatedBy::EnvironmentError;
            traj.error = Some(e.to_string());
            return RolloutResult {
                trajectory: traj,
                final_observation: None,
            };
        }
    };
    policy.begin_episode(&EpisodeInfo {
        goal: cfg.goal.clone(),
        seed: cfg.seed,
        explorer_actions: cfg.explorer_actions,
    });
    for index in 0..cfg.horizon {
        let (thought, action, parse_error) = match policy.act(&obs) {
            Ok((t, a)) => (t, a, None),
            Err(AgentError::Parse(e)) => (String::new(), Action::Noop { wait_ms: 1000 }, Some(e.to_string())),
            Err(AgentError::Provider(e)) => {
                traj.terminated_by = TerminatedBy::EnvironmentError;
                traj.error = Some(e.to_string());
                break;
            }
        };
        let outcome = match env.step(&action) {
            Ok(o) => o,
            Err(e) => {
                traj.terminated_by = TerminatedBy::EnvironmentError;
                traj.error = Some(e.to_string());
                break;
            }
        };
        let mut next = outcome.observation;
        if parse_error.is_some() {
            next.last_action_error = parse_error;
        }
        let url_after = env.current_url().expect("active episode has a url");
        debug_assert_eq!(url_after, next.url);
        let action_error = next.last_action_error.clone();
        traj.steps.push(StepRecord {
            index,
            observation: std::mem::replace(&mut obs, next),
            thought,
            action,
            action_error,
            url_after,
        });
        if outcome.terminated {
            traj.terminated_by = TerminatedBy::TerminalAction;
            break;
        }
    }
    traj.final_url = obs.url.clone();
    traj.final_state = env.state_snapshot();
    RolloutResult {
        trajectory: traj,
        final_observation: Some(obs),
    }
}
