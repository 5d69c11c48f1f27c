//! Binary trajectory rewards: ground-truth checkers for simulated sites and a
//! prompted judge.

use std::sync::{Arc, OnceLock};

use regex::Regex;
use thiserror::Error;

use crate::action::Action;
use crate::llm::{complete, ChatMessage, ChatProvider, ChatRequest, ChatRole, LlmError, EVAL_TEMPERATURE};
use crate::simenv::{check, Checker, SiteOracle, SiteSpec};
use crate::types::{Observation, Trajectory};

const JUDGE_PROMPT: &str = include_str!("../prompts/judge.txt");

/// Appended after the judge prompt so the verdict can be parsed exactly.
pub const VERDICT_INSTRUCTION: &str =
    "End your answer with a final line of exactly `VERDICT: success` or `VERDICT: failure`.";

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Provider(#[from] LlmError),
}

pub trait RewardModel: Send + Sync {
    fn id(&self) -> &str;
    /// Returns 0 or 1.
    fn evaluate(&self, goal: &str, trajectory: &Trajectory, final_obs: Option<&Observation>) -> Result<u8, RewardError>;
}

fn gave_up(trajectory: &Trajectory) -> bool {
    matches!(trajectory.steps.last().map(|s| &s.action), Some(Action::ReportInfeasible { .. }))
}

/// Applies a checker to a finished trajectory. Trajectories that end by
/// declaring the task infeasible score 0.
pub fn evaluate_ground_truth(checker: &Checker, trajectory: &Trajectory, final_obs: Option<&Observation>) -> u8 {
    if gave_up(trajectory) {
        return 0;
    }
    let final_url = final_obs.map(|o| &o.url).unwrap_or(&trajectory.final_url);
    u8::from(check(checker, final_url, trajectory.final_message(), &trajectory.final_state))
}

/// Scores goals the site declares, plus navigation goals; anything else is 0.
pub struct GroundTruthReward {
    site: Arc<SiteSpec>,
}

impl GroundTruthReward {
    pub fn new(site: Arc<SiteSpec>) -> Self {
        GroundTruthReward { site }
    }
}

impl RewardModel for GroundTruthReward {
    fn id(&self) -> &str {
        "ground_truth"
    }

    fn evaluate(&self, goal: &str, trajectory: &Trajectory, final_obs: Option<&Observation>) -> Result<u8, RewardError> {
        Ok(match SiteOracle::new(&self.site).resolve_goal(goal) {
            Some(resolved) => evaluate_ground_truth(&resolved.checker, trajectory, final_obs),
            None => 0,
        })
    }
}

/// Which reward model a run uses; ground truth is built per site.
#[derive(Clone)]
pub enum RewardBinding {
    GroundTruth,
    Model(Arc<dyn RewardModel>),
}

impl RewardBinding {
    pub fn for_site(&self, site: &Arc<SiteSpec>) -> Arc<dyn RewardModel> {
        match self {
            RewardBinding::GroundTruth => Arc::new(GroundTruthReward::new(site.clone())),
            RewardBinding::Model(m) => m.clone(),
        }
    }
}

/// Scores `trajectory` in place. A failing reward model scores 0 and the
/// error is kept on the trajectory.
pub fn score(reward: &dyn RewardModel, trajectory: &mut Trajectory, final_obs: Option<&Observation>) {
    match reward.evaluate(&trajectory.goal.clone(), trajectory, final_obs) {
        Ok(r) => trajectory.reward = Some(r),
        Err(e) => {
            log::warn!("reward model {} failed on {}: {e}", reward.id(), trajectory.id);
            trajectory.reward = Some(0);
            trajectory.error.get_or_insert_with(|| e.to_string());
        }
    }
}

/// Judge prompt for a finished episode.
pub fn render_judge_prompt(goal: &str, actions: &[String], axtree: &str, screenshot: Option<&str>) -> String {
    let mut out = String::from(JUDGE_PROMPT.trim_end());
    out.push_str("\n\nUser Intent: ");
    out.push_str(goal);
    out.push_str("\n\nAction History:\n");
    out.push_str(&actions.join("\n"));
    out.push_str("\n\nThe final state of the webpage provided as an accessibility tree:\n");
    out.push_str(axtree);
    if let Some(shot) = screenshot {
        out.push_str("\n\nThe last snapshot of the web page is shown in the image.\n");
        out.push_str(shot);
    }
    out.push_str("\n\n");
    out.push_str(VERDICT_INSTRUCTION);
    out.push('\n');
    out
}

/// Maps a judge reply to 0/1. An explicit `VERDICT:` line wins (the last one
/// if repeated); otherwise the reply must mention exactly one of success or
/// failure. Anything else is 0.
pub fn parse_verdict(reply: &str) -> u8 {
    static VERDICT: OnceLock<Regex> = OnceLock::new();
    static SUCCESS: OnceLock<Regex> = OnceLock::new();
    static FAILURE: OnceLock<Regex> = OnceLock::new();
    let verdict = VERDICT.get_or_init(|| Regex::new(r"(?i)verdict\W*(success|failure)\b").expect("regex"));
    if let Some(m) = verdict.captures_iter(reply).last() {
        return u8::from(m[1].eq_ignore_ascii_case("success"));
    }
    let failure = FAILURE.get_or_init(|| {
        Regex::new(r"(?i)\b(failure|failed|fail|unsuccessful|not\s+successful|not\s+a\s+success)\b").expect("regex")
    });
    let success = SUCCESS.get_or_init(|| Regex::new(r"(?i)\b(success|successful|successfully)\b").expect("regex"));
    let says_failure = failure.is_match(reply);
    let without_failure = failure.replace_all(reply, " ");
    let says_success = success.is_match(&without_failure);
    u8::from(says_success && !says_failure)
}

pub struct JudgeReward {
    provider: Arc<dyn ChatProvider>,
    model: String,
    max_tokens: u32,
}

impl JudgeReward {
    pub fn new(provider: Arc<dyn ChatProvider>, model: &str) -> Self {
        JudgeReward {
            provider,
            model: model.to_string(),
            max_tokens: 1024,
        }
    }

    pub fn request(&self, goal: &str, trajectory: &Trajectory, final_obs: Option<&Observation>) -> ChatRequest {
        let axtree = final_obs.map(|o| o.axtree.as_str()).unwrap_or("");
        let screenshot = final_obs.and_then(|o| o.screenshot.as_deref());
        let prompt = render_judge_prompt(goal, &trajectory.rendered_actions(), axtree, screenshot);
        let mut message = ChatMessage::new(ChatRole::User, prompt);
        message.image_ref = screenshot.map(str::to_string);
        ChatRequest {
            messages: vec![message],
            temperature: EVAL_TEMPERATURE,
            max_tokens: self.max_tokens,
            model_id: self.model.clone(),
        }
    }
}

impl RewardModel for JudgeReward {
    fn id(&self) -> &str {
        "judge"
    }

    fn evaluate(&self, goal: &str, trajectory: &Trajectory, final_obs: Option<&Observation>) -> Result<u8, RewardError> {
        let reply = complete(self.provider.as_ref(), &self.request(goal, trajectory, final_obs))?;
        Ok(parse_verdict(&reply))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{rollout, OraclePolicy, RolloutConfig, ScriptedAgent};
    use crate::llm::{FnProvider, RecordReplayStore, ReplayMode};
    use crate::simenv::{fixtures, SimEnv};

    fn run(site: &Arc<SiteSpec>, goal: &str, script: Option<Vec<Action>>) -> (Trajectory, Observation) {
        let mut env = SimEnv::new(site.clone());
        let cfg = RolloutConfig {
            horizon: 10,
            goal: goal.into(),
            start_url: site.root_url.clone(),
            seed: 0,
            explorer_actions: false,
        };
        let r = match script {
            Some(s) => rollout(&mut ScriptedAgent::new("s", s, 0.0), &mut env, &cfg),
            None => rollout(&mut OraclePolicy::new("o", site.clone(), 0.0), &mut env, &cfg),
        };
        (r.trajectory, r.final_observation.unwrap())
    }

    fn actions(src: &[&str]) -> Vec<Action> {
        src.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn price_task_checks_message() {
        let site = Arc::new(fixtures::load("shop-12"));
        let reward = GroundTruthReward::new(site.clone());
        let goal = "What is the price of the Zenbook 14?";
        let (t, o) = run(&site, goal, Some(actions(&["click('1')", "click('12')", "send_msg_to_user('It is 1499 USD.')"])));
        assert_eq!(reward.evaluate(goal, &t, Some(&o)).unwrap(), 1);
        let (t, o) = run(&site, goal, Some(actions(&["click('1')", "click('12')", "send_msg_to_user('It is 1399 USD.')"])));
        assert_eq!(reward.evaluate(goal, &t, Some(&o)).unwrap(), 0);
        let (t, o) = run(&site, goal, Some(actions(&["click('1')", "click('12')", "send_msg_to_user('')"])));
        assert_eq!(reward.evaluate(goal, &t, Some(&o)).unwrap(), 0);
    }

    #[test]
    fn navigation_goal_checks_final_url() {
        let site = Arc::new(fixtures::load("shop-12"));
        let reward = GroundTruthReward::new(site.clone());
        let goal = crate::simenv::nav_goal("Order history");
        let (t, o) = run(&site, &goal, None);
        assert_eq!(reward.evaluate(&goal, &t, Some(&o)).unwrap(), 1);
        let (t, o) = run(&site, &goal, Some(actions(&["click('3')", "send_msg_to_user('done')"])));
        assert_eq!(reward.evaluate(&goal, &t, Some(&o)).unwrap(), 0);
        assert_eq!(reward.evaluate("Book a flight to Oslo", &t, Some(&o)).unwrap(), 0);
    }

    #[test]
    fn giving_up_scores_zero_even_on_target() {
        let site = Arc::new(fixtures::load("shop-12"));
        let reward = GroundTruthReward::new(site.clone());
        let goal = crate::simenv::nav_goal("Gadget Shop");
        let (t, o) = run(&site, &goal, Some(actions(&["report_infeasible('no')"])));
        assert_eq!(reward.evaluate(&goal, &t, Some(&o)).unwrap(), 0);
    }

    #[test]
    fn oracle_rollouts_score_one_on_every_fixture_task() {
        for name in ["shop-12", "forum-8", "deep-chain-6"] {
            let site = Arc::new(fixtures::load(name));
            let reward = GroundTruthReward::new(site.clone());
            for task in &site.ground_truth_tasks {
                let (t, o) = run(&site, &task.goal, None);
                assert_eq!(reward.evaluate(&task.goal, &t, Some(&o)).unwrap(), 1, "{}", task.goal);
            }
        }
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("Status: success"), 1);
        assert_eq!(parse_verdict("failure"), 0);
        assert_eq!(parse_verdict("The agent was unsuccessful."), 0);
        assert_eq!(parse_verdict("Partly a success, partly a failure."), 0);
        assert_eq!(parse_verdict("I cannot tell."), 0);
        assert_eq!(parse_verdict("Looks like a failure at first, but...\nVERDICT: success"), 1);
        assert_eq!(parse_verdict("It succeeded.\n**Verdict:** failure"), 0);
    }

    #[test]
    fn judge_prompt_golden() {
        let site = Arc::new(fixtures::load("shop-12"));
        let goal = "What is the price of the Zenbook 14?";
        let (t, o) = run(&site, goal, None);
        let provider = FnProvider(|_: &ChatRequest| Ok("VERDICT: success".to_string()));
        let judge = JudgeReward::new(Arc::new(provider), "judge-model");
        let req = judge.request(goal, &t, Some(&o));
        assert_eq!(req.temperature, 0.0);
        assert!(req.messages[0].image_ref.is_none());
        let prompt = &req.messages[0].content;
        assert!(!prompt.contains("shown in the image"));
        crate::agent::tests_support::assert_golden("judge.txt", prompt);
        assert_eq!(judge.evaluate(goal, &t, Some(&o)).unwrap(), 1);
    }

    #[test]
    fn judge_is_stable_under_replay() {
        let site = Arc::new(fixtures::load("shop-12"));
        let goal = "What is the price of the Zenbook 14?";
        let (t, o) = run(&site, goal, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judge.jsonl");
        let live = FnProvider(|r: &ChatRequest| {
            let ok = r.messages[0].content.contains("1499");
            Ok(format!("The answer is {}.\nVERDICT: {}", if ok { "right" } else { "wrong" }, if ok { "success" } else { "failure" }))
        });
        let recorder = RecordReplayStore::open(&path, ReplayMode::Record, Some(Box::new(live))).unwrap();
        let first = JudgeReward::new(Arc::new(recorder), "j").evaluate(goal, &t, Some(&o)).unwrap();
        let strict = RecordReplayStore::open(&path, ReplayMode::Strict, None).unwrap();
        let judge = JudgeReward::new(Arc::new(strict), "j");
        for _ in 0..3 {
            assert_eq!(judge.evaluate(goal, &t, Some(&o)).unwrap(), first);
        }
        assert_eq!(first, 1);
    }

    #[test]
    fn judge_propagates_provider_errors() {
        let site = Arc::new(fixtures::load("shop-12"));
        let (t, o) = run(&site, "x", None);
        let provider = FnProvider(|_: &ChatRequest| Err(LlmError::ProviderUnavailable { attempts: 3, last_error: "down".into() }));
        let judge = JudgeReward::new(Arc::new(provider), "j");
        assert!(matches!(judge.evaluate("x", &t, Some(&o)), Err(RewardError::Provider(_))));
    }
}
