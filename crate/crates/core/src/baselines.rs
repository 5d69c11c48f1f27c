//! Reference exploration strategies to compare against graph exploration:
//! interaction-first (browse, then label in hindsight) and instruction-first
//! (propose from the root, then solve).

use std::collections::BTreeSet;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{derive_seed, rollout, PolicyFactory, RolloutConfig};
use crate::datastore::{
    DataError, DatasetRecord, DatasetWriter, ExplorerRolloutRecord, Phase, TaskRecord, TaskStatus, TrajectoryRecord,
};
use crate::explorer::{build_pool, page_explore, run_jobs};
use crate::llm::{complete, ChatProvider, ChatRequest, LlmError};
use crate::reward::{score, GroundTruthReward, RewardBinding, RewardModel};
use crate::simenv::{nav_goal, replay_actions, SiteOracle, SiteSpec};
use crate::types::{Proposer, Task, TaskKind, Trajectory};
use crate::urls::CanonicalUrl;

/// Default goal handed to the interaction-first browsing policy.
pub const DEFAULT_EXPLORATION_GOAL: &str =
    "You are a curious first-time visitor. Browse this website and get to know what it offers.";

/// A task claimed in hindsight for the prefix `steps[..=end_step]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub goal: String,
    pub end_step: usize,
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
}

fn default_kind() -> TaskKind {
    TaskKind::InformationSeeking
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error("labeler reply has no task list")]
    Unparseable,
}

pub trait Labeler: Send + Sync {
    fn id(&self) -> &str;
    fn label(&self, trajectory: &Trajectory) -> Result<Vec<Label>, LabelError>;
}

/// Emits a fixed goal the first time a trajectory reaches a URL.
pub struct ScriptedLabeler {
    rules: Vec<(CanonicalUrl, String)>,
}

impl ScriptedLabeler {
    pub fn new(rules: Vec<(CanonicalUrl, String)>) -> Self {
        ScriptedLabeler { rules }
    }

    /// A navigation goal for every declared page with a title.
    pub fn nav_goals(site: &SiteSpec) -> Self {
        let rules = site
            .declared_urls()
            .into_iter()
            .filter_map(|u| site.page_title(&u).map(|t| (u, nav_goal(&t))))
            .collect();
        ScriptedLabeler { rules }
    }
}

impl Labeler for ScriptedLabeler {
    fn id(&self) -> &str {
        "scripted"
    }

    fn label(&self, trajectory: &Trajectory) -> Result<Vec<Label>, LabelError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for step in &trajectory.steps {
            if step.url_after == trajectory.start_url || !seen.insert(&step.url_after) {
                continue;
            }
            if let Some((_, goal)) = self.rules.iter().find(|(u, _)| *u == step.url_after) {
                out.push(Label {
                    goal: goal.clone(),
                    end_step: step.index,
                    kind: TaskKind::SiteNavigation,
                });
            }
        }
        Ok(out)
    }
}

const LABEL_PROMPT: &str = "\
Below is a browsing session on a website, one numbered step per line with the action taken and the page it led to.

{steps}

Write the tasks a user could have been trying to accomplish with some prefix of this session. \
Answer with a JSON list of objects with keys \"goal\" (the task, as an instruction), \"end_step\" \
(the number of the step that completes it) and \"kind\" (one of information_seeking, site_navigation, content_modification).";

/// Labels sessions with a language model.
pub struct LlmLabeler {
    provider: Arc<dyn ChatProvider>,
    model: String,
    temperature: f64,
}

impl LlmLabeler {
    pub fn new(provider: Arc<dyn ChatProvider>, model: &str, temperature: f64) -> Self {
        LlmLabeler {
            provider,
            model: model.to_string(),
            temperature,
        }
    }

    pub fn request(&self, trajectory: &Trajectory) -> ChatRequest {
        let steps: Vec<String> = trajectory
            .steps
            .iter()
            .map(|s| format!("{}. {} -> {}", s.index, s.action.render(), s.url_after))
            .collect();
        ChatRequest::user(&self.model, LABEL_PROMPT.replace("{steps}", &steps.join("\n")), self.temperature)
    }
}

/// Pulls the first JSON list of labels out of a reply, dropping entries that
/// point past the session or have an empty goal.
pub fn parse_labels(reply: &str, n_steps: usize) -> Result<Vec<Label>, LabelError> {
    for (i, _) in reply.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<Vec<Label>>();
        if let Some(Ok(labels)) = stream.next() {
            return Ok(labels
                .into_iter()
                .filter(|l| !l.goal.trim().is_empty() && l.end_step < n_steps)
                .collect());
        }
    }
    Err(LabelError::Unparseable)
}

impl Labeler for LlmLabeler {
    fn id(&self) -> &str {
        "llm"
    }

    fn label(&self, trajectory: &Trajectory) -> Result<Vec<Label>, LabelError> {
        if trajectory.steps.is_empty() {
            return Ok(Vec::new());
        }
        let reply = complete(self.provider.as_ref(), &self.request(trajectory))?;
        parse_labels(&reply, trajectory.steps.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionFirstConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub exploration_goal: String,
    /// Keep the labeler's claim of success instead of re-scoring labels the
    /// site can check.
    pub trust_labels: bool,
    pub seed: u64,
    pub workers: usize,
    pub deterministic: bool,
}

impl Default for InteractionFirstConfig {
    fn default() -> Self {
        InteractionFirstConfig {
            episodes: 10,
            horizon: 10,
            exploration_goal: DEFAULT_EXPLORATION_GOAL.to_string(),
            trust_labels: false,
            seed: 0,
            workers: 4,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructionFirstConfig {
    /// Steps the proposer gets on the root page.
    pub proposer_steps: usize,
    pub horizon: usize,
    pub samples_per_task: usize,
    pub seed: u64,
    pub workers: usize,
    pub deterministic: bool,
}

impl Default for InstructionFirstConfig {
    fn default() -> Self {
        InstructionFirstConfig {
            proposer_steps: 1,
            horizon: 10,
            samples_per_task: 4,
            seed: 0,
            workers: 4,
            deterministic: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BaselineSummary {
    pub episodes: usize,
    pub failed_episodes: usize,
    pub tasks: usize,
    pub trajectories: usize,
    pub success_trajectories: usize,
}

/// The first `end_step + 1` steps of `full`, with the end state recomputed by
/// replaying them.
fn prefix(site: &Arc<SiteSpec>, full: &Trajectory, label: &Label) -> Trajectory {
    let mut t = full.clone();
    t.steps.truncate(label.end_step + 1);
    t.goal = label.goal.clone();
    t.final_url = t.steps.last().map_or(t.start_url.clone(), |s| s.url_after.clone());
    let actions: Vec<_> = t.steps.iter().map(|s| s.action.clone()).collect();
    match replay_actions(site, &label.goal, &actions) {
        Ok(out) => t.final_state = out.state,
        Err(e) => warn!("{}: replaying prefix failed: {e}", full.id),
    }
    t
}

/// Browses from the root for `episodes` episodes and keeps every labeled
/// prefix. Each prefix is a success by the labeler's claim unless
/// `trust_labels` is off and the site can check the goal.
pub fn run_interaction_first(
    site: &Arc<SiteSpec>,
    policy: &PolicyFactory,
    labeler: &dyn Labeler,
    cfg: &InteractionFirstConfig,
    writer: &DatasetWriter,
) -> Result<BaselineSummary, BaselineError> {
    if cfg.horizon == 0 {
        return Err(BaselineError::Config("horizon must be at least 1".into()));
    }
    let pool = build_pool(cfg.workers, cfg.deterministic).map_err(BaselineError::Config)?;
    let site_id = &site.site_id;
    let episodes = run_jobs(pool.as_ref(), (0..cfg.episodes).collect(), |e| {
        let mut agent = policy.create(site);
        let mut env = crate::simenv::SimEnv::new(site.clone());
        let rc = RolloutConfig {
            horizon: cfg.horizon,
            goal: cfg.exploration_goal.clone(),
            start_url: site.root_url.clone(),
            seed: derive_seed(cfg.seed, &[site_id, "episode", &e.to_string()]),
            explorer_actions: false,
        };
        let mut t = rollout(agent.as_mut(), &mut env, &rc).trajectory;
        t.id = format!("{site_id}/if/e{e}");
        let labels = labeler.label(&t);
        (t, labels)
    });

    let checker = GroundTruthReward::new(site.clone());
    let oracle = SiteOracle::new(site);
    let mut summary = BaselineSummary {
        episodes: cfg.episodes,
        ..Default::default()
    };
    for (e, (episode, labels)) in episodes.into_iter().enumerate() {
        let labels = match labels {
            Ok(l) => l,
            Err(err) => {
                warn!("{}: labeling failed, skipping episode: {err}", episode.id);
                summary.failed_episodes += 1;
                continue;
            }
        };
        writer.append(&DatasetRecord::ExplorerRollout(ExplorerRolloutRecord {
            site_id: site_id.clone(),
            role: Proposer::Labeler,
            node_url: site.root_url.clone(),
            proposed: labels.iter().map(|l| l.goal.clone()).collect(),
            trajectory: episode.clone(),
        }))?;
        for (k, label) in labels.iter().enumerate() {
            if label.end_step >= episode.steps.len() || label.goal.trim().is_empty() {
                warn!("{}: dropping malformed label {label:?}", episode.id);
                continue;
            }
            let task = Task {
                id: format!("{site_id}/if/e{e}/l{k}"),
                goal: label.goal.clone(),
                kind: label.kind,
                source_url: site.root_url.clone(),
                proposer: Proposer::Labeler,
            };
            let mut t = prefix(site, &episode, label);
            t.id = format!("{}/traj", task.id);
            t.task_id = task.id.clone();
            let checkable = !cfg.trust_labels && oracle.resolve_goal(&label.goal).is_some();
            if checkable {
                score(&checker, &mut t, None);
            } else {
                t.reward = Some(1);
            }
            writer.append(&DatasetRecord::Task(TaskRecord {
                site_id: site_id.clone(),
                status: TaskStatus::Unverified,
                task,
            }))?;
            summary.tasks += 1;
            summary.trajectories += 1;
            summary.success_trajectories += usize::from(t.is_success());
            writer.append(&DatasetRecord::Trajectory(TrajectoryRecord {
                site_id: site_id.clone(),
                phase: Phase::InteractionFirst,
                sample_index: 0,
                trajectory: t,
            }))?;
        }
    }
    info!("[{site_id}] interaction-first: {} labeled pairs", summary.trajectories);
    Ok(summary)
}

/// Proposes tasks on the root page, samples `samples_per_task` rollouts of
/// each from the root and keeps only the successful ones.
pub fn run_instruction_first(
    site: &Arc<SiteSpec>,
    proposer: &PolicyFactory,
    policy: &PolicyFactory,
    reward: &RewardBinding,
    cfg: &InstructionFirstConfig,
    writer: &DatasetWriter,
) -> Result<BaselineSummary, BaselineError> {
    if cfg.horizon == 0 || cfg.proposer_steps == 0 {
        return Err(BaselineError::Config("horizon and proposer_steps must be at least 1".into()));
    }
    let pool = build_pool(cfg.workers, cfg.deterministic).map_err(BaselineError::Config)?;
    let site_id = &site.site_id;
    let reward: Arc<dyn RewardModel> = reward.for_site(site);
    let root = &site.root_url;
    let mut proposal = page_explore(site, root, proposer, cfg.proposer_steps, cfg.seed, &format!("{site_id}/instr"));
    for (k, t) in proposal.tasks.iter_mut().enumerate() {
        t.id = format!("{site_id}/instr/t{k}");
    }
    writer.append(&DatasetRecord::ExplorerRollout(ExplorerRolloutRecord {
        site_id: site_id.clone(),
        role: proposal.role,
        node_url: root.clone(),
        proposed: proposal.tasks.iter().map(|t| t.goal.clone()).collect(),
        trajectory: proposal.trajectory.clone(),
    }))?;

    let jobs: Vec<(&Task, usize)> = proposal
        .tasks
        .iter()
        .flat_map(|t| (0..cfg.samples_per_task).map(move |i| (t, i)))
        .collect();
    let results = run_jobs(pool.as_ref(), jobs, |(task, i)| {
        let mut agent = policy.create(site);
        let mut env = crate::simenv::SimEnv::new(site.clone());
        let rc = RolloutConfig {
            horizon: cfg.horizon,
            goal: task.goal.clone(),
            start_url: root.clone(),
            seed: derive_seed(cfg.seed, &[site_id, &task.id, &policy.id, &i.to_string()]),
            explorer_actions: false,
        };
        let result = rollout(agent.as_mut(), &mut env, &rc);
        let mut t = result.trajectory;
        t.id = format!("{}/{}/s{i}", task.id, policy.id);
        t.task_id = task.id.clone();
        score(reward.as_ref(), &mut t, result.final_observation.as_ref());
        (task, i, t)
    });

    let mut summary = BaselineSummary {
        episodes: results.len(),
        ..Default::default()
    };
    let mut written: BTreeSet<&str> = BTreeSet::new();
    for (task, i, t) in results {
        summary.trajectories += 1;
        if !t.is_success() {
            continue;
        }
        summary.success_trajectories += 1;
        if written.insert(&task.id) {
            writer.append(&DatasetRecord::Task(TaskRecord {
                site_id: site_id.clone(),
                status: TaskStatus::Feasible,
                task: task.clone(),
            }))?;
            summary.tasks += 1;
        }
        writer.append(&DatasetRecord::Trajectory(TrajectoryRecord {
            site_id: site_id.clone(),
            phase: Phase::InstructionFirst,
            sample_index: i,
            trajectory: t,
        }))?;
    }
    info!(
        "[{site_id}] instruction-first: {} of {} rollouts kept",
        summary.success_trajectories, summary.trajectories
    );
    Ok(summary)
}

#[cfg(test)]
mod tests;
