use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{build_prompt, nav_explorer_goal, page_explorer_goal, parse_action};
use crate::action::{action_space_doc, Action, ActionParseError};
use crate::llm::{complete, ChatProvider, ChatRequest, LlmError};
use crate::simenv::{SiteOracle, SiteSpec};
use crate::types::Observation;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Parse(#[from] ActionParseError),
    #[error(transparent)]
    Provider(#[from] LlmError),
}

#[derive(Debug, Clone)]
pub struct EpisodeInfo {
    pub goal: String,
    pub seed: u64,
    pub explorer_actions: bool,
}

pub trait AgentPolicy: Send {
    /// Sampler identity recorded on trajectories.
    fn id(&self) -> &str;
    fn begin_episode(&mut self, _info: &EpisodeInfo) {}
    fn act(&mut self, obs: &Observation) -> Result<(String, Action), AgentError>;
}

const GAVE_UP: &str = "I am unable to make further progress on this task.";

fn give_up() -> (String, Action) {
    (
        "I am stuck and will stop here.".to_string(),
        Action::ReportInfeasible {
            reason: GAVE_UP.to_string(),
        },
    )
}

/// Plays back a fixed action list, then idles. With `failure_prob > 0`, each
/// step independently gives up with that probability.
pub struct ScriptedAgent {
    id: String,
    script: Vec<Action>,
    failure_prob: f64,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ScriptedAgent {
    pub fn new(id: &str, script: Vec<Action>, failure_prob: f64) -> Self {
        ScriptedAgent {
            id: id.to_string(),
            script,
            failure_prob,
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl AgentPolicy for ScriptedAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn begin_episode(&mut self, info: &EpisodeInfo) {
        self.pos = 0;
        self.rng = ChaCha8Rng::seed_from_u64(info.seed);
    }

    fn act(&mut self, _obs: &Observation) -> Result<(String, Action), AgentError> {
        if self.failure_prob > 0.0 && self.rng.gen::<f64>() < self.failure_prob {
            return Ok(give_up());
        }
        let action = self.script.get(self.pos).cloned().unwrap_or(Action::Noop { wait_ms: 1000 });
        self.pos += 1;
        Ok((format!("Script step {}.", self.pos), action))
    }
}

/// Solves goals with full knowledge of the site. Explorer goals are answered
/// with navigation goals for the pages linked from the current page, plus the
/// declared tasks local to it for the page explorer goal.
///
/// Each step first draws `u ~ U[0,1)` from a generator seeded with the
/// episode seed and gives up when `u < failure_prob`.
pub struct OraclePolicy {
    id: String,
    site: Arc<SiteSpec>,
    failure_prob: f64,
    goal: String,
    plan: Option<std::vec::IntoIter<Action>>,
    rng: ChaCha8Rng,
}

impl OraclePolicy {
    pub fn new(id: &str, site: Arc<SiteSpec>, failure_prob: f64) -> Self {
        OraclePolicy {
            id: id.to_string(),
            site,
            failure_prob,
            goal: String::new(),
            plan: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    fn make_plan(&self, obs: &Observation) -> Vec<Action> {
        let oracle = SiteOracle::new(&self.site);
        let proposals = if self.goal == nav_explorer_goal() {
            Some(oracle.nav_goals_from(&obs.url))
        } else if self.goal == page_explorer_goal() {
            let mut tasks = oracle.local_tasks_at(&obs.url);
            tasks.extend(oracle.nav_goals_from(&obs.url).into_iter().map(|g| format!("[site_navigation] {g}")));
            Some(tasks)
        } else {
            None
        };
        if let Some(tasks) = proposals {
            let mut plan = Vec::new();
            if !tasks.is_empty() {
                plan.push(Action::AddTasksToDataset { tasks });
            }
            plan.push(Action::SendMsgToUser {
                text: "I have finished exploring this page.".into(),
            });
            return plan;
        }
        oracle.plan(&self.goal, &obs.url).unwrap_or_else(|| {
            vec![Action::ReportInfeasible {
                reason: "This task cannot be completed on this website.".into(),
            }]
        })
    }
}

impl AgentPolicy for OraclePolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn begin_episode(&mut self, info: &EpisodeInfo) {
        self.goal = info.goal.clone();
        self.plan = None;
        self.rng = ChaCha8Rng::seed_from_u64(info.seed);
    }

    fn act(&mut self, obs: &Observation) -> Result<(String, Action), AgentError> {
        if self.failure_prob > 0.0 && self.rng.gen::<f64>() < self.failure_prob {
            return Ok(give_up());
        }
        if self.plan.is_none() {
            self.plan = Some(self.make_plan(obs).into_iter());
        }
        let next = self.plan.as_mut().expect("set above").next();
        Ok(match next {
            Some(a) => (format!("Following the known route: {}.", a.render()), a),
            None => ("Nothing left to do.".to_string(), Action::Noop { wait_ms: 1000 }),
        })
    }
}

/// Gives up immediately on every episode.
pub struct FailPolicy {
    id: String,
}

impl FailPolicy {
    pub fn new(id: &str) -> Self {
        FailPolicy { id: id.to_string() }
    }
}

impl AgentPolicy for FailPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn act(&mut self, _obs: &Observation) -> Result<(String, Action), AgentError> {
        Ok(give_up())
    }
}

/// Clicks a uniformly chosen link or button each step and never terminates.
pub struct RandomWalkPolicy {
    id: String,
    rng: ChaCha8Rng,
}

impl RandomWalkPolicy {
    pub fn new(id: &str) -> Self {
        RandomWalkPolicy {
            id: id.to_string(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// Element ids of links and buttons in a rendered axtree.
pub(crate) fn clickable_ids(axtree: &str) -> Vec<&str> {
    axtree
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix('[')?;
            let (id, tail) = rest.split_once("] ")?;
            (tail.starts_with("link ") || tail.starts_with("button ")).then_some(id)
        })
        .collect()
}

impl AgentPolicy for RandomWalkPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn begin_episode(&mut self, info: &EpisodeInfo) {
        self.rng = ChaCha8Rng::seed_from_u64(info.seed);
    }

    fn act(&mut self, obs: &Observation) -> Result<(String, Action), AgentError> {
        let ids = clickable_ids(&obs.axtree);
        if ids.is_empty() {
            return Ok(("Nothing to click, going back.".into(), Action::GoBack));
        }
        let elem = ids[self.rng.gen_range(0..ids.len())].to_string();
        Ok(("Trying a random element.".into(), Action::Click { elem }))
    }
}

/// Prompted model policy.
pub struct LlmAgent {
    id: String,
    provider: Arc<dyn ChatProvider>,
    model: String,
    temperature: f64,
    max_tokens: u32,
    explorer_actions: bool,
}

impl LlmAgent {
    pub fn new(id: &str, provider: Arc<dyn ChatProvider>, model: &str, temperature: f64, max_tokens: u32) -> Self {
        LlmAgent {
            id: id.to_string(),
            provider,
            model: model.to_string(),
            temperature,
            max_tokens,
            explorer_actions: false,
        }
    }
}

impl AgentPolicy for LlmAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn begin_episode(&mut self, info: &EpisodeInfo) {
        self.explorer_actions = info.explorer_actions;
    }

    fn act(&mut self, obs: &Observation) -> Result<(String, Action), AgentError> {
        let prompt = build_prompt(obs, &action_space_doc(self.explorer_actions));
        let mut req = ChatRequest::user(&self.model, prompt, self.temperature);
        req.max_tokens = self.max_tokens;
        let text = complete(self.provider.as_ref(), &req)?;
        Ok(parse_action(&text)?)
    }
}

type CustomFactory = dyn Fn(&Arc<SiteSpec>) -> Box<dyn AgentPolicy> + Send + Sync;

#[derive(Clone)]
pub enum PolicyKind {
    Oracle { failure_prob: f64 },
    Scripted { script: Vec<Action>, failure_prob: f64 },
    Fail,
    RandomWalk,
    Llm {
        provider: Arc<dyn ChatProvider>,
        model: String,
        temperature: f64,
        max_tokens: u32,
    },
    Custom(Arc<CustomFactory>),
}

/// Named recipe for building per-worker policy instances.
#[derive(Clone)]
pub struct PolicyFactory {
    pub id: String,
    pub kind: PolicyKind,
}

impl fmt::Debug for PolicyFactory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            PolicyKind::Oracle { .. } => "oracle",
            PolicyKind::Scripted { .. } => "scripted",
            PolicyKind::Fail => "fail",
            PolicyKind::RandomWalk => "random_walk",
            PolicyKind::Llm { .. } => "llm",
            PolicyKind::Custom(_) => "custom",
        };
        write!(f, "PolicyFactory({}, {kind})", self.id)
    }
}

impl PolicyFactory {
    pub fn new(id: &str, kind: PolicyKind) -> Self {
        PolicyFactory { id: id.to_string(), kind }
    }

    pub fn oracle(id: &str) -> Self {
        Self::new(id, PolicyKind::Oracle { failure_prob: 0.0 })
    }

    pub fn custom<F>(id: &str, f: F) -> Self
    where
        F: Fn(&Arc<SiteSpec>) -> Box<dyn AgentPolicy> + Send + Sync + 'static,
    {
        Self::new(id, PolicyKind::Custom(Arc::new(f)))
    }

    pub fn create(&self, site: &Arc<SiteSpec>) -> Box<dyn AgentPolicy> {
        match &self.kind {
            PolicyKind::Oracle { failure_prob } => Box::new(OraclePolicy::new(&self.id, site.clone(), *failure_prob)),
            PolicyKind::Scripted { script, failure_prob } => {
                Box::new(ScriptedAgent::new(&self.id, script.clone(), *failure_prob))
            }
            PolicyKind::Fail => Box::new(FailPolicy::new(&self.id)),
            PolicyKind::RandomWalk => Box::new(RandomWalkPolicy::new(&self.id)),
            PolicyKind::Llm {
                provider,
                model,
                temperature,
                max_tokens,
            } => Box::new(LlmAgent::new(&self.id, provider.clone(), model, *temperature, *max_tokens)),
            PolicyKind::Custom(f) => f(site),
        }
    }
}
