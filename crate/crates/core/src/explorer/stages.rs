use std::collections::HashSet;
use std::sync::Arc;

use log::warn;

use super::{ExploreConfig, SiteGraph};
use crate::action::Action;
use crate::agent::{derive_seed, nav_explorer_goal, page_explorer_goal, rollout, PolicyFactory, RolloutConfig};
use crate::reward::{score, RewardModel};
use crate::simenv::{SimEnv, SiteSpec};
use crate::types::{normalize_goal, Proposer, Task, TaskKind, Trajectory};
use crate::urls::CanonicalUrl;

/// Tasks a proposer agent added, with its own rollout.
#[derive(Debug, Clone)]
pub struct ProposalRun {
    pub role: Proposer,
    pub tasks: Vec<Task>,
    pub trajectory: Trajectory,
}

/// Splits an optional leading `[kind]` tag off a proposed task.
pub fn split_kind_tag(text: &str) -> (Option<TaskKind>, &str) {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix('[') {
        if let Some((tag, goal)) = rest.split_once(']') {
            if let Ok(kind) = tag.parse() {
                return (Some(kind), goal.trim());
            }
        }
    }
    (None, t)
}

fn propose(
    site: &Arc<SiteSpec>,
    node: &CanonicalUrl,
    policy: &PolicyFactory,
    steps: usize,
    seed: u64,
    id: &str,
    role: Proposer,
) -> ProposalRun {
    let goal = match role {
        Proposer::NavExplorer => nav_explorer_goal(),
        _ => page_explorer_goal(),
    };
    let mut agent = policy.create(site);
    let mut env = SimEnv::new(site.clone());
    let cfg = RolloutConfig {
        horizon: steps,
        goal: goal.to_string(),
        start_url: node.clone(),
        seed: derive_seed(seed, &[&site.site_id, id]),
        explorer_actions: true,
    };
    let mut trajectory = rollout(agent.as_mut(), &mut env, &cfg).trajectory;
    trajectory.id = id.to_string();
    if let Some(e) = &trajectory.error {
        warn!("{id}: proposer rollout ended early: {e}");
    }
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for step in &trajectory.steps {
        let Action::AddTasksToDataset { tasks: proposed } = &step.action else { continue };
        for text in proposed {
            let (tag, goal) = split_kind_tag(text);
            let kind = match role {
                Proposer::NavExplorer => TaskKind::SiteNavigation,
                _ => tag.unwrap_or(TaskKind::InformationSeeking),
            };
            if goal.is_empty() || !seen.insert(normalize_goal(goal)) {
                continue;
            }
            tasks.push(Task {
                id: String::new(),
                goal: goal.to_string(),
                kind,
                source_url: node.clone(),
                proposer: role,
            });
        }
    }
    ProposalRun { role, tasks, trajectory }
}

/// Navigation tasks towards pages next to `node`. Task ids are left empty.
pub fn nav_explore(
    site: &Arc<SiteSpec>,
    node: &CanonicalUrl,
    policy: &PolicyFactory,
    steps: usize,
    seed: u64,
    id: &str,
) -> ProposalRun {
    propose(site, node, policy, steps, seed, id, Proposer::NavExplorer)
}

/// Tasks local to `node` from one page-explorer proposer. Kinds come from a
/// leading `[kind]` tag and default to information seeking.
pub fn page_explore(
    site: &Arc<SiteSpec>,
    node: &CanonicalUrl,
    policy: &PolicyFactory,
    steps: usize,
    seed: u64,
    id: &str,
) -> ProposalRun {
    propose(site, node, policy, steps, seed, id, Proposer::PageExplorer)
}

#[derive(Debug, Clone)]
pub struct Feasibility {
    pub feasible: bool,
    /// Every attempt, in order; the last one is the success when feasible.
    pub trajectories: Vec<Trajectory>,
}

impl Feasibility {
    /// URLs the attempts visited that `graph` does not know yet, in visit order.
    pub fn discovered(&self, graph: &SiteGraph) -> Vec<CanonicalUrl> {
        let mut seen = HashSet::new();
        self.trajectories
            .iter()
            .flat_map(|t| t.visited_urls())
            .filter(|u| !graph.contains(u) && seen.insert((*u).clone()))
            .cloned()
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn sample(
    site: &Arc<SiteSpec>,
    task: &Task,
    policy: &PolicyFactory,
    reward: &dyn RewardModel,
    start: &CanonicalUrl,
    horizon: usize,
    seed: u64,
    id: String,
    prefixed: bool,
) -> Trajectory {
    let mut agent = policy.create(site);
    let mut env = SimEnv::new(site.clone());
    let cfg = RolloutConfig {
        horizon,
        goal: task.goal.clone(),
        start_url: start.clone(),
        seed,
        explorer_actions: false,
    };
    let result = rollout(agent.as_mut(), &mut env, &cfg);
    let mut t = result.trajectory;
    t.id = id;
    t.task_id = task.id.clone();
    t.prefixed = prefixed;
    score(reward, &mut t, result.final_observation.as_ref());
    t
}

/// Up to `feasibility_max_tries` attempts from `node`, stopping at the first
/// success.
pub fn check_feasibility(
    site: &Arc<SiteSpec>,
    task: &Task,
    node: &CanonicalUrl,
    checker: &PolicyFactory,
    reward: &dyn RewardModel,
    cfg: &ExploreConfig,
) -> Feasibility {
    let mut trajectories = Vec::new();
    for attempt in 0..cfg.feasibility_max_tries {
        let seed = derive_seed(cfg.seed, &[&site.site_id, &task.id, "feasibility", &attempt.to_string()]);
        let id = format!("{}/check{attempt}", task.id);
        let t = sample(site, task, checker, reward, node, cfg.solver_horizon, seed, id, true);
        let ok = t.is_success();
        trajectories.push(t);
        if ok {
            return Feasibility {
                feasible: true,
                trajectories,
            };
        }
    }
    Feasibility {
        feasible: false,
        trajectories,
    }
}

/// Seed of one solver sample.
pub fn solver_seed(base: u64, site_id: &str, task_id: &str, solver_id: &str, prefixed: bool, sample: usize) -> u64 {
    let mode = if prefixed { "prefixed" } else { "unprefixed" };
    derive_seed(base, &[site_id, task_id, solver_id, mode, &sample.to_string()])
}

/// Prefixed samples start where the task was proposed, unprefixed ones at
/// the site root.
pub fn sample_solver_trajectories(
    site: &Arc<SiteSpec>,
    task: &Task,
    root: &CanonicalUrl,
    solvers: &[PolicyFactory],
    reward: &dyn RewardModel,
    cfg: &ExploreConfig,
) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for solver in solvers {
        for (prefixed, count, start) in [
            (true, cfg.prefixed_samples, &task.source_url),
            (false, cfg.unprefixed_samples, root),
        ] {
            for i in 0..count {
                let seed = solver_seed(cfg.seed, &site.site_id, &task.id, &solver.id, prefixed, i);
                let id = format!("{}/{}/{}{i}", task.id, solver.id, if prefixed { "p" } else { "u" });
                out.push(sample(site, task, solver, reward, start, cfg.solver_horizon, seed, id, prefixed));
            }
        }
    }
    out
}
