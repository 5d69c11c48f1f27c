//! Frontier-driven site exploration: pop a page, propose tasks there, keep
//! the feasible ones, sample solver trajectories and grow the graph from
//! every page the feasibility attempts reached.

mod graph;
mod stages;

use std::collections::HashSet;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Frontier, FrontierEmpty, SiteGraph};
pub use stages::{
    check_feasibility, nav_explore, page_explore, sample_solver_trajectories, solver_seed, split_kind_tag,
    Feasibility, ProposalRun,
};

use crate::agent::PolicyFactory;
use crate::datastore::{
    DataError, DatasetRecord, DatasetWriter, ExplorerRolloutRecord, Phase, SiteSummary, TaskRecord,
    TaskStatus, TrajectoryRecord,
};
use crate::reward::RewardBinding;
use crate::simenv::SiteSpec;
use crate::types::{normalize_goal, Task, TaskKind, Trajectory};
use crate::urls::CanonicalUrl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscoveryMode {
    /// Every URL any feasibility attempt visited.
    #[default]
    AllVisited,
    /// Only the final URL of successful feasibility attempts.
    SuccessFinalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub max_pages_per_site: usize,
    pub feasibility_max_tries: usize,
    pub max_feasible_tasks_per_url: usize,
    pub solver_horizon: usize,
    pub prefixed_samples: usize,
    pub unprefixed_samples: usize,
    pub nav_explorer_steps: usize,
    /// `(policy id, step budget)` per page-explorer proposer.
    pub page_explorer_step_budgets: Vec<(String, usize)>,
    pub collection_temperature: f64,
    pub seed: u64,
    pub discovery_mode: DiscoveryMode,
    /// Worker threads for trajectory sampling.
    pub workers: usize,
    /// Run every job on the calling thread.
    pub deterministic: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_pages_per_site: 20,
            feasibility_max_tries: 3,
            max_feasible_tasks_per_url: 30,
            solver_horizon: 10,
            prefixed_samples: 2,
            unprefixed_samples: 2,
            nav_explorer_steps: 15,
            page_explorer_step_budgets: vec![("page_explorer_a".into(), 20), ("page_explorer_b".into(), 10)],
            collection_temperature: crate::llm::COLLECTION_TEMPERATURE,
            seed: 0,
            discovery_mode: DiscoveryMode::AllVisited,
            workers: 4,
            deterministic: false,
        }
    }
}

/// Policies and reward bound to each exploration role.
#[derive(Clone)]
pub struct Modules {
    pub nav_explorer: PolicyFactory,
    /// Looked up by id from `page_explorer_step_budgets`.
    pub page_explorers: Vec<PolicyFactory>,
    pub feasibility_checker: PolicyFactory,
    pub solvers: Vec<PolicyFactory>,
    pub reward: RewardBinding,
}

impl Modules {
    /// Oracle policies for every role, scored against ground truth.
    pub fn oracle(cfg: &ExploreConfig) -> Self {
        Modules {
            nav_explorer: PolicyFactory::oracle("nav_explorer"),
            page_explorers: cfg
                .page_explorer_step_budgets
                .iter()
                .map(|(id, _)| PolicyFactory::oracle(id))
                .collect(),
            feasibility_checker: PolicyFactory::oracle("feasibility_checker"),
            solvers: vec![PolicyFactory::oracle("solver")],
            reward: RewardBinding::GroundTruth,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-site result of a run.
#[derive(Debug, Clone)]
pub struct SiteRun {
    pub site_id: String,
    pub graph: SiteGraph,
    pub explored: Vec<CanonicalUrl>,
    pub summary: SiteSummary,
}

/// Runs `f` over `jobs`, in parallel unless `pool` is `None`. Results keep
/// job order either way.
pub(crate) fn run_jobs<T, R, F>(pool: Option<&rayon::ThreadPool>, jobs: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match pool {
        Some(pool) if jobs.len() > 1 => pool.install(|| jobs.into_par_iter().map(&f).collect()),
        _ => jobs.into_iter().map(f).collect(),
    }
}

pub(crate) fn build_pool(workers: usize, deterministic: bool) -> Result<Option<rayon::ThreadPool>, String> {
    if deterministic || workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| e.to_string())
}

fn validate(cfg: &ExploreConfig, modules: &Modules) -> Result<(), ExploreError> {
    if cfg.solver_horizon == 0 {
        return Err(ExploreError::Config("solver_horizon must be at least 1".into()));
    }
    if cfg.nav_explorer_steps == 0 {
        return Err(ExploreError::Config("nav_explorer_steps must be at least 1".into()));
    }
    for (id, steps) in &cfg.page_explorer_step_budgets {
        if *steps == 0 {
            return Err(ExploreError::Config(format!("page explorer `{id}` has a zero step budget")));
        }
        if !modules.page_explorers.iter().any(|p| p.id == *id) {
            return Err(ExploreError::Config(format!("page explorer `{id}` is not bound to a policy")));
        }
    }
    if !(0.0..=2.0).contains(&cfg.collection_temperature) {
        return Err(ExploreError::Config("collection_temperature must be in [0, 2]".into()));
    }
    Ok(())
}

/// Explores every site in turn, appending records to `writer`.
pub fn run_exploration(
    sites: &[Arc<SiteSpec>],
    modules: &Modules,
    cfg: &ExploreConfig,
    writer: &DatasetWriter,
) -> Result<Vec<SiteRun>, ExploreError> {
    validate(cfg, modules)?;
    let pool = build_pool(cfg.workers, cfg.deterministic).map_err(ExploreError::Config)?;
    sites
        .iter()
        .map(|site| explore_site(site, modules, cfg, writer, pool.as_ref()))
        .collect()
}

fn explore_site(
    site: &Arc<SiteSpec>,
    modules: &Modules,
    cfg: &ExploreConfig,
    writer: &DatasetWriter,
    pool: Option<&rayon::ThreadPool>,
) -> Result<SiteRun, ExploreError> {
    let site_id = site.site_id.clone();
    let reward = modules.reward.for_site(site);
    let mut graph = SiteGraph::new(site.root_url.clone());
    let mut frontier = Frontier::new();
    frontier.push(site.root_url.clone());
    let mut explored = Vec::new();
    let mut seen_goals: HashSet<String> = HashSet::new();
    let mut summary = SiteSummary {
        site_id: site_id.clone(),
        ..Default::default()
    };

    while explored.len() < cfg.max_pages_per_site {
        let Ok(node) = frontier.select_and_remove() else { break };
        let node_index = explored.len();
        explored.push(node.clone());
        info!("[{site_id}] exploring node {node_index}: {node}");

        // Proposals from every explorer role, run as independent jobs.
        let mut proposal_jobs: Vec<(String, &PolicyFactory, usize, bool)> =
            vec![("nav".into(), &modules.nav_explorer, cfg.nav_explorer_steps, true)];
        for (k, (id, steps)) in cfg.page_explorer_step_budgets.iter().enumerate() {
            let policy = modules.page_explorers.iter().find(|p| p.id == *id).expect("validated");
            proposal_jobs.push((format!("page{k}"), policy, *steps, false));
        }
        let runs = run_jobs(pool, proposal_jobs, |(label, policy, steps, is_nav)| {
            let id = format!("{site_id}/n{node_index}/{label}");
            if is_nav {
                nav_explore(site, &node, policy, steps, cfg.seed, &id)
            } else {
                page_explore(site, &node, policy, steps, cfg.seed, &id)
            }
        });

        let mut candidates: Vec<Task> = Vec::new();
        for run in runs {
            for task in &run.tasks {
                if seen_goals.insert(normalize_goal(&task.goal)) {
                    let mut task = task.clone();
                    task.id = format!("{site_id}/n{node_index}/t{}", candidates.len());
                    candidates.push(task);
                }
            }
            writer.append(&DatasetRecord::ExplorerRollout(ExplorerRolloutRecord {
                site_id: site_id.clone(),
                role: run.role,
                node_url: node.clone(),
                proposed: run.tasks.iter().map(|t| t.goal.clone()).collect(),
                trajectory: run.trajectory,
            }))?;
        }
        // Navigation tasks are checked first: they are what grows the frontier.
        candidates.sort_by_key(|t| t.kind != TaskKind::SiteNavigation);
        summary.tasks_proposed += candidates.len();

        let mut feasible: Vec<Task> = Vec::new();
        let mut next = 0;
        while feasible.len() < cfg.max_feasible_tasks_per_url && next < candidates.len() {
            let room = cfg.max_feasible_tasks_per_url - feasible.len();
            let batch: Vec<&Task> = candidates[next..].iter().take(room).collect();
            next += batch.len();
            let results = run_jobs(pool, batch, |task| {
                let f = check_feasibility(site, task, &node, &modules.feasibility_checker, reward.as_ref(), cfg);
                (task, f)
            });
            for (task, result) in results {
                let status = if result.feasible { TaskStatus::Feasible } else { TaskStatus::Infeasible };
                append_task(writer, &site_id, task, status)?;
                for (attempt, traj) in result.trajectories.iter().enumerate() {
                    add_edges(&mut graph, &mut frontier, &node, traj, cfg.discovery_mode);
                    append_trajectory(writer, &site_id, Phase::Feasibility, attempt, traj, &mut summary)?;
                }
                if result.feasible {
                    feasible.push(task.clone());
                }
            }
        }
        for task in &candidates[next..] {
            append_task(writer, &site_id, task, TaskStatus::Unchecked)?;
        }
        summary.tasks_feasible += feasible.len();

        let solved = run_jobs(pool, feasible.iter().collect(), |task| {
            sample_solver_trajectories(site, task, &graph.root, &modules.solvers, reward.as_ref(), cfg)
        });
        for trajectories in solved {
            for (i, traj) in trajectories.iter().enumerate() {
                append_trajectory(writer, &site_id, Phase::Solver, i, traj, &mut summary)?;
            }
        }
    }
    if !frontier.is_empty() {
        info!("[{site_id}] page budget reached with {} page(s) left in the frontier", frontier.len());
    }

    summary.nodes_discovered = graph.nodes().len();
    summary.nodes_explored = explored.len();
    writer.append(&DatasetRecord::GraphSnapshot(graph.snapshot(&site_id, &explored)))?;
    Ok(SiteRun {
        site_id,
        graph,
        explored,
        summary,
    })
}

fn append_task(writer: &DatasetWriter, site_id: &str, task: &Task, status: TaskStatus) -> Result<(), DataError> {
    writer
        .append(&DatasetRecord::Task(TaskRecord {
            site_id: site_id.to_string(),
            status,
            task: task.clone(),
        }))
        .map(drop)
}

fn append_trajectory(
    writer: &DatasetWriter,
    site_id: &str,
    phase: Phase,
    sample_index: usize,
    traj: &Trajectory,
    summary: &mut SiteSummary,
) -> Result<(), DataError> {
    summary.trajectories += 1;
    if traj.is_success() {
        summary.success_trajectories += 1;
    }
    writer
        .append(&DatasetRecord::Trajectory(TrajectoryRecord {
            site_id: site_id.to_string(),
            phase,
            sample_index,
            trajectory: traj.clone(),
        }))
        .map(drop)
}

/// Adds the pages a feasibility attempt reached to the graph, queueing the
/// new ones.
fn add_edges(
    graph: &mut SiteGraph,
    frontier: &mut Frontier,
    node: &CanonicalUrl,
    traj: &Trajectory,
    mode: DiscoveryMode,
) {
    let reached: Vec<(CanonicalUrl, usize)> = match mode {
        DiscoveryMode::AllVisited => {
            let mut seen = HashSet::new();
            traj.steps
                .iter()
                .filter(|s| s.url_after != *node && seen.insert(s.url_after.clone()))
                .map(|s| (s.url_after.clone(), s.index + 1))
                .collect()
        }
        DiscoveryMode::SuccessFinalOnly if traj.is_success() && traj.final_url != *node => {
            let first = traj.steps.iter().position(|s| s.url_after == traj.final_url).unwrap_or(0);
            vec![(traj.final_url.clone(), first + 1)]
        }
        DiscoveryMode::SuccessFinalOnly => Vec::new(),
    };
    for (url, weight) in reached {
        if graph.add_edge(node.clone(), url.clone(), traj.id.clone(), weight) && !frontier.push(url.clone()) {
            warn!("{url} was new to the graph but already queued once");
        }
    }
}
