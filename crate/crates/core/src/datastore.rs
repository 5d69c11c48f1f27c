//! Newline-delimited dataset records, integrity checks, statistics and SFT
//! export. The field-level format is documented in `docs/dataset-schema.md`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::action_space_doc;
use crate::agent::{build_prompt, render_output};
use crate::types::{normalize_goal, Proposer, Task, Trajectory};
use crate::urls::CanonicalUrl;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("{path}:{line}: malformed record: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Feasible,
    Infeasible,
    /// Proposed but not checked because the per-URL feasible cap was reached.
    Unchecked,
    /// Baseline tasks, which have no feasibility stage.
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub site_id: String,
    pub status: TaskStatus,
    #[serde(flatten)]
    pub task: Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Feasibility,
    Solver,
    InstructionFirst,
    InteractionFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub site_id: String,
    pub phase: Phase,
    pub sample_index: usize,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

/// A proposer agent's own interaction, kept for inspection but excluded from
/// statistics and export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorerRolloutRecord {
    pub site_id: String,
    pub role: Proposer,
    pub node_url: CanonicalUrl,
    pub proposed: Vec<String>,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: CanonicalUrl,
    pub to: CanonicalUrl,
    pub trajectory_id: String,
    /// Steps taken before the trajectory first reached `to`.
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub id: String,
    pub site_id: String,
    pub root: CanonicalUrl,
    pub nodes: Vec<CanonicalUrl>,
    pub explored: Vec<CanonicalUrl>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub id: String,
    pub run_kind: String,
    pub config_digest: String,
    pub seed: u64,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum DatasetRecord {
    RunManifest(RunHeader),
    Task(TaskRecord),
    Trajectory(TrajectoryRecord),
    ExplorerRollout(ExplorerRolloutRecord),
    GraphSnapshot(GraphSnapshot),
}

impl DatasetRecord {
    pub fn id(&self) -> &str {
        match self {
            DatasetRecord::RunManifest(r) => &r.id,
            DatasetRecord::Task(t) => &t.task.id,
            DatasetRecord::Trajectory(t) => &t.trajectory.id,
            DatasetRecord::ExplorerRollout(r) => &r.trajectory.id,
            DatasetRecord::GraphSnapshot(g) => &g.id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DatasetRecord::RunManifest(_) => "run_manifest",
            DatasetRecord::Task(_) => "task",
            DatasetRecord::Trajectory(_) => "trajectory",
            DatasetRecord::ExplorerRollout(_) => "explorer_rollout",
            DatasetRecord::GraphSnapshot(_) => "graph_snapshot",
        }
    }
}

fn check_trajectory(t: &Trajectory, require_reward: bool) -> Result<(), DataError> {
    if require_reward && !matches!(t.reward, Some(0 | 1)) {
        return Err(DataError::SchemaViolation(format!("trajectory {} has no 0/1 reward", t.id)));
    }
    if t.steps.iter().enumerate().any(|(i, s)| s.index != i) {
        return Err(DataError::SchemaViolation(format!("trajectory {} has non-consecutive step indices", t.id)));
    }
    Ok(())
}

#[derive(Default)]
struct WriterState {
    ids: HashSet<String>,
    task_ids: HashSet<String>,
    counts: BTreeMap<String, usize>,
}

/// Appends records to `<path>.partial`; [`DatasetWriter::finish`] renames it
/// into place and writes the sidecar manifest. Safe to share across threads:
/// each record is validated and written as one line under a lock.
pub struct DatasetWriter {
    path: PathBuf,
    partial: PathBuf,
    out: Mutex<(BufWriter<File>, WriterState)>,
}

impl DatasetWriter {
    pub fn create(path: &Path) -> Result<Self, DataError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let partial = partial_path(path);
        let file = File::create(&partial).map_err(|e| io_err(&partial, e))?;
        Ok(DatasetWriter {
            path: path.to_path_buf(),
            partial,
            out: Mutex::new((BufWriter::new(file), WriterState::default())),
        })
    }

    pub fn append(&self, record: &DatasetRecord) -> Result<String, DataError> {
        let id = record.id().to_string();
        if id.is_empty() {
            return Err(DataError::SchemaViolation(format!("{} record has an empty id", record.kind())));
        }
        match record {
            DatasetRecord::Task(t) if t.task.goal.trim().is_empty() => {
                return Err(DataError::SchemaViolation(format!("task {id} has an empty goal")));
            }
            DatasetRecord::Trajectory(t) => check_trajectory(&t.trajectory, true)?,
            DatasetRecord::ExplorerRollout(r) => check_trajectory(&r.trajectory, false)?,
            _ => {}
        }
        let mut line = serde_json::to_string(record).map_err(|e| DataError::SchemaViolation(e.to_string()))?;
        line.push('\n');

        let mut guard = self.out.lock().expect("dataset writer lock");
        let (out, state) = &mut *guard;
        if let DatasetRecord::Trajectory(t) = record {
            if !state.task_ids.contains(&t.trajectory.task_id) {
                return Err(DataError::SchemaViolation(format!(
                    "trajectory {id} references unknown task `{}`",
                    t.trajectory.task_id
                )));
            }
        }
        if state.ids.contains(&id) {
            return Err(DataError::SchemaViolation(format!("duplicate record id `{id}`")));
        }
        out.write_all(line.as_bytes()).map_err(|e| io_err(&self.partial, e))?;
        state.ids.insert(id.clone());
        if let DatasetRecord::Task(_) = record {
            state.task_ids.insert(id.clone());
        }
        *state.counts.entry(record.kind().to_string()).or_default() += 1;
        Ok(id)
    }

    /// Flushes, moves the dataset into place and writes the manifest next to
    /// it. Returns the manifest.
    pub fn finish(self, info: ManifestInfo) -> Result<Manifest, DataError> {
        let (out, state) = self.out.into_inner().expect("dataset writer lock");
        let file = out.into_inner().map_err(|e| io_err(&self.partial, e.error()))?;
        file.sync_all().map_err(|e| io_err(&self.partial, e))?;
        drop(file);
        std::fs::rename(&self.partial, &self.path).map_err(|e| io_err(&self.path, e))?;
        let bytes = std::fs::read(&self.path).map_err(|e| io_err(&self.path, e))?;
        let manifest = Manifest {
            run_kind: info.run_kind,
            config_digest: info.config_digest,
            seed: info.seed,
            deterministic: info.deterministic,
            dataset_file: self
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            dataset_sha256: crate::llm::hex(&Sha256::digest(&bytes)),
            records: state.counts,
            sites: info.sites,
        };
        write_atomic(&manifest_path(&self.path), |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })?;
        Ok(manifest)
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Sidecar manifest location for a dataset file.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

/// Writes through a temporary file and renames on success.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = partial_path(path);
    let file = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| io_err(&tmp, e))?;
    w.flush().map_err(|e| io_err(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site_id: String,
    pub nodes_discovered: usize,
    pub nodes_explored: usize,
    pub tasks_proposed: usize,
    pub tasks_feasible: usize,
    pub trajectories: usize,
    pub success_trajectories: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ManifestInfo {
    pub run_kind: String,
    pub config_digest: String,
    pub seed: u64,
    pub deterministic: bool,
    pub sites: Vec<SiteSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_kind: String,
    pub config_digest: String,
    pub seed: u64,
    pub deterministic: bool,
    pub dataset_file: String,
    pub dataset_sha256: String,
    pub records: BTreeMap<String, usize>,
    pub sites: Vec<SiteSummary>,
}

/// Streams records from a dataset file.
pub fn for_each_record(path: &Path, mut f: impl FnMut(DatasetRecord)) -> Result<(), DataError> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        f(record);
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DataError> {
    let mut out = Vec::new();
    for_each_record(path, |r| out.push(r))?;
    Ok(out)
}

/// Trajectory records only, in file order.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>, DataError> {
    let mut out = Vec::new();
    for_each_record(path, |r| {
        if let DatasetRecord::Trajectory(t) = r {
            out.push(t);
        }
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub success: usize,
    pub failure: usize,
    pub total: usize,
}

impl Counts {
    fn add(&mut self, success: bool, n: usize) {
        if success {
            self.success += n;
        } else {
            self.failure += n;
        }
        self.total += n;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SiteStats {
    pub trajectories: Counts,
    pub steps: Counts,
    pub unique_tasks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub trajectories: Counts,
    pub steps: Counts,
    pub unique_tasks: usize,
    /// Percentage of successful trajectories contributed by each sampler.
    pub sampler_shares: BTreeMap<String, f64>,
    pub per_site: BTreeMap<String, SiteStats>,
}

/// Success/failure counts of trajectories and steps, unique tasks and sampler shares.
pub fn compute_stats(records: &[TrajectoryRecord]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    let mut unique: BTreeSet<(String, String)> = BTreeSet::new();
    let mut per_site_unique: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut sampler_success: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let t = &r.trajectory;
        let ok = t.is_success();
        stats.trajectories.add(ok, 1);
        stats.steps.add(ok, t.steps.len());
        let site = stats.per_site.entry(r.site_id.clone()).or_default();
        site.trajectories.add(ok, 1);
        site.steps.add(ok, t.steps.len());
        let key = normalize_goal(&t.goal);
        unique.insert((r.site_id.clone(), key.clone()));
        per_site_unique.entry(r.site_id.clone()).or_default().insert(key);
        if ok {
            *sampler_success.entry(t.sampler.clone()).or_default() += 1;
        }
    }
    stats.unique_tasks = unique.len();
    for (site, goals) in per_site_unique {
        stats.per_site.get_mut(&site).expect("site seen").unique_tasks = goals.len();
    }
    if stats.trajectories.success > 0 {
        for (sampler, n) in sampler_success {
            stats
                .sampler_shares
                .insert(sampler, 100.0 * n as f64 / stats.trajectories.success as f64);
        }
    }
    stats
}

pub fn compute_stats_file(path: &Path) -> Result<DatasetStats, DataError> {
    Ok(compute_stats(&read_trajectories(path)?))
}

/// Plain-text table in the shape of the dataset composition summary.
pub fn render_stats(stats: &DatasetStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<14}{:>10}{:>10}{:>10}\n", "", "Success", "Failure", "Total"));
    for (label, c) in [("Trajectories", stats.trajectories), ("Steps", stats.steps)] {
        out.push_str(&format!("{label:<14}{:>10}{:>10}{:>10}\n", c.success, c.failure, c.total));
    }
    out.push_str(&format!("{:<14}{:>30}\n", "Unique tasks", stats.unique_tasks));
    if !stats.sampler_shares.is_empty() {
        out.push_str("\nShare of successful trajectories by sampler\n");
        for (sampler, pct) in &stats.sampler_shares {
            out.push_str(&format!("  {sampler:<24}{pct:>6.1}%\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub input: String,
    pub target: String,
}

/// One example per step of every reward-1 trajectory.
pub fn sft_examples(records: &[TrajectoryRecord]) -> Vec<SftExample> {
    let doc = action_space_doc(false);
    records
        .iter()
        .filter(|r| r.trajectory.is_success())
        .flat_map(|r| r.trajectory.steps.iter())
        .map(|s| SftExample {
            input: build_prompt(&s.observation, &doc),
            target: render_output(&s.thought, &s.action),
        })
        .collect()
}

pub fn export_sft(dataset: &Path, destination: &Path) -> Result<usize, DataError> {
    let examples = sft_examples(&read_trajectories(dataset)?);
    write_atomic(destination, |w| {
        for ex in &examples {
            serde_json::to_writer(&mut *w, ex).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(examples.len())
}

#[cfg(test)]
mod tests;
