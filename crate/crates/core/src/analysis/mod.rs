//! Metrics over collected datasets: URL depth histograms, shortest-path node
//! depth, success rate by depth, per-template visit differences and task
//! categories.

mod categories;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};

pub use categories::{
    categorize_tasks, match_category, KeywordClassifier, LlmClassifier, TaskCategoryDistribution, TaskClassifier, UNCLASSIFIED,
};

use crate::datastore::{GraphSnapshot, TaskRecord, TrajectoryRecord};
use crate::explorer::SiteGraph;
use crate::types::{normalize_goal, Trajectory};
use crate::urls::{match_template, url_path_depth, CanonicalUrl, UrlTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthMode {
    /// Deepest URL reached at any step.
    #[default]
    Max,
    /// Depth of the URL the trajectory ended on.
    Final,
}

/// Deepest URL path depth reached over the trajectory's steps.
pub fn max_path_depth(t: &Trajectory) -> usize {
    path_depth(t, DepthMode::Max)
}

pub fn path_depth(t: &Trajectory, mode: DepthMode) -> usize {
    match mode {
        DepthMode::Max => t
            .steps
            .iter()
            .map(|s| url_path_depth(&s.url_after))
            .max()
            .unwrap_or_else(|| url_path_depth(&t.start_url)),
        DepthMode::Final => url_path_depth(&t.final_url),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSubset {
    All,
    #[serde(rename = "only_A_success")]
    OnlyASuccess,
    #[serde(rename = "only_B_success")]
    OnlyBSuccess,
}

impl fmt::Display for DepthSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthSubset::All => "all",
            DepthSubset::OnlyASuccess => "only_A_success",
            DepthSubset::OnlyBSuccess => "only_B_success",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthReport {
    pub subset: DepthSubset,
    /// Depth to number of trajectories.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn depth_histogram<'a>(ts: impl IntoIterator<Item = &'a Trajectory>, mode: DepthMode) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for t in ts {
        *h.entry(path_depth(t, mode)).or_default() += 1;
    }
    h
}

/// Histogram over every trajectory of `a`; with `b`, also over the
/// successes of each dataset whose goal never succeeded in the other.
pub fn depth_reports(a: &[TrajectoryRecord], b: Option<&[TrajectoryRecord]>, mode: DepthMode) -> Vec<DepthReport> {
    let mut out = vec![DepthReport {
        subset: DepthSubset::All,
        histogram: depth_histogram(a.iter().map(|r| &r.trajectory), mode),
    }];
    if let Some(b) = b {
        let solved = |rs: &[TrajectoryRecord]| -> HashSet<String> {
            rs.iter()
                .filter(|r| r.trajectory.is_success())
                .map(|r| normalize_goal(&r.trajectory.goal))
                .collect()
        };
        let (sa, sb) = (solved(a), solved(b));
        let only = |rs: &'_ [TrajectoryRecord], other: &HashSet<String>| -> BTreeMap<usize, usize> {
            depth_histogram(
                rs.iter()
                    .map(|r| &r.trajectory)
                    .filter(|t| t.is_success() && !other.contains(&normalize_goal(&t.goal))),
                mode,
            )
        };
        out.push(DepthReport {
            subset: DepthSubset::OnlyASuccess,
            histogram: only(a, &sb),
        });
        out.push(DepthReport {
            subset: DepthSubset::OnlyBSuccess,
            histogram: only(b, &sa),
        });
    }
    out
}

/// Shortest distances from `root` over directed weighted edges. Unreachable
/// nodes are left out.
pub fn shortest_distances<N: Ord + Clone>(root: &N, edges: &[(N, N, u64)]) -> BTreeMap<N, u64> {
    let mut adj: BTreeMap<&N, Vec<(&N, u64)>> = BTreeMap::new();
    for (a, b, w) in edges {
        adj.entry(a).or_default().push((b, *w));
    }
    let mut dist: BTreeMap<N, u64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u64, root.clone())));
    while let Some(Reverse((d, n))) = heap.pop() {
        if dist.contains_key(&n) {
            continue;
        }
        dist.insert(n.clone(), d);
        for (m, w) in adj.get(&n).into_iter().flatten() {
            if !dist.contains_key(*m) {
                heap.push(Reverse((d + w, (*m).clone())));
            }
        }
    }
    dist
}

/// Fewest steps needed to reach each node from the root, with each edge
/// weighted by its trajectory's step count.
pub fn node_depths(graph: &SiteGraph) -> BTreeMap<CanonicalUrl, u64> {
    let edges: Vec<_> = graph
        .edges()
        .iter()
        .map(|e| (e.from.clone(), e.to.clone(), e.weight as u64))
        .collect();
    shortest_distances(&graph.root, &edges)
}

/// `node_depths` for every snapshot, keyed by site.
pub fn site_depths(snapshots: &[GraphSnapshot]) -> BTreeMap<String, BTreeMap<CanonicalUrl, u64>> {
    snapshots
        .iter()
        .map(|s| (s.site_id.clone(), node_depths(&SiteGraph::from_snapshot(s))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupBy {
    #[default]
    Prefixed,
    Sampler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DepthBucket {
    Depth(u64),
    /// Depth at or beyond the cap.
    Overflow(u64),
    Unknown,
}

impl DepthBucket {
    pub fn of(depth: Option<u64>, max_bucket: u64) -> Self {
        match depth {
            None => DepthBucket::Unknown,
            Some(d) if d >= max_bucket => DepthBucket::Overflow(max_bucket),
            Some(d) => DepthBucket::Depth(d),
        }
    }
}

impl fmt::Display for DepthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthBucket::Depth(d) => write!(f, "{d}"),
            DepthBucket::Overflow(d) => write!(f, "{d}+"),
            DepthBucket::Unknown => f.write_str("unknown"),
        }
    }
}

impl Serialize for DepthBucket {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub bucket: DepthBucket,
    pub group: String,
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

/// Success rate per depth bucket and group. A task's depth is the
/// shortest-path depth of the page it was proposed on; tasks whose page or
/// record is missing land in the unknown bucket.
pub fn success_rate_by_depth(
    records: &[TrajectoryRecord],
    tasks: &[TaskRecord],
    depths: &BTreeMap<String, BTreeMap<CanonicalUrl, u64>>,
    group_by: GroupBy,
    max_bucket: u64,
) -> Vec<RateRow> {
    let source: BTreeMap<&str, &TaskRecord> = tasks.iter().map(|t| (t.task.id.as_str(), t)).collect();
    let mut cells: BTreeMap<(DepthBucket, String), (usize, usize)> = BTreeMap::new();
    for r in records {
        let depth = source
            .get(r.trajectory.task_id.as_str())
            .and_then(|t| depths.get(&t.site_id)?.get(&t.task.source_url))
            .copied();
        let group = match group_by {
            GroupBy::Prefixed if r.trajectory.prefixed => "prefixed".to_string(),
            GroupBy::Prefixed => "unprefixed".to_string(),
            GroupBy::Sampler => r.trajectory.sampler.clone(),
        };
        let cell = cells.entry((DepthBucket::of(depth, max_bucket), group)).or_default();
        cell.0 += usize::from(r.trajectory.is_success());
        cell.1 += 1;
    }
    cells
        .into_iter()
        .map(|((bucket, group), (successes, total))| RateRow {
            bucket,
            group,
            successes,
            total,
            rate: successes as f64 / total as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisitCounting {
    /// A template counts once per trajectory that reaches it.
    #[default]
    PerTrajectory,
    /// Every step landing on the template counts.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VisitDiffRow {
    pub template: String,
    pub visits_a: usize,
    pub visits_b: usize,
    pub diff: i64,
    pub depth: usize,
}

fn count_visits(
    records: &[TrajectoryRecord],
    templates: &[UrlTemplate],
    counting: VisitCounting,
) -> BTreeMap<UrlTemplate, usize> {
    let mut counts = BTreeMap::new();
    for r in records.iter().filter(|r| r.trajectory.is_success()) {
        let mut seen = BTreeSet::new();
        for step in &r.trajectory.steps {
            let t = match_template(&step.url_after, templates)
                .cloned()
                .unwrap_or_else(|| UrlTemplate::literal(&step.url_after));
            if counting == VisitCounting::PerStep || seen.insert(t.clone()) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    counts
}

/// Success-trajectory visits per URL template in two datasets. URLs no
/// template matches count under their literal path. Rows come as the
/// `top_k` largest positive differences, then the `top_k` largest negative
/// ones, then up to `top_k` ties.
pub fn visit_diff(
    a: &[TrajectoryRecord],
    b: &[TrajectoryRecord],
    templates: &[UrlTemplate],
    top_k: usize,
    counting: VisitCounting,
) -> Vec<VisitDiffRow> {
    let ca = count_visits(a, templates, counting);
    let cb = count_visits(b, templates, counting);
    let keys: BTreeSet<&UrlTemplate> = ca.keys().chain(cb.keys()).collect();
    let rows: Vec<VisitDiffRow> = keys
        .into_iter()
        .map(|t| {
            let (va, vb) = (ca.get(t).copied().unwrap_or(0), cb.get(t).copied().unwrap_or(0));
            VisitDiffRow {
                template: t.to_string(),
                visits_a: va,
                visits_b: vb,
                diff: va as i64 - vb as i64,
                depth: t.depth(),
            }
        })
        .collect();
    let pick = |keep: &dyn Fn(i64) -> bool| {
        let mut v: Vec<VisitDiffRow> = rows.iter().filter(|r| keep(r.diff)).cloned().collect();
        v.sort_by(|x, y| y.diff.abs().cmp(&x.diff.abs()).then_with(|| x.template.cmp(&y.template)));
        v.truncate(top_k);
        v
    };
    let mut out = pick(&|d| d > 0);
    out.extend(pick(&|d| d < 0));
    out.extend(pick(&|d| d == 0));
    out
}

/// One row of the plot-ready long-format output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub metric: String,
    pub series: String,
    pub x: String,
    pub y: f64,
}

pub fn depth_long_rows(reports: &[DepthReport]) -> Vec<LongRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.histogram.iter().map(|(d, n)| LongRow {
                metric: "trajectories_by_max_depth".into(),
                series: r.subset.to_string(),
                x: d.to_string(),
                y: *n as f64,
            })
        })
        .collect()
}

pub fn rate_long_rows(rows: &[RateRow]) -> Vec<LongRow> {
    rows.iter()
        .map(|r| LongRow {
            metric: "success_rate".into(),
            series: r.group.clone(),
            x: r.bucket.to_string(),
            y: r.rate,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRow {
    pub subset: DepthSubset,
    pub depth: usize,
    pub trajectories: usize,
}

pub fn depth_rows(reports: &[DepthReport]) -> Vec<DepthRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.histogram.iter().map(|(d, n)| DepthRow {
                subset: r.subset,
                depth: *d,
                trajectories: *n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDepthRow {
    pub site_id: String,
    pub url: String,
    pub depth: u64,
}

/// Writes rows as comma-separated text with a header line.
pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
