use std::sync::Arc;

use super::*;
use crate::action::Action;
use crate::types::{Observation, StepRecord, TaskKind, TerminatedBy};
use crate::urls::canonicalize_url;

fn url(p: &str) -> CanonicalUrl {
    canonicalize_url(&format!("http://t.local{p}")).unwrap()
}

pub(crate) fn task(id: &str, goal: &str) -> DatasetRecord {
    DatasetRecord::Task(TaskRecord {
        site_id: "t".into(),
        status: TaskStatus::Feasible,
        task: Task {
            id: id.into(),
            goal: goal.into(),
            kind: TaskKind::InformationSeeking,
            source_url: url("/"),
            proposer: Proposer::PageExplorer,
        },
    })
}

pub(crate) fn trajectory(id: &str, task_id: &str, goal: &str, sampler: &str, steps: usize, reward: u8) -> DatasetRecord {
    let steps = (0..steps)
        .map(|i| StepRecord {
            index: i,
            observation: Observation {
                goal: goal.into(),
                url: url("/"),
                axtree: format!("RootWebArea \"Page {i}\"\n[1] link \"Next\""),
                action_history: (0..i).map(|_| "click('1')".to_string()).collect(),
                last_action_error: None,
                html: None,
                screenshot: None,
            },
            thought: format!("step {i}"),
            action: Action::Click { elem: "1".into() },
            action_error: None,
            url_after: url("/"),
        })
        .collect();
    DatasetRecord::Trajectory(TrajectoryRecord {
        site_id: "t".into(),
        phase: Phase::Solver,
        sample_index: 0,
        trajectory: Trajectory {
            id: id.into(),
            task_id: task_id.into(),
            goal: goal.into(),
            start_url: url("/"),
            steps,
            reward: Some(reward),
            sampler: sampler.into(),
            prefixed: true,
            terminated_by: TerminatedBy::Horizon,
            final_url: url("/"),
            final_state: [("k".to_string(), "v".to_string())].into(),
            error: None,
        },
    })
}

#[test]
fn append_round_trip_preserves_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let w = DatasetWriter::create(&path).unwrap();
    let records = vec![
        DatasetRecord::RunManifest(RunHeader {
            id: "run".into(),
            run_kind: "explore".into(),
            config_digest: "abc".into(),
            seed: 7,
            deterministic: true,
        }),
        task("t1", "Find the price"),
        trajectory("j1", "t1", "Find the price", "a", 3, 1),
        DatasetRecord::GraphSnapshot(GraphSnapshot {
            id: "graph:t".into(),
            site_id: "t".into(),
            root: url("/"),
            nodes: vec![url("/"), url("/a")],
            explored: vec![url("/")],
            edges: vec![GraphEdge {
                from: url("/"),
                to: url("/a"),
                trajectory_id: "j1".into(),
                weight: 1,
            }],
        }),
    ];
    for r in &records {
        w.append(r).unwrap();
    }
    let manifest = w.finish(ManifestInfo::default()).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), records);
    assert_eq!(manifest.records["trajectory"], 1);
    assert!(manifest_path(&path).exists());
    assert!(!partial_path(&path).exists());
}

#[test]
fn integrity_violations() {
    let dir = tempfile::tempdir().unwrap();
    let w = DatasetWriter::create(&dir.path().join("d.jsonl")).unwrap();
    assert!(matches!(
        w.append(&trajectory("j1", "missing", "g", "a", 1, 1)),
        Err(DataError::SchemaViolation(_))
    ));
    w.append(&task("t1", "g")).unwrap();
    assert!(matches!(w.append(&task("t1", "g")), Err(DataError::SchemaViolation(_))));
    assert!(matches!(w.append(&task("t2", "  ")), Err(DataError::SchemaViolation(_))));
    let mut unscored = trajectory("j2", "t1", "g", "a", 1, 1);
    if let DatasetRecord::Trajectory(t) = &mut unscored {
        t.trajectory.reward = None;
    }
    assert!(matches!(w.append(&unscored), Err(DataError::SchemaViolation(_))));
    assert_eq!(w.append(&trajectory("j3", "t1", "g", "a", 1, 0)).unwrap(), "j3");
}

#[test]
fn concurrent_appends_stay_intact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let w = Arc::new(DatasetWriter::create(&path).unwrap());
    w.append(&task("t", "shared goal")).unwrap();
    std::thread::scope(|s| {
        for worker in 0..10 {
            let w = w.clone();
            s.spawn(move || {
                for i in 0..100 {
                    let id = format!("w{worker}-{i}");
                    w.append(&trajectory(&id, "t", "shared goal", "a", 1 + i % 4, (i % 2) as u8)).unwrap();
                }
            });
        }
    });
    let w = Arc::try_unwrap(w).ok().unwrap();
    w.finish(ManifestInfo::default()).unwrap();
    let trajs = read_trajectories(&path).unwrap();
    assert_eq!(trajs.len(), 1000);
    let ids: BTreeSet<_> = trajs.iter().map(|t| t.trajectory.id.clone()).collect();
    assert_eq!(ids.len(), 1000);
    for t in &trajs {
        let i: usize = t.trajectory.id.rsplit('-').next().unwrap().parse().unwrap();
        assert_eq!(t.trajectory.steps.len(), 1 + i % 4);
    }
}

fn hand_fixture() -> Vec<TrajectoryRecord> {
    // 3 successes (2 from A, 1 from B) with 4 + 3 + 4 = 11 steps; 2 failures.
    [
        trajectory("s1", "t1", "Find the price", "A", 4, 1),
        trajectory("s2", "t2", "Open the cart", "A", 3, 1),
        trajectory("s3", "t1", "find  the PRICE", "B", 4, 1),
        trajectory("f1", "t3", "Change the name", "B", 2, 0),
        trajectory("f2", "t3", "Change the name", "A", 5, 0),
    ]
    .into_iter()
    .map(|r| match r {
        DatasetRecord::Trajectory(t) => t,
        _ => unreachable!(),
    })
    .collect()
}

#[test]
fn stats_match_hand_counts() {
    let stats = compute_stats(&hand_fixture());
    assert_eq!(stats.trajectories, Counts { success: 3, failure: 2, total: 5 });
    assert_eq!(stats.steps, Counts { success: 11, failure: 7, total: 18 });
    assert_eq!(stats.unique_tasks, 3);
    assert!((stats.sampler_shares["A"] - 66.667).abs() < 0.1);
    assert!((stats.sampler_shares["B"] - 33.333).abs() < 0.1);
    assert_eq!(compute_stats(&[]), DatasetStats::default());
}

#[test]
fn table_renders_large_counts() {
    // Realistically large counts still fit the table shape.
    let stats = DatasetStats {
        trajectories: Counts { success: 9504, failure: 17245, total: 26749 },
        steps: Counts { success: 39339, failure: 157123, total: 196462 },
        unique_tasks: 3422,
        ..Default::default()
    };
    let table = render_stats(&stats);
    assert!(table.lines().nth(1).unwrap().contains("26749"));
    assert!(table.contains("3422"));
}

#[test]
fn sft_export_counts_success_steps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let w = DatasetWriter::create(&path).unwrap();
    for t in ["t1", "t2", "t3"] {
        w.append(&task(t, t)).unwrap();
    }
    for r in hand_fixture() {
        w.append(&DatasetRecord::Trajectory(r)).unwrap();
    }
    w.finish(ManifestInfo::default()).unwrap();
    let out = dir.path().join("sft.jsonl");
    assert_eq!(export_sft(&path, &out).unwrap(), 11);
    let lines: Vec<SftExample> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].input.starts_with("# Instructions"));
    assert_eq!(crate::agent::parse_action(&lines[0].target).unwrap().1, Action::Click { elem: "1".into() });

    let failures = dir.path().join("f.jsonl");
    let w = DatasetWriter::create(&failures).unwrap();
    w.append(&task("t", "g")).unwrap();
    w.append(&trajectory("f", "t", "g", "a", 3, 0)).unwrap();
    w.finish(ManifestInfo::default()).unwrap();
    assert_eq!(export_sft(&failures, &dir.path().join("none.jsonl")).unwrap(), 0);
}

#[test]
fn malformed_lines_report_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"record\":\"nope\"}\n").unwrap();
    match read_dataset(&path) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
}
