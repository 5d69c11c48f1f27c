use std::collections::BTreeMap;
use std::path::Path;

use super::*;
use crate::action::Action;
use crate::agent::PolicyKind;
use crate::datastore::{read_dataset, ManifestInfo};
use crate::llm::FnProvider;
use crate::simenv::fixtures;
use crate::types::{StepRecord, TerminatedBy};

fn chain() -> Arc<SiteSpec> {
    Arc::new(fixtures::load("deep-chain-6"))
}

fn clicks(n: usize) -> PolicyFactory {
    let script = vec![Action::Click { elem: "1".into() }; n];
    PolicyFactory::new("walker", PolicyKind::Scripted { script, failure_prob: 0.0 })
}

fn if_cfg(episodes: usize, horizon: usize) -> InteractionFirstConfig {
    InteractionFirstConfig {
        episodes,
        horizon,
        deterministic: true,
        ..Default::default()
    }
}

fn trajectories(path: &Path) -> Vec<TrajectoryRecord> {
    read_dataset(path)
        .unwrap()
        .into_iter()
        .filter_map(|r| match r {
            DatasetRecord::Trajectory(t) => Some(t),
            _ => None,
        })
        .collect()
}

fn with_writer<R>(f: impl FnOnce(&DatasetWriter) -> R) -> (R, tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let w = DatasetWriter::create(&path).unwrap();
    let r = f(&w);
    w.finish(ManifestInfo::default()).unwrap();
    (r, dir, path)
}

#[test]
fn zero_episodes_write_nothing() {
    let s = chain();
    let labeler = ScriptedLabeler::nav_goals(&s);
    let (summary, _d, path) = with_writer(|w| run_interaction_first(&s, &clicks(2), &labeler, &if_cfg(0, 2), w).unwrap());
    assert_eq!(summary.trajectories, 0);
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn two_step_walk_gives_two_labels() {
    let s = chain();
    let labeler = ScriptedLabeler::nav_goals(&s);
    let (summary, _d, path) = with_writer(|w| run_interaction_first(&s, &clicks(2), &labeler, &if_cfg(1, 2), w).unwrap());
    assert_eq!(summary.trajectories, 2);
    let ts = trajectories(&path);
    let got: Vec<_> = ts.iter().map(|t| (t.trajectory.goal.as_str(), t.trajectory.steps.len())).collect();
    assert_eq!(
        got,
        [("Navigate to the \"Level 1\" page", 1), ("Navigate to the \"Level 2\" page", 2)]
    );
    // Both labels are checkable and true.
    assert!(ts.iter().all(|t| t.trajectory.is_success() && t.phase == Phase::InteractionFirst));
}

#[test]
fn identical_episodes_duplicate_labels() {
    let s = chain();
    let labeler = ScriptedLabeler::nav_goals(&s);
    let (_, _d, path) = with_writer(|w| run_interaction_first(&s, &clicks(2), &labeler, &if_cfg(5, 2), w).unwrap());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in trajectories(&path) {
        *counts.entry(t.trajectory.goal).or_default() += 1;
    }
    assert_eq!(counts.len(), 2);
    assert!(counts.values().all(|n| *n == 5));
}

struct WrongLabeler;

impl Labeler for WrongLabeler {
    fn id(&self) -> &str {
        "wrong"
    }
    fn label(&self, _t: &Trajectory) -> Result<Vec<Label>, LabelError> {
        Ok(vec![Label {
            goal: "Navigate to the \"Level 5\" page".into(),
            end_step: 0,
            kind: TaskKind::SiteNavigation,
        }])
    }
}

#[test]
fn rescoring_catches_false_labels_unless_trusted() {
    let s = chain();
    let (_, _d, path) = with_writer(|w| run_interaction_first(&s, &clicks(2), &WrongLabeler, &if_cfg(1, 2), w).unwrap());
    assert_eq!(trajectories(&path)[0].trajectory.reward, Some(0));
    let trusted = InteractionFirstConfig {
        trust_labels: true,
        ..if_cfg(1, 2)
    };
    let (_, _d, path) = with_writer(|w| run_interaction_first(&s, &clicks(2), &WrongLabeler, &trusted, w).unwrap());
    assert_eq!(trajectories(&path)[0].trajectory.reward, Some(1));
}

#[test]
fn prefix_state_is_replayed() {
    let s = Arc::new(fixtures::load("shop-12"));
    let script = vec![
        Action::Click { elem: "1".into() },
        Action::Click { elem: "11".into() },
        Action::Click { elem: "21".into() },
        Action::GoBack,
    ];
    let policy = PolicyFactory::new("w", PolicyKind::Scripted { script, failure_prob: 0.0 });
    let labeler = ScriptedLabeler::new(vec![("http://shop.local/catalog".parse().unwrap(), "Browse the catalog".into())]);
    let (_, _d, path) = with_writer(|w| run_interaction_first(&s, &policy, &labeler, &if_cfg(1, 4), w).unwrap());
    let t = &trajectories(&path)[0].trajectory;
    assert_eq!(t.steps.len(), 1);
    assert!(t.final_state.keys().all(|k| !k.starts_with("cart.4")), "{:?}", t.final_state);
}

#[test]
fn labeler_reply_parsing() {
    let reply = r#"Sure. [1, 2] is not it. Here: [{"goal": "Open level 1", "end_step": 0},
        {"goal": "", "end_step": 1}, {"goal": "Too far", "end_step": 9, "kind": "site_navigation"}]"#;
    let labels = parse_labels(reply, 3).unwrap();
    assert_eq!(
        labels,
        [Label {
            goal: "Open level 1".into(),
            end_step: 0,
            kind: TaskKind::InformationSeeking
        }]
    );
    assert!(matches!(parse_labels("no list", 3), Err(LabelError::Unparseable)));
}

#[test]
fn llm_labeler_failures_skip_the_episode() {
    let s = chain();
    let failing = LlmLabeler::new(
        Arc::new(FnProvider(|_r: &ChatRequest| Err(LlmError::Auth("no key".into())))),
        "m",
        0.7,
    );
    let (summary, _d, path) = with_writer(|w| run_interaction_first(&s, &clicks(2), &failing, &if_cfg(2, 2), w).unwrap());
    assert_eq!((summary.failed_episodes, summary.trajectories), (2, 0));
    assert!(trajectories(&path).is_empty());

    let ok = LlmLabeler::new(
        Arc::new(FnProvider(|_r: &ChatRequest| {
            Ok(r#"[{"goal": "Reach level two", "end_step": 1, "kind": "site_navigation"}]"#.to_string())
        })),
        "m",
        0.7,
    );
    let (summary, _d, _p) = with_writer(|w| run_interaction_first(&s, &clicks(2), &ok, &if_cfg(2, 2), w).unwrap());
    assert_eq!(summary.trajectories, 2);
}

fn if_run(s: &Arc<SiteSpec>, proposer: &PolicyFactory, horizon: usize) -> (BaselineSummary, Vec<TrajectoryRecord>) {
    let cfg = InstructionFirstConfig {
        horizon,
        deterministic: true,
        ..Default::default()
    };
    let (summary, _d, path) = with_writer(|w| {
        run_instruction_first(s, proposer, &PolicyFactory::oracle("solver"), &RewardBinding::GroundTruth, &cfg, w).unwrap()
    });
    (summary, trajectories(&path))
}

#[test]
fn instruction_first_keeps_only_successes() {
    let s = Arc::new(fixtures::load("shop-12"));
    let (summary, ts) = if_run(&s, &PolicyFactory::oracle("proposer"), 10);
    assert!(summary.tasks >= 3, "{summary:?}");
    assert!(ts.iter().all(|t| t.trajectory.is_success() && t.phase == Phase::InstructionFirst));
    assert_eq!(ts.len(), summary.success_trajectories);
}

#[test]
fn instruction_first_silent_proposer() {
    let s = chain();
    let silent = PolicyFactory::new(
        "p",
        PolicyKind::Scripted {
            script: vec![Action::SendMsgToUser { text: "none".into() }],
            failure_prob: 0.0,
        },
    );
    let (summary, ts) = if_run(&s, &silent, 10);
    assert_eq!(summary.trajectories, 0);
    assert!(ts.is_empty());
}

#[test]
fn instruction_first_drops_tasks_beyond_horizon() {
    let s = chain();
    let script = vec![Action::AddTasksToDataset {
        tasks: vec!["Navigate to the \"Level 1\" page".into(), "Navigate to the \"Level 5\" page".into()],
    }];
    let proposer = PolicyFactory::new("p", PolicyKind::Scripted { script, failure_prob: 0.0 });
    let (_, ts) = if_run(&s, &proposer, 3);
    assert!(!ts.is_empty());
    assert!(ts.iter().all(|t| t.trajectory.goal.contains("Level 1")));
}

#[test]
fn prefix_truncation() {
    let s = chain();
    let url = |p: &str| -> CanonicalUrl { format!("http://chain.local{p}").parse().unwrap() };
    let obs = crate::types::Observation {
        goal: "g".into(),
        url: url("/"),
        axtree: String::new(),
        action_history: vec![],
        last_action_error: None,
        html: None,
        screenshot: None,
    };
    let step = |i: usize, to: &str| StepRecord {
        index: i,
        observation: obs.clone(),
        thought: String::new(),
        action: Action::Click { elem: "1".into() },
        action_error: None,
        url_after: url(to),
    };
    let full = Trajectory {
        id: "x".into(),
        task_id: String::new(),
        goal: "g".into(),
        start_url: url("/"),
        steps: vec![step(0, "/a"), step(1, "/a/b"), step(2, "/a/b/c")],
        reward: None,
        sampler: "w".into(),
        prefixed: false,
        terminated_by: TerminatedBy::Horizon,
        final_url: url("/a/b/c"),
        final_state: Default::default(),
        error: None,
    };
    let label = Label {
        goal: "Navigate to the \"Level 2\" page".into(),
        end_step: 1,
        kind: TaskKind::SiteNavigation,
    };
    let p = prefix(&s, &full, &label);
    assert_eq!(p.steps.len(), 2);
    assert_eq!(p.final_url, url("/a/b"));
    assert_eq!(p.goal, label.goal);
}
