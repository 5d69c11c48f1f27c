//! Tasks, observations and trajectories shared by every module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::urls::CanonicalUrl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    InformationSeeking,
    SiteNavigation,
    ContentModification,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::InformationSeeking,
        TaskKind::SiteNavigation,
        TaskKind::ContentModification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::InformationSeeking => "information_seeking",
            TaskKind::SiteNavigation => "site_navigation",
            TaskKind::ContentModification => "content_modification",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "information_seeking" | "info" | "information" => Ok(TaskKind::InformationSeeking),
            "site_navigation" | "navigation" | "nav" => Ok(TaskKind::SiteNavigation),
            "content_modification" | "modification" | "edit" => Ok(TaskKind::ContentModification),
            _ => Err(format!("unknown task kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposer {
    NavExplorer,
    PageExplorer,
    Labeler,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub goal: String,
    pub kind: TaskKind,
    pub source_url: CanonicalUrl,
    pub proposer: Proposer,
}

/// Dedup key for goals: case-folded with whitespace runs collapsed.
pub fn normalize_goal(goal: &str) -> String {
    goal.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub goal: String,
    pub url: CanonicalUrl,
    pub axtree: String,
    pub action_history: Vec<String>,
    pub last_action_error: Option<String>,
    /// Reserved; the simulated environment does not capture HTML.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html: Option<String>,
    /// Reserved; the simulated environment does not capture screenshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub observation: Observation,
    pub thought: String,
    pub action: Action,
    pub action_error: Option<String>,
    pub url_after: CanonicalUrl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    TerminalAction,
    Horizon,
    EnvironmentError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub task_id: String,
    pub goal: String,
    pub start_url: CanonicalUrl,
    pub steps: Vec<StepRecord>,
    /// 0 or 1 once scored.
    pub reward: Option<u8>,
    pub sampler: String,
    pub prefixed: bool,
    pub terminated_by: TerminatedBy,
    pub final_url: CanonicalUrl,
    /// Environment variables at termination, for state checkers.
    #[serde(default)]
    pub final_state: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn is_success(&self) -> bool {
        self.reward == Some(1)
    }

    /// Text of the last `send_msg_to_user`, if any.
    pub fn final_message(&self) -> Option<&str> {
        self.steps.iter().rev().find_map(|s| match &s.action {
            Action::SendMsgToUser { text } => Some(text.as_str()),
            _ => None,
        })
    }

    pub fn visited_urls(&self) -> impl Iterator<Item = &CanonicalUrl> {
        std::iter::once(&self.start_url).chain(self.steps.iter().map(|s| &s.url_after))
    }

    pub fn rendered_actions(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.action.render()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_normalization() {
        assert_eq!(normalize_goal("  Go to   the\tOrders page "), "go to the orders page");
        assert_eq!(normalize_goal("GO TO THE ORDERS PAGE"), normalize_goal("go to the orders page"));
    }

    #[test]
    fn task_kind_parsing() {
        assert_eq!("Information seeking".parse::<TaskKind>().unwrap(), TaskKind::InformationSeeking);
        assert_eq!("site-navigation".parse::<TaskKind>().unwrap(), TaskKind::SiteNavigation);
        assert_eq!("content_modification".parse::<TaskKind>().unwrap(), TaskKind::ContentModification);
        assert!("shopping".parse::<TaskKind>().is_err());
    }
}
