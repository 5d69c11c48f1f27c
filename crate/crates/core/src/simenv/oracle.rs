//! Ground-truth knowledge derived from a [`SiteSpec`]: link reachability,
//! shortest click paths and the mapping from goal text to a checker and a
//! solving plan. Scripted oracle policies and the ground-truth reward are built
//! on this.

use std::collections::{BTreeSet, HashMap, VecDeque};

use super::spec::{substitute, Checker, SiteSpec};
use crate::action::Action;
use crate::types::TaskKind;
use crate::urls::{CanonicalUrl, UrlTemplate};

/// Canonical wording of a navigation goal towards a page title.
pub fn nav_goal(title: &str) -> String {
    format!("Navigate to the \"{title}\" page")
}

fn nav_goal_title(goal: &str) -> Option<&str> {
    goal.trim()
        .strip_prefix("Navigate to the \"")
        .and_then(|r| r.strip_suffix("\" page"))
}

/// A goal resolved against the site.
#[derive(Debug, Clone)]
pub struct ResolvedGoal {
    pub kind: TaskKind,
    pub checker: Checker,
    /// Page the plan must reach before running `solution`.
    pub page: CanonicalUrl,
    pub solution: Vec<Action>,
}

pub struct SiteOracle<'a> {
    site: &'a SiteSpec,
}

impl<'a> SiteOracle<'a> {
    pub fn new(site: &'a SiteSpec) -> Self {
        SiteOracle { site }
    }

    /// Link targets reachable by a single click from `url`, in element order,
    /// paired with the element id.
    pub fn out_links(&self, url: &CanonicalUrl) -> Vec<(String, CanonicalUrl)> {
        let Some(page) = self.site.resolve(url) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for el in &page.spec().elements {
            if !el.is_plain_navigation() {
                continue;
            }
            let target = substitute(el.target.as_deref().expect("plain navigation has target"), &page.vars);
            let Ok(dest) = url.join(&target) else { continue };
            if self.site.is_sink(&dest) || self.site.resolve(&dest).is_none() {
                continue;
            }
            out.push((el.id.clone(), dest));
        }
        out
    }

    /// Every URL reachable from the root by clicking links, in BFS order.
    pub fn reachable_urls(&self) -> Vec<CanonicalUrl> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::from([self.site.root_url.clone()]);
        seen.insert(self.site.root_url.clone());
        while let Some(url) = queue.pop_front() {
            order.push(url.clone());
            for (_, next) in self.out_links(&url) {
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
        order
    }

    /// Shortest sequence of clicks from `from` to `to`, or `None` when `to`
    /// cannot be reached by links.
    pub fn click_path(&self, from: &CanonicalUrl, to: &CanonicalUrl) -> Option<Vec<Action>> {
        if from == to {
            return Some(Vec::new());
        }
        let mut prev: HashMap<CanonicalUrl, (CanonicalUrl, String)> = HashMap::new();
        let mut queue = VecDeque::from([from.clone()]);
        let mut seen = BTreeSet::from([from.clone()]);
        while let Some(url) = queue.pop_front() {
            for (elem, next) in self.out_links(&url) {
                if !seen.insert(next.clone()) {
                    continue;
                }
                prev.insert(next.clone(), (url.clone(), elem));
                if next == *to {
                    let mut path = Vec::new();
                    let mut cur = next;
                    while let Some((p, elem)) = prev.get(&cur) {
                        path.push(Action::Click { elem: elem.clone() });
                        cur = p.clone();
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(next);
            }
        }
        None
    }

    fn page_by_title(&self, title: &str) -> Option<CanonicalUrl> {
        self.reachable_urls()
            .into_iter()
            .find(|u| self.site.page_title(u).as_deref() == Some(title))
    }

    /// Resolves either a declared ground-truth goal or a navigation goal.
    pub fn resolve_goal(&self, goal: &str) -> Option<ResolvedGoal> {
        if let Some(task) = self.site.ground_truth_for_goal(goal) {
            return Some(ResolvedGoal {
                kind: task.kind,
                checker: task.checker.clone(),
                page: task.page.clone(),
                solution: task.solution.clone(),
            });
        }
        let title = nav_goal_title(goal)?;
        let page = self.page_by_title(title)?;
        Some(ResolvedGoal {
            kind: TaskKind::SiteNavigation,
            checker: Checker::FinalUrlMatches(UrlTemplate::literal(&page)),
            solution: vec![Action::SendMsgToUser {
                text: format!("I have finished navigating to the {title} page."),
            }],
            page,
        })
    }

    /// Full action plan for `goal` starting at `from`.
    pub fn plan(&self, goal: &str, from: &CanonicalUrl) -> Option<Vec<Action>> {
        let resolved = self.resolve_goal(goal)?;
        let mut path = self.click_path(from, &resolved.page)?;
        path.extend(resolved.solution);
        Some(path)
    }

    /// Navigation goals for every page linked from `url`, deduplicated.
    pub fn nav_goals_from(&self, url: &CanonicalUrl) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (_, dest) in self.out_links(url) {
            if dest == *url {
                continue;
            }
            if let Some(title) = self.site.page_title(&dest) {
                let goal = nav_goal(&title);
                if seen.insert(goal.clone()) {
                    out.push(goal);
                }
            }
        }
        out
    }

    /// Ground-truth tasks local to `url`, tagged with their kind, e.g.
    /// `[information_seeking] What is ...`.
    pub fn local_tasks_at(&self, url: &CanonicalUrl) -> Vec<String> {
        self.site
            .ground_truth_tasks
            .iter()
            .filter(|t| t.page == *url)
            .map(|t| format!("[{}] {}", t.kind, t.goal))
            .collect()
    }
}
