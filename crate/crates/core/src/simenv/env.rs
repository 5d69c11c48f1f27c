use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::spec::{field_refs, substitute, ResolvedPage, Role, SiteSpec};
use crate::action::Action;
use crate::types::Observation;
use crate::urls::CanonicalUrl;

pub const TABS_UNSUPPORTED: &str = "tabs unsupported in simulation";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("unknown url {0}")]
    UnknownUrl(String),
    #[error("no active episode")]
    EpisodeNotActive,
    #[error("environment failure: {0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub terminated: bool,
}

/// reset/step/observe contract shared by the simulator and any future
/// real-browser adapter.
pub trait Environment: Send {
    fn reset(&mut self, url: &CanonicalUrl, goal: &str) -> Result<Observation, EnvError>;
    /// Execution errors are reported through `observation.last_action_error`,
    /// never as `Err`.
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;
    fn current_url(&self) -> Option<CanonicalUrl>;
    /// Environment variables, captured for state checkers.
    fn state_snapshot(&self) -> BTreeMap<String, String>;
}

struct Episode {
    goal: String,
    history: Vec<CanonicalUrl>,
    position: usize,
    fields: BTreeMap<String, String>,
    last_filled: Option<String>,
    state: BTreeMap<String, String>,
    actions: Vec<String>,
    terminated: bool,
}

impl Episode {
    fn url(&self) -> &CanonicalUrl {
        &self.history[self.position]
    }
}

/// Deterministic simulated browser over a [`SiteSpec`]. Single tab.
pub struct SimEnv {
    site: Arc<SiteSpec>,
    episode: Option<Episode>,
}

impl SimEnv {
    pub fn new(site: Arc<SiteSpec>) -> Self {
        SimEnv { site, episode: None }
    }

    pub fn site(&self) -> &Arc<SiteSpec> {
        &self.site
    }

    fn observe(&self, error: Option<String>) -> Observation {
        let ep = self.episode.as_ref().expect("active episode");
        let page = self.site.resolve(ep.url()).expect("closed world: current url resolves");
        Observation {
            goal: ep.goal.clone(),
            url: ep.url().clone(),
            axtree: render_axtree(&page, &ep.fields, &ep.state),
            action_history: ep.actions.clone(),
            last_action_error: error,
            html: None,
            screenshot: None,
        }
    }

    fn navigate(&mut self, dest: CanonicalUrl) -> Result<(), String> {
        if self.site.is_sink(&dest) {
            return Err(format!("navigation to external site {dest} is blocked"));
        }
        if self.site.resolve(&dest).is_none() {
            return Err(format!("page not found: {dest}"));
        }
        let ep = self.episode.as_mut().expect("active episode");
        ep.history.truncate(ep.position + 1);
        ep.history.push(dest);
        ep.position += 1;
        ep.fields.clear();
        ep.last_filled = None;
        Ok(())
    }

    fn click(&mut self, elem_id: &str) -> Result<(), String> {
        let ep = self.episode.as_ref().expect("active episode");
        let current = ep.url().clone();
        let page = self.site.resolve(&current).expect("current url resolves");
        let el = page
            .spec()
            .element(elem_id)
            .ok_or_else(|| format!("element with bid '{elem_id}' not found on page"))?
            .clone();
        let vars = page.vars.clone();
        match el.role {
            Role::Link | Role::Button => {
                if !el.effects.is_empty() {
                    let mut field_vars = vars.clone();
                    for (k, v) in &ep.fields {
                        field_vars.insert(format!("field.{k}"), v.clone());
                    }
                    let mut updates = Vec::new();
                    for (var, value) in &el.effects {
                        if let Some(missing) = field_refs(value).into_iter().find(|f| !ep.fields.contains_key(f)) {
                            return Err(format!("required field '{missing}' is empty"));
                        }
                        updates.push((substitute(var, &field_vars), substitute(value, &field_vars)));
                    }
                    let ep = self.episode.as_mut().expect("active episode");
                    ep.state.extend(updates);
                }
                if let Some(target) = &el.target {
                    let ep = self.episode.as_ref().expect("active episode");
                    let mut dest = current
                        .join(&substitute(target, &vars))
                        .map_err(|e| e.to_string())?;
                    if !el.submit.is_empty() {
                        let mut query = Vec::new();
                        for field in &el.submit {
                            let spec = page.spec().element(field).expect("validated submit field");
                            let value = ep.fields.get(field).cloned().unwrap_or_default();
                            query.push((spec.param_name().to_string(), value));
                        }
                        dest = dest.with_query(query);
                    }
                    self.navigate(dest)?;
                }
                Ok(())
            }
            Role::Textbox | Role::Select | Role::StaticText => Ok(()),
        }
    }

    fn apply(&mut self, action: &Action) -> Result<bool, String> {
        match action {
            Action::Noop { .. } | Action::Scroll { .. } | Action::AddTasksToDataset { .. } => Ok(false),
            Action::Hover { elem } => {
                self.require_element(elem)?;
                Ok(false)
            }
            Action::Click { elem } => self.click(elem).map(|_| false),
            Action::Fill { elem, value } => {
                let role = self.require_element(elem)?;
                if role != Role::Textbox {
                    return Err(format!("element '{elem}' is a {} and cannot be filled", role.as_str()));
                }
                let ep = self.episode.as_mut().expect("active episode");
                ep.fields.insert(elem.clone(), value.clone());
                ep.last_filled = Some(elem.clone());
                Ok(false)
            }
            Action::SelectOption { elem, options } => {
                let page = self.site.resolve(self.episode.as_ref().expect("active").url()).expect("resolves");
                let el = page
                    .spec()
                    .element(elem)
                    .ok_or_else(|| format!("element with bid '{elem}' not found on page"))?;
                if el.role != Role::Select {
                    return Err(format!("element '{elem}' is not a select element"));
                }
                if options.is_empty() {
                    return Err("no option given".to_string());
                }
                if let Some(bad) = options.iter().find(|o| !el.options.contains(o)) {
                    return Err(format!("option '{bad}' not available in select '{elem}'"));
                }
                let ep = self.episode.as_mut().expect("active episode");
                ep.fields.insert(elem.clone(), options.join(","));
                Ok(false)
            }
            Action::KeyboardPress { key_comb } => {
                if key_comb.eq_ignore_ascii_case("enter") {
                    let ep = self.episode.as_ref().expect("active episode");
                    if let Some(field) = ep.last_filled.clone() {
                        let page = self.site.resolve(ep.url()).expect("resolves");
                        let submitter = page
                            .spec()
                            .elements
                            .iter()
                            .find(|e| e.submit.contains(&field))
                            .map(|e| e.id.clone());
                        if let Some(id) = submitter {
                            return self.click(&id).map(|_| false);
                        }
                    }
                }
                Ok(false)
            }
            Action::Goto { url } => {
                let current = self.episode.as_ref().expect("active episode").url().clone();
                let dest = current.join(url).map_err(|e| e.to_string())?;
                self.navigate(dest).map(|_| false)
            }
            Action::GoBack => {
                let ep = self.episode.as_mut().expect("active episode");
                if ep.position == 0 {
                    return Err("cannot go back: no previous page".to_string());
                }
                ep.position -= 1;
                ep.fields.clear();
                ep.last_filled = None;
                Ok(false)
            }
            Action::GoForward => {
                let ep = self.episode.as_mut().expect("active episode");
                if ep.position + 1 >= ep.history.len() {
                    return Err("cannot go forward: no next page".to_string());
                }
                ep.position += 1;
                ep.fields.clear();
                ep.last_filled = None;
                Ok(false)
            }
            Action::NewTab | Action::TabClose | Action::TabFocus { .. } => Err(TABS_UNSUPPORTED.to_string()),
            Action::SendMsgToUser { .. } | Action::ReportInfeasible { .. } => Ok(true),
        }
    }

    fn require_element(&self, elem: &str) -> Result<Role, String> {
        let ep = self.episode.as_ref().expect("active episode");
        let page = self.site.resolve(ep.url()).expect("resolves");
        page.spec()
            .element(elem)
            .map(|e| e.role)
            .ok_or_else(|| format!("element with bid '{elem}' not found on page"))
    }
}

impl Environment for SimEnv {
    fn reset(&mut self, url: &CanonicalUrl, goal: &str) -> Result<Observation, EnvError> {
        if self.site.resolve(url).is_none() {
            return Err(EnvError::UnknownUrl(url.to_string()));
        }
        self.episode = Some(Episode {
            goal: goal.to_string(),
            history: vec![url.clone()],
            position: 0,
            fields: BTreeMap::new(),
            last_filled: None,
            state: self.site.initial_state.clone(),
            actions: Vec::new(),
            terminated: false,
        });
        Ok(self.observe(None))
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        match &self.episode {
            Some(ep) if !ep.terminated => {}
            _ => return Err(EnvError::EpisodeNotActive),
        }
        let result = self.apply(action);
        let ep = self.episode.as_mut().expect("checked above");
        ep.actions.push(action.render());
        let (terminated, error) = match result {
            Ok(t) => (t, None),
            Err(e) => (false, Some(e)),
        };
        ep.terminated = terminated;
        Ok(StepOutcome {
            observation: self.observe(error),
            terminated,
        })
    }

    fn current_url(&self) -> Option<CanonicalUrl> {
        self.episode.as_ref().map(|ep| ep.url().clone())
    }

    fn state_snapshot(&self) -> BTreeMap<String, String> {
        self.episode.as_ref().map(|ep| ep.state.clone()).unwrap_or_default()
    }
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " "))
}

/// Flattened accessibility tree: a title line, page text lines, then one
/// `[id] role "label"` line per element.
pub fn render_axtree(
    page: &ResolvedPage<'_>,
    fields: &BTreeMap<String, String>,
    state: &BTreeMap<String, String>,
) -> String {
    let mut vars = page.vars.clone();
    for (k, v) in state {
        vars.insert(format!("state.{k}"), v.clone());
    }
    let spec = page.spec();
    let mut lines = vec![format!("RootWebArea {}", quoted(&substitute(&spec.title, &vars)))];
    for line in substitute(&spec.text_content, &vars).lines() {
        let line = line.trim();
        if !line.is_empty() {
            lines.push(format!("StaticText {}", quoted(line)));
        }
    }
    for el in &spec.elements {
        let mut line = format!("[{}] {} {}", el.id, el.role.as_str(), quoted(&substitute(&el.label, &vars)));
        match el.role {
            Role::Textbox => {
                line.push_str(&format!(" value={}", quoted(fields.get(&el.id).map(String::as_str).unwrap_or(""))));
            }
            Role::Select => {
                let opts: Vec<String> = el.options.iter().map(|o| quoted(o)).collect();
                line.push_str(&format!(" options=[{}]", opts.join(", ")));
                if let Some(sel) = fields.get(&el.id) {
                    line.push_str(&format!(" selected={}", quoted(sel)));
                }
            }
            _ => {}
        }
        lines.push(line);
    }
    lines.join("\n")
}
