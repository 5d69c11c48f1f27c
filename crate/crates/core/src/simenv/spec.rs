//! Declarative site specifications.
//!
//! A site is a TOML document:
//!
//! ```toml
//! site_id = "shop-12"
//! root_url = "http://shop.local/"
//! external_sinks = ["http://help.example.com/"]
//!
//! [state]                       # initial environment variables
//! "cart.count" = "0"
//!
//! [pages."/catalog/{id}"]       # exact path or template key
//! title = "{name}"
//! text = "Price: {price} USD"
//! elements = [
//!   { id = "1", role = "link", label = "Back to catalog", target = "/catalog" },
//!   { id = "2", role = "button", label = "Add to cart", effects = { "cart.{id}" = "1" } },
//! ]
//! [pages."/catalog/{id}".instances]
//! "/catalog/42" = { name = "Zenbook 14", price = "1499" }
//!
//! [[ground_truth_tasks]]
//! goal = "What is the price of the Zenbook 14?"
//! kind = "information_seeking"
//! page = "/catalog/42"
//! solution = ["send_msg_to_user('It costs 1499 USD.')"]
//! checker = { message_matches = "1499" }
//! ```
//!
//! Text fields may reference `{name}` variables from template bindings and
//! instance data, `{query.key}` from the query string, `{state.var}` from the
//! environment, and (in effects) `{field.elem}` from form fields.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::action::{parse_call, Action};
use crate::types::TaskKind;
use crate::urls::{canonicalize_url, CanonicalUrl, TemplateSegment, UrlTemplate};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("site spec parse error: {0}")]
    Parse(String),
    #[error("site spec validation error: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> SpecError {
    SpecError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Link,
    Button,
    Textbox,
    Select,
    StaticText,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Link => "link",
            Role::Button => "button",
            Role::Textbox => "textbox",
            Role::Select => "select",
            Role::StaticText => "static_text",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub id: String,
    pub role: Role,
    pub label: String,
    /// Link or button destination; may contain `{var}` references.
    #[serde(default)]
    pub target: Option<String>,
    /// Query parameter name when the field is submitted; defaults to the id.
    #[serde(default)]
    pub name: Option<String>,
    /// Field element ids whose values a button submits as the query string.
    #[serde(default)]
    pub submit: Vec<String>,
    /// Environment variables a button sets when clicked.
    #[serde(default)]
    pub effects: BTreeMap<String, String>,
    /// Choices for a select element.
    #[serde(default)]
    pub options: Vec<String>,
}

impl ElementSpec {
    pub fn param_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.id)
    }

    /// True for elements whose click navigates without needing form input.
    pub fn is_plain_navigation(&self) -> bool {
        self.target.is_some() && self.submit.is_empty() && matches!(self.role, Role::Link | Role::Button)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageSpec {
    pub title: String,
    #[serde(default, rename = "text")]
    pub text_content: String,
    #[serde(default)]
    pub elements: Vec<ElementSpec>,
    /// Allowed concrete instances of a templated page with their variables.
    /// Empty means every binding of the template resolves.
    #[serde(default)]
    pub instances: BTreeMap<String, BTreeMap<String, String>>,
}

impl PageSpec {
    pub fn element(&self, id: &str) -> Option<&ElementSpec> {
        self.elements.iter().find(|e| e.id == id)
    }
}

#[derive(Debug, Clone)]
pub enum PageKey {
    Exact(CanonicalUrl),
    Template(UrlTemplate),
}

#[derive(Debug, Clone)]
pub struct PageEntry {
    pub key: PageKey,
    pub raw_key: String,
    pub spec: PageSpec,
    /// Instance paths canonicalized against the root.
    instance_urls: Vec<(CanonicalUrl, BTreeMap<String, String>)>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct StatePredicate {
    pub var: String,
    pub equals: String,
}

#[derive(Debug, Clone)]
pub enum Checker {
    FinalUrlMatches(UrlTemplate),
    MessageMatches(Regex),
    StatePredicate(StatePredicate),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawChecker {
    FinalUrlMatches(String),
    MessageMatches(String),
    StatePredicate(StatePredicate),
}

#[derive(Debug, Clone)]
pub struct GroundTruthTask {
    pub goal: String,
    pub kind: TaskKind,
    /// Page the task is local to.
    pub page: CanonicalUrl,
    /// Actions that solve the task once on `page`.
    pub solution: Vec<Action>,
    pub checker: Checker,
    /// Solving action sequence from the root: shortest click path to `page`
    /// followed by `solution`. Filled in and replay-verified at load time.
    pub oracle_path: Option<Vec<Action>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    goal: String,
    kind: TaskKind,
    #[serde(default)]
    page: Option<String>,
    #[serde(default)]
    solution: Vec<String>,
    checker: RawChecker,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSite {
    site_id: String,
    root_url: String,
    #[serde(default)]
    external_sinks: Vec<String>,
    #[serde(default)]
    state: BTreeMap<String, String>,
    pages: BTreeMap<String, PageSpec>,
    #[serde(default)]
    ground_truth_tasks: Vec<RawTask>,
}

#[derive(Debug, Clone)]
pub struct SiteSpec {
    pub site_id: String,
    pub root_url: CanonicalUrl,
    pub external_sinks: Vec<CanonicalUrl>,
    pub initial_state: BTreeMap<String, String>,
    pages: Vec<PageEntry>,
    pub ground_truth_tasks: Vec<GroundTruthTask>,
}

/// A page resolved for a concrete URL, with its substitution variables.
#[derive(Debug, Clone)]
pub struct ResolvedPage<'a> {
    pub entry: &'a PageEntry,
    pub vars: BTreeMap<String, String>,
}

impl<'a> ResolvedPage<'a> {
    pub fn spec(&self) -> &'a PageSpec {
        &self.entry.spec
    }
}

/// Replaces `{key}` references found in `vars`; unknown references are kept.
pub fn substitute(text: &str, vars: &BTreeMap<String, String>) -> String {
    if !text.contains('{') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match vars.get(key) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn load_site_spec(document: &[u8]) -> Result<SiteSpec, SpecError> {
    let text = std::str::from_utf8(document).map_err(|e| SpecError::Parse(e.to_string()))?;
    let raw: RawSite = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
    SiteSpec::from_raw(raw)
}

pub fn load_site_spec_file(path: &std::path::Path) -> Result<SiteSpec, SpecError> {
    let bytes = std::fs::read(path).map_err(|e| SpecError::Parse(format!("{}: {e}", path.display())))?;
    load_site_spec(&bytes)
}

impl SiteSpec {
    fn from_raw(raw: RawSite) -> Result<Self, SpecError> {
        if raw.site_id.trim().is_empty() {
            return Err(invalid("site_id must be non-empty"));
        }
        let root_url = canonicalize_url(&raw.root_url).map_err(|e| invalid(e.to_string()))?;
        let external_sinks = raw
            .external_sinks
            .iter()
            .map(|s| canonicalize_url(s).map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;

        let mut exact = Vec::new();
        let mut templated = Vec::new();
        for (raw_key, spec) in raw.pages {
            if !raw_key.starts_with('/') {
                return Err(invalid(format!("page key `{raw_key}` must start with `/`")));
            }
            let template = UrlTemplate::parse(&raw_key).map_err(|e| invalid(e.to_string()))?;
            let mut seen = HashSet::new();
            for el in &spec.elements {
                if el.id.trim().is_empty() {
                    return Err(invalid(format!("page `{raw_key}` has an element with an empty id")));
                }
                if !seen.insert(el.id.as_str()) {
                    return Err(invalid(format!("duplicate element id `{}` on page `{raw_key}`", el.id)));
                }
            }
            let mut instance_urls = Vec::new();
            for (path, vars) in &spec.instances {
                let url = root_url.join(path).map_err(|e| invalid(e.to_string()))?;
                if !template.matches(&url) {
                    return Err(invalid(format!("instance `{path}` does not match page key `{raw_key}`")));
                }
                instance_urls.push((url, vars.clone()));
            }
            if template.has_placeholders() {
                templated.push(PageEntry {
                    key: PageKey::Template(template),
                    raw_key,
                    spec,
                    instance_urls,
                });
            } else {
                if !spec.instances.is_empty() {
                    return Err(invalid(format!("page `{raw_key}` has instances but no placeholders")));
                }
                let url = root_url.join(&raw_key).map_err(|e| invalid(e.to_string()))?;
                exact.push(PageEntry {
                    key: PageKey::Exact(url.without_query()),
                    raw_key,
                    spec,
                    instance_urls,
                });
            }
        }
        // More specific templates (fewer placeholders) win ties.
        templated.sort_by_key(|e| {
            let holes = match &e.key {
                PageKey::Template(t) => t
                    .segments()
                    .iter()
                    .filter(|s| matches!(s, TemplateSegment::Placeholder(_)))
                    .count(),
                PageKey::Exact(_) => 0,
            };
            (holes, e.raw_key.clone())
        });
        exact.extend(templated);

        let mut site = SiteSpec {
            site_id: raw.site_id,
            root_url,
            external_sinks,
            initial_state: raw.state,
            pages: exact,
            ground_truth_tasks: Vec::new(),
        };
        site.validate_pages()?;

        for (i, task) in raw.ground_truth_tasks.into_iter().enumerate() {
            let gt = site.build_task(task).map_err(|e| invalid(format!("ground truth task {i}: {e}")))?;
            site.ground_truth_tasks.push(gt);
        }
        site.attach_oracle_paths()?;
        Ok(site)
    }

    fn validate_pages(&self) -> Result<(), SpecError> {
        if self.resolve(&self.root_url).is_none() {
            return Err(invalid(format!("root_url {} does not resolve to a page", self.root_url)));
        }
        for entry in &self.pages {
            let ids: HashSet<&str> = entry.spec.elements.iter().map(|e| e.id.as_str()).collect();
            for el in &entry.spec.elements {
                for field in &el.submit {
                    let ok = entry
                        .spec
                        .element(field)
                        .is_some_and(|f| matches!(f.role, Role::Textbox | Role::Select));
                    if !ok {
                        return Err(invalid(format!(
                            "element `{}` on `{}` submits unknown field `{field}`",
                            el.id, entry.raw_key
                        )));
                    }
                }
                for value in el.effects.values() {
                    for field in field_refs(value) {
                        if !ids.contains(field.as_str()) {
                            return Err(invalid(format!(
                                "element `{}` on `{}` references unknown field `{field}`",
                                el.id, entry.raw_key
                            )));
                        }
                    }
                }
                if el.role == Role::Select && el.options.is_empty() {
                    return Err(invalid(format!("select `{}` on `{}` has no options", el.id, entry.raw_key)));
                }
            }
            for (url, vars) in self.sample_instances(entry) {
                for el in &entry.spec.elements {
                    let Some(target) = &el.target else { continue };
                    let dest = substitute(target, &vars);
                    let resolved = url.join(&dest).map_err(|e| invalid(e.to_string()))?;
                    if !self.is_sink(&resolved) && self.resolve(&resolved).is_none() {
                        return Err(invalid(format!(
                            "dangling link: element `{}` on `{}` targets `{dest}`",
                            el.id, entry.raw_key
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Concrete URLs and variables used to validate a page entry. Open
    /// templates are sampled with each placeholder bound to its own name.
    fn sample_instances(&self, entry: &PageEntry) -> Vec<(CanonicalUrl, BTreeMap<String, String>)> {
        match &entry.key {
            PageKey::Exact(url) => vec![(url.clone(), BTreeMap::new())],
            PageKey::Template(t) if entry.instance_urls.is_empty() => {
                let bindings: Vec<(String, String)> = t
                    .segments()
                    .iter()
                    .filter_map(|s| match s {
                        TemplateSegment::Placeholder(p) => Some((p.clone(), format!("{p}-sample"))),
                        TemplateSegment::Literal(_) => None,
                    })
                    .collect();
                match self.root_url.join(&t.instantiate(&bindings)) {
                    Ok(url) => {
                        let vars = self.resolve(&url).map(|r| r.vars).unwrap_or_default();
                        vec![(url, vars)]
                    }
                    Err(_) => Vec::new(),
                }
            }
            PageKey::Template(_) => entry
                .instance_urls
                .iter()
                .filter_map(|(url, _)| self.resolve(url).map(|r| (url.clone(), r.vars)))
                .collect(),
        }
    }

    fn build_task(&self, raw: RawTask) -> Result<GroundTruthTask, SpecError> {
        if raw.goal.trim().is_empty() {
            return Err(invalid("goal must be non-empty"));
        }
        let page = match &raw.page {
            Some(p) => self.root_url.join(p).map_err(|e| invalid(e.to_string()))?,
            None => self.root_url.clone(),
        };
        if self.resolve(&page).is_none() {
            return Err(invalid(format!("page {page} does not resolve")));
        }
        let solution = raw
            .solution
            .iter()
            .map(|s| parse_call(s).map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let checker = match raw.checker {
            RawChecker::FinalUrlMatches(t) => {
                Checker::FinalUrlMatches(UrlTemplate::parse(&t).map_err(|e| invalid(e.to_string()))?)
            }
            RawChecker::MessageMatches(re) => {
                Checker::MessageMatches(Regex::new(&re).map_err(|e| invalid(e.to_string()))?)
            }
            RawChecker::StatePredicate(p) => Checker::StatePredicate(p),
        };
        Ok(GroundTruthTask {
            goal: raw.goal,
            kind: raw.kind,
            page,
            solution,
            checker,
            oracle_path: None,
        })
    }

    fn attach_oracle_paths(&mut self) -> Result<(), SpecError> {
        let oracle = super::oracle::SiteOracle::new(self);
        let mut paths = Vec::new();
        for task in &self.ground_truth_tasks {
            let mut path = oracle
                .click_path(&self.root_url, &task.page)
                .ok_or_else(|| invalid(format!("task `{}`: page {} is unreachable from root", task.goal, task.page)))?;
            path.extend(task.solution.iter().cloned());
            paths.push(path);
        }
        for (task, path) in self.ground_truth_tasks.iter_mut().zip(paths) {
            task.oracle_path = Some(path);
        }
        // Replay every oracle path and require its checker to pass.
        let shared = std::sync::Arc::new(self.clone());
        for task in &self.ground_truth_tasks {
            let path = task.oracle_path.as_ref().expect("set above");
            let outcome = super::replay_actions(&shared, &task.goal, path)
                .map_err(|e| invalid(format!("task `{}`: oracle replay failed: {e}", task.goal)))?;
            if !check(&task.checker, &outcome.final_url, outcome.message.as_deref(), &outcome.state) {
                return Err(invalid(format!(
                    "task `{}`: oracle path does not satisfy its checker",
                    task.goal
                )));
            }
        }
        Ok(())
    }

    pub fn pages(&self) -> &[PageEntry] {
        &self.pages
    }

    pub fn is_sink(&self, url: &CanonicalUrl) -> bool {
        self.external_sinks.iter().any(|s| {
            s.same_origin(url) && url.path_segments().starts_with(s.path_segments())
        })
    }

    /// Resolves a concrete URL against the site. Query strings never affect
    /// which page is served.
    pub fn resolve(&self, url: &CanonicalUrl) -> Option<ResolvedPage<'_>> {
        if !url.same_origin(&self.root_url) {
            return None;
        }
        let bare = url.without_query();
        let mut vars = BTreeMap::new();
        for (k, v) in url.query() {
            vars.insert(format!("query.{k}"), v.clone());
        }
        for entry in &self.pages {
            match &entry.key {
                PageKey::Exact(u) if *u == bare => return Some(ResolvedPage { entry, vars }),
                PageKey::Exact(_) => {}
                PageKey::Template(t) => {
                    let Some(bindings) = t.match_url(&bare) else { continue };
                    if !entry.instance_urls.is_empty() {
                        let Some((_, data)) = entry.instance_urls.iter().find(|(u, _)| *u == bare) else {
                            continue;
                        };
                        vars.extend(data.clone());
                    }
                    vars.extend(bindings);
                    return Some(ResolvedPage { entry, vars });
                }
            }
        }
        None
    }

    pub fn page_title(&self, url: &CanonicalUrl) -> Option<String> {
        self.resolve(url).map(|r| substitute(&r.spec().title, &r.vars))
    }

    pub fn ground_truth_for_goal(&self, goal: &str) -> Option<&GroundTruthTask> {
        let key = crate::types::normalize_goal(goal);
        self.ground_truth_tasks
            .iter()
            .find(|t| crate::types::normalize_goal(&t.goal) == key)
    }

    /// Concrete instances declared for templated pages plus every exact page.
    pub fn declared_urls(&self) -> BTreeSet<CanonicalUrl> {
        let mut out = BTreeSet::new();
        for entry in &self.pages {
            match &entry.key {
                PageKey::Exact(u) => {
                    out.insert(u.clone());
                }
                PageKey::Template(_) => out.extend(entry.instance_urls.iter().map(|(u, _)| u.clone())),
            }
        }
        out
    }
}

/// `{field.ID}` references in a value template.
pub(crate) fn field_refs(value: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = value;
    while let Some(i) = rest.find("{field.") {
        let after = &rest[i + 7..];
        match after.find('}') {
            Some(j) => {
                out.push(after[..j].to_string());
                rest = &after[j + 1..];
            }
            None => break,
        }
    }
    out
}

/// Applies a checker to the data captured at the end of an episode.
pub fn check(
    checker: &Checker,
    final_url: &CanonicalUrl,
    message: Option<&str>,
    state: &BTreeMap<String, String>,
) -> bool {
    match checker {
        Checker::FinalUrlMatches(t) => t.matches(final_url),
        Checker::MessageMatches(re) => message.is_some_and(|m| !m.is_empty() && re.is_match(m)),
        Checker::StatePredicate(p) => state.get(&p.var).is_some_and(|v| *v == p.equals),
    }
}
