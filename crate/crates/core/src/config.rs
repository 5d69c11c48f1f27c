//! `run.toml` run configuration: sites, role bindings, policies, providers
//! and per-stage settings, validated up front and turned into modules.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::parse_call;
use crate::agent::{PolicyFactory, PolicyKind};
use crate::baselines::{InstructionFirstConfig, InteractionFirstConfig, Labeler, LlmLabeler, ScriptedLabeler};
use crate::explorer::{ExploreConfig, Modules};
use crate::llm::{ChatProvider, HttpProvider, ProviderConfig, RecordReplayStore, ReplayMode, RetryPolicy};
use crate::reward::{JudgeReward, RewardBinding};
use crate::simenv::{fixtures, load_site_spec, load_site_spec_file, SiteSpec};

/// Policy names usable without a `[policies]` entry.
pub const BUILTIN_POLICIES: [&str; 3] = ["oracle", "fail", "random_walk"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("provider `{name}`: {message}")]
    Provider { name: String, message: String },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Oracle {
        #[serde(default)]
        failure_prob: f64,
    },
    Scripted {
        /// Actions in call syntax, e.g. `click('12')`.
        script: Vec<String>,
        #[serde(default)]
        failure_prob: f64,
    },
    Fail,
    RandomWalk,
    Llm {
        provider: String,
        model: String,
        /// Defaults to the collection temperature.
        #[serde(default)]
        temperature: Option<f64>,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
    },
}

fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub path: PathBuf,
    pub mode: ReplayMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    /// Needed unless replaying strictly.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub credentials_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub replay: Option<ReplayConfig>,
}

fn default_timeout() -> u64 {
    120
}

impl ProviderEntry {
    pub fn http(&self) -> Option<ProviderConfig> {
        self.endpoint.as_ref().map(|endpoint| ProviderConfig {
            endpoint: endpoint.clone(),
            credentials_env: self.credentials_env.clone(),
            retry: self.retry.clone(),
            timeout_secs: self.timeout_secs,
        })
    }
}

/// `"ground_truth"` or a prompted judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JudgeBinding {
    Named(String),
    Model { provider: String, model: String },
}

/// `"nav_goals"` or a prompted labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelerBinding {
    Named(String),
    Model {
        provider: String,
        model: String,
        #[serde(default)]
        temperature: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub nav_explorer: String,
    /// Proposer id (as named in `explore.page_explorer_step_budgets`) to policy.
    pub page_explorers: BTreeMap<String, String>,
    pub feasibility_checker: String,
    pub solvers: Vec<String>,
    pub judge: JudgeBinding,
    pub labeler: LabelerBinding,
    /// Browsing policy of the interaction-first baseline.
    pub browser: String,
    /// Root-page proposer of the instruction-first baseline.
    pub instruction_proposer: String,
}

impl Default for Roles {
    fn default() -> Self {
        Roles {
            nav_explorer: "oracle".into(),
            page_explorers: ExploreConfig::default()
                .page_explorer_step_budgets
                .into_iter()
                .map(|(id, _)| (id, "oracle".into()))
                .collect(),
            feasibility_checker: "oracle".into(),
            solvers: vec!["oracle".into()],
            judge: JudgeBinding::Named("ground_truth".into()),
            labeler: LabelerBinding::Named("nav_goals".into()),
            browser: "random_walk".into(),
            instruction_proposer: "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub interaction_first: InteractionFirstConfig,
    pub instruction_first: InstructionFirstConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Site spec files, or `fixture:<name>` for a bundled site.
    pub sites: Vec<String>,
    pub explore: ExploreConfig,
    pub roles: Roles,
    pub baseline: BaselineSection,
    pub policies: BTreeMap<String, PolicyConfig>,
    pub providers: BTreeMap<String, ProviderEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            deterministic: false,
            workers: 4,
            output_dir: PathBuf::from("out"),
            sites: Vec::new(),
            explore: ExploreConfig::default(),
            roles: Roles::default(),
            baseline: BaselineSection::default(),
            policies: BTreeMap::new(),
            providers: BTreeMap::new(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config; relative paths are taken from `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.rebase(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.output_dir = join(&self.output_dir);
        for s in &mut self.sites {
            if !s.starts_with("fixture:") {
                *s = join(Path::new(s.as_str())).to_string_lossy().into_owned();
            }
        }
        for p in self.providers.values_mut() {
            if let Some(r) = &mut p.replay {
                r.path = join(&r.path);
            }
        }
    }

    /// Applies overrides and pushes the top-level seed, worker count and
    /// determinism flag into every stage.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.deterministic |= o.deterministic;
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        self.explore.seed = self.seed;
        self.explore.workers = self.workers;
        self.explore.deterministic = self.deterministic;
        let b = &mut self.baseline;
        (b.interaction_first.seed, b.interaction_first.workers, b.interaction_first.deterministic) =
            (self.seed, self.workers, self.deterministic);
        (b.instruction_first.seed, b.instruction_first.workers, b.instruction_first.deterministic) =
            (self.seed, self.workers, self.deterministic);
    }

    /// Hex sha256 of the resolved config, leaving out where outputs go.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        crate::llm::hex(&Sha256::digest(json))
    }

    fn policy_names(&self) -> Vec<&str> {
        let r = &self.roles;
        let mut names: Vec<&str> = vec![&r.nav_explorer, &r.feasibility_checker, &r.browser, &r.instruction_proposer];
        names.extend(r.page_explorers.values().map(String::as_str));
        names.extend(r.solvers.iter().map(String::as_str));
        names
    }

    fn provider_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .policies
            .values()
            .filter_map(|p| match p {
                PolicyConfig::Llm { provider, .. } => Some(provider.as_str()),
                _ => None,
            })
            .collect();
        if let JudgeBinding::Model { provider, .. } = &self.roles.judge {
            names.push(provider);
        }
        if let LabelerBinding::Model { provider, .. } = &self.roles.labeler {
            names.push(provider);
        }
        names
    }

    /// Checks every reference without side effects. Provider credentials are
    /// only checked for providers some role actually uses.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sites.is_empty() {
            return Err(invalid("no sites configured"));
        }
        for s in &self.sites {
            match s.strip_prefix("fixture:") {
                Some(name) if fixtures::by_name(name).is_none() => {
                    return Err(invalid(format!("unknown fixture site `{name}`")));
                }
                Some(_) => {}
                None if !Path::new(s).is_file() => return Err(invalid(format!("site file {s} does not exist"))),
                None => {}
            }
        }
        for name in self.policy_names() {
            if !BUILTIN_POLICIES.contains(&name) && !self.policies.contains_key(name) {
                return Err(invalid(format!("policy `{name}` is not defined")));
            }
        }
        if self.roles.solvers.is_empty() {
            return Err(invalid("roles.solvers must name at least one policy"));
        }
        for (id, _) in &self.explore.page_explorer_step_budgets {
            if !self.roles.page_explorers.contains_key(id) {
                return Err(invalid(format!("page explorer `{id}` has no policy in roles.page_explorers")));
            }
        }
        if let JudgeBinding::Named(n) = &self.roles.judge {
            if n != "ground_truth" {
                return Err(invalid(format!("unknown judge `{n}`")));
            }
        }
        if let LabelerBinding::Named(n) = &self.roles.labeler {
            if n != "nav_goals" {
                return Err(invalid(format!("unknown labeler `{n}`")));
            }
        }
        for (name, p) in &self.policies {
            match p {
                PolicyConfig::Oracle { failure_prob } | PolicyConfig::Scripted { failure_prob, .. }
                    if !(0.0..=1.0).contains(failure_prob) =>
                {
                    return Err(invalid(format!("policy `{name}`: failure_prob must be in [0, 1]")));
                }
                PolicyConfig::Scripted { script, .. } => {
                    for a in script {
                        parse_call(a).map_err(|e| invalid(format!("policy `{name}`: {e}")))?;
                    }
                }
                _ => {}
            }
        }
        for name in self.provider_names() {
            let entry = self
                .providers
                .get(name)
                .ok_or_else(|| invalid(format!("provider `{name}` is not defined")))?;
            check_provider(name, entry)?;
        }
        Ok(())
    }

    pub fn load_sites(&self) -> Result<Vec<Arc<SiteSpec>>, ConfigError> {
        self.sites
            .iter()
            .map(|s| {
                let spec = match s.strip_prefix("fixture:") {
                    Some(name) => {
                        let doc = fixtures::by_name(name).ok_or_else(|| invalid(format!("unknown fixture `{name}`")))?;
                        load_site_spec(doc.as_bytes())
                    }
                    None => load_site_spec_file(Path::new(s)),
                };
                spec.map(Arc::new).map_err(|e| invalid(format!("site {s}: {e}")))
            })
            .collect()
    }

    pub fn build_provider(&self, name: &str) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        let entry = self
            .providers
            .get(name)
            .ok_or_else(|| invalid(format!("provider `{name}` is not defined")))?;
        let perr = |message: String| ConfigError::Provider {
            name: name.to_string(),
            message,
        };
        let live = match entry.http() {
            Some(h) => Some(HttpProvider::new(h).map_err(|e| perr(e.to_string()))?),
            None => None,
        };
        Ok(match &entry.replay {
            Some(r) => {
                let live = live.map(|p| Box::new(p) as Box<dyn ChatProvider>);
                Arc::new(RecordReplayStore::open(&r.path, r.mode, live).map_err(|e| perr(e.to_string()))?)
            }
            None => Arc::new(live.ok_or_else(|| perr("needs an endpoint".into()))?),
        })
    }

    pub fn build_policy(&self, name: &str) -> Result<PolicyFactory, ConfigError> {
        let kind = match (name, self.policies.get(name)) {
            (_, Some(p)) => match p {
                PolicyConfig::Oracle { failure_prob } => PolicyKind::Oracle {
                    failure_prob: *failure_prob,
                },
                PolicyConfig::Scripted { script, failure_prob } => PolicyKind::Scripted {
                    script: script
                        .iter()
                        .map(|a| parse_call(a).map_err(|e| invalid(format!("policy `{name}`: {e}"))))
                        .collect::<Result<_, _>>()?,
                    failure_prob: *failure_prob,
                },
                PolicyConfig::Fail => PolicyKind::Fail,
                PolicyConfig::RandomWalk => PolicyKind::RandomWalk,
                PolicyConfig::Llm {
                    provider,
                    model,
                    temperature,
                    max_tokens,
                } => PolicyKind::Llm {
                    provider: self.build_provider(provider)?,
                    model: model.clone(),
                    temperature: temperature.unwrap_or(self.explore.collection_temperature),
                    max_tokens: *max_tokens,
                },
            },
            ("oracle", None) => PolicyKind::Oracle { failure_prob: 0.0 },
            ("fail", None) => PolicyKind::Fail,
            ("random_walk", None) => PolicyKind::RandomWalk,
            (_, None) => return Err(invalid(format!("policy `{name}` is not defined"))),
        };
        Ok(PolicyFactory::new(name, kind))
    }

    pub fn reward(&self) -> Result<RewardBinding, ConfigError> {
        Ok(match &self.roles.judge {
            JudgeBinding::Named(_) => RewardBinding::GroundTruth,
            JudgeBinding::Model { provider, model } => {
                RewardBinding::Model(Arc::new(JudgeReward::new(self.build_provider(provider)?, model)))
            }
        })
    }

    /// Exploration modules; page-explorer factories take their proposer id.
    pub fn modules(&self) -> Result<Modules, ConfigError> {
        let page_explorers = self
            .roles
            .page_explorers
            .iter()
            .map(|(id, policy)| {
                let mut f = self.build_policy(policy)?;
                f.id = id.clone();
                Ok(f)
            })
            .collect::<Result<_, ConfigError>>()?;
        Ok(Modules {
            nav_explorer: self.build_policy(&self.roles.nav_explorer)?,
            page_explorers,
            feasibility_checker: self.build_policy(&self.roles.feasibility_checker)?,
            solvers: self
                .roles
                .solvers
                .iter()
                .map(|s| self.build_policy(s))
                .collect::<Result<_, _>>()?,
            reward: self.reward()?,
        })
    }

    pub fn labeler(&self, site: &SiteSpec) -> Result<Box<dyn Labeler>, ConfigError> {
        Ok(match &self.roles.labeler {
            LabelerBinding::Named(_) => Box::new(ScriptedLabeler::nav_goals(site)),
            LabelerBinding::Model {
                provider,
                model,
                temperature,
            } => Box::new(LlmLabeler::new(
                self.build_provider(provider)?,
                model,
                temperature.unwrap_or(self.explore.collection_temperature),
            )),
        })
    }
}

fn check_provider(name: &str, entry: &ProviderEntry) -> Result<(), ConfigError> {
    let perr = |message: &str| ConfigError::Provider {
        name: name.to_string(),
        message: message.to_string(),
    };
    let strict = matches!(&entry.replay, Some(r) if r.mode == ReplayMode::Strict);
    if let Some(r) = &entry.replay {
        if strict && !r.path.is_file() {
            return Err(invalid(format!("provider `{name}`: replay file {} does not exist", r.path.display())));
        }
    }
    match entry.http() {
        None if !strict => Err(invalid(format!("provider `{name}` needs an endpoint"))),
        None => Ok(()),
        Some(h) => {
            h.validate().map_err(|e| invalid(format!("provider `{name}`: {e}")))?;
            match &h.credentials_env {
                Some(var) if !strict && std::env::var_os(var).is_none() => {
                    Err(perr(&format!("credential variable {var} is not set")))
                }
                _ => Ok(()),
            }
        }
    }
}
