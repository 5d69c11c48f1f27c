//! Simulated websites: the environment contract and a deterministic
//! implementation driven by declarative site specifications.

mod env;
pub mod oracle;
mod spec;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use env::{render_axtree, EnvError, Environment, SimEnv, StepOutcome, TABS_UNSUPPORTED};
pub use oracle::{nav_goal, ResolvedGoal, SiteOracle};
pub use spec::{
    check, load_site_spec, load_site_spec_file, substitute, Checker, ElementSpec, GroundTruthTask, PageEntry,
    PageKey, PageSpec, ResolvedPage, Role, SiteSpec, SpecError, StatePredicate,
};

use crate::action::Action;
use crate::urls::CanonicalUrl;

/// What an action replay ended with.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub final_url: CanonicalUrl,
    pub message: Option<String>,
    pub state: BTreeMap<String, String>,
    pub errors: Vec<String>,
}

/// Replays `actions` from the site root in a fresh environment.
pub fn replay_actions(site: &Arc<SiteSpec>, goal: &str, actions: &[Action]) -> Result<ReplayOutcome, EnvError> {
    let mut env = SimEnv::new(Arc::clone(site));
    env.reset(&site.root_url, goal)?;
    let mut message = None;
    let mut errors = Vec::new();
    for action in actions {
        let out = env.step(action)?;
        if let Some(e) = out.observation.last_action_error {
            errors.push(e);
        }
        if let Action::SendMsgToUser { text } = action {
            message = Some(text.clone());
        }
        if out.terminated {
            break;
        }
    }
    Ok(ReplayOutcome {
        final_url: env.current_url().expect("episode active"),
        message,
        state: env.state_snapshot(),
        errors,
    })
}

/// Fixture site specifications that ship with the crate.
pub mod fixtures {
    use super::{load_site_spec, SiteSpec};

    pub const SHOP_12: &str = include_str!("../../fixtures/sites/shop-12.toml");
    pub const FORUM_8: &str = include_str!("../../fixtures/sites/forum-8.toml");
    pub const DEEP_CHAIN_6: &str = include_str!("../../fixtures/sites/deep-chain-6.toml");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "shop-12" => Some(SHOP_12),
            "forum-8" => Some(FORUM_8),
            "deep-chain-6" => Some(DEEP_CHAIN_6),
            _ => None,
        }
    }

    pub fn load(name: &str) -> SiteSpec {
        let doc = by_name(name).unwrap_or_else(|| panic!("unknown fixture {name}"));
        load_site_spec(doc.as_bytes()).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
    }
}
