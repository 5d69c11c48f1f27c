use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use regex::Regex;
use serde::Serialize;

use crate::datastore::TaskRecord;
use crate::llm::{complete, ChatProvider, ChatRequest, EVAL_TEMPERATURE};

pub const UNCLASSIFIED: &str = "unclassified";

pub trait TaskClassifier {
    fn id(&self) -> &str;
    /// One category per goal, in order.
    fn classify_all(&self, goals: &[&str]) -> Vec<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskCategoryDistribution {
    pub classifier: String,
    pub per_site: BTreeMap<String, BTreeMap<String, usize>>,
}

impl TaskCategoryDistribution {
    pub fn total(&self) -> usize {
        self.per_site.values().flat_map(|m| m.values()).sum()
    }
}

pub fn categorize_tasks(tasks: &[TaskRecord], classifier: &dyn TaskClassifier) -> TaskCategoryDistribution {
    let goals: Vec<&str> = tasks.iter().map(|t| t.task.goal.as_str()).collect();
    let labels = classifier.classify_all(&goals);
    assert_eq!(labels.len(), tasks.len(), "classifier must label every task");
    let mut per_site: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (t, label) in tasks.iter().zip(labels) {
        *per_site.entry(t.site_id.clone()).or_default().entry(label).or_default() += 1;
    }
    TaskCategoryDistribution {
        classifier: classifier.id().to_string(),
        per_site,
    }
}

/// First rule with a whole-word keyword match wins.
pub struct KeywordClassifier {
    rules: Vec<(String, Regex)>,
    fallback: String,
}

impl KeywordClassifier {
    pub fn new(rules: &[(&str, &[&str])], fallback: &str) -> Self {
        let rules = rules
            .iter()
            .map(|(cat, words)| {
                let alt: Vec<String> = words.iter().map(|w| regex::escape(w)).collect();
                let re = Regex::new(&format!(r"(?i)\b(?:{})\b", alt.join("|"))).expect("escaped keywords");
                (cat.to_string(), re)
            })
            .collect();
        KeywordClassifier {
            rules,
            fallback: fallback.to_string(),
        }
    }
}

impl Default for KeywordClassifier {
    fn default() -> Self {
        KeywordClassifier::new(
            &[
                ("site_navigation", &["navigate", "go to", "open the", "visit", "take me to"]),
                (
                    "content_modification",
                    &[
                        "add", "change", "update", "create", "post", "reply", "delete", "remove", "edit", "submit",
                        "set", "write",
                    ],
                ),
                (
                    "information_seeking",
                    &["what", "which", "who", "when", "where", "how many", "how much", "find", "list", "show", "price"],
                ),
            ],
            "other",
        )
    }
}

impl TaskClassifier for KeywordClassifier {
    fn id(&self) -> &str {
        "keyword"
    }

    fn classify_all(&self, goals: &[&str]) -> Vec<String> {
        goals
            .iter()
            .map(|g| {
                self.rules
                    .iter()
                    .find(|(_, re)| re.is_match(g))
                    .map_or_else(|| self.fallback.clone(), |(c, _)| c.clone())
            })
            .collect()
    }
}

const INDUCE_PROMPT: &str = "\
Here are tasks that users performed on websites, one per line:

{tasks}

Propose a short list of intent categories that covers these tasks. \
Answer with a JSON list of category names in snake_case.";

const CLASSIFY_PROMPT: &str = "\
Intent categories: {categories}

Task: {task}

Answer with the single category name that best fits the task.";

/// Induces categories from a sample of goals, then classifies every goal
/// against them.
pub struct LlmClassifier {
    provider: Arc<dyn ChatProvider>,
    model: String,
    sample_size: usize,
}

impl LlmClassifier {
    pub fn new(provider: Arc<dyn ChatProvider>, model: &str, sample_size: usize) -> Self {
        LlmClassifier {
            provider,
            model: model.to_string(),
            sample_size,
        }
    }

    fn ask(&self, prompt: String) -> Option<String> {
        let req = ChatRequest::user(&self.model, prompt, EVAL_TEMPERATURE);
        match complete(self.provider.as_ref(), &req) {
            Ok(r) => Some(r),
            Err(e) => {
                warn!("category classifier call failed: {e}");
                None
            }
        }
    }

    pub fn induce(&self, goals: &[&str]) -> Vec<String> {
        let sample: Vec<&str> = goals.iter().take(self.sample_size).copied().collect();
        let Some(reply) = self.ask(INDUCE_PROMPT.replace("{tasks}", &sample.join("\n"))) else {
            return Vec::new();
        };
        for (i, _) in reply.match_indices('[') {
            let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<Vec<String>>();
            if let Some(Ok(cats)) = stream.next() {
                let mut cats: Vec<String> = cats.into_iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
                cats.dedup();
                return cats;
            }
        }
        Vec::new()
    }
}

/// Maps a reply onto one of `categories`: an exact (case-insensitive) answer,
/// or the only category the reply mentions.
pub fn match_category(reply: &str, categories: &[String]) -> Option<String> {
    let answer = reply.trim().trim_matches(|c: char| c == '"' || c == '`' || c == '.').to_lowercase();
    if let Some(c) = categories.iter().find(|c| c.to_lowercase() == answer) {
        return Some(c.clone());
    }
    let lower = reply.to_lowercase();
    let mentioned: Vec<&String> = categories.iter().filter(|c| lower.contains(&c.to_lowercase())).collect();
    match mentioned.as_slice() {
        [one] => Some((*one).clone()),
        _ => None,
    }
}

impl TaskClassifier for LlmClassifier {
    fn id(&self) -> &str {
        "llm"
    }

    fn classify_all(&self, goals: &[&str]) -> Vec<String> {
        if goals.is_empty() {
            return Vec::new();
        }
        let categories = self.induce(goals);
        if categories.is_empty() {
            return vec![UNCLASSIFIED.to_string(); goals.len()];
        }
        let listed = categories.join(", ");
        goals
            .iter()
            .map(|g| {
                self.ask(CLASSIFY_PROMPT.replace("{categories}", &listed).replace("{task}", g))
                    .and_then(|r| match_category(&r, &categories))
                    .unwrap_or_else(|| UNCLASSIFIED.to_string())
            })
            .collect()
    }
}
