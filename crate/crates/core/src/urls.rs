//! Canonical URL identity, path depth and URL templates.
//!
//! A [`CanonicalUrl`] is the node identity of the site graph. Canonicalization
//! lowercases scheme and host, drops default ports, collapses empty path
//! segments (so `a//b/` and `a/b` are the same page) and keeps the query in
//! its original order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UrlError {
    #[error("malformed url `{input}`: {reason}")]
    MalformedUrl { input: String, reason: String },
    #[error("malformed url template `{0}`")]
    MalformedTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalUrl {
    scheme: String,
    host: String,
    port: Option<u16>,
    path_segments: Vec<String>,
    query: Vec<(String, String)>,
    fragment: Option<String>,
}

pub fn canonicalize_url(raw: &str) -> Result<CanonicalUrl, UrlError> {
    let malformed = |reason: String| UrlError::MalformedUrl {
        input: raw.to_string(),
        reason,
    };
    let parsed = url::Url::parse(raw.trim()).map_err(|e| malformed(e.to_string()))?;
    let host = parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| malformed("missing host".into()))?
        .to_ascii_lowercase();
    Ok(CanonicalUrl::from_parsed(&parsed, host))
}

impl CanonicalUrl {
    fn from_parsed(parsed: &url::Url, host: String) -> Self {
        let path_segments = parsed
            .path_segments()
            .map(|segs| segs.filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        let query = parsed
            .query()
            .map(|_| {
                parsed
                    .query_pairs()
                    .map(|(k, v)| (k.into_owned(), v.into_owned()))
                    .collect()
            })
            .unwrap_or_default();
        CanonicalUrl {
            scheme: parsed.scheme().to_ascii_lowercase(),
            host,
            port: parsed.port(),
            path_segments,
            query,
            fragment: parsed.fragment().filter(|f| !f.is_empty()).map(str::to_string),
        }
    }

    /// Resolves `reference` (absolute, or relative like `/catalog/42`) against
    /// this URL.
    pub fn join(&self, reference: &str) -> Result<CanonicalUrl, UrlError> {
        let base = url::Url::parse(&self.to_string()).map_err(|e| UrlError::MalformedUrl {
            input: self.to_string(),
            reason: e.to_string(),
        })?;
        let joined = base.join(reference.trim()).map_err(|e| UrlError::MalformedUrl {
            input: reference.to_string(),
            reason: e.to_string(),
        })?;
        match joined.host_str() {
            Some(h) if !h.is_empty() => {
                let host = h.to_ascii_lowercase();
                Ok(CanonicalUrl::from_parsed(&joined, host))
            }
            _ => Err(UrlError::MalformedUrl {
                input: reference.to_string(),
                reason: "missing host".into(),
            }),
        }
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> Option<u16> {
        self.port
    }

    pub fn path_segments(&self) -> &[String] {
        &self.path_segments
    }

    pub fn query(&self) -> &[(String, String)] {
        &self.query
    }

    pub fn query_value(&self, key: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn fragment(&self) -> Option<&str> {
        self.fragment.as_deref()
    }

    /// `/a/b`, or `/` for the host root.
    pub fn path(&self) -> String {
        format!("/{}", self.path_segments.join("/"))
    }

    /// Path plus query, the form used for page keys and prompts.
    pub fn path_and_query(&self) -> String {
        let mut out = self.path();
        if !self.query.is_empty() {
            out.push('?');
            out.push_str(&encode_query(&self.query));
        }
        out
    }

    pub fn origin(&self) -> String {
        match self.port {
            Some(p) => format!("{}://{}:{}", self.scheme, self.host, p),
            None => format!("{}://{}", self.scheme, self.host),
        }
    }

    pub fn same_origin(&self, other: &CanonicalUrl) -> bool {
        self.scheme == other.scheme && self.host == other.host && self.port == other.port
    }

    pub fn without_query(&self) -> CanonicalUrl {
        CanonicalUrl {
            query: Vec::new(),
            fragment: None,
            ..self.clone()
        }
    }

    pub fn with_query(&self, query: Vec<(String, String)>) -> CanonicalUrl {
        CanonicalUrl {
            query,
            fragment: None,
            ..self.clone()
        }
    }
}

fn encode_query(query: &[(String, String)]) -> String {
    url::form_urlencoded::Serializer::new(String::new())
        .extend_pairs(query.iter())
        .finish()
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.origin(), self.path_and_query())?;
        if let Some(frag) = &self.fragment {
            write!(f, "#{frag}")?;
        }
        Ok(())
    }
}

impl FromStr for CanonicalUrl {
    type Err = UrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonicalize_url(s)
    }
}

impl Serialize for CanonicalUrl {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CanonicalUrl {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        canonicalize_url(&raw).map_err(serde::de::Error::custom)
    }
}

/// Number of non-empty path segments; query and fragment do not count.
pub fn url_path_depth(url: &CanonicalUrl) -> usize {
    url.path_segments.len()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateSegment {
    Literal(String),
    Placeholder(String),
}

/// A path pattern such as `/user/{user}/edit_biography`.
///
/// Each `{name}` segment matches exactly one non-empty path segment. An
/// optional `?key=value` suffix adds query requirements; a `{name}` value
/// matches any value for that key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UrlTemplate {
    segments: Vec<TemplateSegment>,
    query: Vec<(String, TemplateSegment)>,
}

pub type Bindings = Vec<(String, String)>;

fn parse_template_segment(s: &str) -> TemplateSegment {
    match s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        Some(name) if !name.is_empty() && !name.contains(['{', '}']) => {
            TemplateSegment::Placeholder(name.to_string())
        }
        _ => TemplateSegment::Literal(s.to_string()),
    }
}

impl UrlTemplate {
    pub fn parse(pattern: &str) -> Result<Self, UrlError> {
        let pattern = pattern.trim();
        // Accept either a bare path or a full URL; only the path and query matter.
        let path_part = match pattern.find("://") {
            Some(i) => {
                let rest = &pattern[i + 3..];
                match rest.find('/') {
                    Some(j) => &rest[j..],
                    None => "/",
                }
            }
            None => pattern,
        };
        if !path_part.starts_with('/') {
            return Err(UrlError::MalformedTemplate(pattern.to_string()));
        }
        let path_part = path_part.split('#').next().unwrap_or_default();
        let (path, query) = match path_part.split_once('?') {
            Some((p, q)) => (p, Some(q)),
            None => (path_part, None),
        };
        let segments = path
            .split('/')
            .filter(|s| !s.is_empty())
            .map(parse_template_segment)
            .collect();
        let mut query_reqs = Vec::new();
        if let Some(q) = query {
            for pair in q.split('&').filter(|p| !p.is_empty()) {
                let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
                if k.is_empty() {
                    return Err(UrlError::MalformedTemplate(pattern.to_string()));
                }
                query_reqs.push((k.to_string(), parse_template_segment(v)));
            }
        }
        Ok(UrlTemplate {
            segments,
            query: query_reqs,
        })
    }

    /// Template with only literal segments matching this URL's path and
    /// requiring each of its query pairs.
    pub fn literal(url: &CanonicalUrl) -> Self {
        UrlTemplate {
            segments: url
                .path_segments()
                .iter()
                .map(|s| TemplateSegment::Literal(s.clone()))
                .collect(),
            query: url
                .query()
                .iter()
                .map(|(k, v)| (k.clone(), TemplateSegment::Literal(v.clone())))
                .collect(),
        }
    }

    pub fn segments(&self) -> &[TemplateSegment] {
        &self.segments
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    pub fn has_placeholders(&self) -> bool {
        self.segments
            .iter()
            .any(|s| matches!(s, TemplateSegment::Placeholder(_)))
    }

    /// Placeholder bindings when `url` matches, `None` otherwise.
    pub fn match_url(&self, url: &CanonicalUrl) -> Option<Bindings> {
        let path = url.path_segments();
        if path.len() != self.segments.len() {
            return None;
        }
        let mut bindings = Vec::new();
        for (seg, actual) in self.segments.iter().zip(path) {
            match seg {
                TemplateSegment::Literal(lit) => {
                    if lit != actual {
                        return None;
                    }
                }
                TemplateSegment::Placeholder(name) => bindings.push((name.clone(), actual.clone())),
            }
        }
        for (key, want) in &self.query {
            let got = url.query_value(key)?;
            match want {
                TemplateSegment::Literal(lit) => {
                    if lit != got {
                        return None;
                    }
                }
                TemplateSegment::Placeholder(name) => bindings.push((name.clone(), got.to_string())),
            }
        }
        Some(bindings)
    }

    pub fn matches(&self, url: &CanonicalUrl) -> bool {
        self.match_url(url).is_some()
    }

    /// Substitutes bindings into the path, returning a path string such as
    /// `/catalog/42`. Unbound placeholders are left as `{name}`.
    pub fn instantiate(&self, bindings: &[(String, String)]) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            out.push('/');
            match seg {
                TemplateSegment::Literal(l) => out.push_str(l),
                TemplateSegment::Placeholder(name) => {
                    match bindings.iter().find(|(k, _)| k == name) {
                        Some((_, v)) => out.push_str(v),
                        None => {
                            out.push('{');
                            out.push_str(name);
                            out.push('}');
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            out.push('/');
        }
        out
    }
}

impl fmt::Display for UrlTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segments.is_empty() {
            f.write_str("/")?;
        }
        for seg in &self.segments {
            match seg {
                TemplateSegment::Literal(l) => write!(f, "/{l}")?,
                TemplateSegment::Placeholder(p) => write!(f, "/{{{p}}}")?,
            }
        }
        for (i, (k, v)) in self.query.iter().enumerate() {
            let sep = if i == 0 { '?' } else { '&' };
            match v {
                TemplateSegment::Literal(l) => write!(f, "{sep}{k}={l}")?,
                TemplateSegment::Placeholder(p) => write!(f, "{sep}{k}={{{p}}}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for UrlTemplate {
    type Err = UrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UrlTemplate::parse(s)
    }
}

impl Serialize for UrlTemplate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UrlTemplate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        UrlTemplate::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// First template in list order that matches `url`.
pub fn match_template<'a>(url: &CanonicalUrl, templates: &'a [UrlTemplate]) -> Option<&'a UrlTemplate> {
    templates.iter().find(|t| t.matches(url))
}

/// Rule turning concrete segments into a placeholder when aggregating URLs.
#[derive(Debug, Clone)]
pub struct PlaceholderRule {
    pub matcher: regex::Regex,
    pub name: String,
}

impl PlaceholderRule {
    pub fn new(pattern: &str, name: &str) -> Result<Self, regex::Error> {
        Ok(PlaceholderRule {
            matcher: regex::Regex::new(pattern)?,
            name: name.to_string(),
        })
    }

    /// Numeric segments become `{id}`.
    pub fn numeric_id() -> Self {
        PlaceholderRule::new(r"^[0-9]+$", "id").expect("static regex")
    }
}

/// Generalizes a concrete URL into a template by applying the first matching
/// rule to each segment. Query and fragment are dropped.
pub fn infer_template(url: &CanonicalUrl, rules: &[PlaceholderRule]) -> UrlTemplate {
    let segments = url
        .path_segments()
        .iter()
        .map(|seg| match rules.iter().find(|r| r.matcher.is_match(seg)) {
            Some(rule) => TemplateSegment::Placeholder(rule.name.clone()),
            None => TemplateSegment::Literal(seg.clone()),
        })
        .collect();
    UrlTemplate {
        segments,
        query: Vec::new(),
    }
}
