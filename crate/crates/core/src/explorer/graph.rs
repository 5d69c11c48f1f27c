use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::datastore::{GraphEdge, GraphSnapshot};
use crate::urls::CanonicalUrl;

/// Pages as nodes, trajectories as edges. Nodes keep discovery order.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGraph {
    pub root: CanonicalUrl,
    nodes: Vec<CanonicalUrl>,
    node_set: HashSet<CanonicalUrl>,
    edges: Vec<GraphEdge>,
}

impl SiteGraph {
    pub fn new(root: CanonicalUrl) -> Self {
        SiteGraph {
            nodes: vec![root.clone()],
            node_set: HashSet::from([root.clone()]),
            root,
            edges: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[CanonicalUrl] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn contains(&self, url: &CanonicalUrl) -> bool {
        self.node_set.contains(url)
    }

    /// Adds a node without an edge. Returns whether it was new.
    pub fn add_node(&mut self, url: CanonicalUrl) -> bool {
        if self.node_set.insert(url.clone()) {
            self.nodes.push(url);
            true
        } else {
            false
        }
    }

    /// Records an edge, adding either endpoint if unseen. Returns whether
    /// `to` was new.
    pub fn add_edge(&mut self, from: CanonicalUrl, to: CanonicalUrl, trajectory_id: String, weight: usize) -> bool {
        self.add_node(from.clone());
        let new = self.add_node(to.clone());
        self.edges.push(GraphEdge {
            from,
            to,
            trajectory_id,
            weight,
        });
        new
    }

    pub fn snapshot(&self, site_id: &str, explored: &[CanonicalUrl]) -> GraphSnapshot {
        GraphSnapshot {
            id: format!("graph:{site_id}"),
            site_id: site_id.to_string(),
            root: self.root.clone(),
            nodes: self.nodes.clone(),
            explored: explored.to_vec(),
            edges: self.edges.clone(),
        }
    }

    pub fn from_snapshot(s: &GraphSnapshot) -> Self {
        let mut g = SiteGraph::new(s.root.clone());
        for n in &s.nodes {
            g.add_node(n.clone());
        }
        for e in &s.edges {
            g.add_edge(e.from.clone(), e.to.clone(), e.trajectory_id.clone(), e.weight);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("frontier is empty")]
pub struct FrontierEmpty;

/// FIFO queue of pages awaiting exploration. A URL can be queued at most
/// once per run.
#[derive(Debug, Default, Clone)]
pub struct Frontier {
    queue: VecDeque<CanonicalUrl>,
    ever_queued: HashSet<CanonicalUrl>,
}

impl Frontier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `url` unless it was queued before. Returns whether it was added.
    pub fn push(&mut self, url: CanonicalUrl) -> bool {
        if self.ever_queued.insert(url.clone()) {
            self.queue.push_back(url);
            true
        } else {
            false
        }
    }

    pub fn select_and_remove(&mut self) -> Result<CanonicalUrl, FrontierEmpty> {
        self.queue.pop_front().ok_or(FrontierEmpty)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}
