//! Interaction graphs, pruning, components and neighborhood queries.
//!
//! The weighted interaction graph counts retweets and mentions between two
//! users in either direction. After pruning light edges, the largest weakly
//! connected component becomes the [`SocialGraph`] the classifier runs on.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Retweet,
    Mention,
}

/// One retweet or mention between two users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub source: String,
    pub target: String,
    pub kind: InteractionKind,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn new(source: &str, target: &str, kind: InteractionKind, timestamp: i64) -> Self {
        InteractionRecord {
            source: source.to_string(),
            target: target.to_string(),
            kind,
            timestamp,
        }
    }
}

/// Reads `source,target,kind,timestamp` rows; self-interactions are dropped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<InteractionRecord>().enumerate() {
        let rec = row.map_err(|e| Error::parse(i + 2, format!("{}: {e}", path.display())))?;
        if rec.source != rec.target {
            out.push(rec);
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct EdgeRow {
    u: String,
    v: String,
}

/// Reads an undirected `u,v` edge list.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<EdgeRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(i + 2, format!("{}: {e}", path.display())))?;
        out.push((row.u, row.v));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(0, format!("{}: {other:?}", path.display())),
    }
}

fn edge_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Undirected graph with positive integer edge weights.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WeightedGraph {
    nodes: BTreeSet<String>,
    // keyed by (smaller id, larger id)
    edges: BTreeMap<(String, String), u32>,
}

impl WeightedGraph {
    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, u: &str, v: &str) -> Option<u32> {
        self.edges.get(&edge_key(u, v)).copied()
    }

    /// Edges as `(u, v, weight)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.edges.iter().map(|((u, v), &w)| (u.as_str(), v.as_str(), w))
    }
}

/// Counts interactions per unordered user pair.
pub fn build_interaction_graph(records: &[InteractionRecord]) -> WeightedGraph {
    let mut g = WeightedGraph::default();
    for rec in records {
        if rec.source == rec.target {
            continue;
        }
        g.nodes.insert(rec.source.clone());
        g.nodes.insert(rec.target.clone());
        *g.edges.entry(edge_key(&rec.source, &rec.target)).or_insert(0) += 1;
    }
    g
}

/// Drops edges lighter than `min_weight`; nodes are kept even when isolated.
pub fn prune_edges(g: &WeightedGraph, min_weight: u32) -> WeightedGraph {
    WeightedGraph {
        nodes: g.nodes.clone(),
        edges: g
            .edges
            .iter()
            .filter(|(_, &w)| w >= min_weight)
            .map(|(k, &w)| (k.clone(), w))
            .collect(),
    }
}

/// Node index inside a [`SocialGraph`].
pub type NodeId = usize;

/// Undirected, unweighted user graph with sorted adjacency lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SocialGraph {
    ids: Vec<String>,
    index: HashMap<String, NodeId>,
    adjacency: Vec<Vec<NodeId>>,
}

impl SocialGraph {
    /// Builds a graph over `nodes` (sorted and deduplicated) from undirected edges.
    ///
    /// Self-loops and duplicate edges are dropped; every edge endpoint must be
    /// one of `nodes`.
    pub fn from_edges<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let mut ids: Vec<String> = nodes.iter().map(|s| s.as_ref().to_string()).collect();
        ids.sort();
        ids.dedup();
        let index: HashMap<String, NodeId> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for (u, v) in edges {
            let (u, v) = (u.as_ref(), v.as_ref());
            let a = *index.get(u).ok_or_else(|| Error::UnknownNode(u.to_string()))?;
            let b = *index.get(v).ok_or_else(|| Error::UnknownNode(v.to_string()))?;
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(SocialGraph { ids, index, adjacency })
    }

    /// Graph whose node set is the union of all edge endpoints.
    pub fn from_edge_list<S: AsRef<str>>(edges: &[(S, S)]) -> Self {
        let nodes: Vec<&str> = edges.iter().flat_map(|(u, v)| [u.as_ref(), v.as_ref()]).collect();
        let edges: Vec<(&str, &str)> = edges.iter().map(|(u, v)| (u.as_ref(), v.as_ref())).collect();
        Self::from_edges(&nodes, &edges).expect("endpoints are nodes")
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, node: NodeId) -> &str {
        &self.ids[node]
    }

    pub fn node(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node]
    }

    /// Edges as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if v < self.ids.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(format!("#{v}")))
        }
    }

    /// Breadth-first distances from `v`, truncated at `max_depth`.
    ///
    /// Returns `(node, distance)` pairs in BFS order, starting with `(v, 0)`.
    pub fn bfs_distances(&self, v: NodeId, max_depth: usize) -> Result<Vec<(NodeId, usize)>> {
        self.check(v)?;
        let mut dist: HashMap<NodeId, usize> = HashMap::new();
        let mut order = vec![(v, 0)];
        let mut queue = VecDeque::from([v]);
        dist.insert(v, 0);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du == max_depth {
                continue;
            }
            for &w in &self.adjacency[u] {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(du + 1);
                    order.push((w, du + 1));
                    queue.push_back(w);
                }
            }
        }
        Ok(order)
    }

    /// Closed ball: nodes at distance at most `k` from `v`, ascending.
    pub fn khop_neighborhood(&self, v: NodeId, k: usize) -> Result<Vec<NodeId>> {
        let mut out: Vec<NodeId> = self.bfs_distances(v, k)?.into_iter().map(|(u, _)| u).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Shell: nodes at distance exactly `order` from `v`, ascending.
    pub fn exact_order_neighborhood(&self, v: NodeId, order: usize) -> Result<Vec<NodeId>> {
        let mut out: Vec<NodeId> = self
            .bfs_distances(v, order)?
            .into_iter()
            .filter(|&(_, d)| d == order)
            .map(|(u, _)| u)
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Connected components as sorted node lists, in order of their smallest node.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let n = self.ids.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &w in &self.adjacency[u] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `nodes`, re-indexed by sorted id.
    pub fn induced(&self, nodes: &[NodeId]) -> SocialGraph {
        let keep: BTreeSet<NodeId> = nodes.iter().copied().collect();
        let names: Vec<&str> = keep.iter().map(|&u| self.ids[u].as_str()).collect();
        let edges: Vec<(&str, &str)> = self
            .edges()
            .filter(|(u, v)| keep.contains(u) && keep.contains(v))
            .map(|(u, v)| (self.ids[u].as_str(), self.ids[v].as_str()))
            .collect();
        SocialGraph::from_edges(&names, &edges).expect("induced edges stay inside the node set")
    }

    /// The largest connected component; equal sizes go to the one holding the
    /// smallest node id.
    pub fn largest_component(&self) -> Result<SocialGraph> {
        // ids are sorted, so the first component of a given size holds the smallest id
        let best = self
            .components()
            .into_iter()
            .fold(None::<Vec<NodeId>>, |best, comp| match best {
                Some(b) if b.len() >= comp.len() => Some(b),
                _ => Some(comp),
            })
            .ok_or(Error::EmptyGraph)?;
        Ok(self.induced(&best))
    }

    /// Restricts a follower edge list to this graph's users, then keeps the
    /// largest component of the result.
    pub fn restrict_to_followers<S: AsRef<str>>(&self, followers: &[(S, S)]) -> Result<SocialGraph> {
        let edges: Vec<(&str, &str)> = followers
            .iter()
            .map(|(u, v)| (u.as_ref(), v.as_ref()))
            .filter(|(u, v)| self.contains(u) && self.contains(v))
            .collect();
        let nodes: Vec<&str> = self.ids.iter().map(String::as_str).collect();
        SocialGraph::from_edges(&nodes, &edges)?.largest_component()
    }

    pub fn stats(&self) -> GraphStats {
        let nodes = self.node_count();
        let edges = self.edge_count();
        GraphStats {
            nodes,
            edges,
            average_degree: if nodes == 0 {
                0.0
            } else {
                2.0 * edges as f64 / nodes as f64
            },
        }
    }

    /// Writes `u,v` rows with `u < v` by id.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = create(path)?;
        let mut rows: Vec<(&str, &str)> = self
            .edges()
            .map(|(u, v)| (self.ids[u].as_str(), self.ids[v].as_str()))
            .collect();
        rows.sort_unstable();
        let mut text = String::from("u,v\n");
        for (u, v) in rows {
            text.push_str(&format!("{u},{v}\n"));
        }
        out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Writes one node id per line.
    pub fn write_nodes(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = create(path)?;
        let mut text = String::new();
        for id in &self.ids {
            text.push_str(id);
            text.push('\n');
        }
        out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Largest weakly connected component of a weighted graph.
pub fn largest_weakly_connected_component(g: &WeightedGraph) -> Result<SocialGraph> {
    if g.nodes.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let nodes: Vec<&str> = g.nodes.iter().map(String::as_str).collect();
    let edges: Vec<(&str, &str)> = g.edges().map(|(u, v, _)| (u, v)).collect();
    SocialGraph::from_edges(&nodes, &edges)?.largest_component()
}

/// Loads a graph written by [`SocialGraph::write_edge_list`], optionally with
/// a node file so isolated nodes survive.
pub fn load_social_graph(edges: impl AsRef<Path>, nodes: Option<&Path>) -> Result<SocialGraph> {
    let edge_list = load_edge_list(edges)?;
    let mut names: Vec<String> = edge_list.iter().flat_map(|(u, v)| [u.clone(), v.clone()]).collect();
    if let Some(path) = nodes {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        names.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    SocialGraph::from_edges(&names, &edge_list)
}

/// Size summary of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    /// Mean undirected degree, `2E / N`.
    pub average_degree: f64,
}
