//! Semantic graph data model: labelled object centroids joined by proximity
//! edges.

use std::collections::HashSet;

use nalgebra::Vector3;
use thiserror::Error;

use crate::spatial::{close_pairs, UnionFind};

/// Default maximum inter-node distance for an edge, in meters.
pub const DEFAULT_CONNECTIVITY_THRESHOLD: f64 = 10.0;
/// Default single-linkage radius for merging same-label nodes, in meters.
pub const DEFAULT_MERGE_RADIUS: f64 = 3.0;

pub type Label = usize;
pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("label set must contain at least one label")]
    EmptyLabelSet,
    #[error("duplicate label name {0:?}")]
    DuplicateLabel(String),
    #[error("{field}: label {label} out of range for {count} labels")]
    LabelOutOfRange { field: String, label: Label, count: usize },
    #[error("{field}: position is not finite")]
    NonFinitePosition { field: String },
    #[error("{field}: size must be at least 1")]
    ZeroSize { field: String },
    #[error("connectivity threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

/// Ordered label vocabulary shared by every graph in a comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self, GraphError> {
        if names.is_empty() {
            return Err(GraphError::EmptyLabelSet);
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(GraphError::DuplicateLabel(n.clone()));
            }
        }
        Ok(Self { names })
    }

    /// Labels named by their index, `"0"`, `"1"`, ...
    pub fn numbered(count: usize) -> Result<Self, GraphError> {
        Self::new((0..count).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<Label> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticNode {
    pub id: NodeId,
    pub label: Label,
    pub position: Vector3<f64>,
    /// Number of 3D points supporting the object.
    pub size: u32,
}

impl SemanticNode {
    pub fn new(id: NodeId, label: Label, position: Vector3<f64>, size: u32) -> Self {
        Self { id, label, position, size }
    }
}

pub(crate) fn validate_node(node: &SemanticNode, labels: usize, field: &str) -> Result<(), GraphError> {
    if node.label >= labels {
        return Err(GraphError::LabelOutOfRange { field: format!("{field}.label"), label: node.label, count: labels });
    }
    if !node.position.iter().all(|v| v.is_finite()) {
        return Err(GraphError::NonFinitePosition { field: format!("{field}.position") });
    }
    if node.size == 0 {
        return Err(GraphError::ZeroSize { field: format!("{field}.size") });
    }
    Ok(())
}

/// Immutable undirected proximity graph over semantic nodes. Node ids equal
/// their index in [`SemanticGraph::nodes`].
#[derive(Debug, Clone)]
pub struct SemanticGraph {
    labels: LabelSet,
    nodes: Vec<SemanticNode>,
    adjacency: Vec<Vec<NodeId>>,
    edge_count: usize,
    connectivity_threshold: f64,
}

impl SemanticGraph {
    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> &[SemanticNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SemanticNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Neighbour ids of `id`, ascending.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id]
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency[id].len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (a, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn connectivity_threshold(&self) -> f64 {
        self.connectivity_threshold
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.nodes.iter().map(|n| n.position).collect()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            0.0
        } else {
            2.0 * self.edge_count as f64 / self.nodes.len() as f64
        }
    }
}

/// Connects every pair of nodes closer than `connectivity_threshold`
/// (strictly). Node ids are reassigned to their index in `nodes`.
pub fn build_graph(labels: LabelSet, nodes: Vec<SemanticNode>, connectivity_threshold: f64) -> Result<SemanticGraph, GraphError> {
    if !(connectivity_threshold > 0.0) || !connectivity_threshold.is_finite() {
        return Err(GraphError::BadThreshold(connectivity_threshold));
    }
    let mut nodes = nodes;
    for (i, node) in nodes.iter_mut().enumerate() {
        validate_node(node, labels.len(), &format!("nodes[{i}]"))?;
        node.id = i;
    }
    let positions: Vec<_> = nodes.iter().map(|n| n.position).collect();
    let limit = connectivity_threshold * connectivity_threshold;
    let pairs = close_pairs(&positions, connectivity_threshold, |d2| d2 < limit);

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for &(a, b) in &pairs {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    Ok(SemanticGraph { labels, nodes, adjacency, edge_count: pairs.len(), connectivity_threshold })
}

/// Single-linkage merge of same-label nodes lying within `merge_radius` of
/// one another. A merged node sits at the size-weighted mean of its members
/// and carries their summed size. Merging repeats until no two same-label
/// nodes are within the radius, so the output is a fixed point.
///
/// Output is ordered by label, then by the earliest input index of each
/// cluster; ids are dense.
pub fn merge_nodes(nodes: &[SemanticNode], merge_radius: f64) -> Vec<SemanticNode> {
    assert!(merge_radius >= 0.0, "merge radius must be non-negative, got {merge_radius}");
    let mut current: Vec<SemanticNode> = nodes.to_vec();
    loop {
        let (next, changed) = merge_round(&current, merge_radius);
        current = next;
        if !changed {
            break;
        }
    }
    for (i, n) in current.iter_mut().enumerate() {
        n.id = i;
    }
    current
}

fn merge_round(nodes: &[SemanticNode], radius: f64) -> (Vec<SemanticNode>, bool) {
    let positions: Vec<_> = nodes.iter().map(|n| n.position).collect();
    let limit = radius * radius;
    let mut uf = UnionFind::new(nodes.len());
    for (a, b) in close_pairs(&positions, radius, |d2| d2 <= limit) {
        if nodes[a].label == nodes[b].label {
            uf.union(a, b);
        }
    }
    let mut groups = uf.components();
    let changed = groups.len() != nodes.len();
    groups.sort_by_key(|g| (nodes[g[0]].label, g[0]));

    let merged = groups
        .iter()
        .map(|members| {
            let total: u64 = members.iter().map(|&m| nodes[m].size as u64).sum();
            let mut position = Vector3::zeros();
            for &m in members {
                position += nodes[m].position * nodes[m].size as f64;
            }
            let first = &nodes[members[0]];
            let position = if members.len() == 1 { first.position } else { position / total as f64 };
            SemanticNode::new(0, first.label, position, total.min(u32::MAX as u64) as u32)
        })
        .collect();
    (merged, changed)
}
