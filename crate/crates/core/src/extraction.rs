//! Label-aware connected-component clustering of back-projected points into
//! object nodes.

use nalgebra::Vector3;

use crate::graph::{Label, SemanticNode};
use crate::spatial::{close_pairs, UnionFind};

pub const DEFAULT_CLUSTER_DISTANCE: f64 = 1.0;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Vector3<f64>,
    pub label: Label,
}

impl LabeledPoint {
    pub fn new(x: f64, y: f64, z: f64, label: Label) -> Self {
        Self { position: Vector3::new(x, y, z), label }
    }
}

/// Groups points into components where two points connect iff they share a
/// label and lie closer than `cluster_distance`. Components with fewer than
/// `min_cluster_size` points are dropped; each survivor becomes a node at its
/// unweighted centroid with `size` equal to its point count.
///
/// Nodes are ordered by label, then by the lowest input index in the
/// component.
pub fn extract_nodes(points: &[LabeledPoint], cluster_distance: f64, min_cluster_size: usize) -> Vec<SemanticNode> {
    assert!(cluster_distance > 0.0, "cluster distance must be positive, got {cluster_distance}");
    let positions: Vec<_> = points.iter().map(|p| p.position).collect();
    let limit = cluster_distance * cluster_distance;
    let mut uf = UnionFind::new(points.len());
    for (a, b) in close_pairs(&positions, cluster_distance, |d2| d2 < limit) {
        if points[a].label == points[b].label {
            uf.union(a, b);
        }
    }
    let mut components: Vec<Vec<usize>> = uf.components().into_iter().filter(|c| c.len() >= min_cluster_size).collect();
    components.sort_by_key(|c| (points[c[0]].label, c[0]));

    components
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let sum: Vector3<f64> = members.iter().map(|&m| points[m].position).sum();
            let size = u32::try_from(members.len()).unwrap_or(u32::MAX);
            SemanticNode::new(id, points[members[0]].label, sum / members.len() as f64, size)
        })
        .collect()
}
