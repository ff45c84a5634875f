//! On-disk formats: graph JSON, whitespace point lists and rigid transforms.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::LabeledPoint;
use crate::graph::{build_graph, validate_node, GraphError, LabelSet, SemanticGraph, SemanticNode};
use crate::pose::RigidTransform;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        FormatError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

pub fn read_to_string(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: i64,
    label: usize,
    position: [f64; 3],
    size: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    labels: Vec<String>,
    connectivity_threshold: f64,
    nodes: Vec<NodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<[i64; 2]>>,
}

/// Serializes a graph to the JSON interchange format.
pub fn graph_to_json(graph: &SemanticGraph) -> String {
    let record = GraphRecord {
        labels: graph.labels().names().to_vec(),
        connectivity_threshold: graph.connectivity_threshold(),
        nodes: graph
            .nodes()
            .iter()
            .map(|n| NodeRecord { id: n.id as i64, label: n.label, position: [n.position.x, n.position.y, n.position.z], size: n.size })
            .collect(),
        edges: Some(graph.edges().into_iter().map(|(a, b)| [a as i64, b as i64]).collect()),
    };
    let mut s = serde_json::to_string_pretty(&record).expect("graph record serializes");
    s.push('\n');
    s
}

/// Parses and validates a graph file. File ids may be arbitrary unique
/// integers; they are remapped to dense indices in file order. When `edges`
/// is present it must equal the edge set implied by the threshold.
pub fn graph_from_json(text: &str) -> Result<SemanticGraph, FormatError> {
    let record: GraphRecord = serde_json::from_str(text)?;
    let labels = LabelSet::new(record.labels)?;
    let mut remap: HashMap<i64, usize> = HashMap::with_capacity(record.nodes.len());
    let mut nodes = Vec::with_capacity(record.nodes.len());
    for (i, n) in record.nodes.iter().enumerate() {
        if remap.insert(n.id, i).is_some() {
            return Err(GraphError::Invalid { field: format!("nodes[{i}].id"), message: format!("duplicate node id {}", n.id) }.into());
        }
        let node = SemanticNode::new(i, n.label, Vector3::from(n.position), n.size);
        validate_node(&node, labels.len(), &format!("nodes[{i}]"))?;
        nodes.push(node);
    }
    let graph = build_graph(labels, nodes, record.connectivity_threshold)?;

    if let Some(edges) = record.edges {
        let mut declared = BTreeSet::new();
        for (k, [a, b]) in edges.iter().copied().enumerate() {
            let field = format!("edges[{k}]");
            let (Some(&ia), Some(&ib)) = (remap.get(&a), remap.get(&b)) else {
                return Err(GraphError::Invalid { field, message: format!("edge ({a}, {b}) references an unknown node id") }.into());
            };
            if ia == ib {
                return Err(GraphError::Invalid { field, message: format!("self-edge on node {a}") }.into());
            }
            declared.insert((ia.min(ib), ia.max(ib)));
        }
        let implied: BTreeSet<_> = graph.edges().into_iter().collect();
        if let Some(&(a, b)) = declared.symmetric_difference(&implied).next() {
            let verb = if implied.contains(&(a, b)) { "is missing" } else { "is not implied by the connectivity threshold" };
            return Err(GraphError::Invalid {
                field: "edges".into(),
                message: format!("edge ({}, {}) {verb}", record.nodes[a].id, record.nodes[b].id),
            }
            .into());
        }
    }
    Ok(graph)
}

/// Parses `x y z label` lines. Anything after `#` is ignored.
pub fn points_from_text(text: &str) -> Result<Vec<LabeledPoint>, FormatError> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(FormatError::Line { line, message: format!("expected 4 fields `x y z label`, found {}", fields.len()) });
        }
        let mut xyz = [0.0; 3];
        for (k, f) in fields[..3].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| FormatError::Line { line, message: format!("invalid coordinate {f:?}") })?;
            if !v.is_finite() {
                return Err(FormatError::Line { line, message: format!("coordinate {f:?} is not finite") });
            }
            xyz[k] = v;
        }
        let label: usize = fields[3].parse().map_err(|_| FormatError::Line { line, message: format!("invalid label id {:?}", fields[3]) })?;
        points.push(LabeledPoint { position: Vector3::from(xyz), label });
    }
    Ok(points)
}

pub fn points_to_text(points: &[LabeledPoint]) -> String {
    let mut s = String::from("# x y z label\n");
    for p in points {
        s.push_str(&format!("{} {} {} {}\n", p.position.x, p.position.y, p.position.z, p.label));
    }
    s
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRecord {
    #[serde(rename = "R")]
    rotation: [[f64; 3]; 3],
    t: [f64; 3],
}

pub fn transform_to_json(t: &RigidTransform) -> String {
    let r = t.rotation();
    let record = TransformRecord {
        rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        t: [t.translation().x, t.translation().y, t.translation().z],
    };
    let mut s = serde_json::to_string_pretty(&record).expect("transform serializes");
    s.push('\n');
    s
}

/// Reads a transform; the rotation must be orthonormal with positive
/// determinant.
pub fn transform_from_json(text: &str) -> Result<RigidTransform, FormatError> {
    let record: TransformRecord = serde_json::from_str(text)?;
    let r = Matrix3::from_fn(|i, j| record.rotation[i][j]);
    RigidTransform::new(r, Vector3::from(record.t))
        .map_err(|e| GraphError::Invalid { field: "R".into(), message: e.to_string() }.into())
}

/// 4×4 homogeneous matrix, row-major, one row per line.
pub fn transform_to_text(t: &RigidTransform) -> String {
    let m = t.to_homogeneous();
    let mut s = String::new();
    for i in 0..4 {
        let row: Vec<String> = (0..4).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
