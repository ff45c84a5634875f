//! Per-node graph descriptors behind a common strategy interface.
//!
//! Three extractors are registered by name: the label-path `histogram`, the
//! one-hop `neighbor` vector and the `walk` (random-walk) baseline. Callers
//! select one at runtime through [`DescriptorRegistry`].

use std::any::Any;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{NodeId, SemanticGraph};

mod histogram;
mod neighbor;
mod walk;

pub use histogram::{extract_histograms, extract_path_histograms, score, HistogramDescriptor, HistogramExtractor, DEFAULT_PATH_LENGTH};
pub use neighbor::{extract_neighbor_vectors, NeighborExtractor, NeighborVectorDescriptor};
pub use walk::{extract_random_walks, WalkDescriptor, WalkExtractor, DEFAULT_WALK_COUNT, DEFAULT_WALK_DEPTH};

/// A descriptor attached to one graph node.
pub trait NodeDescriptor: Send + Sync + 'static {
    fn owner(&self) -> NodeId;

    /// Similarity in `[0, 1]` against a descriptor of the same kind.
    fn similarity(&self, other: &Self) -> f64;

    /// Non-zero `(cell index, count)` entries, ascending by cell.
    fn cells(&self) -> Vec<(u64, u32)>;
}

/// Descriptors for every node of one graph, type-erased so the matcher can
/// work with whichever extractor produced them.
pub trait DescriptorTable: Send + Sync {
    fn kind(&self) -> &'static str;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn owner(&self, i: usize) -> NodeId;
    fn cells(&self, i: usize) -> Vec<(u64, u32)>;

    /// Similarity between entry `i` here and entry `j` of `other`.
    ///
    /// # Panics
    /// If `other` was produced by a different extractor.
    fn score(&self, i: usize, other: &dyn DescriptorTable, j: usize) -> f64;

    fn as_any(&self) -> &dyn Any;
}

/// Concrete table for one descriptor type.
pub struct Descriptors<D> {
    kind: &'static str,
    items: Vec<D>,
}

impl<D: NodeDescriptor> Descriptors<D> {
    pub fn new(kind: &'static str, items: Vec<D>) -> Self {
        Self { kind, items }
    }

    pub fn items(&self) -> &[D] {
        &self.items
    }
}

impl<D: NodeDescriptor> DescriptorTable for Descriptors<D> {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn owner(&self, i: usize) -> NodeId {
        self.items[i].owner()
    }

    fn cells(&self, i: usize) -> Vec<(u64, u32)> {
        self.items[i].cells()
    }

    fn score(&self, i: usize, other: &dyn DescriptorTable, j: usize) -> f64 {
        let other = other
            .as_any()
            .downcast_ref::<Self>()
            .unwrap_or_else(|| panic!("cannot score {} descriptors against {} descriptors", self.kind, other.kind()));
        self.items[i].similarity(&other.items[j])
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// A descriptor strategy.
pub trait DescriptorExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    fn extract(&self, graph: &SemanticGraph) -> Box<dyn DescriptorTable>;
}

/// Knobs shared by the registered extractors; each reads only its own.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorParams {
    /// Labels per histogram path, start node included.
    pub path_length: usize,
    pub walk_count: usize,
    pub walk_depth: usize,
    pub seed: u64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self { path_length: DEFAULT_PATH_LENGTH, walk_count: DEFAULT_WALK_COUNT, walk_depth: DEFAULT_WALK_DEPTH, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("unknown descriptor {name:?}; known: {known}")]
    Unknown { name: String, known: String },
    #[error("invalid descriptor parameter: {0}")]
    InvalidParameter(String),
}

type Factory = fn(&DescriptorParams) -> Result<Box<dyn DescriptorExtractor>, DescriptorError>;

/// Name → extractor factory table.
pub struct DescriptorRegistry {
    entries: Vec<(&'static str, Factory)>,
}

impl DescriptorRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Registry with `histogram`, `neighbor` and `walk`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("histogram", |p| Ok(Box::new(HistogramExtractor::new(p.path_length)?)));
        r.register("neighbor", |_| Ok(Box::new(NeighborExtractor)));
        r.register("walk", |p| Ok(Box::new(WalkExtractor::new(p.walk_count, p.walk_depth, p.seed)?)));
        r
    }

    /// Adds or replaces an entry.
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = factory,
            None => self.entries.push((name, factory)),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str, params: &DescriptorParams) -> Result<Box<dyn DescriptorExtractor>, DescriptorError> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| DescriptorError::Unknown { name: name.to_string(), known: self.names().join(", ") })?;
        factory(params)
    }
}

/// Debug dump: `node_id,cell_index,count`, zero cells omitted.
pub fn descriptors_to_csv(table: &dyn DescriptorTable) -> String {
    let mut s = String::from("node_id,cell_index,count\n");
    for i in 0..table.len() {
        for (cell, count) in table.cells(i) {
            let _ = writeln!(s, "{},{},{}", table.owner(i), cell, count);
        }
    }
    s
}

/// Cosine similarity of two non-negative count vectors, each given both
/// dense and as sparse `(cell, count)` entries, plus its Euclidean norm.
/// Zero when either vector is empty. Walks the shorter sparse list and
/// indexes the other's dense form.
pub(crate) fn cosine(a: (&[u32], &[(u32, u32)], f64), b: (&[u32], &[(u32, u32)], f64)) -> f64 {
    if a.2 == 0.0 || b.2 == 0.0 {
        return 0.0;
    }
    let (dense, sparse) = if a.1.len() <= b.1.len() { (b.0, a.1) } else { (a.0, b.1) };
    let dot: u64 = sparse.iter().map(|&(cell, c)| c as u64 * dense[cell as usize] as u64).sum();
    (dot as f64 / (a.2 * b.2)).min(1.0)
}

pub(crate) fn sparse_entries(counts: &[u32]) -> (Vec<(u32, u32)>, f64) {
    let nz: Vec<(u32, u32)> = counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(i, c)| (i as u32, *c)).collect();
    let norm = nz.iter().map(|(_, c)| (*c as f64).powi(2)).sum::<f64>().sqrt();
    (nz, norm)
}
