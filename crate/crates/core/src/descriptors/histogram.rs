use rayon::prelude::*;

use super::{cosine, sparse_entries, DescriptorError, DescriptorExtractor, DescriptorTable, Descriptors, NodeDescriptor};
use crate::graph::{NodeId, SemanticGraph};

/// Labels per path: the start node plus two hops.
pub const DEFAULT_PATH_LENGTH: usize = 3;

/// Counts of label sequences along every walk of fixed length starting at
/// the owner node. Stored dense (`n_l^L` cells) with a sparse view and norm
/// cached for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDescriptor {
    owner: NodeId,
    counts: Vec<u32>,
    nonzero: Vec<(u32, u32)>,
    norm: f64,
}

impl HistogramDescriptor {
    pub fn from_counts(owner: NodeId, counts: Vec<u32>) -> Self {
        let (nonzero, norm) = sparse_entries(&counts);
        Self { owner, counts, nonzero, norm }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.nonzero.iter().map(|(_, c)| *c as u64).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.nonzero.is_empty()
    }
}

/// Cosine of two histograms; 0 if either is all-zero.
///
/// # Panics
/// If the histograms have different lengths.
pub fn score(a: &HistogramDescriptor, b: &HistogramDescriptor) -> f64 {
    assert_eq!(
        a.counts.len(),
        b.counts.len(),
        "histogram length mismatch: node {} has {} cells, node {} has {}",
        a.owner,
        a.counts.len(),
        b.owner,
        b.counts.len()
    );
    cosine((&a.counts, &a.nonzero, a.norm), (&b.counts, &b.nonzero, b.norm))
}

impl NodeDescriptor for HistogramDescriptor {
    fn owner(&self) -> NodeId {
        self.owner
    }

    fn similarity(&self, other: &Self) -> f64 {
        score(self, other)
    }

    fn cells(&self) -> Vec<(u64, u32)> {
        self.nonzero.iter().map(|&(i, c)| (i as u64, c)).collect()
    }
}

/// Three-label path histograms for every node.
pub fn extract_histograms(graph: &SemanticGraph) -> Vec<HistogramDescriptor> {
    extract_path_histograms(graph, DEFAULT_PATH_LENGTH)
}

/// Path histograms with `path_length` labels per path. Backtracking is
/// allowed, so `i → m → i` contributes cell `(l_i, l_m, l_i)`.
pub fn extract_path_histograms(graph: &SemanticGraph, path_length: usize) -> Vec<HistogramDescriptor> {
    assert!(path_length >= 2, "path length must be at least 2, got {path_length}");
    let n_l = graph.label_count();
    let cells = n_l.checked_pow(path_length as u32).filter(|c| *c <= u32::MAX as usize).expect("histogram too large");
    (0..graph.len())
        .into_par_iter()
        .map(|i| {
            let mut counts = vec![0u32; cells];
            let start = graph.node(i).label;
            if path_length == 3 {
                for &m in graph.neighbors(i) {
                    let prefix = (start * n_l + graph.node(m).label) * n_l;
                    for &n in graph.neighbors(m) {
                        counts[prefix + graph.node(n).label] += 1;
                    }
                }
            } else {
                accumulate(graph, i, start, path_length - 1, &mut counts);
            }
            HistogramDescriptor::from_counts(i, counts)
        })
        .collect()
}

fn accumulate(graph: &SemanticGraph, node: NodeId, prefix: usize, hops_left: usize, counts: &mut [u32]) {
    let n_l = graph.label_count();
    for &next in graph.neighbors(node) {
        let cell = prefix * n_l + graph.node(next).label;
        if hops_left == 1 {
            counts[cell] += 1;
        } else {
            accumulate(graph, next, cell, hops_left - 1, counts);
        }
    }
}

pub struct HistogramExtractor {
    path_length: usize,
}

impl HistogramExtractor {
    pub fn new(path_length: usize) -> Result<Self, DescriptorError> {
        if !(2..=6).contains(&path_length) {
            return Err(DescriptorError::InvalidParameter(format!("path length must be in 2..=6, got {path_length}")));
        }
        Ok(Self { path_length })
    }
}

impl DescriptorExtractor for HistogramExtractor {
    fn name(&self) -> &'static str {
        "histogram"
    }

    fn extract(&self, graph: &SemanticGraph) -> Box<dyn DescriptorTable> {
        Box::new(Descriptors::new("histogram", extract_path_histograms(graph, self.path_length)))
    }
}
