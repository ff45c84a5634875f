use super::{cosine, sparse_entries, DescriptorExtractor, DescriptorTable, Descriptors, NodeDescriptor};
use crate::graph::{NodeId, SemanticGraph};

/// Count of direct neighbours per label.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborVectorDescriptor {
    owner: NodeId,
    counts: Vec<u32>,
    nonzero: Vec<(u32, u32)>,
    norm: f64,
}

impl NeighborVectorDescriptor {
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

impl NodeDescriptor for NeighborVectorDescriptor {
    fn owner(&self) -> NodeId {
        self.owner
    }

    fn similarity(&self, other: &Self) -> f64 {
        assert_eq!(self.counts.len(), other.counts.len(), "neighbor vector length mismatch");
        cosine((&self.counts, &self.nonzero, self.norm), (&other.counts, &other.nonzero, other.norm))
    }

    fn cells(&self) -> Vec<(u64, u32)> {
        self.nonzero.iter().map(|&(i, c)| (i as u64, c)).collect()
    }
}

pub fn extract_neighbor_vectors(graph: &SemanticGraph) -> Vec<NeighborVectorDescriptor> {
    (0..graph.len())
        .map(|i| {
            let mut counts = vec![0u32; graph.label_count()];
            for &m in graph.neighbors(i) {
                counts[graph.node(m).label] += 1;
            }
            let (nonzero, norm) = sparse_entries(&counts);
            NeighborVectorDescriptor { owner: i, counts, nonzero, norm }
        })
        .collect()
}

pub struct NeighborExtractor;

impl DescriptorExtractor for NeighborExtractor {
    fn name(&self) -> &'static str {
        "neighbor"
    }

    fn extract(&self, graph: &SemanticGraph) -> Box<dyn DescriptorTable> {
        Box::new(Descriptors::new("neighbor", extract_neighbor_vectors(graph)))
    }
}
