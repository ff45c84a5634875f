use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DescriptorError, DescriptorExtractor, DescriptorTable, Descriptors, NodeDescriptor};
use crate::graph::{Label, NodeId, SemanticGraph};

pub const DEFAULT_WALK_COUNT: usize = 200;
pub const DEFAULT_WALK_DEPTH: usize = 4;

/// Multiset of label sequences from random walks rooted at the owner. Each
/// sequence is packed base-`n_l` into a `u64`; the list is kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkDescriptor {
    owner: NodeId,
    label_count: usize,
    depth: usize,
    codes: Vec<u64>,
}

impl WalkDescriptor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Decoded walks, in code order.
    pub fn walks(&self) -> Vec<Vec<Label>> {
        self.codes
            .iter()
            .map(|&code| {
                let mut seq = vec![0; self.depth];
                let mut c = code;
                for slot in seq.iter_mut().rev() {
                    *slot = (c % self.label_count as u64) as Label;
                    c /= self.label_count as u64;
                }
                seq
            })
            .collect()
    }
}

impl NodeDescriptor for WalkDescriptor {
    fn owner(&self) -> NodeId {
        self.owner
    }

    /// Fraction of walks with an exactly matching label sequence
    /// (multiset intersection over walk count).
    fn similarity(&self, other: &Self) -> f64 {
        let denom = self.codes.len().max(other.codes.len());
        if denom == 0 {
            return 0.0;
        }
        let (a, b) = (&self.codes, &other.codes);
        let (mut i, mut j, mut shared) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        shared as f64 / denom as f64
    }

    fn cells(&self) -> Vec<(u64, u32)> {
        let mut out: Vec<(u64, u32)> = Vec::new();
        for &c in &self.codes {
            match out.last_mut() {
                Some((last, n)) if *last == c => *n += 1,
                _ => out.push((c, 1)),
            }
        }
        out
    }
}

/// `walk_count` uniform random walks of `walk_depth` labels per node. Each
/// node draws from its own ChaCha stream keyed by `(seed, node id)`, so the
/// result does not depend on scheduling.
pub fn extract_random_walks(graph: &SemanticGraph, walk_count: usize, walk_depth: usize, seed: u64) -> Vec<WalkDescriptor> {
    assert!(walk_count > 0, "walk count must be positive");
    assert!(walk_depth >= 2, "walk depth must be at least 2, got {walk_depth}");
    let n_l = graph.label_count();
    assert!(
        (n_l as u128).checked_pow(walk_depth as u32).is_some_and(|v| v <= u64::MAX as u128),
        "{n_l} labels at depth {walk_depth} do not fit a 64-bit walk code"
    );
    (0..graph.len())
        .into_par_iter()
        .map(|i| {
            let mut codes = Vec::new();
            if graph.degree(i) > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                codes.reserve(walk_count);
                for _ in 0..walk_count {
                    let mut node = i;
                    let mut code = graph.node(i).label as u64;
                    for _ in 1..walk_depth {
                        let nbrs = graph.neighbors(node);
                        node = nbrs[rng.random_range(0..nbrs.len())];
                        code = code * n_l as u64 + graph.node(node).label as u64;
                    }
                    codes.push(code);
                }
                codes.sort_unstable();
            }
            WalkDescriptor { owner: i, label_count: n_l, depth: walk_depth, codes }
        })
        .collect()
}

pub struct WalkExtractor {
    walk_count: usize,
    walk_depth: usize,
    seed: u64,
}

impl WalkExtractor {
    pub fn new(walk_count: usize, walk_depth: usize, seed: u64) -> Result<Self, DescriptorError> {
        if walk_count == 0 {
            return Err(DescriptorError::InvalidParameter("walk count must be positive".into()));
        }
        if walk_depth < 2 {
            return Err(DescriptorError::InvalidParameter(format!("walk depth must be at least 2, got {walk_depth}")));
        }
        Ok(Self { walk_count, walk_depth, seed })
    }
}

impl DescriptorExtractor for WalkExtractor {
    fn name(&self) -> &'static str {
        "walk"
    }

    fn extract(&self, graph: &SemanticGraph) -> Box<dyn DescriptorTable> {
        Box::new(Descriptors::new("walk", extract_random_walks(graph, self.walk_count, self.walk_depth, self.seed)))
    }
}
