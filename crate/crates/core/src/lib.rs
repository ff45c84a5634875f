//! Semantic graph global localization.
//!
//! Builds proximity graphs over labelled object centroids, describes each
//! node by the histogram of label paths leaving it, matches nodes across two
//! graphs, rejects inconsistent matches with RANSAC and recovers the rigid
//! transform between the two map frames.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod descriptors;
pub mod eval;
pub mod extraction;
pub mod graph;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod pose;
pub mod spatial;
pub mod synth;

pub use descriptors::{DescriptorExtractor, DescriptorParams, DescriptorRegistry, DescriptorTable};
pub use graph::{build_graph, merge_nodes, LabelSet, SemanticGraph, SemanticNode};
pub use matching::{Correspondence, CorrespondenceSet, MatchError, MatchResult};
pub use pipeline::{Localization, LocalizeError, Localizer, PipelineConfig};
pub use pose::RigidTransform;
