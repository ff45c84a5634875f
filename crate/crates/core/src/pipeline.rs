//! End-to-end localization: nodes → graphs → descriptors → candidates →
//! RANSAC → weighted pose.

use std::time::Instant;

use thiserror::Error;

use crate::descriptors::{DescriptorError, DescriptorExtractor, DescriptorParams, DescriptorRegistry};
use crate::extraction::{extract_nodes, LabeledPoint, DEFAULT_CLUSTER_DISTANCE, DEFAULT_MIN_CLUSTER_SIZE};
use crate::graph::{build_graph, merge_nodes, GraphError, LabelSet, SemanticGraph, SemanticNode, DEFAULT_CONNECTIVITY_THRESHOLD, DEFAULT_MERGE_RADIUS};
use crate::matching::{candidate_matches_with, ransac_filter, CandidateOptions, CorrespondenceSet, MatchError, MatchResult, RansacParams};
use crate::pose::{residual, solve_rigid, weight_scheme, PoseError, RigidTransform, WEIGHT_SCHEMES};

/// Upper bound on re-solve/re-select passes after RANSAC.
const MAX_REFINE_ROUNDS: usize = 10;
/// Final pose pairs must lie within this multiple of the median residual...
const TRIM_FACTOR: f64 = 3.0;
/// ...or within this absolute bound (meters), whichever is larger.
const TRIM_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("graphs use different label sets ({0} vs {1} labels)")]
    LabelMismatch(usize, usize),
    #[error("unknown weight scheme {0:?}")]
    UnknownWeights(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub connectivity_threshold: f64,
    pub merge_radius: f64,
    pub cluster_distance: f64,
    pub min_cluster_size: usize,
    pub descriptor: String,
    pub descriptor_params: DescriptorParams,
    pub candidates: CandidateOptions,
    pub ransac: RansacParams,
    pub weights: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            connectivity_threshold: DEFAULT_CONNECTIVITY_THRESHOLD,
            merge_radius: DEFAULT_MERGE_RADIUS,
            cluster_distance: DEFAULT_CLUSTER_DISTANCE,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            descriptor: "histogram".into(),
            descriptor_params: DescriptorParams::default(),
            candidates: CandidateOptions::default(),
            ransac: RansacParams::default(),
            weights: "min-size".into(),
        }
    }
}

/// Wall-clock per stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub graph_ms: f64,
    pub descriptor_ms: f64,
    pub matching_ms: f64,
    pub pose_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.graph_ms + self.descriptor_ms + self.matching_ms + self.pose_ms
    }
}

#[derive(Debug, Clone)]
pub struct Localization {
    /// Maps source-graph coordinates into the target graph's frame.
    pub transform: RigidTransform,
    pub candidates: CorrespondenceSet,
    pub matched: MatchResult,
    /// Inlier indices (into `candidates`) used by the final solve.
    pub pose_inliers: Vec<usize>,
    pub timings: StageTimings,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Merges same-label nodes, optionally drops labels, and builds the graph.
pub fn graph_from_nodes(labels: &LabelSet, nodes: &[SemanticNode], config: &PipelineConfig, drop_labels: &[usize]) -> Result<SemanticGraph, GraphError> {
    let kept: Vec<SemanticNode> = nodes.iter().filter(|n| !drop_labels.contains(&n.label)).cloned().collect();
    build_graph(labels.clone(), merge_nodes(&kept, config.merge_radius), config.connectivity_threshold)
}

pub fn graph_from_points(labels: &LabelSet, points: &[LabeledPoint], config: &PipelineConfig, drop_labels: &[usize]) -> Result<SemanticGraph, GraphError> {
    let nodes = extract_nodes(points, config.cluster_distance, config.min_cluster_size);
    graph_from_nodes(labels, &nodes, config, drop_labels)
}

/// Keeps the lowest-residual correspondence per source node and per target
/// node among the RANSAC inliers. Ties resolve to the earlier candidate.
fn one_to_one(candidates: &CorrespondenceSet, inliers: &[usize], residuals: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..inliers.len()).collect();
    order.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(inliers[a].cmp(&inliers[b])));
    let mut used_source = std::collections::HashSet::new();
    let mut used_target = std::collections::HashSet::new();
    let mut kept: Vec<usize> = Vec::new();
    for k in order {
        let c = &candidates[inliers[k]];
        if used_source.contains(&c.source) || used_target.contains(&c.target) {
            continue;
        }
        used_source.insert(c.source);
        used_target.insert(c.target);
        kept.push(inliers[k]);
    }
    kept.sort_unstable();
    kept
}

/// Estimates the transform taking `source` coordinates into `target`'s
/// frame.
pub struct Localizer {
    config: PipelineConfig,
    extractor: Box<dyn DescriptorExtractor>,
}

impl Localizer {
    pub fn new(config: PipelineConfig) -> Result<Self, LocalizeError> {
        Self::with_registry(config, &DescriptorRegistry::builtin())
    }

    pub fn with_registry(config: PipelineConfig, registry: &DescriptorRegistry) -> Result<Self, LocalizeError> {
        if weight_scheme(&config.weights).is_none() {
            return Err(LocalizeError::UnknownWeights(format!("{} (known: {})", config.weights, WEIGHT_SCHEMES.join(", "))));
        }
        let extractor = registry.create(&config.descriptor, &config.descriptor_params)?;
        Ok(Self { config, extractor })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn extractor(&self) -> &dyn DescriptorExtractor {
        self.extractor.as_ref()
    }

    pub fn localize(&self, source: &SemanticGraph, target: &SemanticGraph) -> Result<Localization, LocalizeError> {
        let mut timings = StageTimings::default();
        self.run(source, target, &mut timings)
    }

    /// As [`Localizer::localize`], starting from node lists so graph building
    /// is part of the timing.
    pub fn localize_nodes(&self, labels: &LabelSet, source: &[SemanticNode], target: &[SemanticNode]) -> Result<Localization, LocalizeError> {
        self.localize_nodes_timed(labels, source, target).1
    }

    /// Stage timings are returned even when a stage fails; stages after the
    /// failure read zero.
    pub fn localize_nodes_timed(
        &self,
        labels: &LabelSet,
        source: &[SemanticNode],
        target: &[SemanticNode],
    ) -> (StageTimings, Result<Localization, LocalizeError>) {
        let mut timings = StageTimings::default();
        let start = Instant::now();
        let graphs = graph_from_nodes(labels, source, &self.config, &[]).and_then(|a| Ok((a, graph_from_nodes(labels, target, &self.config, &[])?)));
        timings.graph_ms = elapsed_ms(start);
        let result = match graphs {
            Ok((a, b)) => self.run(&a, &b, &mut timings),
            Err(e) => Err(e.into()),
        };
        (timings, result)
    }

    fn run(&self, source: &SemanticGraph, target: &SemanticGraph, timings: &mut StageTimings) -> Result<Localization, LocalizeError> {
        if source.labels() != target.labels() {
            return Err(LocalizeError::LabelMismatch(source.label_count(), target.label_count()));
        }

        let start = Instant::now();
        let source_desc = self.extractor.extract(source);
        let target_desc = self.extractor.extract(target);
        timings.descriptor_ms = elapsed_ms(start);

        let start = Instant::now();
        let candidates = candidate_matches_with(source_desc.as_ref(), target_desc.as_ref(), source, target, &self.config.candidates);
        let matched = ransac_filter(&candidates, &source.positions(), &target.positions(), &self.config.ransac);
        timings.matching_ms = elapsed_ms(start);
        let matched = matched?;

        let start = Instant::now();
        let refined = self.refine(source, target, &candidates, &matched);
        timings.pose_ms = elapsed_ms(start);
        let (transform, pose_inliers) = refined?;

        Ok(Localization { transform, candidates, matched, pose_inliers, timings: *timings })
    }

    /// Weighted closed-form solve over a one-to-one subset of the inliers,
    /// alternating selection and solve, then trimming the residual tail.
    pub fn refine(
        &self,
        source: &SemanticGraph,
        target: &SemanticGraph,
        candidates: &CorrespondenceSet,
        matched: &MatchResult,
    ) -> Result<(RigidTransform, Vec<usize>), LocalizeError> {
        let scheme = weight_scheme(&self.config.weights).expect("validated at construction");
        let tol = self.config.ransac.inlier_threshold;
        let residual_of = |k: usize, model: &RigidTransform| {
            let c = &candidates[k];
            residual((&source.node(c.source).position, &target.node(c.target).position), model)
        };
        let solve = |kept: &[usize]| {
            let pairs: Vec<_> = kept.iter().map(|&k| (source.node(candidates[k].source).position, target.node(candidates[k].target).position)).collect();
            let sizes: Vec<_> = kept.iter().map(|&k| (source.node(candidates[k].source).size, target.node(candidates[k].target).size)).collect();
            solve_rigid(&pairs, &scheme.weights(&sizes))
        };
        let mut inliers = matched.inlier_indices.clone();
        let mut model = matched.initial_transform;
        let mut kept: Vec<usize> = Vec::new();
        // The hypothesis comes from a minimal sample and can be off enough that
        // a nearby same-label node beats the true partner; re-solve and
        // re-select until the kept set stops changing.
        for _ in 0..MAX_REFINE_ROUNDS {
            let residuals: Vec<f64> = inliers.iter().map(|&k| residual_of(k, &model)).collect();
            let next = one_to_one(candidates, &inliers, &residuals);
            if next == kept {
                break;
            }
            kept = next;
            model = solve(&kept)?;
            let widened: Vec<usize> = (0..candidates.len()).filter(|&k| residual_of(k, &model) < tol).collect();
            if widened.len() < 3 {
                break;
            }
            inliers = widened;
        }

        // Pairs far out in the residual tail (a partner merged with a nearby
        // object in one map only, or a wrong pair that fit within tolerance)
        // bias the weighted solve; trim them while enough pairs remain.
        for _ in 0..MAX_REFINE_ROUNDS {
            let residuals: Vec<f64> = kept.iter().map(|&k| residual_of(k, &model)).collect();
            let mut sorted = residuals.clone();
            sorted.sort_by(f64::total_cmp);
            let cutoff = (TRIM_FACTOR * sorted[sorted.len() / 2]).max(TRIM_FLOOR);
            let trimmed: Vec<usize> = kept.iter().zip(&residuals).filter(|(_, r)| **r <= cutoff).map(|(k, _)| *k).collect();
            if trimmed.len() == kept.len() || trimmed.len() < 3 {
                break;
            }
            match solve(&trimmed) {
                Ok(m) => {
                    model = m;
                    kept = trimmed;
                }
                Err(_) => break,
            }
        }
        Ok((model, kept))
    }
}
