//! Descriptor-based candidate correspondences and RANSAC outlier rejection.
//!
//! Convention: the *source* graph is the one being localized (points `p`),
//! the *target* graph is the reference (points `q`). Models map source into
//! target, `q ≈ R p + t`.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::descriptors::DescriptorTable;
use crate::graph::{Label, NodeId, SemanticGraph};
use crate::pose::{off_line_spread, residual, solve_rigid, RigidTransform, DEGENERACY_TOLERANCE};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 500;
pub const DEFAULT_RANSAC_TOLERANCE: f64 = 5.0;
const SAMPLE_SIZE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("insufficient candidates: {found} correspondences, need at least {SAMPLE_SIZE}")]
    InsufficientCandidates { found: usize },
    #[error("degenerate geometry: all {iterations} sampled minimal sets were collinear or coincident")]
    DegenerateGeometry { iterations: usize },
    #[error("invalid RANSAC parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub source: NodeId,
    pub target: NodeId,
    /// Label of the source node (equal to the target's unless cross-label
    /// matching was enabled).
    pub label: Label,
    pub score: f64,
}

pub type CorrespondenceSet = Vec<Correspondence>;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOptions {
    /// Pairs must score strictly above this.
    pub score_threshold: f64,
    /// Compare nodes regardless of label. Off by default; exists only for
    /// the label-gating ablation.
    pub cross_label: bool,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self { score_threshold: DEFAULT_SCORE_THRESHOLD, cross_label: false }
    }
}

/// All same-label source/target pairs scoring above `score_threshold`.
/// Many-to-many; ordered by source id, then target id.
pub fn candidate_matches(
    source_desc: &dyn DescriptorTable,
    target_desc: &dyn DescriptorTable,
    source: &SemanticGraph,
    target: &SemanticGraph,
    score_threshold: f64,
) -> CorrespondenceSet {
    candidate_matches_with(source_desc, target_desc, source, target, &CandidateOptions { score_threshold, cross_label: false })
}

pub fn candidate_matches_with(
    source_desc: &dyn DescriptorTable,
    target_desc: &dyn DescriptorTable,
    source: &SemanticGraph,
    target: &SemanticGraph,
    options: &CandidateOptions,
) -> CorrespondenceSet {
    assert_eq!(source_desc.len(), source.len(), "source descriptors do not cover the source graph");
    assert_eq!(target_desc.len(), target.len(), "target descriptors do not cover the target graph");
    let label_count = source.label_count().max(target.label_count());
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); label_count];
    for j in 0..target_desc.len() {
        by_label[target.node(target_desc.owner(j)).label].push(j);
    }
    let all_targets: Vec<usize> = (0..target_desc.len()).collect();

    (0..source_desc.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let owner = source_desc.owner(i);
            let label = source.node(owner).label;
            let pool = if options.cross_label { &all_targets } else { &by_label[label] };
            pool.iter()
                .filter_map(move |&j| {
                    let s = source_desc.score(i, target_desc, j);
                    (s > options.score_threshold).then(|| Correspondence { source: owner, target: target_desc.owner(j), label, score: s })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Residual bound (meters) for a candidate to count as an inlier.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: DEFAULT_RANSAC_ITERATIONS, inlier_threshold: DEFAULT_RANSAC_TOLERANCE, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Indices into the candidate set, ascending.
    pub inlier_indices: Vec<usize>,
    pub inliers: CorrespondenceSet,
    /// Best minimal-sample model.
    pub initial_transform: RigidTransform,
    pub inlier_count: usize,
    /// Iterations whose sample was rejected as degenerate.
    pub degenerate_samples: usize,
}

/// Draws `iterations` random 4-candidate samples, solves each for a rigid
/// model, and keeps the model with the most candidates within
/// `inlier_threshold`. Ties go to the earliest iteration. Degenerate
/// samples are skipped but still consume an iteration.
///
/// Positions are indexed by node id.
pub fn ransac_filter(
    candidates: &[Correspondence],
    source_positions: &[Vector3<f64>],
    target_positions: &[Vector3<f64>],
    params: &RansacParams,
) -> Result<MatchResult, MatchError> {
    if params.iterations == 0 {
        return Err(MatchError::InvalidParameter("iteration count must be at least 1".into()));
    }
    if !(params.inlier_threshold > 0.0) {
        return Err(MatchError::InvalidParameter(format!("inlier threshold must be positive, got {}", params.inlier_threshold)));
    }
    if candidates.len() < SAMPLE_SIZE {
        return Err(MatchError::InsufficientCandidates { found: candidates.len() });
    }
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> =
        candidates.iter().map(|c| (source_positions[c.source], target_positions[c.target])).collect();

    // Samples are drawn up front so model scoring can fan out without
    // disturbing the random sequence.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<Vec<usize>> =
        (0..params.iterations).map(|_| rand::seq::index::sample(&mut rng, pairs.len(), SAMPLE_SIZE).into_vec()).collect();

    let count_inliers = |model: &RigidTransform| pairs.iter().filter(|(p, q)| residual((p, q), model) < params.inlier_threshold).count();
    let evaluated: Vec<Option<(usize, RigidTransform)>> = samples
        .par_iter()
        .map(|sample| {
            let minimal: Vec<_> = sample.iter().map(|&k| pairs[k]).collect();
            let spread_p = off_line_spread(minimal.iter().map(|(p, _)| (*p, 1.0)));
            let spread_q = off_line_spread(minimal.iter().map(|(_, q)| (*q, 1.0)));
            if spread_p < DEGENERACY_TOLERANCE || spread_q < DEGENERACY_TOLERANCE {
                return None;
            }
            let model = solve_rigid(&minimal, &[1.0; SAMPLE_SIZE]).ok()?;
            Some((count_inliers(&model), model))
        })
        .collect();

    let degenerate_samples = evaluated.iter().filter(|e| e.is_none()).count();
    let mut best: Option<(usize, RigidTransform)> = None;
    for (count, model) in evaluated.into_iter().flatten() {
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, model));
        }
    }
    let (_, model) = best.ok_or(MatchError::DegenerateGeometry { iterations: params.iterations })?;
    let inlier_indices: Vec<usize> =
        (0..pairs.len()).filter(|&k| residual((&pairs[k].0, &pairs[k].1), &model) < params.inlier_threshold).collect();
    let inliers: CorrespondenceSet = inlier_indices.iter().map(|&k| candidates[k].clone()).collect();
    debug_assert!(inliers.iter().all(|c| residual((&source_positions[c.source], &target_positions[c.target]), &model) < params.inlier_threshold));
    Ok(MatchResult { inlier_count: inliers.len(), inlier_indices, inliers, initial_transform: model, degenerate_samples })
}

/// Match dump: `idA,idB,label,score,inlier` where A is the source graph.
pub fn matches_to_csv(candidates: &[Correspondence], inlier_indices: &[usize]) -> String {
    let mut s = String::from("idA,idB,label,score,inlier\n");
    let mut flags = vec![false; candidates.len()];
    for &k in inlier_indices {
        flags[k] = true;
    }
    for (c, inlier) in candidates.iter().zip(flags) {
        let _ = writeln!(s, "{},{},{},{},{}", c.source, c.target, c.label, c.score, inlier as u8);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{test_graphs, DescriptorExtractor, HistogramExtractor};
    use crate::graph::{build_graph, LabelSet, SemanticNode};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn corr(i: usize) -> Correspondence {
        Correspondence { source: i, target: i, label: 0, score: 1.0 }
    }

    fn spread_points(n: usize) -> Vec<Vector3<f64>> {
        (0..n).map(|i| Vector3::new((i * 7 % 11) as f64 * 3.0, (i * 5 % 13) as f64 * 2.0, (i % 4) as f64 * 1.5)).collect()
    }

    #[test]
    fn self_match_contains_identity_pairs() {
        let g = test_graphs::random(21, 10, 3, 20.0, 10.0);
        let d = HistogramExtractor::new(3).unwrap().extract(&g);
        let c = candidate_matches(d.as_ref(), d.as_ref(), &g, &g, 0.99);
        for i in 0..g.len() {
            if g.degree(i) > 0 {
                assert!(c.iter().any(|x| x.source == i && x.target == i));
            }
        }
    }

    #[test]
    fn disjoint_labels_give_nothing() {
        let mk = |label| {
            let nodes = (0..6).map(|i| SemanticNode::new(i, label, Vector3::new(i as f64 * 2.0, 0.0, 0.0), 1)).collect();
            build_graph(LabelSet::numbered(2).unwrap(), nodes, 5.0).unwrap()
        };
        let (a, b) = (mk(0), mk(1));
        let ex = HistogramExtractor::new(3).unwrap();
        assert!(candidate_matches(ex.extract(&a).as_ref(), ex.extract(&b).as_ref(), &a, &b, 0.0).is_empty());
    }

    #[test]
    fn zero_threshold_gives_same_label_pairs_with_signal() {
        let a = test_graphs::random(31, 20, 3, 25.0, 10.0);
        let b = test_graphs::random(32, 20, 3, 25.0, 10.0);
        let ex = HistogramExtractor::new(3).unwrap();
        let (da, db) = (ex.extract(&a), ex.extract(&b));
        let got = candidate_matches(da.as_ref(), db.as_ref(), &a, &b, 0.0);
        let mut expected = 0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                if a.node(i).label == b.node(j).label && da.score(i, db.as_ref(), j) > 0.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(got.len(), expected);
        assert!(got.iter().all(|c| a.node(c.source).label == b.node(c.target).label));
    }

    #[test]
    fn cross_label_toggle_widens_pool() {
        let a = test_graphs::random(41, 25, 3, 25.0, 10.0);
        let ex = HistogramExtractor::new(3).unwrap();
        let d = ex.extract(&a);
        let gated = candidate_matches(d.as_ref(), d.as_ref(), &a, &a, -1.0);
        let open = candidate_matches_with(d.as_ref(), d.as_ref(), &a, &a, &CandidateOptions { score_threshold: -1.0, cross_label: true });
        assert_eq!(open.len(), a.len() * a.len());
        assert!(gated.len() < open.len());
    }

    #[test]
    fn rejects_displaced_outliers() {
        let truth = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        let src = spread_points(10);
        let mut dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        dst[3] += Vector3::new(50.0, 0.0, 0.0);
        dst[8] += Vector3::new(0.0, -50.0, 0.0);
        let cands: Vec<_> = (0..10).map(corr).collect();
        let r = ransac_filter(&cands, &src, &dst, &RansacParams { iterations: 200, inlier_threshold: 1.0, seed: 3 }).unwrap();
        assert_eq!(r.inlier_indices, vec![0, 1, 2, 4, 5, 6, 7, 9]);
        assert_eq!(r.inlier_count, 8);
        for c in &r.inliers {
            assert!(residual((&src[c.source], &dst[c.target]), &r.initial_transform) < 1.0);
        }
    }

    #[test]
    fn identity_with_four() {
        let pts = vec![Vector3::zeros(), Vector3::x() * 4.0, Vector3::y() * 3.0, Vector3::new(1.0, 1.0, 5.0)];
        let cands: Vec<_> = (0..4).map(corr).collect();
        let r = ransac_filter(&cands, &pts, &pts, &RansacParams { iterations: 5, inlier_threshold: 1.0, seed: 0 }).unwrap();
        assert_eq!(r.inlier_count, 4);
        assert!(r.initial_transform.translation().norm() < 1e-6);
        assert!((r.initial_transform.rotation() - nalgebra::Matrix3::identity()).norm() < 1e-6);
    }

    #[test]
    fn deterministic_for_seed() {
        let src = spread_points(30);
        let truth = RigidTransform::from_axis_angle(Vector3::new(1.0, 0.2, 0.3), 0.8, Vector3::new(-4.0, 9.0, 1.0));
        let dst: Vec<_> = src.iter().enumerate().map(|(i, p)| if i % 3 == 0 { p * 2.0 } else { truth.apply(p) }).collect();
        let cands: Vec<_> = (0..30).map(corr).collect();
        let params = RansacParams { iterations: 50, inlier_threshold: 0.5, seed: 99 };
        assert_eq!(ransac_filter(&cands, &src, &dst, &params).unwrap(), ransac_filter(&cands, &src, &dst, &params).unwrap());
    }

    #[test]
    fn error_paths() {
        let pts = spread_points(6);
        let three: Vec<_> = (0..3).map(corr).collect();
        assert_eq!(ransac_filter(&three, &pts, &pts, &RansacParams::default()), Err(MatchError::InsufficientCandidates { found: 3 }));
        let line: Vec<_> = (0..6).map(|i| Vector3::x() * i as f64).collect();
        let six: Vec<_> = (0..6).map(corr).collect();
        assert_eq!(
            ransac_filter(&six, &line, &line, &RansacParams { iterations: 20, ..Default::default() }),
            Err(MatchError::DegenerateGeometry { iterations: 20 })
        );
        assert!(matches!(ransac_filter(&six, &pts, &pts, &RansacParams { iterations: 0, ..Default::default() }), Err(MatchError::InvalidParameter(_))));
        assert!(matches!(ransac_filter(&six, &pts, &pts, &RansacParams { inlier_threshold: 0.0, ..Default::default() }), Err(MatchError::InvalidParameter(_))));
    }

    #[test]
    fn csv_flags_inliers() {
        let cands = vec![corr(0), Correspondence { source: 1, target: 4, label: 2, score: 0.75 }];
        assert_eq!(matches_to_csv(&cands, &[1]), "idA,idB,label,score,inlier\n0,0,0,1,0\n1,4,2,0.75,1\n");
    }

    proptest! {
        #[test]
        fn inliers_sound_and_monotone_in_tolerance(seed in any::<u64>(), n in 4usize..40, tol in 0.2..5.0f64, extra in 0.0..5.0f64) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<_> = (0..n).map(|_| Vector3::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(0.0..5.0))).collect();
            let truth = RigidTransform::from_axis_angle(Vector3::new(0.0, 0.0, 1.0), rng.random_range(-3.0..3.0), Vector3::new(5.0, 5.0, 0.0));
            let dst: Vec<_> = src.iter().map(|p| if rng.random_bool(0.3) { Vector3::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), 0.0) } else { truth.apply(p) + Vector3::new(rng.random_range(-0.5..0.5), 0.0, 0.0) }).collect();
            let cands: Vec<_> = (0..n).map(corr).collect();
            let small = ransac_filter(&cands, &src, &dst, &RansacParams { iterations: 60, inlier_threshold: tol, seed });
            let large = ransac_filter(&cands, &src, &dst, &RansacParams { iterations: 60, inlier_threshold: tol + extra, seed });
            if let (Ok(s), Ok(l)) = (&small, &large) {
                for c in &s.inliers {
                    prop_assert!(residual((&src[c.source], &dst[c.target]), &s.initial_transform) < tol);
                }
                prop_assert!(l.inlier_count >= s.inlier_count);
            }
            prop_assert_eq!(small.is_ok(), large.is_ok());
        }
    }
}
