//! Evaluation harness: precision/recall over localization attempts,
//! good-match statistics and per-stage timing.

use std::fmt::{self, Write as _};
use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::graph::{LabelSet, SemanticNode};
use crate::matching::Correspondence;
use crate::pipeline::{graph_from_nodes, LocalizeError, Localizer, StageTimings};
use crate::pose::RigidTransform;

/// Translation error below which a localization counts as correct, meters.
pub const DEFAULT_LOCALIZATION_THRESHOLD: f64 = 20.0;
/// Residual under the true transform below which a match is good, meters.
pub const DEFAULT_GOOD_MATCH_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationAttempt {
    /// `None` when the pipeline failed (no candidates, degenerate, ...).
    pub estimated: Option<RigidTransform>,
    pub ground_truth: RigidTransform,
    pub inlier_count: usize,
    pub timings: StageTimings,
}

impl LocalizationAttempt {
    /// Infinite for failed attempts.
    pub fn translation_error(&self) -> f64 {
        self.estimated.map_or(f64::INFINITY, |e| e.translation_error(&self.ground_truth))
    }

    /// Degrees; infinite for failed attempts.
    pub fn rotation_error_deg(&self) -> f64 {
        self.estimated.map_or(f64::INFINITY, |e| e.rotation_error(&self.ground_truth).to_degrees())
    }

    pub fn is_correct(&self, localization_threshold: f64) -> bool {
        self.translation_error() < localization_threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint {
    pub inlier_threshold: usize,
    /// `None` when no attempt voted positive.
    pub precision: Option<f64>,
    pub recall: f64,
    pub positives: usize,
    pub flagged: bool,
}

/// One point per `T_r`: attempts with `inlier_count ≥ T_r` vote positive;
/// precision is the fraction of positives with translation error below
/// `localization_threshold`; recall is positives over all attempts.
pub fn pr_curve(attempts: &[LocalizationAttempt], localization_threshold: f64, inlier_thresholds: &[usize]) -> Vec<PrPoint> {
    assert!(!attempts.is_empty(), "PR curve needs at least one attempt");
    inlier_thresholds
        .iter()
        .map(|&tr| {
            let positives: Vec<_> = attempts.iter().filter(|a| a.inlier_count >= tr).collect();
            let correct = positives.iter().filter(|a| a.is_correct(localization_threshold)).count();
            let precision = (!positives.is_empty()).then(|| correct as f64 / positives.len() as f64);
            PrPoint {
                inlier_threshold: tr,
                precision,
                recall: positives.len() as f64 / attempts.len() as f64,
                positives: positives.len(),
                flagged: precision.is_none(),
            }
        })
        .collect()
}

/// `T_r,precision,recall,flagged`; precision is empty when flagged.
pub fn pr_to_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("T_r,precision,recall,flagged\n");
    for p in points {
        let precision = p.precision.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:.6},{}", p.inlier_threshold, precision, p.recall, p.flagged as u8);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoodMatchStats {
    pub good: usize,
    pub total: usize,
    pub rate: f64,
    /// Set when the correspondence set was empty.
    pub flagged: bool,
}

/// A correspondence is good iff `‖q − T_gt(p)‖ < radius`.
pub fn good_match_stats(
    correspondences: &[Correspondence],
    source_positions: &[Vector3<f64>],
    target_positions: &[Vector3<f64>],
    ground_truth: &RigidTransform,
    radius: f64,
) -> GoodMatchStats {
    assert!(radius > 0.0, "good-match radius must be positive");
    let total = correspondences.len();
    if total == 0 {
        return GoodMatchStats { good: 0, total: 0, rate: 0.0, flagged: true };
    }
    let good = correspondences
        .iter()
        .filter(|c| (target_positions[c.target] - ground_truth.apply(&source_positions[c.source])).norm() < radius)
        .count();
    GoodMatchStats { good, total, rate: good as f64 / total as f64, flagged: false }
}

/// Runs the localizer on a source/target node pair and packages the outcome.
/// Pipeline failures become attempts with no estimate and zero inliers.
pub fn run_attempt(localizer: &Localizer, labels: &LabelSet, source: &[SemanticNode], target: &[SemanticNode], ground_truth: &RigidTransform) -> LocalizationAttempt {
    match localizer.localize_nodes(labels, source, target) {
        Ok(loc) => LocalizationAttempt {
            estimated: Some(loc.transform),
            ground_truth: *ground_truth,
            inlier_count: loc.matched.inlier_count,
            timings: loc.timings,
        },
        Err(e) => {
            log::debug!("attempt failed: {e}");
            LocalizationAttempt { estimated: None, ground_truth: *ground_truth, inlier_count: 0, timings: StageTimings::default() }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStats {
    pub stage: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl StageStats {
    fn from_samples(stage: &str, samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 { samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { stage: stage.to_string(), mean_ms: mean, std_ms: var.sqrt(), samples_ms: samples }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub source_nodes: usize,
    pub target_nodes: usize,
    pub descriptor: String,
    /// `"localized"` or the error that ended the pipeline early.
    pub outcome: String,
    pub stages: Vec<StageStats>,
    pub total: StageStats,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} descriptor, {} vs {} nodes, {} repetitions ({})",
            self.descriptor, self.source_nodes, self.target_nodes, self.repetitions, self.outcome
        )?;
        for s in self.stages.iter().chain(std::iter::once(&self.total)) {
            writeln!(f, "  {:<11} {:>10.3} ± {:.3} ms", s.stage, s.mean_ms, s.std_ms)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("need at least 3 repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
}

pub const BENCH_STAGES: [&str; 4] = ["graph", "descriptor", "matching", "pose"];

/// Times the full pipeline `repetitions` times on the same inputs. Matching
/// or pose failures are reported as the outcome, not as errors; the stages
/// that ran are still timed.
pub fn bench(localizer: &Localizer, labels: &LabelSet, source: &[SemanticNode], target: &[SemanticNode], repetitions: usize) -> Result<BenchReport, BenchError> {
    if repetitions < 3 {
        return Err(BenchError::TooFewRepetitions(repetitions));
    }
    let cfg = localizer.config();
    let source_nodes = graph_from_nodes(labels, source, cfg, &[]).map_err(LocalizeError::from)?.len();
    let target_nodes = graph_from_nodes(labels, target, cfg, &[]).map_err(LocalizeError::from)?.len();

    let mut stages: [Vec<f64>; 4] = Default::default();
    let mut totals = Vec::with_capacity(repetitions);
    let mut outcome = String::new();
    for _ in 0..repetitions {
        let start = Instant::now();
        let (t, result) = localizer.localize_nodes_timed(labels, source, target);
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        for (slot, v) in stages.iter_mut().zip([t.graph_ms, t.descriptor_ms, t.matching_ms, t.pose_ms]) {
            slot.push(v);
        }
        outcome = match result {
            Ok(_) => "localized".to_string(),
            Err(e @ (LocalizeError::Match(_) | LocalizeError::Pose(_))) => e.to_string(),
            Err(e) => return Err(e.into()),
        };
    }
    Ok(BenchReport {
        repetitions,
        source_nodes,
        target_nodes,
        descriptor: localizer.extractor().name().to_string(),
        outcome,
        stages: BENCH_STAGES.iter().zip(stages).map(|(n, s)| StageStats::from_samples(n, s)).collect(),
        total: StageStats::from_samples("total", totals),
    })
}
