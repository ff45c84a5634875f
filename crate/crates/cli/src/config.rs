//! Run configuration: built-in defaults, overridden by a `key = value` file,
//! overridden by command-line flags.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;
use semloc_core::eval::{DEFAULT_GOOD_MATCH_RADIUS, DEFAULT_LOCALIZATION_THRESHOLD};
use semloc_core::synth::ScenarioSpec;
use semloc_core::PipelineConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    /// Master seed; RANSAC, walks and scene generation derive from it.
    pub seed: u64,
    pub localization_threshold: f64,
    pub good_match_radius: f64,
    /// Label names or numeric ids removed before graph construction.
    pub drop_labels: Vec<String>,
    /// Label count for point files; inferred from the data when unset.
    pub label_count: Option<usize>,
    pub scenario: ScenarioSpec,
    /// Synthetic scenarios evaluated by `eval-pr`.
    pub attempts: usize,
    /// Query trajectory windows per scenario, each one localization attempt.
    pub windows: usize,
    pub pr_thresholds: Vec<usize>,
    pub repetitions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            seed: 0,
            localization_threshold: DEFAULT_LOCALIZATION_THRESHOLD,
            good_match_radius: DEFAULT_GOOD_MATCH_RADIUS,
            drop_labels: Vec::new(),
            label_count: None,
            scenario: ScenarioSpec::default(),
            attempts: 20,
            windows: 1,
            pr_thresholds: (0..=100).step_by(5).collect(),
            repetitions: 5,
        }
    }
}

/// Command-line values; `None` leaves the lower layers in effect.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub connectivity: Option<f64>,
    pub score_threshold: Option<f64>,
    pub ransac_iters: Option<usize>,
    pub ransac_tol: Option<f64>,
    pub descriptor: Option<String>,
    pub drop_labels: Option<Vec<String>>,
}

/// Every key a configuration file may set.
pub const KEYS: &[&str] = &[
    "connectivity_threshold",
    "merge_radius",
    "cluster_distance",
    "min_cluster_size",
    "score_threshold",
    "ransac_iterations",
    "ransac_tolerance",
    "descriptor",
    "weights",
    "path_length",
    "walk_count",
    "walk_depth",
    "seed",
    "localization_threshold",
    "good_match_radius",
    "drop_labels",
    "label_count",
    "scene_extent",
    "object_count",
    "scene_labels",
    "reference_range",
    "query_range",
    "query_length",
    "waypoint_spacing",
    "noise_sigma",
    "dropout",
    "label_flip",
    "min_overlap",
    "attempts",
    "windows",
    "pr_thresholds",
    "repetitions",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse().map_err(|_| CliError::Config(format!("line {line}: invalid value {raw:?} for {key}")))
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>, CliError> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| value(line, key, s)).collect()
}

/// Accepts the registry names plus the long spellings.
pub fn descriptor_name(raw: &str) -> &str {
    match raw {
        "neighbor-vector" | "neighbor_vector" => "neighbor",
        "random-walk" | "random_walk" => "walk",
        other => other,
    }
}

impl RunConfig {
    pub fn from_layers(file: Option<&str>, flags: &FlagOverrides) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(text) = file {
            cfg.apply_file(text)?;
        }
        cfg.apply_flags(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::Config(format!("line {line}: expected key = value, got {content:?}")))?;
            self.set(line, key, val)?;
        }
        Ok(())
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), CliError> {
        let p = &mut self.pipeline;
        let s = &mut self.scenario;
        match key {
            "connectivity_threshold" => p.connectivity_threshold = value(line, key, v)?,
            "merge_radius" => p.merge_radius = value(line, key, v)?,
            "cluster_distance" => p.cluster_distance = value(line, key, v)?,
            "min_cluster_size" => p.min_cluster_size = value(line, key, v)?,
            "score_threshold" => p.candidates.score_threshold = value(line, key, v)?,
            "ransac_iterations" => p.ransac.iterations = value(line, key, v)?,
            "ransac_tolerance" => p.ransac.inlier_threshold = value(line, key, v)?,
            "descriptor" => p.descriptor = descriptor_name(v).to_string(),
            "weights" => p.weights = v.to_string(),
            "path_length" => p.descriptor_params.path_length = value(line, key, v)?,
            "walk_count" => p.descriptor_params.walk_count = value(line, key, v)?,
            "walk_depth" => p.descriptor_params.walk_depth = value(line, key, v)?,
            "seed" => self.seed = value(line, key, v)?,
            "localization_threshold" => self.localization_threshold = value(line, key, v)?,
            "good_match_radius" => self.good_match_radius = value(line, key, v)?,
            "drop_labels" => self.drop_labels = list(line, key, v)?,
            "label_count" => self.label_count = Some(value(line, key, v)?),
            "scene_extent" => {
                let e: Vec<f64> = list(line, key, v)?;
                let [x, y, z] = e[..] else {
                    return Err(CliError::Config(format!("line {line}: scene_extent needs three comma-separated values")));
                };
                s.scene.extent = Vector3::new(x, y, z);
            }
            "object_count" => s.scene.object_count = value(line, key, v)?,
            "scene_labels" => {
                let n: usize = value(line, key, v)?;
                s.scene.label_probabilities = vec![1.0 / n as f64; n];
            }
            "reference_range" => s.reference_range = value(line, key, v)?,
            "query_range" => s.query_range = value(line, key, v)?,
            "query_length" => s.query_length = value(line, key, v)?,
            "waypoint_spacing" => s.waypoint_spacing = value(line, key, v)?,
            "noise_sigma" => s.noise_sigma = value(line, key, v)?,
            "dropout" => s.dropout = value(line, key, v)?,
            "label_flip" => s.label_flip = value(line, key, v)?,
            "min_overlap" => s.min_overlap = value(line, key, v)?,
            "attempts" => self.attempts = value(line, key, v)?,
            "windows" => self.windows = value(line, key, v)?,
            "pr_thresholds" => self.pr_thresholds = list(line, key, v)?,
            "repetitions" => self.repetitions = value(line, key, v)?,
            _ => return Err(CliError::Config(format!("line {line}: unknown key {key:?}; known keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, f: &FlagOverrides) {
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = f.connectivity {
            self.pipeline.connectivity_threshold = v;
        }
        if let Some(v) = f.score_threshold {
            self.pipeline.candidates.score_threshold = v;
        }
        if let Some(v) = f.ransac_iters {
            self.pipeline.ransac.iterations = v;
        }
        if let Some(v) = f.ransac_tol {
            self.pipeline.ransac.inlier_threshold = v;
        }
        if let Some(v) = &f.descriptor {
            self.pipeline.descriptor = descriptor_name(v).to_string();
        }
        if let Some(v) = &f.drop_labels {
            self.drop_labels = v.clone();
        }
    }

    /// Checks ranges and pushes the master seed into every seeded stage.
    pub fn validate(&mut self) -> Result<(), CliError> {
        let p = &self.pipeline;
        let positive = [
            ("connectivity_threshold", p.connectivity_threshold),
            ("merge_radius", p.merge_radius),
            ("cluster_distance", p.cluster_distance),
            ("ransac_tolerance", p.ransac.inlier_threshold),
            ("localization_threshold", self.localization_threshold),
            ("good_match_radius", self.good_match_radius),
            ("reference_range", self.scenario.reference_range),
            ("query_range", self.scenario.query_range),
            ("waypoint_spacing", self.scenario.waypoint_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&p.candidates.score_threshold) {
            return Err(CliError::Config(format!("score_threshold must lie in [0, 1], got {}", p.candidates.score_threshold)));
        }
        for (name, v) in [("dropout", self.scenario.dropout), ("label_flip", self.scenario.label_flip)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.scenario.noise_sigma >= 0.0) || !(self.scenario.query_length >= 0.0) {
            return Err(CliError::Config("noise_sigma and query_length must be non-negative".into()));
        }
        for (name, v) in [
            ("ransac_iterations", p.ransac.iterations),
            ("min_cluster_size", p.min_cluster_size),
            ("object_count", self.scenario.scene.object_count),
            ("attempts", self.attempts),
            ("windows", self.windows),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.label_count == Some(0) {
            return Err(CliError::Config("label_count must be at least 1".into()));
        }
        if self.repetitions < 3 {
            return Err(CliError::Config(format!("repetitions must be at least 3, got {}", self.repetitions)));
        }
        if self.pr_thresholds.is_empty() {
            return Err(CliError::Config("pr_thresholds must list at least one value".into()));
        }
        self.pipeline.ransac.seed = self.seed;
        self.pipeline.descriptor_params.seed = self.seed;
        self.scenario.scene.seed = self.seed;
        Ok(())
    }

    /// Effective settings, one `key = value` per line, in a form
    /// [`RunConfig::apply_file`] reads back.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let s = &self.scenario;
        let join = |v: &[String]| v.join(",");
        let e = s.scene.extent;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("connectivity_threshold", p.connectivity_threshold.to_string());
        put("merge_radius", p.merge_radius.to_string());
        put("cluster_distance", p.cluster_distance.to_string());
        put("min_cluster_size", p.min_cluster_size.to_string());
        put("score_threshold", p.candidates.score_threshold.to_string());
        put("ransac_iterations", p.ransac.iterations.to_string());
        put("ransac_tolerance", p.ransac.inlier_threshold.to_string());
        put("descriptor", p.descriptor.clone());
        put("weights", p.weights.clone());
        put("path_length", p.descriptor_params.path_length.to_string());
        put("walk_count", p.descriptor_params.walk_count.to_string());
        put("walk_depth", p.descriptor_params.walk_depth.to_string());
        put("seed", self.seed.to_string());
        put("localization_threshold", self.localization_threshold.to_string());
        put("good_match_radius", self.good_match_radius.to_string());
        put("drop_labels", join(&self.drop_labels));
        if let Some(n) = self.label_count {
            put("label_count", n.to_string());
        }
        put("scene_extent", format!("{},{},{}", e.x, e.y, e.z));
        put("object_count", s.scene.object_count.to_string());
        put("scene_labels", s.scene.label_count().to_string());
        put("reference_range", s.reference_range.to_string());
        put("query_range", s.query_range.to_string());
        put("query_length", s.query_length.to_string());
        put("waypoint_spacing", s.waypoint_spacing.to_string());
        put("noise_sigma", s.noise_sigma.to_string());
        put("dropout", s.dropout.to_string());
        put("label_flip", s.label_flip.to_string());
        put("min_overlap", s.min_overlap.to_string());
        put("attempts", self.attempts.to_string());
        put("windows", self.windows.to_string());
        put("pr_thresholds", self.pr_thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","));
        put("repetitions", self.repetitions.to_string());
        out
    }
}
