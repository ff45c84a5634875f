use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use semloc_core::descriptors::descriptors_to_csv;
use semloc_core::eval::{bench, good_match_stats, pr_curve, pr_to_csv, run_attempt, GoodMatchStats, LocalizationAttempt};
use semloc_core::extraction::LabeledPoint;
use semloc_core::io::{graph_from_json, graph_to_json, points_from_text, read_to_string, transform_from_json, transform_to_json, transform_to_text};
use semloc_core::matching::matches_to_csv;
use semloc_core::pipeline::{graph_from_nodes, graph_from_points};
use semloc_core::synth::{derive_seed, generate_scenario, observe_windows, Scenario, ScenarioSpec};
use semloc_core::{build_graph, LabelSet, Localizer, SemanticGraph, SemanticNode};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

/// Where a command writes; every written path is echoed on stdout.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        println!("{}", path.display());
        Ok(())
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

enum Input {
    Graph(SemanticGraph),
    Points(Vec<LabeledPoint>),
}

/// Graph JSON if the file starts with `{`, otherwise a point list.
fn load(path: &Path) -> Result<Input, CliError> {
    let text = read_to_string(path).map_err(|e| CliError::from_format(path, e))?;
    if text.trim_start().starts_with('{') {
        graph_from_json(&text).map(Input::Graph).map_err(|e| CliError::from_format(path, e))
    } else {
        points_from_text(&text).map(Input::Points).map_err(|e| CliError::from_format(path, e))
    }
}

/// One label set for all inputs: taken from graph files when present (they
/// must agree), else `label_count`, else one past the largest point label.
fn shared_labels(inputs: &[(&Path, &Input)], cfg: &RunConfig) -> Result<LabelSet, CliError> {
    let mut from_graphs: Option<(&Path, &LabelSet)> = None;
    for (path, input) in inputs {
        if let Input::Graph(g) = input {
            match from_graphs {
                Some((first, labels)) if labels != g.labels() => {
                    return Err(CliError::Parse {
                        path: path.display().to_string(),
                        message: format!("label set differs from {}", first.display()),
                    })
                }
                None => from_graphs = Some((path, g.labels())),
                _ => {}
            }
        }
    }
    let labels = match from_graphs {
        Some((_, labels)) => labels.clone(),
        None => {
            let inferred = inputs
                .iter()
                .filter_map(|(_, i)| match i {
                    Input::Points(p) => p.iter().map(|x| x.label + 1).max(),
                    Input::Graph(_) => None,
                })
                .max()
                .unwrap_or(1);
            LabelSet::numbered(cfg.label_count.unwrap_or(inferred)).map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    for (path, input) in inputs {
        if let Input::Points(points) = input {
            if let Some((line, p)) = points.iter().enumerate().find(|(_, p)| p.label >= labels.len()) {
                return Err(CliError::Parse {
                    path: path.display().to_string(),
                    message: format!("point {} has label {} but only {} labels are known", line + 1, p.label, labels.len()),
                });
            }
        }
    }
    Ok(labels)
}

/// Resolves `drop_labels` entries, given as names or numeric ids.
fn resolve_drop_labels(labels: &LabelSet, names: &[String]) -> Result<Vec<usize>, CliError> {
    names
        .iter()
        .map(|n| {
            labels
                .index_of(n)
                .or_else(|| n.parse().ok().filter(|i| *i < labels.len()))
                .ok_or_else(|| CliError::Config(format!("drop_labels: unknown label {n:?}")))
        })
        .collect()
}

fn to_graph(input: &Input, labels: &LabelSet, cfg: &RunConfig, drop: &[usize]) -> Result<SemanticGraph, CliError> {
    let graph = match input {
        // Re-merged and re-linked under this run's settings; merging is
        // idempotent, so already-merged graphs keep their nodes.
        Input::Graph(g) => graph_from_nodes(labels, g.nodes(), &cfg.pipeline, drop),
        Input::Points(p) => graph_from_points(labels, p, &cfg.pipeline, drop),
    };
    graph.map_err(|e| CliError::Localize(e.into()))
}

fn stats_json(s: &GoodMatchStats) -> serde_json::Value {
    json!({ "good": s.good, "total": s.total, "rate": s.rate, "flagged": s.flagged })
}

pub fn localize(cfg: &RunConfig, reference: &Path, query: &Path, ground_truth: Option<&Path>, out: &Output) -> Result<(), CliError> {
    let (ref_input, query_input) = (load(reference)?, load(query)?);
    let labels = shared_labels(&[(reference, &ref_input), (query, &query_input)], cfg)?;
    let drop = resolve_drop_labels(&labels, &cfg.drop_labels)?;
    let target = to_graph(&ref_input, &labels, cfg, &drop)?;
    let source = to_graph(&query_input, &labels, cfg, &drop)?;
    let truth = ground_truth
        .map(|p| read_to_string(p).and_then(|t| transform_from_json(&t)).map_err(|e| CliError::from_format(p, e)))
        .transpose()?;
    log::info!("query graph: {} nodes, {} edges; reference graph: {} nodes, {} edges", source.len(), source.edge_count(), target.len(), target.edge_count());

    let localizer = Localizer::new(cfg.pipeline.clone())?;
    let result = localizer.localize(&source, &target)?;
    log::info!("{} candidates, {} inliers, {} pose pairs", result.candidates.len(), result.matched.inlier_count, result.pose_inliers.len());

    let mut summary = json!({
        "descriptor": cfg.pipeline.descriptor,
        "query_nodes": source.len(),
        "reference_nodes": target.len(),
        "candidates": result.candidates.len(),
        "inliers": result.matched.inlier_count,
        "pose_pairs": result.pose_inliers.len(),
        "degenerate_samples": result.matched.degenerate_samples,
    });
    if let Some(truth) = truth {
        let (sp, tp) = (source.positions(), target.positions());
        let good = |set: &[_]| good_match_stats(set, &sp, &tp, &truth, cfg.good_match_radius);
        summary["good_matches"] = stats_json(&good(&result.matched.inliers));
        summary["good_candidates"] = stats_json(&good(&result.candidates));
        summary["translation_error"] = json!(result.transform.translation_error(&truth));
        summary["rotation_error_deg"] = json!(result.transform.rotation_error(&truth).to_degrees());
    }

    out.write("transform.json", &transform_to_json(&result.transform))?;
    out.write("transform.txt", &transform_to_text(&result.transform))?;
    out.write("matches.csv", &matches_to_csv(&result.candidates, &result.matched.inlier_indices))?;
    out.write_json("summary.json", &summary)
}

pub fn extract(cfg: &RunConfig, input: &Path, out: &Output) -> Result<(), CliError> {
    let data = load(input)?;
    let labels = shared_labels(&[(input, &data)], cfg)?;
    let drop = resolve_drop_labels(&labels, &cfg.drop_labels)?;
    let graph = to_graph(&data, &labels, cfg, &drop)?;
    let localizer = Localizer::new(cfg.pipeline.clone())?;
    let table = localizer.extractor().extract(&graph);
    out.write("graph.json", &graph_to_json(&graph))?;
    out.write("descriptors.csv", &descriptors_to_csv(table.as_ref()))
}

fn scenario(cfg: &RunConfig, seed: u64) -> Result<Scenario, CliError> {
    let mut spec: ScenarioSpec = cfg.scenario.clone();
    spec.scene.seed = seed;
    generate_scenario(&spec).map_err(|e| CliError::Other(e.to_string()))
}

/// Raw observations as graph files: no merging, linked at the configured
/// connectivity threshold.
fn observation_graph(labels: &LabelSet, nodes: &[SemanticNode], cfg: &RunConfig) -> Result<String, CliError> {
    let g = build_graph(labels.clone(), nodes.to_vec(), cfg.pipeline.connectivity_threshold).map_err(|e| CliError::Localize(e.into()))?;
    Ok(graph_to_json(&g))
}

pub fn synth(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let s = scenario(cfg, cfg.seed)?;
    log::info!("scene: {} objects; reference sees {}, query sees {}, {} shared", s.scene.len(), s.reference.nodes.len(), s.query.nodes.len(), s.shared_objects());
    out.write("scene.json", &observation_graph(&s.labels, &s.scene, cfg)?)?;
    out.write("reference.json", &observation_graph(&s.labels, &s.reference.nodes, cfg)?)?;
    out.write("query.json", &observation_graph(&s.labels, &s.query.nodes, cfg)?)?;
    out.write("ground_truth.json", &transform_to_json(&s.ground_truth))?;
    out.write("ground_truth.txt", &transform_to_text(&s.ground_truth))
}

fn without_labels(nodes: &[SemanticNode], drop: &[usize]) -> Vec<SemanticNode> {
    nodes.iter().filter(|n| !drop.contains(&n.label)).cloned().collect()
}

pub fn eval_pr(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let localizer = Localizer::new(cfg.pipeline.clone())?;
    // Scenario k is seeded independently of how many others run.
    let per_scenario: Vec<Vec<(u64, usize, usize, LocalizationAttempt)>> = (0..cfg.attempts as u64)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(cfg.seed, k);
            let s = scenario(cfg, seed)?;
            let drop = resolve_drop_labels(&s.labels, &cfg.drop_labels)?;
            let reference = without_labels(&s.reference.nodes, &drop);
            let windows = if cfg.windows == 1 {
                vec![s.query.clone()]
            } else {
                observe_windows(&s.scene, s.labels.len(), &s.query_view, cfg.windows).map_err(|e| CliError::Other(e.to_string()))?
            };
            Ok(windows
                .iter()
                .enumerate()
                .map(|(w, obs)| {
                    let query = without_labels(&obs.nodes, &drop);
                    (seed, w, query.len(), run_attempt(&localizer, &s.labels, &query, &reference, &s.ground_truth))
                })
                .collect())
        })
        .collect::<Result<_, CliError>>()?;
    let rows: Vec<_> = per_scenario.into_iter().flatten().collect();
    let attempts: Vec<LocalizationAttempt> = rows.iter().map(|r| r.3.clone()).collect();

    let mut csv = String::from("attempt,scenario_seed,window,query_nodes,inliers,translation_error,rotation_error_deg\n");
    for (i, (seed, w, n, a)) in rows.iter().enumerate() {
        csv.push_str(&format!("{i},{seed},{w},{n},{},{:e},{:e}\n", a.inlier_count, a.translation_error(), a.rotation_error_deg()));
    }
    let curve = pr_curve(&attempts, cfg.localization_threshold, &cfg.pr_thresholds);
    out.write("pr.csv", &pr_to_csv(&curve))?;
    out.write("attempts.csv", &csv)
}

pub fn bench_cmd(cfg: &RunConfig, inputs: Option<(&Path, &Path)>, out: &Output) -> Result<(), CliError> {
    let (labels, source, target) = match inputs {
        Some((reference, query)) => {
            let (r, q) = (load(reference)?, load(query)?);
            let labels = shared_labels(&[(reference, &r), (query, &q)], cfg)?;
            let nodes = |i: &Input| -> Result<Vec<SemanticNode>, CliError> {
                match i {
                    Input::Graph(g) => Ok(g.nodes().to_vec()),
                    Input::Points(p) => Ok(semloc_core::extraction::extract_nodes(p, cfg.pipeline.cluster_distance, cfg.pipeline.min_cluster_size)),
                }
            };
            let (target, source) = (nodes(&r)?, nodes(&q)?);
            (labels, source, target)
        }
        None => {
            let s = scenario(cfg, cfg.seed)?;
            (s.labels, s.query.nodes, s.reference.nodes)
        }
    };
    let drop = resolve_drop_labels(&labels, &cfg.drop_labels)?;
    let (source, target) = (without_labels(&source, &drop), without_labels(&target, &drop));
    let localizer = Localizer::new(cfg.pipeline.clone())?;
    let report = bench(&localizer, &labels, &source, &target, cfg.repetitions).map_err(|e| match e {
        semloc_core::eval::BenchError::Localize(l) => CliError::Localize(l),
        other => CliError::Config(other.to_string()),
    })?;
    print!("{report}");
    out.write("timing.json", &report.to_json())
}
