//! Synthetic ground-truth scenes and noisy robot-frame observations of them.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::{Normal, StandardNormal};
use thiserror::Error;

use crate::graph::{LabelSet, NodeId, SemanticNode};
use crate::pose::RigidTransform;

pub const MIN_OBJECT_SIZE: u32 = 5;
pub const MAX_OBJECT_SIZE: u32 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("could not place a query trajectory with {required} shared objects after {attempts} tries (best {best})")]
    InsufficientOverlap { required: usize, best: usize, attempts: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Scene occupies `[0, extent.x] × [0, extent.y] × [0, extent.z]`.
    pub extent: Vector3<f64>,
    pub object_count: usize,
    /// Per-label sampling probabilities; the length fixes the label count.
    pub label_probabilities: Vec<f64>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn uniform(extent: Vector3<f64>, object_count: usize, label_count: usize, seed: u64) -> Self {
        Self { extent, object_count, label_probabilities: vec![1.0 / label_count as f64; label_count], seed }
    }

    pub fn label_count(&self) -> usize {
        self.label_probabilities.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.object_count == 0 {
            return Err(SynthError::InvalidScene("object count must be at least 1".into()));
        }
        if !self.extent.iter().all(|e| e.is_finite() && *e >= 0.0) {
            return Err(SynthError::InvalidScene("extent must be finite and non-negative".into()));
        }
        if self.label_probabilities.is_empty() || self.label_probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(SynthError::InvalidScene("label probabilities must be non-empty and non-negative".into()));
        }
        let sum: f64 = self.label_probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(SynthError::InvalidScene(format!("label probabilities sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Objects uniform in the extent, labels drawn from the label distribution,
/// sizes uniform in `[MIN_OBJECT_SIZE, MAX_OBJECT_SIZE]`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<SemanticNode>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = WeightedIndex::new(&spec.label_probabilities).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    let axis = |e: f64, rng: &mut ChaCha8Rng| if e > 0.0 { rng.random_range(0.0..=e) } else { 0.0 };
    Ok((0..spec.object_count)
        .map(|id| {
            let position = Vector3::new(axis(spec.extent.x, &mut rng), axis(spec.extent.y, &mut rng), axis(spec.extent.z, &mut rng));
            let label = labels.sample(&mut rng);
            let size = rng.random_range(MIN_OBJECT_SIZE..=MAX_OBJECT_SIZE);
            SemanticNode::new(id, label, position, size)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    /// Waypoints in the world frame.
    pub trajectory: Vec<Vector3<f64>>,
    /// Objects farther than this from every waypoint are unseen.
    pub sensor_range: f64,
    pub dropout: f64,
    /// Standard deviation of isotropic position noise, meters.
    pub noise_sigma: f64,
    pub label_flip: f64,
    /// Maps the observer's frame into the world frame.
    pub frame_offset: RigidTransform,
    pub seed: u64,
}

impl ViewSpec {
    /// Noise-free view of everything near `trajectory`, in world coordinates.
    pub fn perfect(trajectory: Vec<Vector3<f64>>, sensor_range: f64) -> Self {
        Self { trajectory, sensor_range, dropout: 0.0, noise_sigma: 0.0, label_flip: 0.0, frame_offset: RigidTransform::identity(), seed: 0 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.trajectory.is_empty() {
            return Err(SynthError::InvalidView("trajectory needs at least one waypoint".into()));
        }
        if !(self.sensor_range > 0.0) {
            return Err(SynthError::InvalidView(format!("sensor range must be positive, got {}", self.sensor_range)));
        }
        for (name, p) in [("dropout", self.dropout), ("label flip", self.label_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidView(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(SynthError::InvalidView(format!("noise sigma must be finite and non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Nodes seen by one robot, in its own frame, with the scene id each came
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub nodes: Vec<SemanticNode>,
    pub scene_ids: Vec<NodeId>,
}

/// Range filter, then independent dropout, Gaussian position noise and
/// uniform label flips (to a different label), then mapping into the
/// observer's frame through `frame_offset⁻¹`. Every object consumes the same
/// number of random draws whether or not it is kept.
pub fn observe(scene: &[SemanticNode], label_count: usize, view: &ViewSpec) -> Result<Observation, SynthError> {
    view.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(view.seed);
    let noise = Normal::new(0.0, view.noise_sigma).map_err(|e| SynthError::InvalidView(e.to_string()))?;
    let to_local = view.frame_offset.inverse();
    let mut out = Observation { nodes: Vec::new(), scene_ids: Vec::new() };
    for object in scene {
        let drop_draw: f64 = rng.random();
        let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        let flip_draw: f64 = rng.random();
        let replacement = rng.random_range(0..label_count.max(2) - 1);

        let in_range = view.trajectory.iter().any(|w| (object.position - w).norm() <= view.sensor_range);
        if !in_range || drop_draw < view.dropout {
            continue;
        }
        let mut label = object.label;
        if label_count > 1 && flip_draw < view.label_flip {
            // uniform over the other labels
            label = if replacement >= object.label { replacement + 1 } else { replacement };
        }
        let world = if view.noise_sigma > 0.0 { object.position + jitter } else { object.position };
        out.nodes.push(SemanticNode::new(out.nodes.len(), label, to_local.apply(&world), object.size));
        out.scene_ids.push(object.id);
    }
    Ok(out)
}

/// Splits the trajectory into `windows` consecutive runs of waypoints and
/// observes each separately, all in the same observer frame.
pub fn observe_windows(scene: &[SemanticNode], label_count: usize, view: &ViewSpec, windows: usize) -> Result<Vec<Observation>, SynthError> {
    view.validate()?;
    if windows == 0 || windows > view.trajectory.len() {
        return Err(SynthError::InvalidView(format!("cannot split {} waypoints into {windows} windows", view.trajectory.len())));
    }
    let n = view.trajectory.len();
    (0..windows)
        .map(|w| {
            let (lo, hi) = (w * n / windows, (w + 1) * n / windows);
            let sub = ViewSpec { trajectory: view.trajectory[lo..hi].to_vec(), seed: derive_seed(view.seed, w as u64 + 1), ..view.clone() };
            observe(scene, label_count, &sub)
        })
        .collect()
}

/// SplitMix64 step, for deriving independent sub-seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniformly distributed rotation.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let v: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
    let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
    UnitQuaternion::from_quaternion(q)
}

/// A two-robot experiment: a reference robot that mapped the scene and a
/// query robot with a partially overlapping view, each in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scene: SceneSpec,
    /// Reference robot range around its survey waypoints; infinite means a
    /// complete reference map.
    pub reference_range: f64,
    pub query_range: f64,
    /// Length of the query robot's straight drive, meters.
    pub query_length: f64,
    pub waypoint_spacing: f64,
    pub noise_sigma: f64,
    pub dropout: f64,
    pub label_flip: f64,
    /// Scene objects both robots must see.
    pub min_overlap: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::uniform(Vector3::new(110.0, 110.0, 5.0), 200, 8, 0),
            reference_range: f64::INFINITY,
            query_range: 30.0,
            query_length: 40.0,
            waypoint_spacing: 5.0,
            noise_sigma: 0.0,
            dropout: 0.0,
            label_flip: 0.0,
            min_overlap: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub labels: LabelSet,
    pub scene: Vec<SemanticNode>,
    pub reference_view: ViewSpec,
    pub query_view: ViewSpec,
    pub reference: Observation,
    pub query: Observation,
    /// Maps query-frame coordinates into the reference frame.
    pub ground_truth: RigidTransform,
}

impl Scenario {
    pub fn shared_objects(&self) -> usize {
        shared(&self.reference, &self.query)
    }
}

fn shared(a: &Observation, b: &Observation) -> usize {
    let ids: std::collections::HashSet<_> = a.scene_ids.iter().collect();
    b.scene_ids.iter().filter(|i| ids.contains(i)).count()
}

const PLACEMENT_ATTEMPTS: usize = 200;

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    let scene = generate_scene(&spec.scene)?;
    let labels = LabelSet::numbered(spec.scene.label_count()).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    if !(spec.waypoint_spacing > 0.0) || !(spec.query_length >= 0.0) {
        return Err(SynthError::InvalidView("waypoint spacing must be positive and query length non-negative".into()));
    }
    let seed = spec.scene.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA11CE));
    let extent = spec.scene.extent;
    let eye_height = extent.z.min(1.5);

    // Reference robot: lawnmower survey over the whole extent.
    let mut survey = Vec::new();
    let rows = (extent.y / spec.waypoint_spacing).floor() as usize + 1;
    let cols = (extent.x / spec.waypoint_spacing).floor() as usize + 1;
    for r in 0..rows {
        for c in 0..cols {
            let c = if r % 2 == 0 { c } else { cols - 1 - c };
            survey.push(Vector3::new(c as f64 * spec.waypoint_spacing, r as f64 * spec.waypoint_spacing, eye_height));
        }
    }
    let reference_offset = RigidTransform::from_rotation(random_rotation(&mut rng).to_rotation_matrix(), survey[0]);
    let reference_view = ViewSpec {
        trajectory: survey,
        sensor_range: spec.reference_range,
        dropout: spec.dropout,
        noise_sigma: spec.noise_sigma,
        label_flip: spec.label_flip,
        frame_offset: reference_offset,
        seed: derive_seed(seed, 1),
    };
    let reference = observe(&scene, labels.len(), &reference_view)?;

    let mut best = 0;
    for attempt in 0..PLACEMENT_ATTEMPTS {
        let start = Vector3::new(rng.random_range(0.0..=extent.x), rng.random_range(0.0..=extent.y), eye_height);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Vector3::new(heading.cos(), heading.sin(), 0.0);
        let steps = (spec.query_length / spec.waypoint_spacing).round() as usize;
        let trajectory: Vec<_> = (0..=steps).map(|k| start + dir * (k as f64 * spec.waypoint_spacing)).collect();
        let frame_offset = RigidTransform::from_rotation(random_rotation(&mut rng).to_rotation_matrix(), start);
        let query_view = ViewSpec {
            trajectory,
            sensor_range: spec.query_range,
            dropout: spec.dropout,
            noise_sigma: spec.noise_sigma,
            label_flip: spec.label_flip,
            frame_offset,
            seed: derive_seed(seed, 2 + attempt as u64),
        };
        let query = observe(&scene, labels.len(), &query_view)?;
        let overlap = shared(&reference, &query);
        best = best.max(overlap);
        if overlap >= spec.min_overlap {
            let ground_truth = reference_offset.inverse().compose(&frame_offset);
            return Ok(Scenario { labels, scene, reference_view, query_view, reference, query, ground_truth });
        }
    }
    Err(SynthError::InsufficientOverlap { required: spec.min_overlap, best, attempts: PLACEMENT_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SceneSpec {
        SceneSpec::uniform(Vector3::new(100.0, 80.0, 5.0), 150, 6, seed)
    }

    #[test]
    fn single_object_inside_extent() {
        let s = generate_scene(&SceneSpec { object_count: 1, ..spec(1) }).unwrap();
        assert_eq!(s.len(), 1);
        let p = s[0].position;
        assert!((0.0..=100.0).contains(&p.x) && (0.0..=80.0).contains(&p.y) && (0.0..=5.0).contains(&p.z));
        assert!((MIN_OBJECT_SIZE..=MAX_OBJECT_SIZE).contains(&s[0].size));
    }

    #[test]
    fn concentrated_distribution() {
        let s = generate_scene(&SceneSpec { label_probabilities: vec![1.0, 0.0, 0.0], ..spec(2) }).unwrap();
        assert!(s.iter().all(|n| n.label == 0));
    }

    #[test]
    fn scene_is_deterministic() {
        assert_eq!(generate_scene(&spec(3)).unwrap(), generate_scene(&spec(3)).unwrap());
        assert_ne!(generate_scene(&spec(3)).unwrap(), generate_scene(&spec(4)).unwrap());
    }

    #[test]
    fn scene_validation() {
        assert!(generate_scene(&SceneSpec { object_count: 0, ..spec(0) }).is_err());
        assert!(generate_scene(&SceneSpec { label_probabilities: vec![0.5, 0.2], ..spec(0) }).is_err());
    }

    #[test]
    fn identity_observation_is_scene() {
        let scene = generate_scene(&spec(5)).unwrap();
        let obs = observe(&scene, 6, &ViewSpec::perfect(vec![Vector3::zeros()], f64::INFINITY)).unwrap();
        assert_eq!(obs.nodes, scene);
        assert_eq!(obs.scene_ids, (0..scene.len()).collect::<Vec<_>>());
    }

    #[test]
    fn short_range_sees_nothing() {
        let scene = vec![SemanticNode::new(0, 0, Vector3::new(10.0, 0.0, 0.0), 5)];
        let obs = observe(&scene, 1, &ViewSpec::perfect(vec![Vector3::zeros()], 0.5)).unwrap();
        assert!(obs.nodes.is_empty());
    }

    #[test]
    fn frame_offset_round_trip() {
        let scene = generate_scene(&spec(6)).unwrap();
        let offset = RigidTransform::from_axis_angle(Vector3::new(0.2, -1.0, 0.4), 2.4, Vector3::new(30.0, -12.0, 4.0));
        let view = ViewSpec { frame_offset: offset, ..ViewSpec::perfect(vec![Vector3::new(50.0, 40.0, 0.0)], 30.0) };
        let obs = observe(&scene, 6, &view).unwrap();
        assert!(!obs.nodes.is_empty());
        for (n, &sid) in obs.nodes.iter().zip(&obs.scene_ids) {
            assert!((offset.apply(&n.position) - scene[sid].position).norm() < 1e-9);
            assert!((scene[sid].position - Vector3::new(50.0, 40.0, 0.0)).norm() <= 30.0);
        }
    }

    #[test]
    fn degradations_apply() {
        let scene = generate_scene(&SceneSpec { object_count: 2000, ..spec(7) }).unwrap();
        let view = ViewSpec { dropout: 0.2, noise_sigma: 1.0, label_flip: 0.1, seed: 9, ..ViewSpec::perfect(vec![Vector3::zeros()], f64::INFINITY) };
        let obs = observe(&scene, 6, &view).unwrap();
        let kept = obs.nodes.len() as f64 / 2000.0;
        assert!((0.75..0.85).contains(&kept), "{kept}");
        let flipped = obs.nodes.iter().zip(&obs.scene_ids).filter(|(n, &s)| n.label != scene[s].label).count() as f64 / obs.nodes.len() as f64;
        assert!((0.07..0.13).contains(&flipped), "{flipped}");
        let rms = (obs.nodes.iter().zip(&obs.scene_ids).map(|(n, &s)| (n.position - scene[s].position).norm_squared()).sum::<f64>() / obs.nodes.len() as f64 / 3.0).sqrt();
        assert!((0.9..1.1).contains(&rms), "{rms}");
        assert_eq!(obs, observe(&scene, 6, &view).unwrap());
    }

    #[test]
    fn view_validation() {
        let bad = ViewSpec { dropout: 1.5, ..ViewSpec::perfect(vec![Vector3::zeros()], 1.0) };
        assert!(observe(&[], 1, &bad).is_err());
        assert!(observe(&[], 1, &ViewSpec::perfect(vec![], 1.0)).is_err());
        assert!(observe(&[], 1, &ViewSpec::perfect(vec![Vector3::zeros()], 0.0)).is_err());
    }

    #[test]
    fn windows_partition_trajectory() {
        let scene = generate_scene(&spec(8)).unwrap();
        let traj: Vec<_> = (0..20).map(|k| Vector3::new(k as f64 * 5.0, 40.0, 1.0)).collect();
        let view = ViewSpec::perfect(traj, 15.0);
        let w = observe_windows(&scene, 6, &view, 4).unwrap();
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|o| !o.nodes.is_empty()));
        assert!(observe_windows(&scene, 6, &view, 21).is_err());
    }

    #[test]
    fn scenario_has_overlap_and_consistent_truth() {
        let spec = ScenarioSpec { scene: SceneSpec { seed: 12, ..ScenarioSpec::default().scene }, ..Default::default() };
        let s = generate_scenario(&spec).unwrap();
        assert!(s.shared_objects() >= 30);
        let by_scene: std::collections::HashMap<_, _> = s.reference.scene_ids.iter().zip(&s.reference.nodes).collect();
        for (n, sid) in s.query.nodes.iter().zip(&s.query.scene_ids) {
            if let Some(r) = by_scene.get(sid) {
                assert!((s.ground_truth.apply(&n.position) - r.position).norm() < 1e-9);
            }
        }
        let again = generate_scenario(&spec).unwrap();
        assert_eq!(again.query, s.query);
        assert_eq!(again.ground_truth, s.ground_truth);
    }

    #[test]
    fn impossible_overlap_errors() {
        let spec = ScenarioSpec { min_overlap: 10_000, ..Default::default() };
        assert!(matches!(generate_scenario(&spec), Err(SynthError::InsufficientOverlap { .. })));
    }
}
