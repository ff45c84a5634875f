//! Rigid transforms and the closed-form weighted registration solve.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Rotation3, SymmetricEigen, Unit, Vector3};
use thiserror::Error;

/// Spread (meters, RMS about the best-fit line) below which a point set is
/// treated as collinear or coincident.
pub const DEGENERACY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Proper rigid motion `p ↦ R p + t`.
#[derive(Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RigidTransform")
            .field("rotation_deg", &self.rotation_angle().to_degrees())
            .field("translation", &self.translation.as_slice())
            .finish()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, PoseError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !(ortho < 1e-9) || !(rotation.determinant() > 0.0) {
            return Err(PoseError::InvalidArgument(format!(
                "rotation is not proper orthonormal (|RᵀR − I| = {ortho:.3e}, det = {:.6})",
                rotation.determinant()
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(PoseError::InvalidArgument("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self { rotation: *r.matrix(), translation }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *rotation.matrix(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    /// Rotation magnitude in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos loses precision near zero; the skew part is better conditioned there.
        let skew = Vector3::new(
            self.rotation[(2, 1)] - self.rotation[(1, 2)],
            self.rotation[(0, 2)] - self.rotation[(2, 0)],
            self.rotation[(1, 0)] - self.rotation[(0, 1)],
        );
        (skew.norm() / 2.0).atan2(c)
    }

    /// Angle of `R_self · R_otherᵀ`, radians.
    pub fn rotation_error(&self, other: &Self) -> f64 {
        let delta = Self { rotation: self.rotation * other.rotation.transpose(), translation: Vector3::zeros() };
        delta.rotation_angle()
    }

    pub fn translation_error(&self, other: &Self) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// `R p + t`.
pub fn apply(t: &RigidTransform, p: &Vector3<f64>) -> Vector3<f64> {
    t.apply(p)
}

/// `‖q − R p − t‖`.
pub fn residual(pair: (&Vector3<f64>, &Vector3<f64>), t: &RigidTransform) -> f64 {
    (pair.1 - t.apply(pair.0)).norm()
}

/// Normalized weighted sum of squared residuals.
pub fn objective(pairs: &[(Vector3<f64>, Vector3<f64>)], weights: &[f64], t: &RigidTransform) -> f64 {
    let total: f64 = weights.iter().sum();
    pairs.iter().zip(weights).map(|((p, q), w)| w * (q - t.apply(p)).norm_squared()).sum::<f64>() / total
}

/// RMS distance of a weighted point set from its best-fit line. Zero for
/// collinear or coincident sets.
pub fn off_line_spread(points: impl Iterator<Item = (Vector3<f64>, f64)> + Clone) -> f64 {
    let total: f64 = points.clone().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let centroid = points.clone().map(|(p, w)| p * w).sum::<Vector3<f64>>() / total;
    let mut scatter = Matrix3::zeros();
    for (p, w) in points.clone() {
        let d = p - centroid;
        scatter += d * d.transpose() * (w / total);
    }
    let eig = SymmetricEigen::new(scatter);
    let major = eig.eigenvalues.imax();
    let axis = eig.eigenvectors.column(major).into_owned();
    // Perpendicular offsets measured directly; eigenvalues alone would lose
    // the small ones to round-off at large coordinates.
    let perp: f64 = points
        .map(|(p, w)| {
            let d = p - centroid;
            (d - axis * d.dot(&axis)).norm_squared() * (w / total)
        })
        .sum();
    perp.sqrt()
}

/// Global minimizer of `Σ W_k ‖q_k − R p_k − t‖²` over proper rotations and
/// translations: weighted centroids, SVD of the weighted cross-covariance,
/// reflection-corrected.
pub fn solve_rigid(pairs: &[(Vector3<f64>, Vector3<f64>)], weights: &[f64]) -> Result<RigidTransform, PoseError> {
    if pairs.len() != weights.len() {
        return Err(PoseError::InvalidArgument(format!("{} pairs but {} weights", pairs.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(PoseError::InvalidArgument(format!("weights must be non-negative and finite, got {w}")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(PoseError::InvalidArgument("weights sum to zero".into()));
    }
    let support = weights.iter().filter(|w| **w > 0.0).count();
    if support < 3 {
        return Err(PoseError::Degenerate(format!("{support} weighted pairs, need at least 3")));
    }
    let source = || pairs.iter().zip(weights).map(|((p, _), w)| (*p, *w));
    let target = || pairs.iter().zip(weights).map(|((_, q), w)| (*q, *w));
    let spread_p = off_line_spread(source());
    let spread_q = off_line_spread(target());
    if spread_p < DEGENERACY_TOLERANCE || spread_q < DEGENERACY_TOLERANCE {
        return Err(PoseError::Degenerate(format!(
            "points are collinear or coincident (off-line spread {:.3e} / {:.3e} m)",
            spread_p, spread_q
        )));
    }

    let centroid_p = source().map(|(p, w)| p * w).sum::<Vector3<f64>>() / total;
    let centroid_q = target().map(|(q, w)| q * w).sum::<Vector3<f64>>() / total;
    let mut cross = Matrix3::zeros();
    for ((p, q), w) in pairs.iter().zip(weights) {
        cross += (q - centroid_q) * (p - centroid_p).transpose() * (w / total);
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = centroid_q - rotation * centroid_p;
    Ok(RigidTransform { rotation, translation })
}

/// How correspondence weights are derived from the two nodes' sizes.
pub trait WeightScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn weight(&self, size_a: u32, size_b: u32) -> f64;

    /// Weights for a list of size pairs, normalized to sum 1.
    fn weights(&self, sizes: &[(u32, u32)]) -> Vec<f64> {
        let raw: Vec<f64> = sizes.iter().map(|&(a, b)| self.weight(a, b)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.into_iter().map(|w| w / total).collect()
        } else {
            raw
        }
    }
}

/// `min(size_a, size_b)`: the smaller of the two observations bounds how
/// much of the object both maps share.
pub struct MinSizeWeights;

impl WeightScheme for MinSizeWeights {
    fn name(&self) -> &'static str {
        "min-size"
    }

    fn weight(&self, a: u32, b: u32) -> f64 {
        a.min(b) as f64
    }
}

pub struct UniformWeights;

impl WeightScheme for UniformWeights {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weight(&self, _: u32, _: u32) -> f64 {
        1.0
    }
}

pub fn weight_scheme(name: &str) -> Option<Box<dyn WeightScheme>> {
    match name {
        "min-size" => Some(Box::new(MinSizeWeights)),
        "uniform" => Some(Box::new(UniformWeights)),
        _ => None,
    }
}

pub const WEIGHT_SCHEMES: &[&str] = &["min-size", "uniform"];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn tetra() -> Vec<Vector3<f64>> {
        vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()]
    }

    #[test]
    fn identity_pairs() {
        let pairs: Vec<_> = tetra().into_iter().map(|p| (p, p)).collect();
        let t = solve_rigid(&pairs, &[1.0; 4]).unwrap();
        assert_abs_diff_eq!(*t.rotation(), Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(*t.translation(), Vector3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(objective(&pairs, &[1.0; 4], &t), 0.0, epsilon = 1e-24);
    }

    #[test]
    fn recovers_quarter_turn() {
        let q = [Vector3::new(1.0, 2.0, 3.0), Vector3::new(1.0, 3.0, 3.0), Vector3::new(0.0, 2.0, 3.0), Vector3::new(1.0, 2.0, 4.0)];
        let pairs: Vec<_> = tetra().into_iter().zip(q).collect();
        let t = solve_rigid(&pairs, &[0.25; 4]).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(*t.rotation(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(*t.translation(), Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-9);
        // forward-apply oracle
        let known = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        for (p, q) in &pairs {
            assert_abs_diff_eq!(known.apply(p), *q, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_and_bad_weights() {
        let line: Vec<_> = (0..5).map(|i| (Vector3::x() * i as f64, Vector3::y() * i as f64)).collect();
        assert!(matches!(solve_rigid(&line, &[1.0; 5]), Err(PoseError::Degenerate(_))));
        let same: Vec<_> = (0..4).map(|_| (Vector3::x(), Vector3::y())).collect();
        assert!(matches!(solve_rigid(&same, &[1.0; 4]), Err(PoseError::Degenerate(_))));
        let pairs: Vec<_> = tetra().into_iter().map(|p| (p, p)).collect();
        assert!(matches!(solve_rigid(&pairs, &[1.0, -1.0, 1.0, 1.0]), Err(PoseError::InvalidArgument(_))));
        assert!(matches!(solve_rigid(&pairs, &[0.0; 4]), Err(PoseError::InvalidArgument(_))));
        assert!(matches!(solve_rigid(&pairs, &[1.0; 3]), Err(PoseError::InvalidArgument(_))));
    }

    #[test]
    fn apply_and_inverse() {
        let p = Vector3::new(-3.0, 0.5, 8.0);
        assert_eq!(RigidTransform::identity().apply(&p), p);
        assert_eq!(apply(&RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0)), &Vector3::zeros()), Vector3::new(1.0, 2.0, 3.0));
        let t = RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, -0.5), 2.2, Vector3::new(4.0, -7.0, 0.1));
        assert_abs_diff_eq!(t.apply(&t.inverse().apply(&p)), p, epsilon = 1e-12);
    }

    #[test]
    fn residual_cases() {
        let t = RigidTransform::from_axis_angle(Vector3::z(), 0.7, Vector3::new(1.0, 1.0, 0.0));
        let p = Vector3::new(2.0, -1.0, 4.0);
        assert_eq!(residual((&p, &t.apply(&p)), &t), 0.0);
        let q = t.apply(&p) + Vector3::new(3.0, 4.0, 0.0);
        assert_abs_diff_eq!(residual((&p, &q), &t), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_matches_direct_arithmetic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = RigidTransform::from_axis_angle(
                Vector3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1),
                rng.random_range(-3.0..3.0),
                Vector3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)),
            );
            let p = Vector3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
            let q = Vector3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
            let r = t.rotation();
            let mut sq = 0.0;
            for i in 0..3 {
                let rp = r[(i, 0)] * p[0] + r[(i, 1)] * p[1] + r[(i, 2)] * p[2];
                sq += (q[i] - rp - t.translation()[i]).powi(2);
            }
            assert_abs_diff_eq!(residual((&p, &q), &t), sq.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_angle_small_and_large() {
        for angle in [0.0, 1e-9, 1e-4, 0.5, 3.0, std::f64::consts::PI] {
            let t = RigidTransform::from_axis_angle(Vector3::new(0.2, 0.3, 1.0), angle, Vector3::zeros());
            assert_abs_diff_eq!(t.rotation_angle(), angle, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_schemes() {
        let w = MinSizeWeights.weights(&[(4, 10), (6, 2)]);
        assert_abs_diff_eq!(w[0], 4.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0 / 6.0, epsilon = 1e-15);
        assert_eq!(UniformWeights.weights(&[(1, 9), (3, 3)]), vec![0.5, 0.5]);
        for name in WEIGHT_SCHEMES {
            assert_eq!(weight_scheme(name).unwrap().name(), *name);
        }
        assert!(weight_scheme("max").is_none());
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-1.0..1.0f64), -3.1..3.1f64, prop::array::uniform3(-50.0..50.0f64))
            .prop_filter("axis", |(a, _, _)| Vector3::from(*a).norm() > 1e-2)
            .prop_map(|(a, ang, t)| RigidTransform::from_axis_angle(Vector3::from(a), ang, Vector3::from(t)))
    }

    fn arb_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vector3<f64>>> {
        prop::collection::vec(prop::array::uniform3(-20.0..20.0f64).prop_map(Vector3::from), n)
            .prop_filter("spread", |v| off_line_spread(v.iter().map(|p| (*p, 1.0))) > 0.5)
    }

    proptest! {
        #[test]
        fn exact_for_noiseless_pairs(t in arb_transform(), ps in arb_points(3..30)) {
            let pairs: Vec<_> = ps.iter().map(|p| (*p, t.apply(p))).collect();
            let est = solve_rigid(&pairs, &vec![1.0; pairs.len()]).unwrap();
            for (p, q) in &pairs {
                prop_assert!((est.apply(p) - q).norm() < 1e-9);
            }
        }

        #[test]
        fn perturbations_never_improve(t in arb_transform(), ps in arb_points(4..20), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<_> = ps.iter().map(|p| (*p, t.apply(p) + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))).collect();
            let weights: Vec<f64> = (0..pairs.len()).map(|_| rng.random_range(0.1..5.0)).collect();
            let est = solve_rigid(&pairs, &weights).unwrap();
            let best = objective(&pairs, &weights, &est);
            for _ in 0..20 {
                let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let shift = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize() * 1e-3;
                let d = RigidTransform::from_axis_angle(axis, 1e-3, shift);
                let moved = d.compose(&est);
                prop_assert!(objective(&pairs, &weights, &moved) >= best - 1e-12);
            }
        }

        #[test]
        fn weight_scale_invariance(t in arb_transform(), ps in arb_points(4..20), k in 0.01..100.0f64) {
            let pairs: Vec<_> = ps.iter().enumerate().map(|(i, p)| (*p, t.apply(p) + Vector3::new(0.1 * (i % 3) as f64, -0.05 * (i % 2) as f64, 0.02))).collect();
            let w: Vec<f64> = (0..pairs.len()).map(|i| 1.0 + i as f64).collect();
            let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
            let a = solve_rigid(&pairs, &w).unwrap();
            let b = solve_rigid(&pairs, &scaled).unwrap();
            prop_assert!((a.rotation() - b.rotation()).norm() < 1e-12);
            prop_assert!((a.translation() - b.translation()).norm() < 1e-12);
        }

        #[test]
        fn equivariant_under_common_motion(t in arb_transform(), s in arb_transform(), ps in arb_points(4..20)) {
            let pairs: Vec<_> = ps.iter().enumerate().map(|(i, p)| (*p, t.apply(p) + Vector3::new(0.2 * (i % 2) as f64, 0.0, -0.1 * (i % 3) as f64))).collect();
            let w = vec![1.0; pairs.len()];
            let base = solve_rigid(&pairs, &w).unwrap();
            let moved: Vec<_> = pairs.iter().map(|(p, q)| (s.apply(p), s.apply(q))).collect();
            let conj = solve_rigid(&moved, &w).unwrap();
            let expected = s.compose(&base).compose(&s.inverse());
            prop_assert!((conj.rotation() - expected.rotation()).norm() < 1e-9);
            prop_assert!((conj.translation() - expected.translation()).norm() < 1e-9);
        }
    }
}
