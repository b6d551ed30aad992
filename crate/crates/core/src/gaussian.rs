//! Gaussian primitive sets.
//!
//! Opacity is stored as a logit and scales in the log domain; the
//! activations are `sigmoid` and `exp`. Rotations are `[w, x, y, z]`
//! quaternions, normalized on use. Spherical-harmonic coefficients are laid
//! out `[gaussian][coeff][channel]`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::image::Mask;
use crate::kinematics::SkeletonDef;
use crate::math::{logit, Aabb, quat_norm, quat_to_matrix, sigmoid};
use crate::sh;
use crate::spatial::KdTree;

/// Sample spread around a bone midpoint, as a fraction of the bone length.
pub const INIT_SIGMA_FACTOR: f64 = 0.25;
pub const INIT_OPACITY: f64 = 0.1;
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.005;
/// `bone_ids` marker for primitives without a birth bone.
pub const NO_BONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    pub sh_degree: u8,
    pub bone_ids: Option<Vec<u32>>,
}

/// One primitive, used for building clouds by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scales: [f64; 3],
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

impl Gaussian {
    /// Isotropic, view-independent primitive.
    pub fn isotropic(position: [f64; 3], scale: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scales: [scale.ln(); 3],
            opacity_logit: logit(opacity),
            sh: rgb.iter().map(|c| sh::dc_from_color(*c)).collect(),
        }
    }
}

impl GaussianCloud {
    pub fn empty(sh_degree: u8) -> Self {
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
            sh_degree,
            bone_ids: None,
        }
    }

    /// Builds a cloud from primitives; short SH vectors are zero-padded.
    pub fn from_gaussians(sh_degree: u8, items: &[Gaussian]) -> Result<Self> {
        sh::check_degree(sh_degree)?;
        let mut c = Self::empty(sh_degree);
        for g in items {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, g: &Gaussian) -> Result<()> {
        let per = self.coeffs_per_gaussian();
        if g.sh.len() > per {
            return Err(Error::LengthMismatch { expected: per, got: g.sh.len() });
        }
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scales);
        self.opacity_logits.push(g.opacity_logit);
        self.sh.extend_from_slice(&g.sh);
        self.sh.extend(core::iter::repeat_n(0.0, per - g.sh.len()));
        if let Some(ids) = self.bone_ids.as_mut() {
            ids.push(NO_BONE);
        }
        Ok(())
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scales: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh_of(i).to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Coefficients per channel, `(degree + 1)^2`.
    pub fn sh_coeffs(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }

    /// Flat SH values per primitive (`coeffs * 3`).
    pub fn coeffs_per_gaussian(&self) -> usize {
        self.sh_coeffs() * 3
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let per = self.coeffs_per_gaussian();
        &self.sh[i * per..(i + 1) * per]
    }

    pub fn sh_of_mut(&mut self, i: usize) -> &mut [f64] {
        let per = self.coeffs_per_gaussian();
        &mut self.sh[i * per..(i + 1) * per]
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.positions[i])
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scales(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(|s| s.exp())
    }

    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        covariance(self.rotations[i], self.log_scales[i])
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        sh::check_degree(self.sh_degree)?;
        let n = self.len();
        for (name, len) in [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
        ] {
            if len != n {
                return Err(invalid!("{name} has {len} entries for {n} gaussians"));
            }
        }
        if self.sh.len() != n * self.coeffs_per_gaussian() {
            return Err(Error::LengthMismatch {
                expected: n * self.coeffs_per_gaussian(),
                got: self.sh.len(),
            });
        }
        if let Some(ids) = &self.bone_ids {
            if ids.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: ids.len() });
            }
        }
        for (i, q) in self.rotations.iter().enumerate() {
            if (quat_norm(*q) - 1.0).abs() > 1e-6 {
                return Err(invalid!("rotation {i} is not unit norm"));
            }
        }
        Ok(())
    }

    /// Renormalizes every rotation quaternion.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = quat_norm(*q);
            if n > 0.0 {
                *q = q.map(|v| v / n);
            } else {
                *q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }

    /// Keeps the primitives whose flag is set, preserving order.
    pub fn retain_mask(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.len());
        let per = self.coeffs_per_gaussian();
        let mut out = Self::empty(self.sh_degree);
        out.bone_ids = self.bone_ids.as_ref().map(|_| Vec::new());
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            out.positions.push(self.positions[i]);
            out.rotations.push(self.rotations[i]);
            out.log_scales.push(self.log_scales[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.sh.extend_from_slice(&self.sh[i * per..(i + 1) * per]);
            if let (Some(dst), Some(src)) = (out.bone_ids.as_mut(), self.bone_ids.as_ref()) {
                dst.push(src[i]);
            }
        }
        out
    }
}

/// `R diag(s)^2 R^T` with `s = exp(log_scales)`.
pub fn covariance(rotation: [f64; 4], log_scales: [f64; 3]) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let s2 = Vector3::from(log_scales.map(|l| (2.0 * l).exp()));
    r * Matrix3::from_diagonal(&s2) * r.transpose()
}

/// Samples `n_per_bone` primitives around every bone midpoint of the
/// canonical skeleton.
pub fn init_from_skeleton(skel: &SkeletonDef, n_per_bone: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::empty(0);
    cloud.bone_ids = Some(Vec::new());
    let opacity = logit(INIT_OPACITY);
    let gray = sh::dc_from_color(0.5);
    for (bone, (a, b)) in skel.bone_segments().iter().enumerate() {
        if n_per_bone == 0 {
            break;
        }
        let mid = (a + b) * 0.5;
        let length = (b - a).norm();
        let sigma = (INIT_SIGMA_FACTOR * length).max(1e-6);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let pts: Vec<Vector3<f64>> = (0..n_per_bone)
            .map(|_| {
                mid + Vector3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                )
            })
            .collect();
        let scale = if pts.len() > 1 {
            0.5 * mean_nearest_distance(&pts)
        } else {
            0.5 * sigma
        };
        let log_scale = scale.max(1e-7).ln();
        for p in &pts {
            cloud.positions.push([p.x, p.y, p.z]);
            cloud.rotations.push([1.0, 0.0, 0.0, 0.0]);
            cloud.log_scales.push([log_scale; 3]);
            cloud.opacity_logits.push(opacity);
            cloud.sh.extend_from_slice(&[gray; 3]);
        }
        cloud.bone_ids.as_mut().unwrap().extend(core::iter::repeat_n(bone as u32, n_per_bone));
    }
    cloud
}

/// `n` primitives uniformly distributed in `bounds`, initialized like
/// [`init_from_skeleton`].
pub fn init_in_box(bounds: &Aabb, n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::empty(0);
    let e = bounds.extent();
    let pts: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            bounds.min
                + Vector3::new(
                    e.x * rng.random_range(0.0..1.0),
                    e.y * rng.random_range(0.0..1.0),
                    e.z * rng.random_range(0.0..1.0),
                )
        })
        .collect();
    let scale = if n > 1 { 0.5 * mean_nearest_distance(&pts) } else { 0.25 * e.min() };
    let log_scale = scale.max(1e-7).ln();
    let opacity = logit(INIT_OPACITY);
    let gray = sh::dc_from_color(0.5);
    for p in &pts {
        cloud.positions.push([p.x, p.y, p.z]);
        cloud.rotations.push([1.0, 0.0, 0.0, 0.0]);
        cloud.log_scales.push([log_scale; 3]);
        cloud.opacity_logits.push(opacity);
        cloud.sh.extend_from_slice(&[gray; 3]);
    }
    cloud
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nearest_distance(points: &[Vector3<f64>]) -> f64 {
    let grid = KdTree::new(points);
    let total: f64 = (0..points.len())
        .map(|i| grid.nearest(&points[i], Some(i)).map_or(0.0, |(_, d2)| d2.sqrt()))
        .sum();
    total / points.len() as f64
}

/// Keeps the primitives with activated opacity `>= threshold`.
pub fn prune_by_opacity(cloud: &GaussianCloud, threshold: f64) -> GaussianCloud {
    let keep: Vec<bool> = (0..cloud.len()).map(|i| cloud.opacity(i) >= threshold).collect();
    cloud.retain_mask(&keep)
}

/// One view of an object: binary mask and the camera that saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskView {
    pub mask: Mask,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectMaskSet {
    pub views: Vec<MaskView>,
}

impl ObjectMaskSet {
    pub fn validate(&self) -> Result<()> {
        for (v, view) in self.views.iter().enumerate() {
            if view.mask.width != view.camera.width || view.mask.height != view.camera.height {
                return Err(Error::Dimension(alloc::format!(
                    "view {v}: mask {}x{} but camera {}x{}",
                    view.mask.width,
                    view.mask.height,
                    view.camera.width,
                    view.camera.height
                )));
            }
        }
        Ok(())
    }
}

/// Per-primitive keep flags for [`cull_outside_masks`].
pub fn mask_keep_flags(cloud: &GaussianCloud, masks: &ObjectMaskSet, min_views: usize) -> Result<Vec<bool>> {
    if masks.views.is_empty() {
        return Err(invalid!("mask culling needs at least one view"));
    }
    if min_views > masks.views.len() {
        return Err(invalid!("min_views {min_views} exceeds {} views", masks.views.len()));
    }
    masks.validate()?;
    let min_views = min_views.max(1);
    Ok((0..cloud.len())
        .map(|i| {
            let p = cloud.position(i);
            let outside = masks
                .views
                .iter()
                .filter(|v| {
                    let inside = v
                        .camera
                        .project(&p)
                        .and_then(|(uv, _)| v.camera.pixel_of(&uv))
                        .is_some_and(|(x, y)| v.mask.get(x, y));
                    !inside
                })
                .count();
            outside < min_views
        })
        .collect())
}

/// Removes primitives whose centers fall outside the mask (or the image, or
/// behind the camera) in at least `min_views` views.
pub fn cull_outside_masks(cloud: &GaussianCloud, masks: &ObjectMaskSet, min_views: usize) -> Result<GaussianCloud> {
    let keep = mask_keep_flags(cloud, masks, min_views)?;
    Ok(cloud.retain_mask(&keep))
}

/// Two clouds joined end to end; `boundary` is the index of the first
/// primitive that came from the second cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Concatenated {
    pub cloud: GaussianCloud,
    pub boundary: usize,
}

pub fn concat(a: &GaussianCloud, b: &GaussianCloud) -> Result<Concatenated> {
    if a.sh_degree != b.sh_degree {
        return Err(Error::ShDegreeMismatch(a.sh_degree, b.sh_degree));
    }
    let mut cloud = a.clone();
    cloud.positions.extend_from_slice(&b.positions);
    cloud.rotations.extend_from_slice(&b.rotations);
    cloud.log_scales.extend_from_slice(&b.log_scales);
    cloud.opacity_logits.extend_from_slice(&b.opacity_logits);
    cloud.sh.extend_from_slice(&b.sh);
    cloud.bone_ids = match (&a.bone_ids, &b.bone_ids) {
        (None, None) => None,
        (ia, ib) => {
            let mut ids = ia.clone().unwrap_or_else(|| vec![NO_BONE; a.len()]);
            ids.extend(ib.clone().unwrap_or_else(|| vec![NO_BONE; b.len()]));
            Some(ids)
        }
    };
    Ok(Concatenated { cloud, boundary: a.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{default_hand, Bone};
    use nalgebra::{Isometry3, SymmetricEigen, UnitQuaternion};
    use rand::Rng;

    #[test]
    fn covariance_examples() {
        let c = covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(c, Matrix3::identity());
        let c = covariance([1.0, 0.0, 0.0, 0.0], [2f64.ln(), 0.0, 0.0]);
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).abs().max() < 1e-14);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = UnitQuaternion::from_scaled_axis(Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ));
            let ls = [rng.random_range(-3.0..1.0), rng.random_range(-3.0..1.0), rng.random_range(-3.0..1.0)];
            let c = covariance(crate::math::quat_to_array(&q), ls);
            assert!((c - c.transpose()).abs().max() < 1e-12);
            let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            let mut s2: Vec<f64> = ls.iter().map(|l| (2.0 * l).exp()).collect();
            ev.sort_by(f64::total_cmp);
            s2.sort_by(f64::total_cmp);
            for (a, b) in ev.iter().zip(&s2) {
                assert!((a - b).abs() < 1e-9 * b.max(1.0));
            }
            assert!(c.cholesky().is_some());
        }
    }

    #[test]
    fn init_counts_and_determinism() {
        let h = default_hand();
        let c = init_from_skeleton(&h, 10, 3);
        assert_eq!(c.len(), 210);
        c.validate().unwrap();
        assert_eq!(c, init_from_skeleton(&h, 10, 3));
        assert!(init_from_skeleton(&h, 0, 3).is_empty());
        assert!((c.opacity(0) - 0.1).abs() < 1e-12);
        assert_eq!(c.bone_ids.as_ref().unwrap()[25], 2);
    }

    #[test]
    fn init_sample_statistics() {
        let bones = vec![
            Bone { name: "a".into(), parent: None, offset: Vector3::zeros(), rest_rot: UnitQuaternion::identity() },
            Bone { name: "b".into(), parent: Some(0), offset: Vector3::new(0.0, 0.08, 0.0), rest_rot: UnitQuaternion::identity() },
        ];
        let skel = SkeletonDef::new(bones, vec![], vec![1]).unwrap();
        let n = 50_000;
        let c = init_from_skeleton(&skel, n, 9);
        let target_sigma = 0.25 * 0.08;
        let mid = Vector3::new(0.0, 0.04, 0.0);
        // Second bone's samples.
        let pts: Vec<Vector3<f64>> = (n..2 * n).map(|i| c.position(i)).collect();
        let mean = pts.iter().sum::<Vector3<f64>>() / n as f64;
        assert!((mean - mid).norm() < 4.0 * target_sigma / (n as f64).sqrt() * 3f64.sqrt());
        let var = pts.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / (3.0 * n as f64);
        assert!((var.sqrt() - target_sigma).abs() < 0.05 * target_sigma);
    }

    fn cloud_with_opacities(ops: &[f64]) -> GaussianCloud {
        let items: Vec<Gaussian> =
            ops.iter().enumerate().map(|(i, o)| Gaussian::isotropic([i as f64, 0.0, 0.0], 0.1, *o, [0.5; 3])).collect();
        GaussianCloud::from_gaussians(0, &items).unwrap()
    }

    #[test]
    fn pruning() {
        let c = cloud_with_opacities(&[0.001, 0.5, 0.9]);
        let p = prune_by_opacity(&c, 0.005);
        assert_eq!(p.len(), 2);
        assert_eq!(p.positions, vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(prune_by_opacity(&c, 0.0), c);
        assert!(prune_by_opacity(&c, 1.0).is_empty());
    }

    fn camera() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, 101, 101, Isometry3::translation(0.0, 0.0, 2.0), 0.1, 10.0).unwrap()
    }

    #[test]
    fn culling_with_masks() {
        // x = 0.5 at depth 2 projects to u = 50 + 100 * 0.25 = 75 (right half);
        // x = -0.5 projects to u = 25 (left half).
        let items = [
            Gaussian::isotropic([-0.5, 0.0, 0.0], 0.01, 0.5, [0.5; 3]),
            Gaussian::isotropic([0.5, 0.0, 0.0], 0.01, 0.5, [0.5; 3]),
        ];
        let cloud = GaussianCloud::from_gaussians(0, &items).unwrap();
        let view = |m: Mask| ObjectMaskSet { views: vec![MaskView { mask: m, camera: camera() }] };
        assert_eq!(cull_outside_masks(&cloud, &view(Mask::new(101, 101, true)), 1).unwrap(), cloud);
        assert!(cull_outside_masks(&cloud, &view(Mask::new(101, 101, false)), 1).unwrap().is_empty());
        let half = Mask::from_fn(101, 101, |x, _| x < 50);
        let kept = cull_outside_masks(&cloud, &view(half), 1).unwrap();
        assert_eq!(kept.positions, vec![[-0.5, 0.0, 0.0]]);
        let bad = view(Mask::new(10, 10, true));
        assert!(matches!(cull_outside_masks(&cloud, &bad, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn concatenation() {
        let a = cloud_with_opacities(&[0.2, 0.3]);
        let b = cloud_with_opacities(&[0.4, 0.5, 0.6]);
        let ab = concat(&a, &b).unwrap();
        assert_eq!((ab.cloud.len(), ab.boundary), (5, 2));
        assert_eq!(ab.cloud.opacity_logits[2], b.opacity_logits[0]);
        let e = concat(&GaussianCloud::empty(0), &b).unwrap();
        assert_eq!((e.cloud.clone(), e.boundary), (b.clone(), 0));
        let mut c1 = b.clone();
        c1.sh_degree = 1;
        c1.sh = vec![0.0; 3 * 12];
        assert_eq!(concat(&a, &c1), Err(Error::ShDegreeMismatch(0, 1)));
    }
}
