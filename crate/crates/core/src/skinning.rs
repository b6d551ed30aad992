//! Canonical skinning-weight grid and linear blend skinning of Gaussians.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::kinematics::{BoneTransforms, SkeletonDef};
use crate::math::{quat_mul, quat_to_array, Aabb};
use crate::spatial::KdTree;

/// Default grid resolution.
pub const DEFAULT_GRID_DIMS: [usize; 3] = [256, 160, 142];

/// Points with per-bone skinning weights (rows sum to one).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTemplate {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub bones: usize,
}

impl WeightedTemplate {
    pub fn new(points: Vec<Vector3<f64>>, weights: Vec<f64>, bones: usize) -> Result<Self> {
        if weights.len() != points.len() * bones {
            return Err(Error::LengthMismatch { expected: points.len() * bones, got: weights.len() });
        }
        for (i, row) in weights.chunks(bones.max(1)).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(invalid!("template row {i} is not a partition of unity (sum {sum})"));
            }
        }
        Ok(Self { points, weights, bones })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.bones..(i + 1) * self.bones]
    }
}

/// Rigid template sampled along the skeleton: `per_segment` points on each
/// segment from a parent head to a child head, fully weighted to the parent,
/// whose frame carries that segment.
pub fn segment_template(skel: &SkeletonDef, per_segment: usize) -> Result<WeightedTemplate> {
    let heads = skel.rest_joint_positions();
    let nb = skel.bone_count();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (i, bone) in skel.bones().iter().enumerate() {
        let Some(p) = bone.parent else { continue };
        for k in 0..per_segment {
            let t = (k as f64 + 0.5) / per_segment as f64;
            points.push(heads[p] + (heads[i] - heads[p]) * t);
            let mut row = alloc::vec![0.0; nb];
            row[p] = 1.0;
            weights.extend(row);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    WeightedTemplate::new(points, weights, nb)
}

/// Voxel grid of skinning weights over a canonical-space box.
///
/// Voxels store an index into a palette of distinct weight rows, so a
/// grid built from a template costs one `u32` per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningGrid {
    dims: [usize; 3],
    bounds: Aabb,
    bones: usize,
    palette: Vec<f64>,
    voxel_rows: Vec<u32>,
}

impl SkinningGrid {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn bone_count(&self) -> usize {
        self.bones
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn voxel_size(&self) -> Vector3<f64> {
        voxel_size(&self.bounds, self.dims)
    }

    #[inline]
    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        voxel_center(&self.bounds, self.dims, [i, j, k])
    }

    pub fn voxel_weights(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let r = self.voxel_rows[self.flat(i, j, k)] as usize;
        &self.palette[r * self.bones..(r + 1) * self.bones]
    }

    /// Builds a grid from dense per-voxel weights (`x`-major, then `y`, then `z`).
    pub fn from_dense(dims: [usize; 3], bounds: Aabb, bones: usize, weights: &[f64]) -> Result<Self> {
        check_dims(dims, &bounds)?;
        let voxels = dims[0] * dims[1] * dims[2];
        if weights.len() != voxels * bones {
            return Err(Error::LengthMismatch { expected: voxels * bones, got: weights.len() });
        }
        let mut index: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
        let mut palette = Vec::new();
        let mut voxel_rows = Vec::with_capacity(voxels);
        for row in weights.chunks(bones.max(1)) {
            let key: Vec<u64> = row.iter().map(|w| w.to_bits()).collect();
            let next = index.len() as u32;
            let id = *index.entry(key).or_insert_with(|| {
                palette.extend_from_slice(row);
                next
            });
            voxel_rows.push(id);
        }
        Ok(Self { dims, bounds, bones, palette, voxel_rows })
    }

    /// Builds a grid from distinct weight rows and one row index per voxel.
    pub fn from_palette(dims: [usize; 3], bounds: Aabb, bones: usize, palette: Vec<f64>, voxel_rows: Vec<u32>) -> Result<Self> {
        check_dims(dims, &bounds)?;
        let voxels = dims[0] * dims[1] * dims[2];
        if voxel_rows.len() != voxels {
            return Err(Error::LengthMismatch { expected: voxels, got: voxel_rows.len() });
        }
        if bones == 0 || !palette.len().is_multiple_of(bones) {
            return Err(Error::Dimension(format!("palette of {} values for {bones} bones", palette.len())));
        }
        let rows = palette.len() / bones;
        if let Some(bad) = voxel_rows.iter().find(|r| **r as usize >= rows) {
            return Err(Error::Dimension(format!("voxel row {bad} past palette of {rows} rows")));
        }
        Ok(Self { dims, bounds, bones, palette, voxel_rows })
    }

    /// Distinct weight rows, `bones` values each.
    pub fn palette(&self) -> &[f64] {
        &self.palette
    }

    /// Palette row of every voxel, in [`SkinningGrid::from_dense`] order.
    pub fn voxel_rows(&self) -> &[u32] {
        &self.voxel_rows
    }

    /// Dense weights in the layout accepted by [`SkinningGrid::from_dense`].
    pub fn dense_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.voxel_rows.iter().map(move |&r| {
            let r = r as usize;
            &self.palette[r * self.bones..(r + 1) * self.bones]
        })
    }

    /// Trilinearly interpolated, renormalized weights at `q`; queries outside
    /// the box clamp to the boundary voxels.
    pub fn sample_weights(&self, q: &Vector3<f64>) -> Vec<f64> {
        let h = self.voxel_size();
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let f = ((q[a] - self.bounds.min[a]) / h[a] - 0.5).clamp(0.0, (self.dims[a] - 1) as f64);
            let i0 = (f.floor() as usize).min(self.dims[a] - 2);
            base[a] = i0;
            t[a] = f - i0 as f64;
        }
        let mut out = alloc::vec![0.0; self.bones];
        for corner in 0..8 {
            let (di, dj, dk) = (corner >> 2 & 1, corner >> 1 & 1, corner & 1);
            let w = (if di == 1 { t[0] } else { 1.0 - t[0] })
                * (if dj == 1 { t[1] } else { 1.0 - t[1] })
                * (if dk == 1 { t[2] } else { 1.0 - t[2] });
            if w == 0.0 {
                continue;
            }
            let row = self.voxel_weights(base[0] + di, base[1] + dj, base[2] + dk);
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        let sum: f64 = out.iter().sum();
        if sum > 0.0 && sum != 1.0 {
            for o in &mut out {
                *o /= sum;
            }
        }
        out
    }
}

fn check_dims(dims: [usize; 3], bounds: &Aabb) -> Result<()> {
    if dims.iter().any(|d| *d < 2) {
        return Err(invalid!("grid needs at least 2 voxels per axis, got {dims:?}"));
    }
    if (0..3).any(|a| !(bounds.max[a] > bounds.min[a])) {
        return Err(invalid!("grid bounds are empty"));
    }
    Ok(())
}

fn voxel_size(bounds: &Aabb, dims: [usize; 3]) -> Vector3<f64> {
    let e = bounds.extent();
    Vector3::new(e.x / dims[0] as f64, e.y / dims[1] as f64, e.z / dims[2] as f64)
}

fn voxel_center(bounds: &Aabb, dims: [usize; 3], idx: [usize; 3]) -> Vector3<f64> {
    let h = voxel_size(bounds, dims);
    Vector3::new(
        bounds.min.x + (idx[0] as f64 + 0.5) * h.x,
        bounds.min.y + (idx[1] as f64 + 0.5) * h.y,
        bounds.min.z + (idx[2] as f64 + 0.5) * h.z,
    )
}

/// Assigns every voxel the weights of the template point nearest to its
/// center (ties to the lowest point index).
pub fn build_grid(template: &WeightedTemplate, dims: [usize; 3], bounds: Aabb) -> Result<SkinningGrid> {
    if template.points.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    check_dims(dims, &bounds)?;
    let tree = KdTree::new(&template.points);
    let mut voxel_rows = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let c = voxel_center(&bounds, dims, [i, j, k]);
                let (n, _) = tree.nearest(&c, None).expect("template is non-empty");
                voxel_rows.push(n as u32);
            }
        }
    }
    Ok(SkinningGrid {
        dims,
        bounds,
        bones: template.bones,
        palette: template.weights.clone(),
        voxel_rows,
    })
}

/// Blended per-Gaussian transform: affine part `T_g` and its nearest rotation `R_g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    /// `R_g` as a `[w, x, y, z]` quaternion.
    pub rotation_quat: [f64; 4],
}

impl GaussianTransform {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
            rotation: Matrix3::identity(),
            rotation_quat: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * p + self.translation
    }

    pub fn matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Nearest rotation to `m` in the Frobenius norm.
pub fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (mut u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    if (u * vt).determinant() < 0.0 {
        // Singular values are sorted, flip the weakest direction.
        let mut c = u.column_mut(2);
        c *= -1.0;
    }
    u * vt
}

/// `T_g = sum_b w_b T_b` with `R_g` from its polar decomposition.
pub fn blend_transforms(weights: &[f64], bones: &BoneTransforms) -> GaussianTransform {
    assert_eq!(weights.len(), bones.len(), "one weight per bone");
    let mut first: Option<usize> = None;
    let mut uniform = true;
    for (b, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        match first {
            None => first = Some(b),
            Some(f) => uniform &= bones.transforms[f] == bones.transforms[b],
        }
    }
    if let (Some(b), true) = (first, uniform) {
        // Convex combination of one rigid transform is that transform.
        let iso = &bones.transforms[b];
        let r = iso.rotation.to_rotation_matrix().into_inner();
        return GaussianTransform {
            linear: r,
            translation: iso.translation.vector,
            rotation: r,
            rotation_quat: quat_to_array(&iso.rotation),
        };
    }
    let mut linear = Matrix3::zeros();
    let mut translation = Vector3::zeros();
    for (b, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let iso = &bones.transforms[b];
        linear += iso.rotation.to_rotation_matrix().into_inner() * *w;
        translation += iso.translation.vector * *w;
    }
    let rotation = polar_rotation(&linear);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
    GaussianTransform { linear, translation, rotation, rotation_quat: quat_to_array(&q) }
}

/// Applies linear blend skinning to every Gaussian. Positions are mapped by
/// `T_g`; rotations are premultiplied by `R_g` so the covariance becomes
/// `R_g Σ R_g^T`; all other states are copied.
pub fn pose_cloud(
    cloud: &GaussianCloud,
    grid: &SkinningGrid,
    bones: &BoneTransforms,
) -> Result<(GaussianCloud, Vec<GaussianTransform>)> {
    if grid.bone_count() != bones.len() {
        return Err(Error::LengthMismatch { expected: grid.bone_count(), got: bones.len() });
    }
    let transforms: Vec<GaussianTransform> =
        (0..cloud.len()).map(|i| blend_transforms(&grid.sample_weights(&cloud.position(i)), bones)).collect();
    let posed = apply_transforms(cloud, &transforms)?;
    Ok((posed, transforms))
}

/// Poses a canonical cloud with precomputed per-Gaussian transforms.
pub fn apply_transforms(cloud: &GaussianCloud, transforms: &[GaussianTransform]) -> Result<GaussianCloud> {
    if transforms.len() != cloud.len() {
        return Err(Error::LengthMismatch { expected: cloud.len(), got: transforms.len() });
    }
    let mut posed = cloud.clone();
    for (i, t) in transforms.iter().enumerate() {
        let p = t.apply(&cloud.position(i));
        posed.positions[i] = [p.x, p.y, p.z];
        posed.rotations[i] = quat_mul(t.rotation_quat, cloud.rotations[i]);
    }
    Ok(posed)
}

/// Maps a posed-space view direction into canonical space (`R_g^T d`).
pub fn canonical_view_dir(t: &GaussianTransform, dir: &Vector3<f64>) -> Vector3<f64> {
    let d = t.rotation.transpose() * dir;
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}
