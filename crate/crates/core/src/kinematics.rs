//! Hand skeleton definition and forward kinematics.
//!
//! Each bone carries a rigid local frame relative to its parent: a
//! translation `offset` (the bone head, expressed in the parent frame)
//! followed by a fixed `rest_rot`. Articulation DOFs rotate a bone's frame
//! about fixed local axes, applied in layout order after the rest rotation.
//! The per-bone transform `T_b` maps canonical (rest) space to posed space.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{
    DMatrix, Isometry3, Matrix3, Matrix4, Translation3, Unit, UnitQuaternion, Vector3,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vector3<f64>,
    pub rest_rot: UnitQuaternion<f64>,
}

/// One rotational degree of freedom about a fixed axis in the bone frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Dof {
    pub bone: usize,
    pub axis: Unit<Vector3<f64>>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonDef {
    bones: Vec<Bone>,
    dofs: Vec<Dof>,
    tips: Vec<usize>,
    rest: Vec<Isometry3<f64>>,
    bone_dofs: Vec<Vec<usize>>,
}

impl SkeletonDef {
    /// Validates topology and limits and precomputes the rest frames.
    pub fn new(bones: Vec<Bone>, dofs: Vec<Dof>, tips: Vec<usize>) -> Result<Self> {
        if bones.is_empty() {
            return Err(Error::Topology("skeleton has no bones".into()));
        }
        let mut roots = 0;
        for (i, b) in bones.iter().enumerate() {
            match b.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(Error::Topology(format!(
                        "bone {i} ({}) has parent {p}, parents must precede children",
                        b.name
                    )))
                }
                Some(_) => {}
            }
            if !b.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::Topology(format!("bone {i} has a non-finite offset")));
            }
        }
        if roots != 1 {
            return Err(Error::Topology(format!("expected exactly one root, found {roots}")));
        }
        let mut bone_dofs = vec![Vec::new(); bones.len()];
        for (k, d) in dofs.iter().enumerate() {
            if d.bone >= bones.len() {
                return Err(Error::Topology(format!("dof {k} refers to missing bone {}", d.bone)));
            }
            if !(d.lo <= d.hi) {
                return Err(Error::LimitOrder { dof: k, lo: d.lo, hi: d.hi });
            }
            bone_dofs[d.bone].push(k);
        }
        if let Some(&t) = tips.iter().find(|&&t| t >= bones.len()) {
            return Err(Error::Topology(format!("tip marker refers to missing bone {t}")));
        }
        let mut rest: Vec<Isometry3<f64>> = Vec::with_capacity(bones.len());
        for b in &bones {
            let local = local_frame(b);
            let g = match b.parent {
                Some(p) => rest[p] * local,
                None => local,
            };
            rest.push(g);
        }
        Ok(Self { bones, dofs, tips, rest, bone_dofs })
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn dofs(&self) -> &[Dof] {
        &self.dofs
    }

    pub fn tips(&self) -> &[usize] {
        &self.tips
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    /// Rest-pose (canonical) frame of every bone.
    pub fn rest_frames(&self) -> &[Isometry3<f64>] {
        &self.rest
    }

    /// Canonical joint (bone head) positions.
    pub fn rest_joint_positions(&self) -> Vec<Vector3<f64>> {
        self.rest.iter().map(|g| g.translation.vector).collect()
    }

    /// Parent-to-child distance per bone; the root entry is 0.
    pub fn bone_lengths(&self) -> Vec<f64> {
        self.bones.iter().map(|b| if b.parent.is_some() { b.offset.norm() } else { 0.0 }).collect()
    }

    pub fn children(&self, bone: usize) -> impl Iterator<Item = usize> + '_ {
        self.bones.iter().enumerate().filter(move |(_, b)| b.parent == Some(bone)).map(|(i, _)| i)
    }

    /// True when `ancestor` lies strictly above `bone` in the tree.
    pub fn is_strict_ancestor(&self, ancestor: usize, bone: usize) -> bool {
        let mut cur = self.bones[bone].parent;
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.bones[p].parent;
        }
        false
    }

    /// Canonical segment carried by each bone: parent head to own head, and
    /// for the root, root head to the mean of its children's heads.
    pub fn bone_segments(&self) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let heads = self.rest_joint_positions();
        (0..self.bones.len())
            .map(|i| match self.bones[i].parent {
                Some(p) => (heads[p], heads[i]),
                None => {
                    let (sum, n) = self
                        .children(i)
                        .fold((Vector3::zeros(), 0usize), |(s, n), c| (s + heads[c], n + 1));
                    let end = if n == 0 { heads[i] } else { sum / n as f64 };
                    (heads[i], end)
                }
            })
            .collect()
    }
}

fn local_frame(b: &Bone) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(b.offset), b.rest_rot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joint_angles: Vec<f64>,
    pub global_rotation: UnitQuaternion<f64>,
    pub global_translation: Vector3<f64>,
}

impl Pose {
    /// Zero angles with identity global transform.
    pub fn rest(skel: &SkeletonDef) -> Self {
        Self {
            joint_angles: vec![0.0; skel.dof_count()],
            global_rotation: UnitQuaternion::identity(),
            global_translation: Vector3::zeros(),
        }
    }

    pub fn global(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.global_translation), self.global_rotation)
    }
}

/// Per-bone rigid transforms from canonical to posed space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransforms {
    pub transforms: Vec<Isometry3<f64>>,
}

impl BoneTransforms {
    pub fn identity(bones: usize) -> Self {
        Self { transforms: vec![Isometry3::identity(); bones] }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn matrix(&self, bone: usize) -> Matrix4<f64> {
        self.transforms[bone].to_homogeneous()
    }

    pub fn rotation(&self, bone: usize) -> Matrix3<f64> {
        self.transforms[bone].rotation.to_rotation_matrix().into_inner()
    }
}

fn check_pose(skel: &SkeletonDef, pose: &Pose) -> Result<()> {
    if pose.joint_angles.len() != skel.dof_count() {
        return Err(Error::LengthMismatch {
            expected: skel.dof_count(),
            got: pose.joint_angles.len(),
        });
    }
    Ok(())
}

/// Posed global frame of every bone.
pub fn posed_frames(skel: &SkeletonDef, pose: &Pose) -> Result<Vec<Isometry3<f64>>> {
    check_pose(skel, pose)?;
    let global = pose.global();
    let mut frames: Vec<Isometry3<f64>> = Vec::with_capacity(skel.bone_count());
    for (i, b) in skel.bones.iter().enumerate() {
        let mut f = match b.parent {
            Some(p) => frames[p] * local_frame(b),
            None => global * local_frame(b),
        };
        for &k in &skel.bone_dofs[i] {
            let d = &skel.dofs[k];
            f.rotation *= UnitQuaternion::from_axis_angle(&d.axis, pose.joint_angles[k]);
        }
        frames.push(f);
    }
    Ok(frames)
}

pub fn forward_kinematics(skel: &SkeletonDef, pose: &Pose) -> Result<BoneTransforms> {
    let frames = posed_frames(skel, pose)?;
    let transforms = frames.iter().zip(&skel.rest).map(|(f, r)| f * r.inverse()).collect();
    Ok(BoneTransforms { transforms })
}

/// Posed joint (bone head) positions, one per bone. Fingertip sites are the
/// heads of the bones listed in [`SkeletonDef::tips`].
pub fn joint_positions(skel: &SkeletonDef, transforms: &BoneTransforms) -> Result<Vec<Vector3<f64>>> {
    if transforms.len() != skel.bone_count() {
        return Err(Error::LengthMismatch { expected: skel.bone_count(), got: transforms.len() });
    }
    Ok(skel
        .rest
        .iter()
        .zip(&transforms.transforms)
        .map(|(r, t)| t.transform_point(&r.translation.vector.into()).coords)
        .collect())
}

/// Rescales rest offsets so every parent-to-child distance equals
/// `lengths[bone]`. The root entry is ignored.
pub fn scale_bone_lengths(skel: &SkeletonDef, lengths: &[f64]) -> Result<SkeletonDef> {
    if lengths.len() != skel.bone_count() {
        return Err(Error::LengthMismatch { expected: skel.bone_count(), got: lengths.len() });
    }
    let mut bones = skel.bones.clone();
    for (i, b) in bones.iter_mut().enumerate() {
        if b.parent.is_none() {
            continue;
        }
        let len = lengths[i];
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::NonPositiveLength { bone: i, length: len });
        }
        let cur = b.offset.norm();
        if cur == 0.0 {
            return Err(Error::Topology(format!("bone {i} has zero length, direction undefined")));
        }
        if cur != len {
            b.offset *= len / cur;
        }
    }
    SkeletonDef::new(bones, skel.dofs.clone(), skel.tips.clone())
}

/// Number of global pose parameters in the Jacobian: translation then a
/// world-frame rotation perturbation.
pub const GLOBAL_PARAMS: usize = 6;

/// Jacobian of all joint positions (rows `3*j..3*j+3`) with respect to
/// `[tx, ty, tz, rx, ry, rz, angles...]`. The rotation columns are the
/// derivative under `R <- exp([r]x) R`, evaluated at `r = 0`.
pub fn fk_jacobian(skel: &SkeletonDef, pose: &Pose) -> Result<DMatrix<f64>> {
    let frames = posed_frames(skel, pose)?;
    let n = skel.bone_count();
    let heads: Vec<Vector3<f64>> = frames.iter().map(|f| f.translation.vector).collect();
    let mut jac = DMatrix::zeros(3 * n, GLOBAL_PARAMS + skel.dof_count());
    let t = pose.global_translation;
    for j in 0..n {
        let rel = heads[j] - t;
        for a in 0..3 {
            jac[(3 * j + a, a)] = 1.0;
            let axis = Vector3::ith(a, 1.0);
            let col = axis.cross(&rel);
            for r in 0..3 {
                jac[(3 * j + r, 3 + a)] = col[r];
            }
        }
    }
    for (i, b) in skel.bones.iter().enumerate() {
        if skel.bone_dofs[i].is_empty() {
            continue;
        }
        let mut rot = match b.parent {
            Some(p) => frames[p].rotation * b.rest_rot,
            None => pose.global_rotation * b.rest_rot,
        };
        let pivot = heads[i];
        for &k in &skel.bone_dofs[i] {
            let d = &skel.dofs[k];
            let w = rot * d.axis.into_inner();
            for j in 0..n {
                if skel.is_strict_ancestor(i, j) {
                    let col = w.cross(&(heads[j] - pivot));
                    for r in 0..3 {
                        jac[(3 * j + r, GLOBAL_PARAMS + k)] = col[r];
                    }
                }
            }
            rot *= UnitQuaternion::from_axis_angle(&d.axis, pose.joint_angles[k]);
        }
    }
    Ok(jac)
}

/// Applies the global-parameter step used by [`fk_jacobian`]'s columns.
pub fn apply_global_step(pose: &mut Pose, translation: Vector3<f64>, rotation: Vector3<f64>) {
    pose.global_translation += translation;
    pose.global_rotation = UnitQuaternion::from_scaled_axis(rotation) * pose.global_rotation;
}

struct FingerSpec {
    name: &'static str,
    base: [f64; 3],
    segments: [[f64; 3]; 3],
}

/// The shipped 21-bone, 26-DOF right-hand skeleton (flat hand, fingers
/// along +y, palm facing +z, meters).
///
/// DOF allocation: index and middle fingers get flexion+abduction at the
/// MCP and flexion at PIP/DIP (4 each); ring and pinky add an MCP twist for
/// the palmar arch (5 each); the thumb has flexion, abduction and twist at
/// CMC and MCP plus flexion and a small abduction at IP (8).
pub fn default_hand() -> SkeletonDef {
    let mut bones = vec![Bone {
        name: "wrist".into(),
        parent: None,
        offset: Vector3::zeros(),
        rest_rot: UnitQuaternion::identity(),
    }];
    let mut dofs = Vec::new();
    let mut tips = Vec::new();
    let x = Vector3::x_axis();
    let y = Vector3::y_axis();
    let z = Vector3::z_axis();
    let dof = |bone: usize, axis: Unit<Vector3<f64>>, lo: f64, hi: f64| Dof { bone, axis, lo, hi };

    // Thumb.
    let thumb_dir = Vector3::new(0.6, 0.8, 0.0);
    let thumb_flex = Unit::new_normalize(Vector3::new(0.8, -0.6, 0.0));
    let thumb_twist = Unit::new_normalize(thumb_dir);
    let thumb = [
        ("thumb_cmc", Vector3::new(0.020, 0.025, 0.0)),
        ("thumb_mcp", thumb_dir * 0.040),
        ("thumb_ip", thumb_dir * 0.032),
        ("thumb_tip", thumb_dir * 0.026),
    ];
    for (k, (name, off)) in thumb.iter().enumerate() {
        let parent = if k == 0 { 0 } else { bones.len() - 1 };
        bones.push(Bone {
            name: (*name).into(),
            parent: Some(parent),
            offset: *off,
            rest_rot: UnitQuaternion::identity(),
        });
    }
    dofs.push(dof(1, thumb_flex, -0.3, 0.9));
    dofs.push(dof(1, z, -0.5, 0.8));
    dofs.push(dof(1, thumb_twist, -0.4, 0.4));
    dofs.push(dof(2, thumb_flex, -0.2, 1.0));
    dofs.push(dof(2, z, -0.3, 0.3));
    dofs.push(dof(2, thumb_twist, -0.2, 0.2));
    dofs.push(dof(3, thumb_flex, -0.3, 1.3));
    dofs.push(dof(3, z, -0.15, 0.15));
    tips.push(4);

    let fingers = [
        FingerSpec { name: "index", base: [0.025, 0.090, 0.0], segments: [[0.0, 0.045, 0.0], [0.0, 0.025, 0.0], [0.0, 0.022, 0.0]] },
        FingerSpec { name: "middle", base: [0.005, 0.095, 0.0], segments: [[0.0, 0.050, 0.0], [0.0, 0.030, 0.0], [0.0, 0.024, 0.0]] },
        FingerSpec { name: "ring", base: [-0.015, 0.088, 0.0], segments: [[0.0, 0.047, 0.0], [0.0, 0.028, 0.0], [0.0, 0.023, 0.0]] },
        FingerSpec { name: "pinky", base: [-0.033, 0.080, 0.0], segments: [[0.0, 0.036, 0.0], [0.0, 0.021, 0.0], [0.0, 0.020, 0.0]] },
    ];
    for (f, spec) in fingers.iter().enumerate() {
        let mcp = bones.len();
        let names = ["mcp", "pip", "dip", "tip"];
        let offsets = [spec.base, spec.segments[0], spec.segments[1], spec.segments[2]];
        for (k, off) in offsets.iter().enumerate() {
            bones.push(Bone {
                name: format!("{}_{}", spec.name, names[k]),
                parent: Some(if k == 0 { 0 } else { bones.len() - 1 }),
                offset: Vector3::from(*off),
                rest_rot: UnitQuaternion::identity(),
            });
        }
        dofs.push(dof(mcp, x, -0.3, 1.6));
        dofs.push(dof(mcp, z, -0.35, 0.35));
        if f >= 2 {
            dofs.push(dof(mcp, y, -0.2, 0.2));
        }
        dofs.push(dof(mcp + 1, x, -0.1, 1.9));
        dofs.push(dof(mcp + 2, x, -0.1, 1.4));
        tips.push(mcp + 3);
    }
    SkeletonDef::new(bones, dofs, tips).expect("default hand is valid")
}
