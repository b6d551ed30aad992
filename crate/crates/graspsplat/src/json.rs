//! JSON encodings of skeletons, poses, cameras and keypoints.

use std::path::Path;

use graspsplat_core::camera::Camera;
use graspsplat_core::kinematics::{Bone, Dof, Pose, SkeletonDef};
use graspsplat_core::pose_fit::KeypointSet3D;
use nalgebra::{Isometry3, Matrix3, Matrix4, Quaternion, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneJson {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    #[serde(default = "identity_quat")]
    pub rest_rot: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DofJson {
    pub bone: usize,
    pub axis: [f64; 3],
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonJson {
    pub bones: Vec<BoneJson>,
    #[serde(default)]
    pub dofs: Vec<DofJson>,
    #[serde(default)]
    pub tips: Vec<usize>,
}

fn quat(q: [f64; 4]) -> Result<UnitQuaternion<f64>> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = raw.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Invalid(format!("quaternion {q:?} has no direction")));
    }
    Ok(UnitQuaternion::from_quaternion(raw))
}

fn quat_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

impl SkeletonJson {
    pub fn to_skeleton(&self) -> Result<SkeletonDef> {
        let bones = self
            .bones
            .iter()
            .map(|b| {
                Ok(Bone {
                    name: b.name.clone(),
                    parent: b.parent,
                    offset: Vector3::from(b.offset),
                    rest_rot: quat(b.rest_rot)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dofs = self
            .dofs
            .iter()
            .map(|d| {
                let axis = Vector3::from(d.axis);
                if !(axis.norm() > 0.0) {
                    return Err(Error::Invalid(format!("DOF on bone {} has a zero axis", d.bone)));
                }
                Ok(Dof { bone: d.bone, axis: Unit::new_normalize(axis), lo: d.lo, hi: d.hi })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SkeletonDef::new(bones, dofs, self.tips.clone())?)
    }

    pub fn from_skeleton(skel: &SkeletonDef) -> Self {
        Self {
            bones: skel
                .bones()
                .iter()
                .map(|b| BoneJson {
                    name: b.name.clone(),
                    parent: b.parent,
                    offset: b.offset.into(),
                    rest_rot: quat_array(&b.rest_rot),
                })
                .collect(),
            dofs: skel
                .dofs()
                .iter()
                .map(|d| DofJson { bone: d.bone, axis: d.axis.into_inner().into(), lo: d.lo, hi: d.hi })
                .collect(),
            tips: skel.tips().to_vec(),
        }
    }
}

pub fn load_skeleton(path: &Path) -> Result<SkeletonDef> {
    let json: SkeletonJson = read_json(path)?;
    json.to_skeleton().map_err(|e| match e {
        Error::Core(source) => Error::InvalidFile { path: path.to_path_buf(), source },
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJson {
    pub angles: Vec<f64>,
    pub rot: [f64; 4],
    pub trans: [f64; 3],
}

impl PoseJson {
    pub fn to_pose(&self) -> Result<Pose> {
        Ok(Pose {
            joint_angles: self.angles.clone(),
            global_rotation: quat(self.rot)?,
            global_translation: Vector3::from(self.trans),
        })
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self {
            angles: pose.joint_angles.clone(),
            rot: quat_array(&pose.global_rotation),
            trans: pose.global_translation.into(),
        }
    }
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    read_json::<PoseJson>(path)?.to_pose()
}

/// Timed pose files, paths relative to the sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceJson {
    pub fps: f64,
    pub frames: Vec<SequenceFrameJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFrameJson {
    pub time: f64,
    pub pose: String,
}

/// Times and poses of a sequence file; times must increase.
pub fn load_sequence(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let json: SequenceJson = read_json(path)?;
    if json.frames.is_empty() {
        return Err(Error::format(path, "sequence has no frames"));
    }
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut out: Vec<(f64, Pose)> = Vec::with_capacity(json.frames.len());
    for f in &json.frames {
        if !f.time.is_finite() || out.last().is_some_and(|(t, _)| f.time <= *t) {
            return Err(Error::format(path, format!("frame times must increase, got {}", f.time)));
        }
        out.push((f.time, load_pose(&crate::fsio::resolve(dir, Path::new(&f.pose)))?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    /// World-to-camera matrix, row-major.
    pub w2c: [f64; 16],
    pub near: f64,
    pub far: f64,
}

/// Largest deviation from orthonormality accepted in a camera rotation.
const ROTATION_TOLERANCE: f64 = 1e-6;

impl CameraJson {
    pub fn to_camera(&self) -> Result<Camera> {
        let m = Matrix4::from_row_slice(&self.w2c);
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let off = (r.transpose() * r - Matrix3::identity()).amax();
        if !(off <= ROTATION_TOLERANCE) || r.determinant() < 0.0 {
            return Err(Error::Invalid("w2c rotation block is not a rotation".into()));
        }
        if m.fixed_view::<1, 4>(3, 0).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| *a != b) {
            return Err(Error::Invalid("w2c last row must be 0 0 0 1".into()));
        }
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&r));
        let t = Translation3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Ok(Camera::new(self.fx, self.fy, self.cx, self.cy, self.w, self.h, Isometry3::from_parts(t, rot), self.near, self.far)?)
    }

    pub fn from_camera(c: &Camera) -> Self {
        let m = c.world_to_camera.to_homogeneous();
        let mut w2c = [0.0; 16];
        for r in 0..4 {
            for k in 0..4 {
                w2c[4 * r + k] = m[(r, k)];
            }
        }
        Self { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, w: c.width, h: c.height, w2c, near: c.near, far: c.far }
    }
}

pub fn load_camera(path: &Path) -> Result<Camera> {
    read_json::<CameraJson>(path)?.to_camera().map_err(|e| match e {
        Error::Invalid(message) | Error::Failed(message) => Error::format(path, message),
        Error::Core(source) => Error::InvalidFile { path: path.to_path_buf(), source },
        other => other,
    })
}

/// 2D detections of one frame: per view, the camera file and `[u, v, conf]`
/// for every joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoints2DJson {
    pub views: Vec<KeypointViewJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointViewJson {
    pub cam: String,
    pub kp: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoints3DJson {
    pub kp3d: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl Keypoints3DJson {
    pub fn from_set(set: &KeypointSet3D) -> Self {
        Self { kp3d: set.points.iter().map(|p| (*p).into()).collect(), valid: set.valid.clone() }
    }

    pub fn to_set(&self) -> Result<KeypointSet3D> {
        if self.kp3d.len() != self.valid.len() {
            return Err(Error::Invalid(format!("{} points but {} validity flags", self.kp3d.len(), self.valid.len())));
        }
        Ok(KeypointSet3D { points: self.kp3d.iter().map(|p| Vector3::from(*p)).collect(), valid: self.valid.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use graspsplat_core::kinematics::default_hand;
    use nalgebra::Point3;

    #[test]
    fn skeleton_round_trip() {
        let skel = default_hand();
        let json = serde_json::to_string(&SkeletonJson::from_skeleton(&skel)).unwrap();
        let back: SkeletonJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_skeleton().unwrap(), skel);
    }

    #[test]
    fn minimal_and_broken_skeletons() {
        let one: SkeletonJson = serde_json::from_str(r#"{"bones":[{"name":"root","parent":null,"offset":[0,0,0]}]}"#).unwrap();
        let skel = one.to_skeleton().unwrap();
        assert_eq!((skel.bone_count(), skel.dof_count()), (1, 0));
        let bad: SkeletonJson = serde_json::from_str(
            r#"{"bones":[{"name":"a","parent":null,"offset":[0,0,0]},{"name":"b","parent":1,"offset":[0,1,0]}]}"#,
        )
        .unwrap();
        assert!(matches!(bad.to_skeleton(), Err(Error::Core(graspsplat_core::Error::Topology(_)))));
        let limits: SkeletonJson = serde_json::from_str(
            r#"{"bones":[{"name":"a","parent":null,"offset":[0,0,0]},{"name":"b","parent":0,"offset":[0,1,0]}],
                "dofs":[{"bone":1,"axis":[1,0,0],"lo":1.0,"hi":0.0}]}"#,
        )
        .unwrap();
        assert!(limits.to_skeleton().is_err());
    }

    #[test]
    fn camera_round_trip() {
        let cam = Camera::look_at(Point3::new(0.3, -0.2, 0.5), Point3::origin(), Vector3::z(), 300.0, 64, 48, 0.01, 5.0).unwrap();
        let json = serde_json::to_string(&CameraJson::from_camera(&cam)).unwrap();
        let back: CameraJson = serde_json::from_str(&json).unwrap();
        let c2 = back.to_camera().unwrap();
        assert!((c2.world_to_camera.to_homogeneous() - cam.world_to_camera.to_homogeneous()).amax() < 1e-14);
        assert_eq!((c2.fx, c2.cx, c2.width, c2.height), (cam.fx, cam.cx, 64, 48));
        let mut skewed = back.clone();
        skewed.w2c[0] = 2.0;
        assert!(skewed.to_camera().is_err());
    }

    #[test]
    fn pose_round_trip() {
        let skel = default_hand();
        let mut pose = Pose::rest(&skel);
        pose.joint_angles[3] = 0.25;
        pose.global_rotation = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        pose.global_translation = Vector3::new(0.1, 0.0, -0.2);
        let json = serde_json::to_string(&PoseJson::from_pose(&pose)).unwrap();
        let back: PoseJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_pose().unwrap(), pose);
    }

    #[test]
    fn bundled_hand_matches_default() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/hand21.json");
        assert_eq!(load_skeleton(&path).unwrap(), default_hand());
    }
}
