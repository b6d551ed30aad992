//! Writes synthetic fixtures as ordinary capture directories.
//!
//! Every kind gets `manifest.json` and `cameras/camKK.json`. Hand scenes add
//! `skeleton.json`, `grid.bin`, per-frame poses, keypoints and images, plus
//! `truth/hand.ply` and `truth/joints/fNNN.json`. Object scenes add images,
//! masks, `bounds` in the manifest and `truth/object.ply`. Grasp scenes add
//! `hand.ply`, `object.ply`, `sequence.json`, `truth/contacts.json` and the
//! silhouette of the contact set per camera under `truth/contact_masks/`.

use graspsplat_core::camera::Camera;
use graspsplat_core::kinematics::{forward_kinematics, Pose};
use graspsplat_core::pose_fit::KeypointSet3D;
use graspsplat_core::skinning::pose_cloud;
use graspsplat_core::synthetic::{
    grasp_toy_scene, silhouette_mask, textured_sphere_scene, two_bone_finger_scene, GraspFixture, HandFixture,
    ObjectFixture, SceneKind,
};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::binfmt::encode_grid;
use crate::error::Result;
use crate::fsio::OutputDir;
use crate::imageio::{encode_mask_png, encode_png};
use crate::json::{CameraJson, Keypoints2DJson, Keypoints3DJson, KeypointViewJson, PoseJson, SequenceFrameJson, SequenceJson, SkeletonJson};
use crate::manifest::{FrameJson, ManifestJson, ViewJson};
use crate::ply::encode_ply;

pub const FIXTURE_FPS: f64 = 30.0;

/// Contact truth of a grasp fixture, as Gaussian indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactTruth {
    pub hand: Vec<usize>,
    pub object: Vec<usize>,
}

pub fn camera_name(k: usize) -> String {
    format!("cam{k:02}")
}

fn frame_name(f: usize) -> String {
    format!("f{f:03}")
}

fn write_cameras(out: &mut OutputDir, cameras: &[Camera]) -> Result<Vec<String>> {
    let mut paths = Vec::with_capacity(cameras.len());
    for (k, c) in cameras.iter().enumerate() {
        let path = format!("cameras/{}.json", camera_name(k));
        out.write_json(&path, &CameraJson::from_camera(c))?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_poses(out: &mut OutputDir, poses: &[Pose]) -> Result<Vec<String>> {
    let mut paths = Vec::with_capacity(poses.len());
    for (f, pose) in poses.iter().enumerate() {
        let path = format!("poses/{}.json", frame_name(f));
        out.write_json(&path, &PoseJson::from_pose(pose))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Exact projections of `joints` into every camera, confidence 1 where the
/// joint is in front of the camera and 0 elsewhere.
fn keypoints(joints: &[Vector3<f64>], cameras: &[Camera], camera_paths: &[String]) -> Keypoints2DJson {
    let views = cameras
        .iter()
        .zip(camera_paths)
        .map(|(c, path)| KeypointViewJson {
            cam: path.clone(),
            kp: joints
                .iter()
                .map(|j| match c.project(j) {
                    Some((uv, _)) => [uv.x, uv.y, 1.0],
                    None => [0.0, 0.0, 0.0],
                })
                .collect(),
        })
        .collect();
    Keypoints2DJson { views }
}

fn export_hand(out: &mut OutputDir, fx: &HandFixture) -> Result<()> {
    let frames = fx.dataset.frames.len();
    // View j of frame f was taken by camera f + j * frames.
    let views: usize = fx.dataset.frames.iter().map(|f| f.views.len()).sum();
    let mut cameras = vec![None; views];
    for (f, frame) in fx.dataset.frames.iter().enumerate() {
        for (j, v) in frame.views.iter().enumerate() {
            cameras[f + j * frames] = Some(v.camera.clone());
        }
    }
    let cameras: Vec<Camera> = cameras.into_iter().map(|c| c.expect("every camera has one view")).collect();
    let camera_paths = write_cameras(out, &cameras)?;
    out.write_json("skeleton.json", &SkeletonJson::from_skeleton(&fx.skeleton))?;
    out.write("grid.bin", &encode_grid(&fx.grid))?;
    out.write("truth/hand.ply", &encode_ply(&fx.truth))?;
    let poses: Vec<Pose> = fx.dataset.frames.iter().map(|f| f.pose.clone()).collect();
    let pose_paths = write_poses(out, &poses)?;
    let mut manifest_frames = Vec::with_capacity(frames);
    for (f, frame) in fx.dataset.frames.iter().enumerate() {
        let name = frame_name(f);
        let mut views = Vec::new();
        for (j, v) in frame.views.iter().enumerate() {
            let k = f + j * frames;
            let image = format!("images/{name}_{}.png", camera_name(k));
            out.write(&image, &encode_png(&v.image))?;
            views.push(ViewJson { camera: k, image: Some(image), mask: None });
        }
        let kp = format!("keypoints/{name}.json");
        out.write_json(&kp, &keypoints(&fx.joints[f], &cameras, &camera_paths))?;
        out.write_json(
            &format!("truth/joints/{name}.json"),
            &Keypoints3DJson::from_set(&KeypointSet3D::all_valid(fx.joints[f].clone())),
        )?;
        manifest_frames.push(FrameJson {
            time: Some(f as f64 / FIXTURE_FPS),
            pose: Some(pose_paths[f].clone()),
            keypoints: Some(kp),
            views,
        });
    }
    out.write_json(
        "manifest.json",
        &ManifestJson {
            subject: "two-bone-finger".into(),
            object: None,
            fps: FIXTURE_FPS,
            cameras: camera_paths,
            bounds: None,
            frames: manifest_frames,
        },
    )
}

fn export_object(out: &mut OutputDir, fx: &ObjectFixture) -> Result<()> {
    let cameras: Vec<Camera> = fx.dataset.views.iter().map(|v| v.camera.clone()).collect();
    let camera_paths = write_cameras(out, &cameras)?;
    out.write("truth/object.ply", &encode_ply(&fx.truth))?;
    let mut views = Vec::with_capacity(cameras.len());
    for (k, (v, m)) in fx.dataset.views.iter().zip(&fx.dataset.masks.views).enumerate() {
        let image = format!("images/{}.png", camera_name(k));
        let mask = format!("masks/{}.png", camera_name(k));
        out.write(&image, &encode_png(&v.image))?;
        out.write(&mask, &encode_mask_png(&m.mask))?;
        views.push(ViewJson { camera: k, image: Some(image), mask: Some(mask) });
    }
    out.write_json(
        "manifest.json",
        &ManifestJson {
            subject: "none".into(),
            object: Some("textured-sphere".into()),
            fps: FIXTURE_FPS,
            cameras: camera_paths,
            bounds: Some([fx.bounds.min.into(), fx.bounds.max.into()]),
            frames: vec![FrameJson { time: Some(0.0), pose: None, keypoints: None, views }],
        },
    )
}

fn export_grasp(out: &mut OutputDir, fx: &GraspFixture) -> Result<()> {
    let camera_paths = write_cameras(out, &fx.cameras)?;
    out.write_json("skeleton.json", &SkeletonJson::from_skeleton(&fx.skeleton))?;
    out.write("grid.bin", &encode_grid(&fx.grid))?;
    out.write("hand.ply", &encode_ply(&fx.hand))?;
    out.write("object.ply", &encode_ply(&fx.object))?;
    let pose_paths = write_poses(out, &fx.poses)?;
    let times: Vec<f64> = (0..fx.poses.len()).map(|f| f as f64 / FIXTURE_FPS).collect();
    out.write_json(
        "sequence.json",
        &SequenceJson {
            fps: FIXTURE_FPS,
            frames: times.iter().zip(&pose_paths).map(|(t, p)| SequenceFrameJson { time: *t, pose: p.clone() }).collect(),
        },
    )?;
    let indices = |flags: &[bool]| flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect();
    out.write_json(
        "truth/contacts.json",
        &ContactTruth { hand: indices(&fx.hand_contacts), object: indices(&fx.object_contacts) },
    )?;
    let last = fx.poses.last().expect("grasp fixture has poses");
    let posed = pose_cloud(&fx.hand, &fx.grid, &forward_kinematics(&fx.skeleton, last)?)?.0;
    for (k, c) in fx.cameras.iter().enumerate() {
        let mask = silhouette_mask(&posed, &fx.hand_contacts, c)?;
        out.write(&format!("truth/contact_masks/{}.png", camera_name(k)), &encode_mask_png(&mask))?;
    }
    out.write_json(
        "manifest.json",
        &ManifestJson {
            subject: "two-bone-finger".into(),
            object: Some("sphere".into()),
            fps: FIXTURE_FPS,
            cameras: camera_paths,
            bounds: None,
            frames: times
                .iter()
                .zip(pose_paths)
                .map(|(t, p)| FrameJson { time: Some(*t), pose: Some(p), keypoints: None, views: Vec::new() })
                .collect(),
        },
    )
}

/// Builds the fixture `kind` and stages all of its files in `out`.
pub fn export_scene(out: &mut OutputDir, kind: SceneKind, views: usize, resolution: usize, seed: u64) -> Result<()> {
    match kind {
        SceneKind::TwoBoneFinger => export_hand(out, &two_bone_finger_scene(views, resolution, seed)?),
        SceneKind::TexturedSphere => export_object(out, &textured_sphere_scene(views, resolution, seed)?),
        SceneKind::GraspToy => export_grasp(out, &grasp_toy_scene(views, resolution, seed)?),
    }
}
