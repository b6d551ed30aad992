//! Pipeline commands. Each stages its outputs in an [`OutputDir`] and
//! commits only after everything was produced, so a failed run leaves no
//! partial results behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use graspsplat_core::contact::{
    accumulate, accumulated_mask_binary, accumulated_render_gray, contact_render_gray, instantaneous_contact,
    AccumulatedContact,
};
use graspsplat_core::gaussian::{concat, init_from_skeleton, init_in_box, mask_keep_flags};
use graspsplat_core::kinematics::{forward_kinematics, joint_positions, Pose, SkeletonDef};
use graspsplat_core::math::Aabb;
use graspsplat_core::metrics::{f1, grip_aperture, grip_aperture_mean, iou, psnr};
use graspsplat_core::pose_fit::{
    cold_start_pose, hand_scale, ik_solve, reprojection_errors, smooth_poses, triangulate, KeypointSet3D, MIN_IK_JOINTS,
};
use graspsplat_core::raster::render;
use graspsplat_core::skinning::{build_grid, pose_cloud, segment_template, GaussianTransform, SkinningGrid};
use graspsplat_core::synthetic::SceneKind;
use graspsplat_core::train::{self, TrainOutcome};
use log::info;
use serde::{Deserialize, Serialize};

use crate::binfmt::{encode_contact, encode_grid, read_grid, ContactFile};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fsio::OutputDir;
use crate::imageio::{encode_mask_png, encode_png, read_mask_png};
use crate::json::{
    load_camera, load_sequence, load_skeleton, Keypoints3DJson, PoseJson, SequenceFrameJson, SequenceJson,
};
use crate::manifest::load_manifest;
use crate::ply::{encode_ply, read_ply};
use crate::scene::export_scene;

/// Template points per bone segment for grids built from a skeleton.
pub const TEMPLATE_POINTS_PER_SEGMENT: usize = 64;
/// Margin around the rest skeleton covered by a built grid, in meters.
pub const GRID_MARGIN: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrSummary {
    pub per_view: Vec<f64>,
    pub mean: f64,
    pub min: f64,
}

impl PsnrSummary {
    fn new(per_view: Vec<f64>) -> Self {
        let mean = per_view.iter().sum::<f64>() / per_view.len().max(1) as f64;
        let min = per_view.iter().copied().fold(f64::INFINITY, f64::min);
        Self { per_view, mean, min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub iterations: usize,
    pub updates: usize,
    pub initial_gaussians: usize,
    pub final_gaussians: usize,
    pub pruned: usize,
    pub culled: usize,
    /// Centers outside the masks in at least `mask_min_views` views.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outside_masks: Option<usize>,
    pub losses: Vec<f64>,
    pub psnr: PsnrSummary,
}

impl TrainReport {
    fn new(seed: u64, initial: usize, o: &TrainOutcome, psnr: Vec<f64>) -> Self {
        Self {
            seed,
            iterations: o.losses.len(),
            updates: o.updates,
            initial_gaussians: initial,
            final_gaussians: o.cloud.len(),
            pruned: o.pruned,
            culled: o.culled,
            outside_masks: None,
            losses: o.losses.clone(),
            psnr: PsnrSummary::new(psnr),
        }
    }
}

/// Skinning grid over the rest skeleton from per-segment template points.
pub fn skeleton_grid(skel: &SkeletonDef, dims: [usize; 3]) -> Result<SkinningGrid> {
    let template = segment_template(skel, TEMPLATE_POINTS_PER_SEGMENT)?;
    let bounds = Aabb::around(template.points.iter(), GRID_MARGIN)
        .ok_or_else(|| Error::Invalid("skeleton has no bone segments".into()))?;
    Ok(build_grid(&template, dims, bounds)?)
}

pub struct TrainHandArgs<'a> {
    pub manifest: &'a Path,
    pub skeleton: &'a Path,
    /// Prebuilt grid; built from the skeleton when absent.
    pub grid: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: u64,
}

/// Writes `hand.ply`, the `grid.bin` used and `report.json`.
pub fn train_hand(args: &TrainHandArgs) -> Result<Vec<PathBuf>> {
    let cfg = Config::load(args.config)?;
    let skel = load_skeleton(args.skeleton)?;
    let capture = load_manifest(args.manifest)?;
    let dataset = capture.hand_dataset()?;
    let grid = match args.grid {
        Some(p) => read_grid(p)?,
        None => skeleton_grid(&skel, cfg.train.grid_dims)?,
    };
    if grid.bone_count() != skel.bone_count() {
        return Err(Error::Invalid(format!(
            "grid has {} bones, skeleton has {}",
            grid.bone_count(),
            skel.bone_count()
        )));
    }
    let tc = cfg.train_config(args.seed);
    let init = init_from_skeleton(&skel, cfg.train.init_per_bone, args.seed);
    let views: usize = dataset.frames.iter().map(|f| f.views.len()).sum();
    info!(
        "train-hand start frames={} views={views} gaussians={} iterations={} seed={}",
        dataset.frames.len(),
        init.len(),
        tc.iterations,
        args.seed
    );
    let outcome = train::train_hand(&init, &grid, &skel, &dataset, &tc)?;
    let mut scores = Vec::with_capacity(views);
    for frame in &dataset.frames {
        let (posed, tfs) = pose_cloud(&outcome.cloud, &grid, &forward_kinematics(&skel, &frame.pose)?)?;
        for v in &frame.views {
            scores.push(psnr(&render(&posed, &tfs, &v.camera, tc.background)?.image, &v.image)?);
        }
    }
    let report = TrainReport::new(args.seed, init.len(), &outcome, scores);
    info!(
        "train-hand done gaussians={} psnr_mean={:.3} psnr_min={:.3}",
        report.final_gaussians, report.psnr.mean, report.psnr.min
    );
    let mut out = OutputDir::new(args.out)?;
    out.write("hand.ply", &encode_ply(&outcome.cloud))?;
    out.write("grid.bin", &encode_grid(&grid))?;
    out.write_json("report.json", &report)?;
    out.commit()
}

pub struct TrainObjectArgs<'a> {
    pub manifest: &'a Path,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: u64,
}

/// Writes `object.ply` and `report.json`. The manifest must give `bounds`
/// for initialization.
pub fn train_object(args: &TrainObjectArgs) -> Result<Vec<PathBuf>> {
    let cfg = Config::load(args.config)?;
    let capture = load_manifest(args.manifest)?;
    let bounds = capture
        .bounds
        .ok_or_else(|| Error::Invalid(format!("{}: object training needs `bounds`", args.manifest.display())))?;
    let dataset = capture.object_dataset()?;
    if dataset.views.is_empty() {
        return Err(Error::Invalid(format!("{}: no object images", args.manifest.display())));
    }
    let masks = &dataset.masks.views;
    if !masks.is_empty() && masks.iter().all(|m| m.mask.count() == 0) {
        return Err(Error::Failed("every object mask is empty; mask culling would leave an empty cloud".into()));
    }
    let tc = cfg.train_config(args.seed);
    let init = init_in_box(&bounds, cfg.train.init_count, args.seed);
    info!(
        "train-object start views={} masks={} gaussians={} iterations={} seed={}",
        dataset.views.len(),
        masks.len(),
        init.len(),
        tc.iterations,
        args.seed
    );
    let outcome = train::train_object(&init, &dataset, &tc)?;
    let scores = dataset
        .views
        .iter()
        .map(|v| Ok(psnr(&render(&outcome.cloud, &[], &v.camera, tc.background)?.image, &v.image)?))
        .collect::<Result<Vec<_>>>()?;
    let mut report = TrainReport::new(args.seed, init.len(), &outcome, scores);
    if !masks.is_empty() {
        let keep = mask_keep_flags(&outcome.cloud, &dataset.masks, tc.mask_min_views.max(1))?;
        report.outside_masks = Some(keep.iter().filter(|k| !**k).count());
    }
    info!(
        "train-object done gaussians={} psnr_mean={:.3} psnr_min={:.3} outside_masks={:?}",
        report.final_gaussians, report.psnr.mean, report.psnr.min, report.outside_masks
    );
    let mut out = OutputDir::new(args.out)?;
    out.write("object.ply", &encode_ply(&outcome.cloud))?;
    out.write_json("report.json", &report)?;
    out.commit()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub time: f64,
    pub valid_joints: usize,
    pub iterations: usize,
    pub loss: f64,
    /// Distances between fitted and triangulated joints, in meters.
    pub mean_joint_error: f64,
    pub max_joint_error: f64,
    /// Pixel distances between detections and reprojected triangulations.
    pub mean_reprojection_error: f64,
    pub max_reprojection_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub hand_scale: f64,
    pub mean_joint_error: f64,
    pub max_joint_error: f64,
    pub mean_reprojection_error: f64,
    pub frames: Vec<FrameFit>,
}

pub struct FitPoseArgs<'a> {
    pub manifest: &'a Path,
    pub skeleton: &'a Path,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Triangulates every frame, fits poses by IK (each frame warm-started
/// from the previous one) and smooths them. Writes raw poses under
/// `poses/`, smoothed ones under `smoothed/` with `sequence.json` listing
/// them, triangulated joints under `keypoints3d/`, `report.json`, and
/// `aperture.csv` when the skeleton has two or more fingertips.
pub fn fit_pose(args: &FitPoseArgs) -> Result<Vec<PathBuf>> {
    let cfg = Config::load(args.config)?;
    let skel = load_skeleton(args.skeleton)?;
    let capture = load_manifest(args.manifest)?;
    if capture.frames.is_empty() {
        return Err(Error::Invalid(format!("{}: no frames", args.manifest.display())));
    }
    let scale = hand_scale(&skel);
    let params = cfg.pose.ik_params(Some(cfg.pose.stop_fraction * scale));
    let mut poses: Vec<Pose> = Vec::with_capacity(capture.frames.len());
    let mut targets = Vec::with_capacity(capture.frames.len());
    let mut fits = Vec::with_capacity(capture.frames.len());
    for (i, frame) in capture.frames.iter().enumerate() {
        let kps = capture
            .keypoints(i)?
            .ok_or_else(|| Error::Invalid(format!("{}: frame {i} has no keypoints", args.manifest.display())))?;
        let target = triangulate(&kps, cfg.pose.min_views)?;
        if target.len() != skel.bone_count() {
            return Err(Error::Invalid(format!(
                "frame {i}: {} keypoints for {} joints",
                target.len(),
                skel.bone_count()
            )));
        }
        let valid = target.valid_count();
        if valid < MIN_IK_JOINTS {
            return Err(Error::Failed(format!(
                "frame {i}: only {valid} joints triangulated, need {MIN_IK_JOINTS}"
            )));
        }
        // Warm start from the previous frame; fall back to a cold start
        // when that misses the tolerance after a large jump.
        let mut fit = match poses.last() {
            Some(p) => ik_solve(&skel, &target, p, &params)?,
            None => ik_solve(&skel, &target, &cold_start_pose(&skel, &target)?, &params)?,
        };
        if !poses.is_empty() && params.stop_error.is_some_and(|tol| fit.max_error > tol) {
            let cold = ik_solve(&skel, &target, &cold_start_pose(&skel, &target)?, &params)?;
            if cold.max_error < fit.max_error {
                fit = cold;
            }
        }
        let joints = joint_positions(&skel, &forward_kinematics(&skel, &fit.pose)?)?;
        let errors: Vec<f64> =
            (0..joints.len()).filter(|&j| target.valid[j]).map(|j| (joints[j] - target.points[j]).norm()).collect();
        let reproj = reprojection_errors(&kps, &target);
        let f = FrameFit {
            time: frame.time,
            valid_joints: valid,
            iterations: fit.iterations,
            loss: fit.loss,
            mean_joint_error: mean(&errors),
            max_joint_error: max(&errors),
            mean_reprojection_error: mean(&reproj),
            max_reprojection_error: max(&reproj),
        };
        info!(
            "fit-pose frame={i} valid={valid} iterations={} max_joint_error={:.3e}",
            f.iterations, f.max_joint_error
        );
        fits.push(f);
        poses.push(fit.pose);
        targets.push(target);
    }
    let times: Vec<f64> = capture.frames.iter().map(|f| f.time).collect();
    let smoothed = smooth_poses(&poses, &times, cfg.pose.one_euro())?;
    let means: Vec<f64> = fits.iter().map(|f| f.mean_joint_error).collect();
    let report = FitReport {
        hand_scale: scale,
        mean_joint_error: mean(&means),
        max_joint_error: fits.iter().map(|f| f.max_joint_error).fold(0.0, f64::max),
        mean_reprojection_error: mean(&fits.iter().map(|f| f.mean_reprojection_error).collect::<Vec<_>>()),
        frames: fits,
    };

    let mut out = OutputDir::new(args.out)?;
    let mut sequence = SequenceJson { fps: capture.fps, frames: Vec::with_capacity(poses.len()) };
    for (i, ((raw, smooth), target)) in poses.iter().zip(&smoothed).zip(&targets).enumerate() {
        out.write_json(&format!("poses/f{i:03}.json"), &PoseJson::from_pose(raw))?;
        let name = format!("smoothed/f{i:03}.json");
        out.write_json(&name, &PoseJson::from_pose(smooth))?;
        out.write_json(&format!("keypoints3d/f{i:03}.json"), &Keypoints3DJson::from_set(target))?;
        sequence.frames.push(SequenceFrameJson { time: times[i], pose: name });
    }
    out.write_json("sequence.json", &sequence)?;
    out.write_json("report.json", &report)?;
    if skel.tips().len() >= 2 {
        let mut csv = String::from("time,aperture,aperture_mean\n");
        for (t, pose) in times.iter().zip(&smoothed) {
            let joints = KeypointSet3D::all_valid(joint_positions(&skel, &forward_kinematics(&skel, pose)?)?);
            csv.push_str(&format!(
                "{t},{},{}\n",
                grip_aperture(&joints, &skel)?,
                grip_aperture_mean(&joints, &skel)?
            ));
        }
        out.write("aperture.csv", csv.as_bytes())?;
    }
    info!(
        "fit-pose done frames={} mean_joint_error={:.3e} hand_scale={:.4}",
        poses.len(),
        report.mean_joint_error,
        scale
    );
    out.commit()
}

/// Gaussian indices flagged on each side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactSet {
    pub hand: Vec<usize>,
    pub object: Vec<usize>,
}

impl ContactSet {
    pub fn from_flags(hand: &[bool], object: &[bool]) -> Self {
        let idx = |f: &[bool]| f.iter().enumerate().filter(|(_, x)| **x).map(|(i, _)| i).collect();
        Self { hand: idx(hand), object: idx(object) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameContact {
    pub time: f64,
    pub hand_contacts: usize,
    pub object_contacts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspReport {
    pub tau: f64,
    pub mode: String,
    pub frames: Vec<FrameContact>,
    pub accumulated: ContactSet,
}

pub struct GraspArgs<'a> {
    pub hand: &'a Path,
    pub grid: &'a Path,
    pub skeleton: &'a Path,
    pub object: &'a Path,
    pub poses: &'a Path,
    /// Overrides the configured threshold.
    pub tau: Option<f64>,
    pub cameras: &'a [PathBuf],
    pub config: Option<&'a Path>,
    pub out: &'a Path,
}

/// Poses the hand for every frame of the sequence, composes it with the
/// object and tracks contact. Writes `contacts/fNNN.bin` and
/// `contacts/accumulated.bin`; for every camera, composed renders under
/// `renders/`, contact renders under `contact_renders/`, and the binary
/// accumulated contact mask of the last frame as `masks/<camera>.png`.
pub fn grasp(args: &GraspArgs) -> Result<Vec<PathBuf>> {
    let cfg = Config::load(args.config)?;
    let tau = args.tau.unwrap_or(cfg.contact.tau);
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Invalid(format!("contact threshold tau must be positive, got {tau}")));
    }
    let mode = cfg.contact.accumulation_mode();
    let skel = load_skeleton(args.skeleton)?;
    let hand = read_ply(args.hand)?;
    let grid = read_grid(args.grid)?;
    let object = read_ply(args.object)?;
    let sequence = load_sequence(args.poses)?;
    let mut cameras = Vec::with_capacity(args.cameras.len());
    for p in args.cameras {
        let name = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Invalid(format!("{}: camera file needs a name", p.display())))?
            .to_string();
        if cameras.iter().any(|(n, _)| *n == name) {
            return Err(Error::Invalid(format!("camera name `{name}` given twice")));
        }
        cameras.push((name, load_camera(p)?));
    }
    let background = cfg.train.background;
    info!(
        "grasp start frames={} hand={} object={} tau={tau} cameras={}",
        sequence.len(),
        hand.len(),
        object.len(),
        cameras.len()
    );

    let mut out = OutputDir::new(args.out)?;
    let mut acc = AccumulatedContact::new(hand.len(), object.len(), tau, mode)?;
    let mut frames = Vec::with_capacity(sequence.len());
    let mut posed = hand.clone();
    let object_tfs = vec![GaussianTransform::identity(); object.len()];
    for (f, (time, pose)) in sequence.iter().enumerate() {
        let (p, tfs) = pose_cloud(&hand, &grid, &forward_kinematics(&skel, pose)?)?;
        posed = p;
        let scene = concat(&posed, &object)?;
        let mut scene_tfs = tfs;
        scene_tfs.extend_from_slice(&object_tfs);
        let map = instantaneous_contact(&posed, &object, tau)?;
        acc = accumulate(&acc, &map)?;
        frames.push(FrameContact { time: *time, hand_contacts: map.hand_contacts(), object_contacts: map.object_contacts() });
        for (name, camera) in &cameras {
            let composed = render(&scene.cloud, &scene_tfs, camera, background)?;
            out.write(&format!("renders/f{f:03}_{name}.png"), &encode_png(&composed.image))?;
            let gray = contact_render_gray(&map, &posed, camera)?;
            out.write(&format!("contact_renders/f{f:03}_{name}.png"), &encode_png(&gray))?;
        }
        info!("grasp frame={f} hand_contacts={} object_contacts={}", map.hand_contacts(), map.object_contacts());
        out.write(&format!("contacts/f{f:03}.bin"), &encode_contact(&ContactFile::Instantaneous(map)))?;
    }
    for (name, camera) in &cameras {
        out.write(&format!("contact_renders/accumulated_{name}.png"), &encode_png(&accumulated_render_gray(&acc, &posed, camera)?))?;
        out.write(&format!("masks/{name}.png"), &encode_mask_png(&accumulated_mask_binary(&acc, &posed, camera)?))?;
    }
    let report = GraspReport {
        tau,
        mode: format!("{mode:?}").to_lowercase(),
        frames,
        accumulated: ContactSet::from_flags(&acc.hand_flags(), &acc.object_flags()),
    };
    info!("grasp done hand_contacts={} object_contacts={}", report.accumulated.hand.len(), report.accumulated.object.len());
    out.write("contacts/accumulated.bin", &encode_contact(&ContactFile::Accumulated(acc)))?;
    out.write_json("report.json", &report)?;
    out.commit()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub name: String,
    pub iou: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mean_iou: f64,
    pub mean_f1: f64,
    pub views: Vec<ViewScore>,
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") && entry.path().is_file() {
            names.insert(name);
        }
    }
    Ok(names)
}

/// Scores every mask in `pred` against the same-named mask in `truth` and
/// writes `evaluation.json`. Both directories must hold the same PNG names.
pub fn evaluate(pred: &Path, truth: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let (p, t) = (png_names(pred)?, png_names(truth)?);
    if let Some(n) = p.difference(&t).next() {
        return Err(Error::Invalid(format!("{n} is in {} but not in {}", pred.display(), truth.display())));
    }
    if let Some(n) = t.difference(&p).next() {
        return Err(Error::Invalid(format!("{n} is in {} but not in {}", truth.display(), pred.display())));
    }
    if p.is_empty() {
        return Err(Error::Invalid(format!("no PNG masks in {}", pred.display())));
    }
    let mut views = Vec::with_capacity(p.len());
    for name in &p {
        let (a, b) = (read_mask_png(&pred.join(name))?, read_mask_png(&truth.join(name))?);
        views.push(ViewScore { name: name.clone(), iou: iou(&a, &b)?, f1: f1(&a, &b)? });
    }
    let report = EvaluationReport {
        mean_iou: mean(&views.iter().map(|v| v.iou).collect::<Vec<_>>()),
        mean_f1: mean(&views.iter().map(|v| v.f1).collect::<Vec<_>>()),
        views,
    };
    info!("evaluate views={} mean_iou={:.4} mean_f1={:.4}", report.views.len(), report.mean_iou, report.mean_f1);
    let mut dir = OutputDir::new(out)?;
    dir.write_json("evaluation.json", &report)?;
    dir.commit()
}

/// Exports a synthetic fixture directory.
pub fn make_scene(kind: SceneKind, views: usize, resolution: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let mut dir = OutputDir::new(out)?;
    export_scene(&mut dir, kind, views, resolution, seed)?;
    info!("make-scene kind={} views={views} resolution={resolution} seed={seed} files={}", kind.name(), dir.artifacts().len());
    dir.commit()
}
