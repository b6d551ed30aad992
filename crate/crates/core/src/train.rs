//! Optimization loops that fit Gaussian states to multi-view images.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamState};
use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::gaussian::{mask_keep_flags, GaussianCloud, ObjectMaskSet, DEFAULT_PRUNE_THRESHOLD};
use crate::image::Image;
use crate::kinematics::{forward_kinematics, BoneTransforms, Pose, SkeletonDef};
use crate::loss::{total_loss, LossWeights, PerceptualLoss, DEFAULT_ISOTROPY_TARGET};
use crate::raster::{render, render_backward, RenderGradients};
use crate::skinning::{pose_cloud, SkinningGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 1.6e-4, rotation: 1e-3, log_scale: 5e-3, opacity: 5e-2, sh: 2.5e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    pub accumulation_steps: usize,
    /// Prune every this many iterations; 0 disables pruning.
    pub prune_interval: usize,
    pub prune_threshold: f64,
    /// Object training only; 0 disables culling.
    pub mask_cull_interval: usize,
    pub mask_min_views: usize,
    pub isotropy_target: f64,
    pub weights: LossWeights,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr: LearningRates::default(),
            accumulation_steps: 4,
            prune_interval: 1000,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            mask_cull_interval: 500,
            mask_min_views: 1,
            isotropy_target: DEFAULT_ISOTROPY_TARGET,
            weights: LossWeights::default(),
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulation_steps == 0 {
            return Err(invalid!("accumulation_steps must be at least 1"));
        }
        if !(self.isotropy_target > 0.0 && self.isotropy_target <= 1.0) {
            return Err(invalid!("isotropy_target {} outside (0, 1]", self.isotropy_target));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(invalid!("prune_threshold {} outside [0, 1)", self.prune_threshold));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("position", lr.position),
            ("rotation", lr.rotation),
            ("log_scale", lr.log_scale),
            ("opacity", lr.opacity),
            ("sh", lr.sh),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("learning rate {name} = {v} must be finite and >= 0"));
            }
        }
        self.weights.validate()
    }
}

/// One calibrated image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandFrame {
    pub pose: Pose,
    pub views: Vec<View>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandDataset {
    pub frames: Vec<HandFrame>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectDataset {
    pub views: Vec<View>,
    pub masks: ObjectMaskSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    /// Total loss per iteration.
    pub losses: Vec<f64>,
    /// Number of optimizer steps taken.
    pub updates: usize,
    pub pruned: usize,
    pub culled: usize,
}

/// Adam moments for every parameter group of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudOptimizer {
    pub lr: LearningRates,
    positions: AdamState,
    rotations: AdamState,
    log_scales: AdamState,
    opacities: AdamState,
    sh: AdamState,
}

impl CloudOptimizer {
    pub fn new(cloud: &GaussianCloud, lr: LearningRates) -> Self {
        let n = cloud.len();
        Self {
            lr,
            positions: AdamState::new(n * 3),
            rotations: AdamState::new(n * 4),
            log_scales: AdamState::new(n * 3),
            opacities: AdamState::new(n),
            sh: AdamState::new(n * cloud.coeffs_per_gaussian()),
        }
    }

    /// Applies one Adam step and renormalizes the quaternions.
    pub fn step(&mut self, cloud: &mut GaussianCloud, g: &RenderGradients) -> Result<()> {
        adam_step(cloud.positions.as_flattened_mut(), g.positions.as_flattened(), &mut self.positions, self.lr.position)?;
        adam_step(cloud.rotations.as_flattened_mut(), g.rotations.as_flattened(), &mut self.rotations, self.lr.rotation)?;
        adam_step(cloud.log_scales.as_flattened_mut(), g.log_scales.as_flattened(), &mut self.log_scales, self.lr.log_scale)?;
        adam_step(&mut cloud.opacity_logits, &g.opacity_logits, &mut self.opacities, self.lr.opacity)?;
        adam_step(&mut cloud.sh, &g.sh, &mut self.sh, self.lr.sh)?;
        cloud.normalize_rotations();
        Ok(())
    }

    pub fn retain(&mut self, keep: &[bool], coeffs_per_gaussian: usize) {
        self.positions.retain(keep, 3);
        self.rotations.retain(keep, 4);
        self.log_scales.retain(keep, 3);
        self.opacities.retain(keep, 1);
        self.sh.retain(keep, coeffs_per_gaussian);
    }
}

fn retain_grads(g: &RenderGradients, keep: &[bool], per: usize) -> RenderGradients {
    let mut out = RenderGradients::zeros(0, per);
    for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
        out.positions.push(g.positions[i]);
        out.rotations.push(g.rotations[i]);
        out.log_scales.push(g.log_scales[i]);
        out.opacity_logits.push(g.opacity_logits[i]);
        out.sh.extend_from_slice(&g.sh[i * per..(i + 1) * per]);
    }
    out
}

/// Shared state of both loops: the cloud, its optimizer and the pending
/// accumulated gradient.
struct Fitter<'a> {
    cfg: &'a TrainConfig,
    cloud: GaussianCloud,
    opt: CloudOptimizer,
    accum: RenderGradients,
    pending: usize,
    outcome_losses: Vec<f64>,
    updates: usize,
    pruned: usize,
    culled: usize,
}

impl<'a> Fitter<'a> {
    fn new(cloud: &GaussianCloud, cfg: &'a TrainConfig) -> Self {
        let mut cloud = cloud.clone();
        if cfg.iterations > 0 {
            cloud.normalize_rotations();
        }
        Self {
            cfg,
            opt: CloudOptimizer::new(&cloud, cfg.lr),
            accum: RenderGradients::zeros(cloud.len(), cloud.coeffs_per_gaussian()),
            cloud,
            pending: 0,
            outcome_losses: Vec::with_capacity(cfg.iterations),
            updates: 0,
            pruned: 0,
            culled: 0,
        }
    }

    fn accumulate(&mut self, it: usize, g: RenderGradients) -> Result<()> {
        self.accum.add_scaled(&g, 1.0);
        self.pending += 1;
        if self.pending == self.cfg.accumulation_steps {
            let mut mean = RenderGradients::zeros(self.cloud.len(), self.cloud.coeffs_per_gaussian());
            mean.add_scaled(&self.accum, 1.0 / self.pending as f64);
            if !mean.all_finite() {
                return Err(Error::NonFiniteLoss(it));
            }
            self.opt.step(&mut self.cloud, &mean)?;
            self.accum = RenderGradients::zeros(self.cloud.len(), self.cloud.coeffs_per_gaussian());
            self.pending = 0;
            self.updates += 1;
        }
        Ok(())
    }

    fn retain(&mut self, keep: &[bool]) {
        let per = self.cloud.coeffs_per_gaussian();
        self.cloud = self.cloud.retain_mask(keep);
        self.opt.retain(keep, per);
        self.accum = retain_grads(&self.accum, keep, per);
    }

    fn maybe_prune(&mut self, it: usize) -> Result<()> {
        let interval = self.cfg.prune_interval;
        if interval == 0 || !(it + 1).is_multiple_of(interval) {
            return Ok(());
        }
        let keep: Vec<bool> = (0..self.cloud.len()).map(|i| self.cloud.opacity(i) >= self.cfg.prune_threshold).collect();
        let before = self.cloud.len();
        self.retain(&keep);
        self.pruned += before - self.cloud.len();
        if self.cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(())
    }

    fn finish(self) -> TrainOutcome {
        TrainOutcome {
            cloud: self.cloud,
            losses: self.outcome_losses,
            updates: self.updates,
            pruned: self.pruned,
            culled: self.culled,
        }
    }
}

/// Visits every `(frame, view)` pair once per epoch in a seeded random order.
struct ViewSchedule {
    pairs: Vec<(usize, usize)>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ViewSchedule {
    fn new(pairs: Vec<(usize, usize)>, seed: u64) -> Self {
        let len = pairs.len();
        Self { pairs, cursor: len, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn next(&mut self) -> (usize, usize) {
        if self.cursor == self.pairs.len() {
            self.pairs.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.pairs[self.cursor - 1]
    }
}

fn check_view(view: &View) -> Result<()> {
    if view.image.width != view.camera.width || view.image.height != view.camera.height {
        return Err(Error::Dimension(alloc::format!(
            "image {}x{} but camera {}x{}",
            view.image.width, view.image.height, view.camera.width, view.camera.height
        )));
    }
    Ok(())
}

pub fn train_hand(
    cloud: &GaussianCloud,
    grid: &SkinningGrid,
    skel: &SkeletonDef,
    dataset: &HandDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_hand_with(cloud, grid, skel, dataset, cfg, None)
}

/// Fits a canonical hand cloud: each iteration poses the cloud for one
/// sampled frame, renders one view and backpropagates into canonical
/// states; updates happen every `accumulation_steps` iterations.
pub fn train_hand_with(
    cloud: &GaussianCloud,
    grid: &SkinningGrid,
    skel: &SkeletonDef,
    dataset: &HandDataset,
    cfg: &TrainConfig,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.frames.iter().all(|f| f.views.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let mut bones: Vec<BoneTransforms> = Vec::with_capacity(dataset.frames.len());
    let mut pairs = Vec::new();
    for (f, frame) in dataset.frames.iter().enumerate() {
        for (d, (angle, dof)) in frame.pose.joint_angles.iter().zip(skel.dofs()).enumerate() {
            if *angle < dof.lo || *angle > dof.hi {
                return Err(invalid!("frame {f}: DOF {d} angle {angle} outside [{}, {}]", dof.lo, dof.hi));
            }
        }
        bones.push(forward_kinematics(skel, &frame.pose)?);
        for (v, view) in frame.views.iter().enumerate() {
            check_view(view)?;
            pairs.push((f, v));
        }
    }
    let mut fit = Fitter::new(cloud, cfg);
    let mut schedule = ViewSchedule::new(pairs, cfg.seed);
    for it in 0..cfg.iterations {
        let (f, v) = schedule.next();
        let view = &dataset.frames[f].views[v];
        let (posed, tfs) = pose_cloud(&fit.cloud, grid, &bones[f])?;
        let out = render(&posed, &tfs, &view.camera, cfg.background)?;
        let loss = total_loss(&out.image, &view.image, &fit.cloud, &cfg.weights, cfg.isotropy_target, perceptual)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }
        fit.outcome_losses.push(loss.value);
        let mut g = render_backward(&posed, &tfs, &view.camera, &out, &loss.image_grad)?;
        add_log_scale_grads(&mut g, &loss.log_scale_grad);
        fit.accumulate(it, g)?;
        fit.maybe_prune(it)?;
    }
    Ok(fit.finish())
}

fn add_log_scale_grads(g: &mut RenderGradients, extra: &[[f64; 3]]) {
    for (dst, src) in g.log_scales.iter_mut().zip(extra) {
        for k in 0..3 {
            dst[k] += src[k];
        }
    }
}

pub fn train_object(cloud: &GaussianCloud, dataset: &ObjectDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_object_with(cloud, dataset, cfg, None)
}

/// Fits a static cloud, culling primitives outside the object masks every
/// `mask_cull_interval` iterations.
pub fn train_object_with(
    cloud: &GaussianCloud,
    dataset: &ObjectDataset,
    cfg: &TrainConfig,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for view in &dataset.views {
        check_view(view)?;
    }
    let culling = cfg.mask_cull_interval > 0 && cfg.mask_cull_interval <= cfg.iterations;
    if culling {
        dataset.masks.validate()?;
    }
    let mut fit = Fitter::new(cloud, cfg);
    let mut schedule = ViewSchedule::new((0..dataset.views.len()).map(|v| (0, v)).collect(), cfg.seed);
    for it in 0..cfg.iterations {
        let (_, v) = schedule.next();
        let view = &dataset.views[v];
        let out = render(&fit.cloud, &[], &view.camera, cfg.background)?;
        let loss = total_loss(&out.image, &view.image, &fit.cloud, &cfg.weights, cfg.isotropy_target, perceptual)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }
        fit.outcome_losses.push(loss.value);
        let mut g = render_backward(&fit.cloud, &[], &view.camera, &out, &loss.image_grad)?;
        add_log_scale_grads(&mut g, &loss.log_scale_grad);
        fit.accumulate(it, g)?;
        fit.maybe_prune(it)?;
        if culling && (it + 1) % cfg.mask_cull_interval == 0 {
            let keep = mask_keep_flags(&fit.cloud, &dataset.masks, cfg.mask_min_views)?;
            let before = fit.cloud.len();
            fit.retain(&keep);
            fit.culled += before - fit.cloud.len();
            if fit.cloud.is_empty() {
                return Err(Error::EmptyCloud);
            }
        }
    }
    Ok(fit.finish())
}
