//! Pose estimation from keypoints: triangulation, inverse kinematics with a
//! joint-limit hinge, one-euro smoothing and bone-length estimation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{DMatrix, Matrix3, RowVector4, UnitQuaternion, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::adam::{adam_step, AdamState};
use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::kinematics::{
    apply_global_step, fk_jacobian, forward_kinematics, joint_positions, posed_frames, Pose, SkeletonDef,
    GLOBAL_PARAMS,
};

/// 2D detections below this confidence are ignored by triangulation.
pub const CONFIDENCE_FLOOR: f64 = 0.3;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_IK_LR: f64 = 0.001;
pub const DEFAULT_IK_ITERATIONS: usize = 2000;
/// Inverse kinematics needs at least this many valid target joints.
pub const MIN_IK_JOINTS: usize = 4;
const AIM_ITERATIONS: usize = 30;
const AIM_DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint2D {
    pub uv: [f64; 2],
    pub confidence: f64,
}

/// Detections of every joint in one calibrated view.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointView {
    pub camera: Camera,
    pub keypoints: Vec<Keypoint2D>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet2D {
    pub views: Vec<KeypointView>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet3D {
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl KeypointSet3D {
    pub fn all_valid(points: Vec<Vector3<f64>>) -> Self {
        let valid = vec![true; points.len()];
        Self { points, valid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

fn joint_count(kps: &KeypointSet2D) -> Result<usize> {
    let n = kps.views.first().map_or(0, |v| v.keypoints.len());
    for (i, v) in kps.views.iter().enumerate() {
        if v.keypoints.len() != n {
            return Err(Error::Dimension(alloc::format!(
                "view {i} has {} keypoints, view 0 has {n}",
                v.keypoints.len()
            )));
        }
    }
    Ok(n)
}

fn usable(kp: &Keypoint2D, camera: &Camera) -> bool {
    kp.confidence >= CONFIDENCE_FLOOR
        && kp.uv.iter().all(|v| v.is_finite())
        && kp.uv[0] >= -0.5
        && kp.uv[1] >= -0.5
        && kp.uv[0] <= camera.width as f64 - 0.5
        && kp.uv[1] <= camera.height as f64 - 0.5
}

/// Confidence-weighted linear triangulation. A joint is valid when at least
/// `max(min_views, 2)` views see it with confidence at or above
/// [`CONFIDENCE_FLOOR`].
pub fn triangulate(kps: &KeypointSet2D, min_views: usize) -> Result<KeypointSet3D> {
    let joints = joint_count(kps)?;
    let need = min_views.max(2);
    let projections: Vec<_> = kps.views.iter().map(|v| v.camera.projection_matrix()).collect();
    let mut out = KeypointSet3D { points: vec![Vector3::zeros(); joints], valid: vec![false; joints] };
    for j in 0..joints {
        let mut rows: Vec<RowVector4<f64>> = Vec::new();
        for (v, view) in kps.views.iter().enumerate() {
            let kp = &view.keypoints[j];
            if !usable(kp, &view.camera) {
                continue;
            }
            let p = &projections[v];
            for (k, coord) in kp.uv.iter().enumerate() {
                let row = p.row(2) * *coord - p.row(k);
                let n = row.norm();
                if n > 0.0 {
                    rows.push(row * (kp.confidence / n));
                }
            }
        }
        if rows.len() < 2 * need {
            continue;
        }
        let a = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c]);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("v_t requested");
        let (mut best, mut best_sv) = (0, f64::INFINITY);
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < best_sv {
                best_sv = *s;
                best = i;
            }
        }
        let x = v_t.row(best);
        if x[3].abs() < 1e-300 {
            continue;
        }
        let p = Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]);
        if p.iter().all(|c| c.is_finite()) {
            out.points[j] = p;
            out.valid[j] = true;
        }
    }
    Ok(out)
}

/// Pixel distance between each usable detection and the projection of its
/// triangulated joint.
pub fn reprojection_errors(kps: &KeypointSet2D, points: &KeypointSet3D) -> Vec<f64> {
    let mut errs = Vec::new();
    for view in &kps.views {
        for (j, kp) in view.keypoints.iter().enumerate() {
            if j >= points.len() || !points.valid[j] || !usable(kp, &view.camera) {
                continue;
            }
            if let Some((uv, _)) = view.camera.project(&points.points[j]) {
                errs.push(((uv.x - kp.uv[0]).powi(2) + (uv.y - kp.uv[1]).powi(2)).sqrt());
            }
        }
    }
    errs
}

/// One-sided squared violation of every DOF limit, and its gradient with
/// respect to the joint angles.
pub fn limit_loss(pose: &Pose, skel: &SkeletonDef) -> Result<(f64, Vec<f64>)> {
    if pose.joint_angles.len() != skel.dof_count() {
        return Err(Error::LengthMismatch { expected: skel.dof_count(), got: pose.joint_angles.len() });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; skel.dof_count()];
    for (k, (theta, dof)) in pose.joint_angles.iter().zip(skel.dofs()).enumerate() {
        if *theta > dof.hi {
            value += (theta - dof.hi) * (theta - dof.hi);
            grad[k] = 2.0 * (theta - dof.hi);
        } else if *theta < dof.lo {
            value += (dof.lo - theta) * (dof.lo - theta);
            grad[k] = -2.0 * (dof.lo - theta);
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams {
    pub lambda: f64,
    pub lr: f64,
    pub iterations: usize,
    /// Stop once every valid joint is within this distance of its target.
    pub stop_error: Option<f64>,
}

impl Default for IkParams {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, lr: DEFAULT_IK_LR, iterations: DEFAULT_IK_ITERATIONS, stop_error: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    /// Lowest-loss iterate.
    pub pose: Pose,
    pub loss: f64,
    pub initial_loss: f64,
    /// Largest distance from a valid joint of `pose` to its target.
    pub max_error: f64,
    /// Optimizer steps taken.
    pub iterations: usize,
}

struct IkEval {
    loss: f64,
    max_error: f64,
    grad: Vec<f64>,
}

fn ik_eval(skel: &SkeletonDef, target: &KeypointSet3D, pose: &Pose, lambda: f64, with_grad: bool) -> Result<IkEval> {
    let joints = joint_positions(skel, &forward_kinematics(skel, pose)?)?;
    let (lim, lim_grad) = limit_loss(pose, skel)?;
    let mut loss = lambda * lim;
    let mut max_error: f64 = 0.0;
    let mut residual = vec![0.0; 3 * joints.len()];
    for (j, p) in joints.iter().enumerate() {
        if !target.valid[j] {
            continue;
        }
        let d = p - target.points[j];
        loss += d.norm_squared();
        max_error = max_error.max(d.norm());
        for a in 0..3 {
            residual[3 * j + a] = 2.0 * d[a];
        }
    }
    let mut grad = Vec::new();
    if with_grad {
        let jac = fk_jacobian(skel, pose)?;
        grad = (0..jac.ncols()).map(|c| jac.column(c).iter().zip(&residual).map(|(a, b)| a * b).sum()).collect();
        for (k, g) in lim_grad.iter().enumerate() {
            grad[GLOBAL_PARAMS + k] += lambda * g;
        }
    }
    Ok(IkEval { loss, max_error, grad })
}

/// Minimizes `sum |FK(pose)_j - x_j|^2 + lambda * limit_loss` over the valid
/// joints with Adam. The global rotation is stepped in the tangent space
/// (`R <- exp(dr) R`).
pub fn ik_solve(skel: &SkeletonDef, target: &KeypointSet3D, init: &Pose, params: &IkParams) -> Result<IkResult> {
    if target.len() != skel.bone_count() || target.valid.len() != target.len() {
        return Err(Error::LengthMismatch { expected: skel.bone_count(), got: target.len() });
    }
    let valid = target.valid_count();
    if valid < MIN_IK_JOINTS {
        return Err(Error::TooFewJoints { valid, needed: MIN_IK_JOINTS });
    }
    if !(params.lr > 0.0 && params.lambda >= 0.0) {
        return Err(invalid!("ik needs lr > 0 and lambda >= 0"));
    }
    let mut pose = init.clone();
    let first = ik_eval(skel, target, &pose, params.lambda, true)?;
    let mut best = (pose.clone(), first.loss, first.max_error);
    let initial_loss = first.loss;
    let mut state = AdamState::new(GLOBAL_PARAMS + skel.dof_count());
    let mut eval = first;
    let mut iterations = 0;
    while iterations < params.iterations {
        if params.stop_error.is_some_and(|tol| best.2 <= tol) {
            break;
        }
        let mut x = vec![0.0; state.len()];
        x[GLOBAL_PARAMS..].copy_from_slice(&pose.joint_angles);
        let before = x.clone();
        adam_step(&mut x, &eval.grad, &mut state, params.lr)?;
        pose.joint_angles.copy_from_slice(&x[GLOBAL_PARAMS..]);
        apply_global_step(
            &mut pose,
            Vector3::new(x[0] - before[0], x[1] - before[1], x[2] - before[2]),
            Vector3::new(x[3] - before[3], x[4] - before[4], x[5] - before[5]),
        );
        iterations += 1;
        eval = ik_eval(skel, target, &pose, params.lambda, true)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss(iterations));
        }
        if eval.loss < best.1 {
            best = (pose.clone(), eval.loss, eval.max_error);
        }
    }
    Ok(IkResult { pose: best.0, loss: best.1, initial_loss, max_error: best.2, iterations })
}

/// Initial guess without temporal context. The global transform aligns the
/// joints rigidly attached to the root (the root and its children) with
/// their targets; then, walking down the tree, each bone's angles are solved
/// by damped least squares so its children point along their target
/// directions, starting from zero clamped into the limits.
pub fn cold_start_pose(skel: &SkeletonDef, target: &KeypointSet3D) -> Result<Pose> {
    if target.len() != skel.bone_count() || target.valid.len() != target.len() {
        return Err(Error::LengthMismatch { expected: skel.bone_count(), got: target.len() });
    }
    let mut pose = Pose::rest(skel);
    pose.joint_angles = skel.dofs().iter().map(|d| 0.0f64.clamp(d.lo, d.hi)).collect();
    align_root(skel, target, &mut pose)?;
    let mut dofs_of = vec![Vec::new(); skel.bone_count()];
    for (k, d) in skel.dofs().iter().enumerate() {
        dofs_of[d.bone].push(k);
    }
    for bone in 0..skel.bone_count() {
        if skel.bones()[bone].parent.is_some() && !dofs_of[bone].is_empty() {
            aim_bone(skel, target, &dofs_of[bone], bone, &mut pose)?;
        }
    }
    Ok(pose)
}

fn align_root(skel: &SkeletonDef, target: &KeypointSet3D, pose: &mut Pose) -> Result<()> {
    let joints = joint_positions(skel, &forward_kinematics(skel, pose)?)?;
    let root = skel.bones().iter().position(|b| b.parent.is_none()).expect("skeleton has a root");
    let rigid: Vec<usize> =
        core::iter::once(root).chain(skel.children(root)).filter(|&j| target.valid[j]).collect();
    if rigid.is_empty() {
        return Ok(());
    }
    let n = rigid.len() as f64;
    let src_c = rigid.iter().map(|&j| joints[j]).sum::<Vector3<f64>>() / n;
    let dst_c = rigid.iter().map(|&j| target.points[j]).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for &j in &rigid {
        h += (joints[j] - src_c) * (target.points[j] - dst_c).transpose();
    }
    let rot = if rigid.len() >= 3 {
        let svd = h.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let mut d = Matrix3::identity();
        if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        v_t.transpose() * d * u.transpose()
    } else {
        Matrix3::identity()
    };
    let rot = UnitQuaternion::from_matrix(&rot);
    pose.global_rotation = rot;
    pose.global_translation = dst_c - rot * src_c;
    Ok(())
}

fn aim_bone(skel: &SkeletonDef, target: &KeypointSet3D, dofs: &[usize], bone: usize, pose: &mut Pose) -> Result<()> {
    let frames = posed_frames(skel, pose)?;
    let head = frames[bone].translation.vector;
    let origin = if target.valid[bone] { target.points[bone] } else { head };
    let aims: Vec<(Vector3<f64>, Vector3<f64>)> = skel
        .children(bone)
        .filter(|&c| target.valid[c])
        .filter_map(|c| {
            let offset = skel.bones()[c].offset;
            let dir = target.points[c] - origin;
            (dir.norm() > 0.0).then(|| (offset, dir * (offset.norm() / dir.norm())))
        })
        .collect();
    if aims.is_empty() {
        return Ok(());
    }
    let b = &skel.bones()[bone];
    let base = match b.parent {
        Some(p) => frames[p].rotation * b.rest_rot,
        None => pose.global_rotation * b.rest_rot,
    };
    let m = dofs.len();
    for _ in 0..AIM_ITERATIONS {
        let mut rot = base;
        let mut axes = Vec::with_capacity(m);
        for &k in dofs {
            let d = &skel.dofs()[k];
            axes.push(rot * d.axis.into_inner());
            rot *= UnitQuaternion::from_axis_angle(&d.axis, pose.joint_angles[k]);
        }
        let mut jtj = DMatrix::<f64>::identity(m, m) * AIM_DAMPING;
        let mut jtr = nalgebra::DVector::<f64>::zeros(m);
        for (offset, want) in &aims {
            let v = rot * offset;
            let r = v - want;
            let cols: Vec<Vector3<f64>> = axes.iter().map(|w| w.cross(&v)).collect();
            for a in 0..m {
                jtr[a] += cols[a].dot(&r);
                for c in 0..m {
                    jtj[(a, c)] += cols[a].dot(&cols[c]);
                }
            }
        }
        let Some(step) = jtj.cholesky().map(|ch| ch.solve(&jtr)) else { break };
        for (a, &k) in dofs.iter().enumerate() {
            let d = &skel.dofs()[k];
            pose.joint_angles[k] = (pose.joint_angles[k] - step[a]).clamp(d.lo, d.hi);
        }
        if step.amax() < 1e-10 {
            break;
        }
    }
    Ok(())
}

/// Largest distance between two rest-pose joints.
pub fn hand_scale(skel: &SkeletonDef) -> f64 {
    let j = skel.rest_joint_positions();
    let mut best: f64 = 0.0;
    for a in 0..j.len() {
        for b in a + 1..j.len() {
            best = best.max((j[a] - j[b]).norm());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneEuroParams {
    /// Hz.
    pub min_cutoff: f64,
    pub beta: f64,
    /// Hz.
    pub d_cutoff: f64,
}

impl Default for OneEuroParams {
    fn default() -> Self {
        Self { min_cutoff: 1.0, beta: 0.007, d_cutoff: 1.0 }
    }
}

/// Adaptive low-pass filter over vector samples.
#[derive(Debug, Clone, PartialEq)]
pub struct OneEuroFilter {
    pub params: OneEuroParams,
    last: Option<(f64, Vec<f64>, Vec<f64>)>,
}

fn smoothing(cutoff: f64, dt: f64) -> f64 {
    let tau = 1.0 / (2.0 * PI * cutoff);
    1.0 / (1.0 + tau / dt)
}

impl OneEuroFilter {
    pub fn new(params: OneEuroParams) -> Result<Self> {
        if !(params.min_cutoff > 0.0 && params.d_cutoff > 0.0 && params.beta >= 0.0) {
            return Err(invalid!("one-euro cutoffs must be positive and beta non-negative"));
        }
        Ok(Self { params, last: None })
    }

    /// Filters one sample taken at `t` seconds.
    pub fn filter(&mut self, sample: &[f64], t: f64) -> Result<Vec<f64>> {
        let Some((t_prev, x_prev, dx_prev)) = self.last.as_ref() else {
            self.last = Some((t, sample.to_vec(), vec![0.0; sample.len()]));
            return Ok(sample.to_vec());
        };
        if !(t > *t_prev) {
            return Err(Error::NonIncreasingTimestamp { prev: *t_prev, t });
        }
        if sample.len() != x_prev.len() {
            return Err(Error::LengthMismatch { expected: x_prev.len(), got: sample.len() });
        }
        let dt = t - t_prev;
        let a_d = smoothing(self.params.d_cutoff, dt);
        let mut x = Vec::with_capacity(sample.len());
        let mut dx = Vec::with_capacity(sample.len());
        for i in 0..sample.len() {
            let raw_d = (sample[i] - x_prev[i]) / dt;
            let ed = dx_prev[i] + a_d * (raw_d - dx_prev[i]);
            let cutoff = self.params.min_cutoff + self.params.beta * ed.abs();
            let a = smoothing(cutoff, dt);
            x.push(x_prev[i] + a * (sample[i] - x_prev[i]));
            dx.push(ed);
        }
        self.last = Some((t, x.clone(), dx));
        Ok(x)
    }
}

/// Smooths a pose sequence channel-wise: angles, translation, and the
/// rotation quaternion (sign-aligned to the previous frame, renormalized).
pub fn smooth_poses(poses: &[Pose], times: &[f64], params: OneEuroParams) -> Result<Vec<Pose>> {
    if poses.len() != times.len() {
        return Err(Error::LengthMismatch { expected: poses.len(), got: times.len() });
    }
    let mut filter = OneEuroFilter::new(params)?;
    let mut out = Vec::with_capacity(poses.len());
    let mut prev_q: Option<[f64; 4]> = None;
    for (pose, t) in poses.iter().zip(times) {
        let q = pose.global_rotation.quaternion();
        let mut qa = [q.w, q.i, q.j, q.k];
        if let Some(p) = prev_q {
            if qa.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                qa = qa.map(|c| -c);
            }
        }
        prev_q = Some(qa);
        let mut v = pose.joint_angles.clone();
        v.extend(pose.global_translation.iter());
        v.extend(qa);
        let f = filter.filter(&v, *t)?;
        let n = pose.joint_angles.len();
        let q = nalgebra::Quaternion::new(f[n + 3], f[n + 4], f[n + 5], f[n + 6]);
        out.push(Pose {
            joint_angles: f[..n].to_vec(),
            global_translation: Vector3::new(f[n], f[n + 1], f[n + 2]),
            global_rotation: UnitQuaternion::from_quaternion(q),
        });
    }
    Ok(out)
}

/// Per-bone lengths (parent head to own head) measured on the per-joint
/// average of the valid keypoints over all frames. The root entry is 0.
pub fn estimate_bone_lengths(frames: &[KeypointSet3D], skel: &SkeletonDef) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = skel.bone_count();
    let mut sum = vec![Vector3::zeros(); n];
    let mut count = vec![0usize; n];
    for f in frames {
        if f.len() != n || f.valid.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: f.len() });
        }
        for j in 0..n {
            if f.valid[j] {
                sum[j] += f.points[j];
                count[j] += 1;
            }
        }
    }
    let mut lengths = vec![0.0; n];
    for (i, b) in skel.bones().iter().enumerate() {
        let Some(p) = b.parent else { continue };
        for j in [p, i] {
            if count[j] == 0 {
                return Err(Error::JointNeverValid(j));
            }
        }
        lengths[i] = (sum[i] / count[i] as f64 - sum[p] / count[p] as f64).norm();
    }
    Ok(lengths)
}
