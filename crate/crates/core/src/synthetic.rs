//! Deterministic synthetic scenes and fixtures with known ground truth.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{invalid, Result};
use crate::gaussian::{GaussianCloud, MaskView};
use crate::image::{Image, Mask};
use crate::kinematics::{forward_kinematics, joint_positions, Bone, BoneTransforms, Dof, Pose, SkeletonDef};
use crate::math::{logit, quat_to_array, Aabb};
use crate::raster::render;
use crate::sh;
use crate::skinning::{blend_transforms, build_grid, pose_cloud, segment_template, GaussianTransform, SkinningGrid};
use crate::train::{HandDataset, HandFrame, ObjectDataset, View};

/// A small posed scene for gradient checks: canonical cloud, fixed blend
/// transforms, a camera and an upstream image.
#[derive(Debug, Clone)]
pub struct SplatScene {
    pub cloud: GaussianCloud,
    pub transforms: Vec<GaussianTransform>,
    pub camera: Camera,
    pub upstream: Image,
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> UnitQuaternion<f64> {
    let axis: Vector3<f64> = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let n = axis.norm().max(1e-9);
    UnitQuaternion::from_scaled_axis(axis / n * rng.random_range(-max_angle..max_angle))
}

/// Gaussians near the origin seen from `z = -3`, with opacities in
/// `[0.05, 0.7]` and colors kept inside `(0, 1)` so neither early
/// termination nor color clamping is active.
///
/// The focal length scales with `width` so the scene fills the frame.
pub fn random_splat_scene(seed: u64, count: usize, sh_degree: u8, skinned: bool, width: usize, height: usize) -> SplatScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::empty(sh_degree);
    let per = cloud.coeffs_per_gaussian();
    for _ in 0..count {
        let pos = [rng.random_range(-0.3..0.3), rng.random_range(-0.25..0.25), rng.random_range(-0.3..0.3)];
        let q = quat_to_array(&random_rotation(&mut rng, 3.0));
        let ls = [0; 3].map(|_| rng.random_range(0.04f64..0.15).ln());
        let mut coeffs = Vec::with_capacity(per);
        for k in 0..per / 3 {
            for _ in 0..3 {
                coeffs.push(if k == 0 { sh::dc_from_color(rng.random_range(0.25..0.75)) } else { rng.random_range(-0.02..0.02) });
            }
        }
        cloud.positions.push(pos);
        cloud.rotations.push(q.map(|c| c * rng.random_range(0.8..1.2)));
        cloud.log_scales.push(ls);
        cloud.opacity_logits.push(logit(rng.random_range(0.05..0.7)));
        cloud.sh.extend(coeffs);
    }
    let transforms = if skinned {
        let bones = BoneTransforms {
            transforms: (0..2)
                .map(|_| {
                    let t = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                    Isometry3::from_parts(Translation3::from(t), random_rotation(&mut rng, 0.4))
                })
                .collect(),
        };
        (0..count)
            .map(|_| {
                let w = rng.random_range(0.0..1.0);
                blend_transforms(&[w, 1.0 - w], &bones)
            })
            .collect()
    } else {
        Vec::new()
    };
    let camera = Camera::look_at(
        Point3::new(0.0, 0.0, -3.0),
        Point3::origin(),
        Vector3::new(0.0, -1.0, 0.0),
        1.9 * width as f64,
        width,
        height,
        0.1,
        100.0,
    )
    .expect("valid camera");
    let data = (0..width * height * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let upstream = Image::from_data(width, height, data).expect("sized");
    SplatScene { cloud, transforms, camera, upstream }
}

/// Palm stub plus two articulated segments. Joints: palm, base, knuckle and
/// tip; the base and knuckle each flex about x.
pub fn two_bone_finger() -> SkeletonDef {
    let bone = |name: &str, parent: Option<usize>, y: f64| Bone {
        name: name.into(),
        parent,
        offset: Vector3::new(0.0, y, 0.0),
        rest_rot: UnitQuaternion::identity(),
    };
    let bones = vec![
        bone("palm", None, 0.0),
        bone("base", Some(0), 0.02),
        bone("knuckle", Some(1), 0.04),
        bone("tip", Some(2), 0.035),
    ];
    let dofs = vec![
        Dof { bone: 1, axis: Vector3::x_axis(), lo: -0.3, hi: 1.3 },
        Dof { bone: 2, axis: Vector3::x_axis(), lo: -0.1, hi: 1.6 },
    ];
    SkeletonDef::new(bones, dofs, vec![3]).expect("finger skeleton is valid")
}

/// Roughly uniform directions (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Cameras on a sphere of `radius` around `target`.
pub fn camera_sphere(count: usize, target: Vector3<f64>, radius: f64, focal: f64, resolution: usize) -> Vec<Camera> {
    fibonacci_sphere(count)
        .into_iter()
        .map(|d| {
            let up = if d.z.abs() > 0.9 { Vector3::x() } else { Vector3::z() };
            Camera::look_at(
                Point3::from(target + d * radius),
                Point3::from(target),
                up,
                focal,
                resolution,
                resolution,
                0.01,
                10.0,
            )
            .expect("valid camera")
        })
        .collect()
}

/// Surface primitive with its thin axis along `normal`.
fn surface_gaussian(
    cloud: &mut GaussianCloud,
    pos: Vector3<f64>,
    normal: Vector3<f64>,
    tangent_scale: f64,
    normal_scale: f64,
    opacity: f64,
    rgb: [f64; 3],
) {
    let rot = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
    cloud.positions.push([pos.x, pos.y, pos.z]);
    cloud.rotations.push(quat_to_array(&rot));
    cloud.log_scales.push([tangent_scale.ln(), tangent_scale.ln(), normal_scale.ln()]);
    cloud.opacity_logits.push(logit(opacity));
    cloud.sh.extend(rgb.map(sh::dc_from_color));
}

const FINGER_RADIUS: f64 = 0.007;

/// Textured capsule surfaces around every finger segment, in canonical space.
fn finger_surface(skel: &SkeletonDef, per_segment: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let heads = skel.rest_joint_positions();
    let mut cloud = GaussianCloud::empty(0);
    let mut ids = Vec::new();
    for (i, bone) in skel.bones().iter().enumerate() {
        let Some(p) = bone.parent else { continue };
        let (a, b) = (heads[p], heads[i]);
        for _ in 0..per_segment {
            let t: f64 = rng.random_range(0.0..1.0);
            let theta: f64 = rng.random_range(0.0..2.0 * PI);
            let normal = Vector3::new(theta.cos(), 0.0, theta.sin());
            let pos = a + (b - a) * t + normal * FINGER_RADIUS;
            let stripe = (0.5 + 0.5 * (12.0 * PI * (pos.y / 0.095)).sin()) * 0.5;
            let rgb = [
                0.35 + 0.4 * stripe,
                0.25 + 0.3 * (0.5 + 0.5 * (2.0 * theta).cos()),
                0.2 + 0.15 * i as f64,
            ];
            surface_gaussian(&mut cloud, pos, normal, 0.0022, 0.0008, 0.9, rgb);
            ids.push(p as u32);
        }
    }
    cloud.bone_ids = Some(ids);
    cloud
}

fn finger_grid(skel: &SkeletonDef, cloud: &GaussianCloud) -> SkinningGrid {
    let pts: Vec<Vector3<f64>> = (0..cloud.len()).map(|i| cloud.position(i)).collect();
    let bounds = Aabb::around(pts.iter(), 0.02).expect("non-empty cloud");
    let template = segment_template(skel, 64).expect("finger has segments");
    build_grid(&template, [24, 48, 24], bounds).expect("valid grid")
}

/// Articulated fixture with hidden ground truth.
#[derive(Debug, Clone)]
pub struct HandFixture {
    pub skeleton: SkeletonDef,
    pub grid: SkinningGrid,
    /// Ground-truth canonical cloud that produced the images.
    pub truth: GaussianCloud,
    pub dataset: HandDataset,
    /// Exact joint positions per frame.
    pub joints: Vec<Vec<Vector3<f64>>>,
    pub background: [f64; 3],
}

/// Finger poses used by the fixtures, from open to curled.
pub fn finger_pose_ramp(skel: &SkeletonDef, frames: usize, end: [f64; 2]) -> Vec<Pose> {
    (0..frames)
        .map(|f| {
            let t = if frames > 1 { f as f64 / (frames - 1) as f64 } else { 1.0 };
            let mut pose = Pose::rest(skel);
            pose.joint_angles = vec![end[0] * t, end[1] * t];
            pose
        })
        .collect()
}

/// Two-bone finger seen by `views` cameras (one image each) spread over four
/// poses.
pub fn two_bone_finger_scene(views: usize, resolution: usize, seed: u64) -> Result<HandFixture> {
    if views < 2 {
        return Err(invalid!("need at least 2 views, got {views}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = two_bone_finger();
    let truth = finger_surface(&skeleton, 700, &mut rng);
    let grid = finger_grid(&skeleton, &truth);
    let frames = views.min(4);
    let poses = finger_pose_ramp(&skeleton, frames, [0.9, 1.2]);
    let cameras = camera_sphere(views, Vector3::new(0.0, 0.05, 0.0), 0.3, 2.2 * resolution as f64, resolution);
    let background = [0.0; 3];
    let mut dataset = HandDataset { frames: Vec::new() };
    let mut joints = Vec::new();
    for (f, pose) in poses.iter().enumerate() {
        let bones = forward_kinematics(&skeleton, pose)?;
        let (posed, tfs) = pose_cloud(&truth, &grid, &bones)?;
        let mut frame = HandFrame { pose: pose.clone(), views: Vec::new() };
        for camera in cameras.iter().skip(f).step_by(frames) {
            let image = render(&posed, &tfs, camera, background)?.image;
            frame.views.push(View { camera: camera.clone(), image });
        }
        joints.push(joint_positions(&skeleton, &bones)?);
        dataset.frames.push(frame);
    }
    Ok(HandFixture { skeleton, grid, truth, dataset, joints, background })
}

/// Static fixture with hidden ground truth and silhouette masks.
#[derive(Debug, Clone)]
pub struct ObjectFixture {
    pub truth: GaussianCloud,
    pub dataset: ObjectDataset,
    /// Box that encloses the object with margin, for initialization.
    pub bounds: Aabb,
    pub background: [f64; 3],
}

pub const SPHERE_RADIUS: f64 = 0.04;
/// Mask pixels are those where the ground-truth render has at least this
/// much opacity.
pub const MASK_ALPHA: f64 = 0.01;

fn sphere_color(d: &Vector3<f64>) -> [f64; 3] {
    let lon = d.z.atan2(d.x);
    let lat = d.y.asin();
    [
        0.5 + 0.35 * (3.0 * lon).sin() * lat.cos(),
        0.5 + 0.3 * (4.0 * lat).cos(),
        0.45 + 0.25 * (2.0 * lon + 3.0 * lat).sin(),
    ]
}

fn sphere_surface(center: Vector3<f64>, radius: f64, n: usize) -> GaussianCloud {
    let mut cloud = GaussianCloud::empty(0);
    let spacing = (4.0 * PI / n as f64).sqrt() * radius;
    for d in fibonacci_sphere(n) {
        surface_gaussian(&mut cloud, center + d * radius, d, 0.8 * spacing, 0.3 * spacing, 0.92, sphere_color(&d));
    }
    cloud
}

pub fn textured_sphere_scene(views: usize, resolution: usize, seed: u64) -> Result<ObjectFixture> {
    if views < 2 {
        return Err(invalid!("need at least 2 views, got {views}"));
    }
    // The sphere is fully deterministic; the seed only rotates the rig.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spin = Rotation3::from_axis_angle(&Vector3::y_axis(), rng.random_range(0.0..2.0 * PI));
    let truth = sphere_surface(Vector3::zeros(), SPHERE_RADIUS, 2000);
    let background = [0.0; 3];
    let mut dataset = ObjectDataset::default();
    for camera in camera_sphere(views, Vector3::zeros(), 0.25, 2.0 * resolution as f64, resolution) {
        let camera = Camera {
            world_to_camera: camera.world_to_camera * Isometry3::from_parts(Translation3::identity(), spin.into()),
            ..camera
        };
        let out = render(&truth, &[], &camera, background)?;
        let mask = Mask::from_fn(resolution, resolution, |x, y| out.alpha[y * resolution + x] >= MASK_ALPHA);
        dataset.masks.views.push(MaskView { mask, camera: camera.clone() });
        dataset.views.push(View { camera, image: out.image });
    }
    let m = 1.5 * SPHERE_RADIUS;
    let bounds = Aabb::new(Vector3::new(-m, -m, -m), Vector3::new(m, m, m));
    Ok(ObjectFixture { truth, dataset, bounds, background })
}

/// Hand-object sequence whose contacts are known by construction.
#[derive(Debug, Clone)]
pub struct GraspFixture {
    pub skeleton: SkeletonDef,
    pub grid: SkinningGrid,
    pub hand: GaussianCloud,
    pub object: GaussianCloud,
    pub poses: Vec<Pose>,
    pub tau: f64,
    /// Hand primitives in contact at some frame.
    pub hand_contacts: Vec<bool>,
    pub object_contacts: Vec<bool>,
    pub cameras: Vec<Camera>,
}

pub const GRASP_TAU: f64 = 0.004;
const GRASP_CONTACTS: usize = 5;

/// Finger curling onto a sphere. Designated fingertip primitives end at
/// `tau / 4` from a partner object primitive in the last frame, and every
/// other hand-object pair is kept at least `2 tau` apart in every frame, so
/// the accumulated contact set is exactly the designated pairs.
pub fn grasp_toy_scene(views: usize, resolution: usize, seed: u64) -> Result<GraspFixture> {
    if views < 2 {
        return Err(invalid!("need at least 2 views, got {views}"));
    }
    let tau = GRASP_TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = two_bone_finger();
    let mut hand = finger_surface(&skeleton, 500, &mut rng);
    let grid = finger_grid(&skeleton, &hand);
    let poses = finger_pose_ramp(&skeleton, 6, [0.7, 1.0]);
    let posed_all: Vec<GaussianCloud> = poses
        .iter()
        .map(|p| Ok(pose_cloud(&hand, &grid, &forward_kinematics(&skeleton, p)?)?.0))
        .collect::<Result<_>>()?;
    let last = posed_all.last().expect("poses are non-empty");

    // Sphere resting against the pad of the distal segment in the last frame.
    let bones = forward_kinematics(&skeleton, poses.last().expect("poses are non-empty"))?;
    let heads = skeleton.rest_joint_positions();
    let pad_canonical = heads[2] + (heads[3] - heads[2]) * 0.6;
    let tf = &bones.transforms[2];
    let pad = tf.transform_point(&Point3::from(pad_canonical + Vector3::new(0.0, 0.0, -FINGER_RADIUS))).coords;
    let normal = tf.rotation * Vector3::new(0.0, 0.0, -1.0);
    let radius = 0.025;
    let center = pad + normal * (radius + 0.003);
    let mut object = sphere_surface(center, radius, 1500);

    // Object primitives that come within 2 tau of the hand in any frame go.
    let margin2 = (2.0 * tau) * (2.0 * tau);
    let far_from_hand = |q: &Vector3<f64>| {
        posed_all.iter().all(|posed| (0..posed.len()).all(|h| (posed.position(h) - q).norm_squared() >= margin2))
    };
    let keep_base: Vec<bool> = (0..object.len()).map(|o| far_from_hand(&object.position(o))).collect();
    object = object.retain_mask(&keep_base);

    // Designated hand primitives: distal ones nearest the sphere surface,
    // taken greedily when their partner, placed tau/4 toward the sphere
    // center, keeps the margin to every other designated pair.
    let distal: Vec<usize> = (0..hand.len()).filter(|&i| hand.bone_ids.as_ref().is_some_and(|b| b[i] == 2)).collect();
    let mut by_gap: Vec<(f64, usize)> =
        distal.iter().map(|&i| (((last.position(i) - center).norm() - radius).abs(), i)).collect();
    by_gap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let frames = posed_all.len();
    let mut designated: Vec<usize> = Vec::new();
    let mut partner_pos: Vec<Vector3<f64>> = Vec::new();
    for &(_, h) in &by_gap {
        if designated.len() == GRASP_CONTACTS {
            break;
        }
        let p = last.position(h);
        let q = p + (center - p).normalize() * (0.25 * tau);
        let early_clear = posed_all[..frames - 1].iter().all(|posed| (posed.position(h) - q).norm_squared() >= margin2);
        let apart = designated.iter().zip(&partner_pos).all(|(&c, qc)| {
            posed_all.iter().all(|posed| {
                (posed.position(h) - qc).norm_squared() >= margin2 && (posed.position(c) - q).norm_squared() >= margin2
            })
        });
        if early_clear && apart {
            designated.push(h);
            partner_pos.push(q);
        }
    }
    if designated.len() < GRASP_CONTACTS {
        return Err(invalid!("only {} of {GRASP_CONTACTS} contact pairs fit the margins", designated.len()));
    }
    let mut partners = Vec::with_capacity(designated.len());
    for q in &partner_pos {
        let dir = (center - q).normalize();
        let mut g = object.get(0);
        g.position = [q.x, q.y, q.z];
        g.rotation = quat_to_array(&UnitQuaternion::rotation_between(&Vector3::z(), &(-dir)).unwrap_or_default());
        partners.push(object.len());
        object.push(&g)?;
    }

    // Other hand primitives that come within 2 tau of a partner go.
    let keep_hand: Vec<bool> = (0..hand.len())
        .map(|h| {
            designated.contains(&h)
                || posed_all
                    .iter()
                    .all(|posed| partner_pos.iter().all(|q| (posed.position(h) - q).norm_squared() >= margin2))
        })
        .collect();
    let mut hand_contacts = vec![false; hand.len()];
    for &h in &designated {
        hand_contacts[h] = true;
    }
    let mut object_contacts = vec![false; object.len()];
    for &o in &partners {
        object_contacts[o] = true;
    }
    hand = hand.retain_mask(&keep_hand);
    let hand_contacts: Vec<bool> = hand_contacts.iter().zip(&keep_hand).filter(|(_, k)| **k).map(|(c, _)| *c).collect();

    let cameras = camera_sphere(views, center * 0.5 + Vector3::new(0.0, 0.04, 0.0) * 0.5, 0.3, 2.0 * resolution as f64, resolution);
    Ok(GraspFixture { skeleton, grid, hand, object, poses, tau, hand_contacts, object_contacts, cameras })
}

/// Reference silhouette of the flagged primitives: pixels where
/// `1 - prod(1 - alpha_i)` reaches [`crate::contact::MASK_THRESHOLD`], with
/// untruncated Gaussian footprints and no sorting or tiling. Serves as
/// ground truth for rendered contact masks.
pub fn silhouette_mask(cloud: &GaussianCloud, flags: &[bool], camera: &Camera) -> Result<Mask> {
    if flags.len() != cloud.len() {
        return Err(crate::error::Error::LengthMismatch { expected: cloud.len(), got: flags.len() });
    }
    let (w, h) = (camera.width, camera.height);
    let mut clear = vec![1.0f64; w * h];
    let rot = camera.rotation();
    for i in (0..cloud.len()).filter(|&i| flags[i]) {
        let c = camera.to_camera(&cloud.position(i));
        if !(c.z > camera.near && c.z < camera.far) {
            continue;
        }
        let jac = nalgebra::Matrix2x3::new(
            camera.fx / c.z,
            0.0,
            -camera.fx * c.x / (c.z * c.z),
            0.0,
            camera.fy / c.z,
            -camera.fy * c.y / (c.z * c.z),
        );
        let cov = jac * rot * cloud.covariance(i) * rot.transpose() * jac.transpose()
            + nalgebra::Matrix2::identity() * crate::raster::COV2D_DILATION;
        let Some(inv) = cov.try_inverse() else { continue };
        let (u, v) = (camera.fx * c.x / c.z + camera.cx, camera.fy * c.y / c.z + camera.cy);
        let o = cloud.opacity(i);
        let (rx, ry) = (5.0 * cov[(0, 0)].sqrt(), 5.0 * cov[(1, 1)].sqrt());
        let x0 = (u - rx).floor().max(0.0) as usize;
        let y0 = (v - ry).floor().max(0.0) as usize;
        let x1 = ((u + rx).ceil().min(w as f64 - 1.0)).max(-1.0);
        let y1 = ((v + ry).ceil().min(h as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let d = nalgebra::Vector2::new(x as f64 - u, y as f64 - v);
                let q = (d.transpose() * inv * d)[0];
                clear[y * w + x] *= 1.0 - o * (-0.5 * q).exp();
            }
        }
    }
    Ok(Mask::from_fn(w, h, |x, y| 1.0 - clear[y * w + x] >= crate::contact::MASK_THRESHOLD))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TwoBoneFinger,
    TexturedSphere,
    GraspToy,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::TwoBoneFinger => "two-bone-finger",
            SceneKind::TexturedSphere => "textured-sphere",
            SceneKind::GraspToy => "grasp-toy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-bone-finger" => Ok(SceneKind::TwoBoneFinger),
            "textured-sphere" => Ok(SceneKind::TexturedSphere),
            "grasp-toy" => Ok(SceneKind::GraspToy),
            other => Err(invalid!("unknown scene kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SyntheticScene {
    Hand(HandFixture),
    Object(ObjectFixture),
    Grasp(GraspFixture),
}

pub fn make_synthetic_scene(kind: SceneKind, views: usize, resolution: usize, seed: u64) -> Result<SyntheticScene> {
    Ok(match kind {
        SceneKind::TwoBoneFinger => SyntheticScene::Hand(two_bone_finger_scene(views, resolution, seed)?),
        SceneKind::TexturedSphere => SyntheticScene::Object(textured_sphere_scene(views, resolution, seed)?),
        SceneKind::GraspToy => SyntheticScene::Grasp(grasp_toy_scene(views, resolution, seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{accumulate, accumulated_mask_binary, instantaneous_contact, AccumulatedContact, AccumulationMode};
    use crate::metrics::iou;

    #[test]
    fn grasp_contacts_match_construction() {
        for seed in 0..4 {
            let fx = grasp_toy_scene(4, 64, seed).unwrap();
            assert_eq!(fx.hand_contacts.iter().filter(|c| **c).count(), GRASP_CONTACTS);
            let mut acc = AccumulatedContact::new(fx.hand.len(), fx.object.len(), fx.tau, AccumulationMode::Intensity).unwrap();
            let mut posed = fx.hand.clone();
            for pose in &fx.poses {
                posed = pose_cloud(&fx.hand, &fx.grid, &forward_kinematics(&fx.skeleton, pose).unwrap()).unwrap().0;
                acc = accumulate(&acc, &instantaneous_contact(&posed, &fx.object, fx.tau).unwrap()).unwrap();
            }
            assert_eq!(acc.hand_flags(), fx.hand_contacts, "seed {seed}");
            assert_eq!(acc.object_flags(), fx.object_contacts, "seed {seed}");
            for cam in &fx.cameras {
                let rendered = accumulated_mask_binary(&acc, &posed, cam).unwrap();
                let truth = silhouette_mask(&posed, &fx.hand_contacts, cam).unwrap();
                assert!(iou(&rendered, &truth).unwrap() > 0.9);
            }
        }
    }

    #[test]
    fn fixtures_are_deterministic() {
        let a = two_bone_finger_scene(3, 16, 5).unwrap();
        let b = two_bone_finger_scene(3, 16, 5).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let views: usize = a.dataset.frames.iter().map(|f| f.views.len()).sum();
        assert_eq!(views, 3);
        for (frame, joints) in a.dataset.frames.iter().zip(&a.joints) {
            let fk = joint_positions(&a.skeleton, &forward_kinematics(&a.skeleton, &frame.pose).unwrap()).unwrap();
            assert_eq!(&fk, joints);
        }
        let s1 = textured_sphere_scene(2, 16, 1).unwrap();
        let s2 = textured_sphere_scene(2, 16, 1).unwrap();
        assert_eq!(s1.dataset, s2.dataset);
    }

    #[test]
    fn silhouette_of_single_splat() {
        let cam = Camera::look_at(Point3::new(0.0, 0.0, -1.0), Point3::origin(), Vector3::y(), 100.0, 33, 33, 0.01, 10.0).unwrap();
        let g = crate::gaussian::Gaussian::isotropic([0.0; 3], 0.05, 0.9, [1.0; 3]);
        let cloud = GaussianCloud::from_gaussians(0, &[g]).unwrap();
        let m = silhouette_mask(&cloud, &[true], &cam).unwrap();
        // 0.9 exp(-r^2 / (2 s^2)) >= 0.5 with s^2 = 25 + 0.3.
        let r = (2.0 * 25.3 * (0.9f64 / 0.5).ln()).sqrt();
        for y in 0..33 {
            for x in 0..33 {
                let d = ((x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2)).sqrt();
                if (d - r).abs() > 1e-6 {
                    assert_eq!(m.get(x, y), d < r, "{x} {y}");
                }
            }
        }
        assert_eq!(silhouette_mask(&cloud, &[false], &cam).unwrap().count(), 0);
    }
}
