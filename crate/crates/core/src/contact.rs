//! Hand-object contact from Gaussian centers, accumulation over a grasp
//! sequence, and contact renders.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;

use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::{Image, Mask};
use crate::raster::render;
use crate::sh;
use crate::spatial::{dist2, PointGrid};

/// Contact threshold in meters.
pub const DEFAULT_TAU: f64 = 0.004;
/// Rendered contact masks keep pixels with at least this accumulated opacity.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Per-frame contact: for every Gaussian, the distance to the nearest
/// Gaussian of the other cloud when it is below `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMap {
    pub tau: f64,
    pub hand_flags: Vec<bool>,
    /// Distance in meters where flagged, 0 elsewhere.
    pub hand_values: Vec<f64>,
    pub object_flags: Vec<bool>,
    pub object_values: Vec<f64>,
}

impl ContactMap {
    /// `1 - d / tau` where in contact, 0 elsewhere.
    pub fn hand_intensity(&self) -> Vec<f64> {
        intensity(&self.hand_flags, &self.hand_values, self.tau)
    }

    pub fn object_intensity(&self) -> Vec<f64> {
        intensity(&self.object_flags, &self.object_values, self.tau)
    }

    pub fn hand_contacts(&self) -> usize {
        self.hand_flags.iter().filter(|f| **f).count()
    }

    pub fn object_contacts(&self) -> usize {
        self.object_flags.iter().filter(|f| **f).count()
    }
}

fn intensity(flags: &[bool], values: &[f64], tau: f64) -> Vec<f64> {
    flags.iter().zip(values).map(|(f, d)| if *f { (1.0 - d / tau).clamp(0.0, 1.0) } else { 0.0 }).collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid!("contact threshold tau must be positive, got {tau}"));
    }
    Ok(())
}

fn points(cloud: &GaussianCloud) -> Vec<Vector3<f64>> {
    (0..cloud.len()).map(|i| cloud.position(i)).collect()
}

/// Nearest distance from each query to `grid` when below `tau`.
fn one_side(queries: &[Vector3<f64>], targets: &[Vector3<f64>], grid: &PointGrid, tau: f64) -> (Vec<bool>, Vec<f64>) {
    let mut flags = vec![false; queries.len()];
    let mut values = vec![0.0; queries.len()];
    for (i, q) in queries.iter().enumerate() {
        let mut best = f64::INFINITY;
        grid.for_each_neighbor(q, |j, _| {
            let d = dist2(q, &targets[j]).sqrt();
            if d < best {
                best = d;
            }
        });
        if best < tau {
            flags[i] = true;
            values[i] = best;
        }
    }
    (flags, values)
}

/// Contact between the Gaussian centers of two clouds. Distances are
/// `sqrt(dx^2 + dy^2 + dz^2)` and a pair is in contact when that is below
/// `tau`; results equal an exhaustive pairwise scan.
pub fn instantaneous_contact(hand: &GaussianCloud, object: &GaussianCloud, tau: f64) -> Result<ContactMap> {
    check_tau(tau)?;
    if hand.is_empty() || object.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (hp, op) = (points(hand), points(object));
    // Slightly larger cells so rounding at a cell border never hides a pair.
    let cell = tau * 1.0001;
    let (hand_flags, hand_values) = one_side(&hp, &op, &PointGrid::new(&op, cell), tau);
    let (object_flags, object_values) = one_side(&op, &hp, &PointGrid::new(&hp, cell), tau);
    Ok(ContactMap { tau, hand_flags, hand_values, object_flags, object_values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumulationMode {
    /// Sum of `1 - d / tau` per contact.
    #[default]
    Intensity,
    /// Sum of raw contact distances.
    Distance,
}

/// Running sum of per-frame contact maps.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedContact {
    pub tau: f64,
    pub mode: AccumulationMode,
    pub frames: u64,
    pub hand_values: Vec<f64>,
    /// Number of frames each hand Gaussian was in contact.
    pub hand_hits: Vec<u64>,
    pub object_values: Vec<f64>,
    pub object_hits: Vec<u64>,
}

impl AccumulatedContact {
    pub fn new(hand_len: usize, object_len: usize, tau: f64, mode: AccumulationMode) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            tau,
            mode,
            frames: 0,
            hand_values: vec![0.0; hand_len],
            hand_hits: vec![0; hand_len],
            object_values: vec![0.0; object_len],
            object_hits: vec![0; object_len],
        })
    }

    pub fn hand_flags(&self) -> Vec<bool> {
        self.hand_hits.iter().map(|h| *h > 0).collect()
    }

    pub fn object_flags(&self) -> Vec<bool> {
        self.object_hits.iter().map(|h| *h > 0).collect()
    }
}

/// Adds one frame to the running sums.
pub fn accumulate(acc: &AccumulatedContact, frame: &ContactMap) -> Result<AccumulatedContact> {
    if acc.hand_values.len() != frame.hand_values.len() {
        return Err(Error::LengthMismatch { expected: acc.hand_values.len(), got: frame.hand_values.len() });
    }
    if acc.object_values.len() != frame.object_values.len() {
        return Err(Error::LengthMismatch { expected: acc.object_values.len(), got: frame.object_values.len() });
    }
    if acc.tau != frame.tau {
        return Err(invalid!("tau {} does not match accumulated tau {}", frame.tau, acc.tau));
    }
    let mut out = acc.clone();
    let (hand_add, object_add) = match acc.mode {
        AccumulationMode::Intensity => (frame.hand_intensity(), frame.object_intensity()),
        AccumulationMode::Distance => (frame.hand_values.clone(), frame.object_values.clone()),
    };
    for i in 0..out.hand_values.len() {
        if frame.hand_flags[i] {
            out.hand_values[i] += hand_add[i];
            out.hand_hits[i] += 1;
        }
    }
    for i in 0..out.object_values.len() {
        if frame.object_flags[i] {
            out.object_values[i] += object_add[i];
            out.object_hits[i] += 1;
        }
    }
    out.frames += 1;
    Ok(out)
}

/// Degree-0 copy of the flagged Gaussians with per-Gaussian gray levels.
fn gray_cloud(hand: &GaussianCloud, flags: &[bool], gray: &[f64]) -> Result<GaussianCloud> {
    if flags.len() != hand.len() || gray.len() != hand.len() {
        return Err(Error::LengthMismatch { expected: hand.len(), got: flags.len().min(gray.len()) });
    }
    let mut out = GaussianCloud::empty(0);
    for i in (0..hand.len()).filter(|&i| flags[i]) {
        out.positions.push(hand.positions[i]);
        out.rotations.push(hand.rotations[i]);
        out.log_scales.push(hand.log_scales[i]);
        out.opacity_logits.push(hand.opacity_logits[i]);
        let dc = sh::dc_from_color(gray[i]);
        out.sh.extend_from_slice(&[dc; 3]);
    }
    Ok(out)
}

/// Binary mask of the flagged Gaussians rendered white on black: pixels
/// whose composited opacity reaches [`MASK_THRESHOLD`].
pub fn flags_mask(flags: &[bool], hand: &GaussianCloud, camera: &Camera) -> Result<Mask> {
    let cloud = gray_cloud(hand, flags, &vec![1.0; hand.len()])?;
    let out = render(&cloud, &[], camera, [0.0; 3])?;
    let w = camera.width;
    Ok(Mask::from_fn(w, camera.height, |x, y| out.alpha[y * w + x] >= MASK_THRESHOLD))
}

pub fn contact_mask_binary(map: &ContactMap, hand: &GaussianCloud, camera: &Camera) -> Result<Mask> {
    flags_mask(&map.hand_flags, hand, camera)
}

pub fn accumulated_mask_binary(acc: &AccumulatedContact, hand: &GaussianCloud, camera: &Camera) -> Result<Mask> {
    flags_mask(&acc.hand_flags(), hand, camera)
}

/// Contacting hand Gaussians shaded by `1 - d / tau` on black.
pub fn contact_render_gray(map: &ContactMap, hand: &GaussianCloud, camera: &Camera) -> Result<Image> {
    let cloud = gray_cloud(hand, &map.hand_flags, &map.hand_intensity())?;
    Ok(render(&cloud, &[], camera, [0.0; 3])?.image)
}

/// Accumulated contact shaded by value relative to the largest value.
pub fn accumulated_render_gray(acc: &AccumulatedContact, hand: &GaussianCloud, camera: &Camera) -> Result<Image> {
    let max = acc.hand_values.iter().cloned().fold(0.0, f64::max);
    let gray: Vec<f64> = acc.hand_values.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    let cloud = gray_cloud(hand, &acc.hand_flags(), &gray)?;
    Ok(render(&cloud, &[], camera, [0.0; 3])?.image)
}
