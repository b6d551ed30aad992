//! Image quality, mask agreement and grip aperture.

use alloc::vec::Vec;
use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::kinematics::SkeletonDef;
use crate::pose_fit::KeypointSet3D;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio for images in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data.len();
    if n == 0 {
        return Ok(PSNR_CAP);
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Mean structural similarity, the complement of the SSIM loss.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    crate::loss::ssim(a, b)
}

fn overlap(predicted: &Mask, truth: &Mask) -> Result<(usize, usize, usize)> {
    predicted.same_shape(truth)?;
    let both = predicted.data.iter().zip(&truth.data).filter(|(a, b)| **a && **b).count();
    Ok((both, predicted.count(), truth.count()))
}

/// Intersection over union. Two empty masks score 1.
pub fn iou(predicted: &Mask, truth: &Mask) -> Result<f64> {
    let (both, a, b) = overlap(predicted, truth)?;
    let union = a + b - both;
    Ok(if union == 0 { 1.0 } else { both as f64 / union as f64 })
}

/// Dice / F1 score. Two empty masks score 1.
pub fn f1(predicted: &Mask, truth: &Mask) -> Result<f64> {
    let (both, a, b) = overlap(predicted, truth)?;
    Ok(if a + b == 0 { 1.0 } else { 2.0 * both as f64 / (a + b) as f64 })
}

fn tip(joints: &KeypointSet3D, skel: &SkeletonDef, k: usize) -> Result<Vector3<f64>> {
    let Some(&j) = skel.tips().get(k) else {
        return Err(Error::InvalidTip(k));
    };
    if j >= joints.len() || !joints.valid[j] {
        return Err(Error::InvalidTip(j));
    }
    Ok(joints.points[j])
}

/// Thumb tip to index tip distance. The skeleton lists the thumb tip first
/// and the index tip second.
pub fn grip_aperture(joints: &KeypointSet3D, skel: &SkeletonDef) -> Result<f64> {
    Ok((tip(joints, skel, 0)? - tip(joints, skel, 1)?).norm())
}

/// Thumb tip to the mean of the other valid fingertips.
pub fn grip_aperture_mean(joints: &KeypointSet3D, skel: &SkeletonDef) -> Result<f64> {
    let thumb = tip(joints, skel, 0)?;
    let others: Vec<Vector3<f64>> = (1..skel.tips().len()).filter_map(|k| tip(joints, skel, k).ok()).collect();
    if others.is_empty() {
        return Err(Error::InvalidTip(skel.tips().get(1).copied().unwrap_or(1)));
    }
    let mean = others.iter().sum::<Vector3<f64>>() / others.len() as f64;
    Ok((thumb - mean).norm())
}
