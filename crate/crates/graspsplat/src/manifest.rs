//! Capture manifests: cameras plus per-frame views, poses and keypoints.
//!
//! ```json
//! {
//!   "subject": "finger", "object": "sphere", "fps": 30.0,
//!   "cameras": ["cameras/cam00.json", "cameras/cam01.json"],
//!   "bounds": [[-0.1, -0.1, -0.1], [0.1, 0.1, 0.1]],
//!   "frames": [
//!     {"pose": "poses/f000.json", "keypoints": "keypoints/f000.json",
//!      "views": [{"camera": 0, "image": "images/f000_c00.png", "mask": "masks/f000_c00.png"}]}
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory, including the camera
//! paths inside keypoint files. `object`, `bounds`, `time`, `pose`,
//! `keypoints`, `image` and `mask` are optional.

use std::path::{Path, PathBuf};

use graspsplat_core::camera::Camera;
use graspsplat_core::gaussian::{MaskView, ObjectMaskSet};
use graspsplat_core::math::Aabb;
use graspsplat_core::pose_fit::{Keypoint2D, KeypointSet2D, KeypointView};
use graspsplat_core::train::{HandDataset, HandFrame, ObjectDataset, View};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::{read_json, resolve};
use crate::imageio::{read_mask_png, read_png};
use crate::json::{load_camera, load_pose, Keypoints2DJson};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestJson {
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    pub fps: f64,
    pub cameras: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 3]; 2]>,
    pub frames: Vec<FrameJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameJson {
    /// Seconds; defaults to `index / fps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<String>,
    #[serde(default)]
    pub views: Vec<ViewJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewJson {
    pub camera: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub camera: usize,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub time: f64,
    pub pose: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub views: Vec<ViewEntry>,
}

/// A validated manifest: every referenced file exists, images and masks
/// match their camera's size, and all cameras share one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureManifest {
    pub dir: PathBuf,
    pub subject: String,
    pub object: Option<String>,
    pub fps: f64,
    pub camera_paths: Vec<PathBuf>,
    pub cameras: Vec<Camera>,
    pub bounds: Option<Aabb>,
    pub frames: Vec<FrameEntry>,
}

pub fn load_manifest(path: &Path) -> Result<CaptureManifest> {
    let json: ManifestJson = read_json(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let bad = |m: String| Error::format(path, m);
    if !(json.fps > 0.0 && json.fps.is_finite()) {
        return Err(bad(format!("fps must be positive, got {}", json.fps)));
    }
    if json.cameras.is_empty() {
        return Err(bad("no cameras".into()));
    }
    let camera_paths: Vec<PathBuf> = json.cameras.iter().map(|c| resolve(&dir, Path::new(c))).collect();
    let mut missing: Vec<PathBuf> = camera_paths.iter().filter(|p| !p.is_file()).cloned().collect();
    let mut frames = Vec::with_capacity(json.frames.len());
    for (i, f) in json.frames.iter().enumerate() {
        let opt = |p: &Option<String>| p.as_ref().map(|p| resolve(&dir, Path::new(p)));
        let views = f
            .views
            .iter()
            .map(|v| {
                if v.camera >= camera_paths.len() {
                    return Err(bad(format!("frame {i} references camera {} of {}", v.camera, camera_paths.len())));
                }
                Ok(ViewEntry { camera: v.camera, image: opt(&v.image), mask: opt(&v.mask) })
            })
            .collect::<Result<Vec<_>>>()?;
        let entry = FrameEntry {
            time: f.time.unwrap_or(i as f64 / json.fps),
            pose: opt(&f.pose),
            keypoints: opt(&f.keypoints),
            views,
        };
        for p in entry.pose.iter().chain(&entry.keypoints).chain(entry.views.iter().flat_map(|v| v.image.iter().chain(&v.mask))) {
            if !p.is_file() {
                missing.push(p.clone());
            }
        }
        frames.push(entry);
    }
    if let Some(first) = missing.first() {
        if missing.len() > 1 {
            let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
            log::error!("missing files: {}", list.join(", "));
        }
        return Err(Error::Missing(first.clone()));
    }
    let cameras = camera_paths.iter().map(|p| load_camera(p)).collect::<Result<Vec<_>>>()?;
    let size = (cameras[0].width, cameras[0].height);
    if let Some((k, c)) = cameras.iter().enumerate().find(|(_, c)| (c.width, c.height) != size) {
        return Err(Error::format(&camera_paths[k], format!("image size {}x{} differs from {}x{}", c.width, c.height, size.0, size.1)));
    }
    for f in &frames {
        for v in &f.views {
            for p in v.image.iter().chain(&v.mask) {
                let (w, h) = image::image_dimensions(p).map_err(|source| Error::Image { path: p.clone(), source })?;
                if (w as usize, h as usize) != size {
                    return Err(Error::format(p, format!("{w}x{h} image for {}x{} cameras", size.0, size.1)));
                }
            }
        }
    }
    let bounds = json.bounds.map(|[lo, hi]| Aabb::new(Vector3::from(lo), Vector3::from(hi)));
    if let Some(b) = &bounds {
        if !(0..3).all(|a| b.min[a] < b.max[a]) {
            return Err(bad("bounds min must be below max".into()));
        }
    }
    Ok(CaptureManifest {
        dir,
        subject: json.subject,
        object: json.object,
        fps: json.fps,
        camera_paths,
        cameras,
        bounds,
        frames,
    })
}

impl CaptureManifest {
    pub fn camera_count(&self) -> usize {
        self.cameras.len()
    }

    /// Posed, imaged frames for hand training.
    pub fn hand_dataset(&self) -> Result<HandDataset> {
        let mut frames = Vec::new();
        for (i, f) in self.frames.iter().enumerate() {
            let Some(pose) = &f.pose else {
                return Err(Error::Invalid(format!("frame {i} has no pose")));
            };
            let pose = load_pose(pose)?;
            let views = f
                .views
                .iter()
                .filter_map(|v| v.image.as_ref().map(|p| (v.camera, p)))
                .map(|(c, p)| Ok(View { camera: self.cameras[c].clone(), image: read_png(p)? }))
                .collect::<Result<Vec<_>>>()?;
            frames.push(HandFrame { pose, views });
        }
        Ok(HandDataset { frames })
    }

    /// Every view carrying an image, and every view carrying a mask.
    pub fn object_dataset(&self) -> Result<ObjectDataset> {
        let mut views = Vec::new();
        let mut masks = Vec::new();
        for f in &self.frames {
            for v in &f.views {
                let camera = &self.cameras[v.camera];
                if let Some(p) = &v.image {
                    views.push(View { camera: camera.clone(), image: read_png(p)? });
                }
                if let Some(p) = &v.mask {
                    masks.push(MaskView { mask: read_mask_png(p)?, camera: camera.clone() });
                }
            }
        }
        Ok(ObjectDataset { views, masks: ObjectMaskSet { views: masks } })
    }

    /// 2D keypoints of frame `i`, if it has any.
    pub fn keypoints(&self, i: usize) -> Result<Option<KeypointSet2D>> {
        let Some(path) = &self.frames[i].keypoints else { return Ok(None) };
        let json: Keypoints2DJson = read_json(path)?;
        let mut views = Vec::with_capacity(json.views.len());
        for v in &json.views {
            let cam_path = resolve(&self.dir, Path::new(&v.cam));
            let camera = match self.camera_paths.iter().position(|p| *p == cam_path) {
                Some(k) => self.cameras[k].clone(),
                None => load_camera(&cam_path)?,
            };
            let keypoints = v.kp.iter().map(|k| Keypoint2D { uv: [k[0], k[1]], confidence: k[2] }).collect();
            views.push(KeypointView { camera, keypoints });
        }
        Ok(Some(KeypointSet2D { views }))
    }
}
