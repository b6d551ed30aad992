//! Tile-based CPU splatting rasterizer and its reverse-mode gradients.
//!
//! Gaussians are projected with the EWA linearization, sorted once per
//! frame by camera depth (ties by index), binned into square tiles, and
//! composited front to back per pixel:
//!
//! `C = sum_i c_i a_i prod_{j<i} (1 - a_j) + T_final * background`,
//! with `a_i = opacity_i * K(q_i)` and `q_i` the squared Mahalanobis
//! distance of the pixel under the dilated 2D covariance.
//!
//! `K` is the Gaussian `exp(-q / 2)` with a tail correction that takes it to
//! zero with zero slope at `q = FOOTPRINT_CUTOFF` (where the plain Gaussian
//! is `1e-4`), rescaled so `K(0) = 1`. Footprints therefore have compact
//! support without a jump, which keeps finite-difference checks clean. Each
//! pixel only considers splats whose footprint box contains it, so the
//! result does not depend on the tile size.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::Image;
use crate::math::{quat_mul_backward_rhs, quat_to_matrix, quat_to_matrix_backward, sigmoid};
use crate::sh;
use crate::skinning::{canonical_view_dir, GaussianTransform};

pub const TILE_SIZE: usize = 16;
/// Isotropic screen-space dilation added to every 2D covariance, pixels².
pub const COV2D_DILATION: f64 = 0.3;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Squared Mahalanobis radius of the footprint: `-2 ln(KERNEL_FLOOR)`.
pub const FOOTPRINT_CUTOFF: f64 = 18.420_680_743_952_367;
/// Plain Gaussian value at the footprint edge.
pub const KERNEL_FLOOR: f64 = 1e-4;

/// Tapered kernel and its derivative with respect to `q`, for `q` inside the
/// footprint.
#[inline]
pub fn kernel(q: f64) -> (f64, f64) {
    let k0 = 1.0 - KERNEL_FLOOR * (1.0 + 0.5 * FOOTPRINT_CUTOFF);
    let e = (-0.5 * q).exp();
    let k = (e - KERNEL_FLOOR * (1.0 + 0.5 * (FOOTPRINT_CUTOFF - q))) / k0;
    (k, 0.5 * (KERNEL_FLOOR - e) / k0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSettings {
    pub tile_size: usize,
    pub background: [f64; 3],
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self { tile_size: TILE_SIZE, background: [0.0; 3] }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub mean: Vector2<f64>,
    /// Dilated 2D covariance.
    pub cov: Matrix2<f64>,
    pub depth: f64,
    /// Inclusive pixel box `[x0, x1] x [y0, y1]` of the footprint.
    pub bbox: [usize; 4],
}

/// Projects a world-space Gaussian; `None` when it is culled (depth outside
/// `(near, far)` or footprint entirely off-image).
pub fn project_gaussian(camera: &Camera, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Option<Projected> {
    let p = camera.to_camera(mean);
    if !(p.z > camera.near && p.z < camera.far) {
        return None;
    }
    let t = projection_jacobian(camera, &p) * camera.rotation();
    let cov2 = t * cov * t.transpose() + Matrix2::identity() * COV2D_DILATION;
    let mean2 = Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy);
    let bbox = footprint_box(camera, &mean2, &cov2)?;
    Some(Projected { mean: mean2, cov: cov2, depth: p.z, bbox })
}

fn projection_jacobian(camera: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz2,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz2,
    )
}

fn footprint_box(camera: &Camera, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Option<[usize; 4]> {
    let rx = (FOOTPRINT_CUTOFF * cov[(0, 0)]).sqrt();
    let ry = (FOOTPRINT_CUTOFF * cov[(1, 1)]).sqrt();
    let x0 = (mean.x - rx).ceil().max(0.0);
    let x1 = (mean.x + rx).floor().min(camera.width as f64 - 1.0);
    let y0 = (mean.y - ry).ceil().max(0.0);
    let y1 = (mean.y + ry).floor().min(camera.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

#[derive(Debug, Clone)]
struct Splat {
    index: u32,
    mean: Vector2<f64>,
    /// Inverse covariance entries `(a, b, c)`: `q = a dx^2 + 2 b dx dy + c dy^2`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    bbox: [usize; 4],
}

/// Data retained by the forward pass for [`render_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    settings: RasterSettings,
    width: usize,
    height: usize,
    gaussians: usize,
}

#[derive(Debug, Clone)]
pub struct RenderedImage {
    pub image: Image,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha: Vec<f64>,
    pub cache: Option<ForwardCache>,
}

impl RenderedImage {
    /// Number of Gaussians that survived culling.
    pub fn visible_count(&self) -> Option<usize> {
        self.cache.as_ref().map(|c| c.splats.len())
    }
}

/// Per-Gaussian gradients, shaped like the cloud fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

impl RenderGradients {
    pub fn zeros(n: usize, coeffs_per_gaussian: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            sh: vec![0.0; n * coeffs_per_gaussian],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &RenderGradients, scale: f64) {
        fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        axpy(self.positions.as_flattened_mut(), other.positions.as_flattened(), scale);
        axpy(self.rotations.as_flattened_mut(), other.rotations.as_flattened(), scale);
        axpy(self.log_scales.as_flattened_mut(), other.log_scales.as_flattened(), scale);
        axpy(&mut self.opacity_logits, &other.opacity_logits, scale);
        axpy(&mut self.sh, &other.sh, scale);
    }

    pub fn all_finite(&self) -> bool {
        self.positions.as_flattened().iter().all(|v| v.is_finite())
            && self.rotations.as_flattened().iter().all(|v| v.is_finite())
            && self.log_scales.as_flattened().iter().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.sh.iter().all(|v| v.is_finite())
    }
}

fn transform_of(transforms: &[GaussianTransform], i: usize) -> Option<&GaussianTransform> {
    if transforms.is_empty() {
        None
    } else {
        Some(&transforms[i])
    }
}

fn check_transforms(cloud: &GaussianCloud, transforms: &[GaussianTransform]) -> Result<()> {
    if !transforms.is_empty() && transforms.len() != cloud.len() {
        return Err(Error::LengthMismatch { expected: cloud.len(), got: transforms.len() });
    }
    Ok(())
}

/// Canonical-space view direction and the unclamped SH color.
fn view_color(
    cloud: &GaussianCloud,
    transforms: &[GaussianTransform],
    camera_center: &Vector3<f64>,
    i: usize,
) -> ([f64; 3], Vector3<f64>, Vector3<f64>) {
    let v = cloud.position(i) - camera_center;
    let dir_posed = v / v.norm();
    let dir = match transform_of(transforms, i) {
        Some(t) => canonical_view_dir(t, &dir_posed),
        None => dir_posed,
    };
    let raw = sh::eval(cloud.sh_degree, cloud.sh_of(i), [dir.x, dir.y, dir.z]);
    (raw, dir, v)
}

fn prepare_splats(
    cloud: &GaussianCloud,
    transforms: &[GaussianTransform],
    camera: &Camera,
) -> Vec<Splat> {
    let center = camera.center();
    let mut splats = Vec::with_capacity(cloud.len());
    let mut depths = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let Some(proj) = project_gaussian(camera, &cloud.position(i), &cloud.covariance(i)) else {
            continue;
        };
        let det = proj.cov.determinant();
        if !(det > 0.0) {
            continue;
        }
        let conic = [proj.cov[(1, 1)] / det, -proj.cov[(0, 1)] / det, proj.cov[(0, 0)] / det];
        let (raw, _, _) = view_color(cloud, transforms, &center, i);
        splats.push(Splat {
            index: i as u32,
            mean: proj.mean,
            conic,
            opacity: sigmoid(cloud.opacity_logits[i]),
            color: raw.map(|c| c.clamp(0.0, 1.0)),
            bbox: proj.bbox,
        });
        depths.push(proj.depth);
    }
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(splats[a].index.cmp(&splats[b].index)));
    order.into_iter().map(|k| splats[k].clone()).collect()
}

fn bin_tiles(splats: &[Splat], width: usize, height: usize, tile: usize) -> Vec<Vec<u32>> {
    let (tx, ty) = (width.div_ceil(tile), height.div_ceil(tile));
    let mut tiles = vec![Vec::new(); tx * ty];
    for (s, splat) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = splat.bbox;
        for ty_i in y0 / tile..=y1 / tile {
            for tx_i in x0 / tile..=x1 / tile {
                tiles[ty_i * tx + tx_i].push(s as u32);
            }
        }
    }
    tiles
}

/// `(alpha, K, dK/dq, dx, dy)` of a splat at a pixel, if inside its footprint.
#[inline]
fn splat_alpha(s: &Splat, x: usize, y: usize) -> Option<(f64, f64, f64, f64, f64)> {
    let [x0, x1, y0, y1] = s.bbox;
    if x < x0 || x > x1 || y < y0 || y > y1 {
        return None;
    }
    let dx = x as f64 - s.mean.x;
    let dy = y as f64 - s.mean.y;
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if !(q < FOOTPRINT_CUTOFF) {
        return None;
    }
    let (k, dk) = kernel(q);
    Some((s.opacity * k, k, dk, dx, dy))
}

#[cfg(feature = "parallel")]
fn map_tiles<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_tiles<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

fn tile_origin(t: usize, width: usize, tile: usize) -> (usize, usize) {
    let tx = width.div_ceil(tile);
    ((t % tx) * tile, (t / tx) * tile)
}

/// Renders with default settings (16-pixel tiles) over `background`.
pub fn render(
    cloud: &GaussianCloud,
    transforms: &[GaussianTransform],
    camera: &Camera,
    background: [f64; 3],
) -> Result<RenderedImage> {
    render_with(cloud, transforms, camera, RasterSettings { background, ..Default::default() })
}

/// Forward pass. `cloud` is in world (posed) space; `transforms` holds the
/// per-Gaussian skinning transforms used to canonicalize view directions
/// (empty for static clouds).
pub fn render_with(
    cloud: &GaussianCloud,
    transforms: &[GaussianTransform],
    camera: &Camera,
    settings: RasterSettings,
) -> Result<RenderedImage> {
    check_transforms(cloud, transforms)?;
    if settings.tile_size == 0 {
        return Err(invalid!("tile size must be positive"));
    }
    let (w, h, ts) = (camera.width, camera.height, settings.tile_size);
    let splats = prepare_splats(cloud, transforms, camera);
    let tiles = bin_tiles(&splats, w, h, ts);
    let bg = settings.background;
    let tile_out = map_tiles(tiles.len(), |t| {
        let (ox, oy) = tile_origin(t, w, ts);
        let mut out = Vec::with_capacity(ts * ts);
        for y in oy..(oy + ts).min(h) {
            for x in ox..(ox + ts).min(w) {
                let mut c = [0.0; 3];
                let mut trans = 1.0;
                for &s in &tiles[t] {
                    let splat = &splats[s as usize];
                    let Some((a, ..)) = splat_alpha(splat, x, y) else { continue };
                    for ch in 0..3 {
                        c[ch] += splat.color[ch] * a * trans;
                    }
                    trans *= 1.0 - a;
                    if trans < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                for ch in 0..3 {
                    c[ch] += trans * bg[ch];
                }
                out.push((x, y, c, 1.0 - trans));
            }
        }
        out
    });
    let mut image = Image::new(w, h);
    let mut alpha = vec![0.0; w * h];
    for tile in tile_out {
        for (x, y, c, a) in tile {
            image.set_pixel(x, y, c);
            alpha[y * w + x] = a;
        }
    }
    Ok(RenderedImage {
        image,
        alpha,
        cache: Some(ForwardCache { splats, tiles, settings, width: w, height: h, gaussians: cloud.len() }),
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Reverse pass: gradients of `sum(upstream * image)` with respect to the
/// canonical Gaussian states. Position and rotation gradients are pulled
/// back through `T_g` (held constant); an empty `transforms` slice means the
/// cloud is static.
pub fn render_backward(
    cloud: &GaussianCloud,
    transforms: &[GaussianTransform],
    camera: &Camera,
    rendered: &RenderedImage,
    upstream: &Image,
) -> Result<RenderGradients> {
    let cache = rendered.cache.as_ref().ok_or_else(|| invalid!("render_backward needs the forward cache"))?;
    check_transforms(cloud, transforms)?;
    if cache.gaussians != cloud.len() {
        return Err(Error::LengthMismatch { expected: cache.gaussians, got: cloud.len() });
    }
    if upstream.width != cache.width || upstream.height != cache.height {
        return Err(Error::Dimension(alloc::format!(
            "upstream {}x{} for a {}x{} render",
            upstream.width, upstream.height, cache.width, cache.height
        )));
    }
    let (w, h, ts) = (cache.width, cache.height, cache.settings.tile_size);
    let bg = cache.settings.background;
    let splats = &cache.splats;
    let tiles = &cache.tiles;

    let per_tile = map_tiles(tiles.len(), |t| {
        let list = &tiles[t];
        let mut local = vec![SplatGrad::default(); list.len()];
        let (ox, oy) = tile_origin(t, w, ts);
        // (slot in tile list, alpha, kernel, kernel slope, dx, dy, transmittance before)
        let mut hits: Vec<(usize, f64, f64, f64, f64, f64, f64)> = Vec::new();
        for y in oy..(oy + ts).min(h) {
            for x in ox..(ox + ts).min(w) {
                let up = upstream.pixel(x, y);
                if up == [0.0; 3] {
                    continue;
                }
                hits.clear();
                let mut trans = 1.0;
                for (slot, &s) in list.iter().enumerate() {
                    let Some((a, k, dk, dx, dy)) = splat_alpha(&splats[s as usize], x, y) else { continue };
                    hits.push((slot, a, k, dk, dx, dy, trans));
                    trans *= 1.0 - a;
                    if trans < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                let mut suffix = [trans * bg[0], trans * bg[1], trans * bg[2]];
                for &(slot, a, k, dk, dx, dy, t_before) in hits.iter().rev() {
                    let splat = &splats[list[slot] as usize];
                    let sg = &mut local[slot];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        sg.color[ch] += up[ch] * a * t_before;
                        d_alpha += up[ch] * (splat.color[ch] * t_before - suffix[ch] / (1.0 - a));
                    }
                    for ch in 0..3 {
                        suffix[ch] += splat.color[ch] * a * t_before;
                    }
                    sg.opacity += d_alpha * k;
                    let d_q = d_alpha * splat.opacity * dk;
                    let [ca, cb, cc] = splat.conic;
                    sg.conic[0] += d_q * dx * dx;
                    sg.conic[1] += d_q * 2.0 * dx * dy;
                    sg.conic[2] += d_q * dy * dy;
                    sg.mean[0] += d_q * -2.0 * (ca * dx + cb * dy);
                    sg.mean[1] += d_q * -2.0 * (cb * dx + cc * dy);
                }
            }
        }
        local
    });

    let mut splat_grads = vec![SplatGrad::default(); splats.len()];
    for (t, local) in per_tile.iter().enumerate() {
        for (slot, g) in local.iter().enumerate() {
            splat_grads[tiles[t][slot] as usize].add(g);
        }
    }

    let mut grads = RenderGradients::zeros(cloud.len(), cloud.coeffs_per_gaussian());
    let center = camera.center();
    let rot_w = camera.rotation();
    for (splat, sg) in splats.iter().zip(&splat_grads) {
        chain_to_states(cloud, transforms, camera, &center, &rot_w, splat, sg, &mut grads);
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn chain_to_states(
    cloud: &GaussianCloud,
    transforms: &[GaussianTransform],
    camera: &Camera,
    center: &Vector3<f64>,
    rot_w: &Matrix3<f64>,
    splat: &Splat,
    sg: &SplatGrad,
    grads: &mut RenderGradients,
) {
    let i = splat.index as usize;
    let tf = transform_of(transforms, i);

    // Opacity activation.
    grads.opacity_logits[i] = sg.opacity * splat.opacity * (1.0 - splat.opacity);

    // Color: clamp, SH coefficients, and the view direction.
    let (raw, dir, v) = view_color(cloud, transforms, center, i);
    let mut g_raw = [0.0; 3];
    for ch in 0..3 {
        if (0.0..=1.0).contains(&raw[ch]) {
            g_raw[ch] = sg.color[ch];
        }
    }
    let d = [dir.x, dir.y, dir.z];
    let basis = sh::basis(cloud.sh_degree, d);
    let coeffs = cloud.sh_of(i);
    let per = cloud.coeffs_per_gaussian();
    let g_sh = &mut grads.sh[i * per..(i + 1) * per];
    let mut g_dir = Vector3::zeros();
    let basis_grad = if cloud.sh_degree > 0 { Some(sh::basis_grad(cloud.sh_degree, d)) } else { None };
    for k in 0..cloud.sh_coeffs() {
        let mut s = 0.0;
        for ch in 0..3 {
            g_sh[k * 3 + ch] = basis[k] * g_raw[ch];
            s += coeffs[k * 3 + ch] * g_raw[ch];
        }
        if let Some(bg) = &basis_grad {
            g_dir += Vector3::from(bg[k]) * s;
        }
    }
    let mut g_mu = Vector3::zeros();
    if g_dir != Vector3::zeros() {
        let g_dir = g_dir - dir * dir.dot(&g_dir);
        let g_posed = match tf {
            Some(t) => t.rotation * g_dir,
            None => g_dir,
        };
        let norm = v.norm();
        let u = v / norm;
        g_mu += (g_posed - u * u.dot(&g_posed)) / norm;
    }

    // Geometry: conic -> 2D covariance -> 3D covariance and camera point.
    let mu = cloud.position(i);
    let p = camera.to_camera(&mu);
    let jac = projection_jacobian(camera, &p);
    let t = jac * rot_w;
    let r = quat_to_matrix(cloud.rotations[i]);
    let s = Vector3::from(cloud.scales(i));
    let m = r * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();
    let [a, b, c] = splat.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2 = -(conic * g_conic * conic);
    let g_sigma = t.transpose() * g_cov2 * t;
    let g_t = 2.0 * g_cov2 * t * sigma;
    let g_j = g_t * rot_w.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_p = Vector3::new(
        -fx * iz2 * g_j[(0, 2)],
        -fy * iz2 * g_j[(1, 2)],
        -fx * iz2 * g_j[(0, 0)] + 2.0 * fx * p.x * iz3 * g_j[(0, 2)] - fy * iz2 * g_j[(1, 1)]
            + 2.0 * fy * p.y * iz3 * g_j[(1, 2)],
    );
    let (gu, gv) = (sg.mean[0], sg.mean[1]);
    g_p.x += gu * fx * iz;
    g_p.y += gv * fy * iz;
    g_p.z += -gu * fx * p.x * iz2 - gv * fy * p.y * iz2;
    g_mu += rot_w.transpose() * g_p;

    let g_m = 2.0 * g_sigma * m;
    let mut g_r = g_m;
    let mut g_ls = [0.0; 3];
    for j in 0..3 {
        let mut gs = 0.0;
        for row in 0..3 {
            g_r[(row, j)] *= s[j];
            gs += g_m[(row, j)] * r[(row, j)];
        }
        g_ls[j] = gs * s[j];
    }
    let g_q = quat_to_matrix_backward(cloud.rotations[i], &g_r);

    // Pull back through the skinning transform.
    let (g_mu, g_q) = match tf {
        Some(t) => (t.linear.transpose() * g_mu, quat_mul_backward_rhs(t.rotation_quat, g_q)),
        None => (g_mu, g_q),
    };
    grads.positions[i] = [g_mu.x, g_mu.y, g_mu.z];
    grads.rotations[i] = g_q;
    grads.log_scales[i] = g_ls;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::skinning::apply_transforms;
    use crate::synthetic::random_splat_scene;
    use nalgebra::Point3;

    fn cam(w: usize, h: usize, focal: f64) -> Camera {
        Camera::look_at(Point3::new(0.0, 0.0, -3.0), Point3::origin(), Vector3::new(0.0, -1.0, 0.0), focal, w, h, 0.1, 100.0)
            .unwrap()
    }

    fn weighted_sum(cloud: &GaussianCloud, tf: &[GaussianTransform], camera: &Camera, up: &Image) -> f64 {
        let posed = if tf.is_empty() { cloud.clone() } else { apply_transforms(cloud, tf).unwrap() };
        let img = render(&posed, tf, camera, [0.2, 0.3, 0.4]).unwrap().image;
        img.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn kernel_is_unit_peaked_and_c1_at_the_edge() {
        assert_eq!(kernel(0.0).0, 1.0);
        let (k, dk) = kernel(FOOTPRINT_CUTOFF);
        assert!(k.abs() < 1e-15 && dk.abs() < 1e-15);
        for q in [0.5, 3.0, 10.0, 17.0] {
            let h = 1e-6;
            let num = (kernel(q + h).0 - kernel(q - h).0) / (2.0 * h);
            assert!((num - kernel(q).1).abs() < 1e-9);
            assert!(((-0.5 * q).exp() - kernel(q).0).abs() < 2e-3);
        }
    }

    #[test]
    fn on_axis_projection_hits_principal_point() {
        let c = cam(41, 31, 50.0);
        let sigma = 0.1;
        let cov = Matrix3::identity() * sigma * sigma;
        let p = project_gaussian(&c, &Vector3::zeros(), &cov).unwrap();
        assert!((p.mean - Vector2::new(20.0, 15.0)).norm() < 1e-12);
        let expect = (50.0 * sigma / 3.0f64).powi(2) + COV2D_DILATION;
        assert!((p.cov - Matrix2::identity() * expect).norm() < 1e-10);
        assert!((p.depth - 3.0).abs() < 1e-12);
        assert!(project_gaussian(&c, &Vector3::new(0.0, 0.0, -4.0), &cov).is_none());
        assert!(project_gaussian(&c, &Vector3::new(50.0, 0.0, 0.0), &cov).is_none());
    }

    #[test]
    fn two_overlapping_gaussians_composite_front_to_back() {
        let c = cam(41, 41, 50.0);
        let (o1, o2) = (0.6, 0.7);
        let (c1, c2) = ([0.9, 0.1, 0.2], [0.1, 0.8, 0.3]);
        let bg = [0.25, 0.5, 0.75];
        // Listed back to front so the depth sort has work to do.
        let cloud = GaussianCloud::from_gaussians(
            0,
            &[Gaussian::isotropic([0.0, 0.0, 1.0], 0.1, o2, c2), Gaussian::isotropic([0.0, 0.0, 0.0], 0.1, o1, c1)],
        )
        .unwrap();
        let out = render(&cloud, &[], &c, bg).unwrap();
        let px = out.image.pixel(20, 20);
        for ch in 0..3 {
            let expect = c1[ch] * o1 + c2[ch] * o2 * (1.0 - o1) + bg[ch] * (1.0 - o1) * (1.0 - o2);
            assert!((px[ch] - expect).abs() < 1e-6, "{ch}: {} vs {expect}", px[ch]);
        }
        assert!((out.alpha[20 * 41 + 20] - (1.0 - (1.0 - o1) * (1.0 - o2))).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_renders_background() {
        let c = cam(20, 10, 30.0);
        let out = render(&GaussianCloud::empty(3), &[], &c, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(out.image, Image::filled(20, 10, [0.1, 0.2, 0.3]));
        assert!(out.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn input_order_and_tile_size_do_not_change_pixels() {
        let s = random_splat_scene(3, 24, 2, false, 32, 24);
        let base = render(&s.cloud, &[], &s.camera, [0.3; 3]).unwrap().image;
        let n = s.cloud.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let keep = perm.iter().map(|&i| s.cloud.get(i)).collect::<Vec<_>>();
        let shuffled = GaussianCloud::from_gaussians(2, &keep).unwrap();
        assert_eq!(render(&shuffled, &[], &s.camera, [0.3; 3]).unwrap().image, base);
        for ts in [1, 5, 64] {
            let o = render_with(&s.cloud, &[], &s.camera, RasterSettings { tile_size: ts, background: [0.3; 3] }).unwrap();
            assert_eq!(o.image, base, "tile size {ts}");
        }
    }

    #[test]
    fn pixels_stay_within_color_bounds() {
        for seed in 0..10 {
            let mut s = random_splat_scene(seed, 40, 0, false, 32, 24);
            for l in s.cloud.opacity_logits.iter_mut() {
                *l += 4.0;
            }
            let out = render(&s.cloud, &[], &s.camera, [1.0, 0.0, 0.5]).unwrap();
            assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(out.alpha.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    fn check_gradients(seed: u64, degree: u8, skinned: bool) {
        let s = random_splat_scene(seed, 6, degree, skinned, 32, 24);
        let posed = if skinned { apply_transforms(&s.cloud, &s.transforms).unwrap() } else { s.cloud.clone() };
        let out = render(&posed, &s.transforms, &s.camera, [0.2, 0.3, 0.4]).unwrap();
        let g = render_backward(&posed, &s.transforms, &s.camera, &out, &s.upstream).unwrap();
        let h = 1e-6;
        let check = |name: &str, analytic: f64, perturb: &dyn Fn(&mut GaussianCloud, f64)| {
            let mut a = s.cloud.clone();
            perturb(&mut a, h);
            let mut b = s.cloud.clone();
            perturb(&mut b, -h);
            let num = (weighted_sum(&a, &s.transforms, &s.camera, &s.upstream)
                - weighted_sum(&b, &s.transforms, &s.camera, &s.upstream))
                / (2.0 * h);
            let tol = 1e-4 * num.abs().max(analytic.abs()) + 1e-5;
            assert!((num - analytic).abs() < tol, "seed {seed} {name}: analytic {analytic} numeric {num}");
        };
        for i in 0..s.cloud.len() {
            for k in 0..3 {
                check("position", g.positions[i][k], &|c, d| c.positions[i][k] += d);
                check("log_scale", g.log_scales[i][k], &|c, d| c.log_scales[i][k] += d);
            }
            for k in 0..4 {
                check("rotation", g.rotations[i][k], &|c, d| c.rotations[i][k] += d);
            }
            check("opacity", g.opacity_logits[i], &|c, d| c.opacity_logits[i] += d);
            let per = s.cloud.coeffs_per_gaussian();
            for k in 0..per {
                check("sh", g.sh[i * per + k], &|c, d| c.sh[i * per + k] += d);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            check_gradients(seed, (seed % 4) as u8, false);
            check_gradients(seed + 100, 3, true);
        }
    }

    #[test]
    fn backward_requires_cache() {
        let s = random_splat_scene(1, 3, 0, false, 32, 24);
        let mut out = render(&s.cloud, &[], &s.camera, [0.0; 3]).unwrap();
        out.cache = None;
        assert!(render_backward(&s.cloud, &[], &s.camera, &out, &s.upstream).is_err());
    }
}
