//! Photometric and regularization losses with analytic gradients.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_ISOTROPY_TARGET: f64 = 0.4;

/// Scalar loss and its gradient with respect to the rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLoss {
    pub value: f64,
    pub grad: Image,
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    a.same_shape(b)
}

/// Mean absolute error; the gradient uses `sign(0) = 0`.
pub fn loss_l1(render: &Image, target: &Image) -> Result<ImageLoss> {
    check_same(render, target)?;
    let n = render.data.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Image::new(render.width, render.height);
    for ((g, r), t) in grad.data.iter_mut().zip(&render.data).zip(&target.data) {
        let d = r - t;
        value += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(ImageLoss { value: value / n, grad })
}

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Single-channel plane.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, ch: usize) -> Self {
        Plane { w: img.width, h: img.height, data: img.data.iter().skip(ch).step_by(3).copied().collect() }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect() }
    }

    /// Valid-mode separable Gaussian filter.
    fn filter(&self, k: &[f64; SSIM_WINDOW]) -> Plane {
        let (ow, oh) = (self.w + 1 - SSIM_WINDOW, self.h + 1 - SSIM_WINDOW);
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                let src = &self.data[y * self.w + x..y * self.w + x + SSIM_WINDOW];
                rows[y * ow + x] = src.iter().zip(k).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    s += kv * rows[(y + i) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    /// Adjoint of [`Plane::filter`] back onto a `w x h` plane.
    fn filter_adjoint(&self, k: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let mut cols = vec![0.0; self.w * h];
        for y in 0..self.h {
            for x in 0..self.w {
                let v = self.data[y * self.w + x];
                for (i, kv) in k.iter().enumerate() {
                    cols[(y + i) * self.w + x] += kv * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..self.w {
                let v = cols[y * self.w + x];
                for (i, kv) in k.iter().enumerate() {
                    out[y * w + x + i] += kv * v;
                }
            }
        }
        Plane { w, h, data: out }
    }
}

/// Mean SSIM over every valid window position and channel, plus
/// `d(mean SSIM)/d(render)`.
fn ssim_with_grad(render: &Image, target: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_same(render, target)?;
    if render.width < SSIM_WINDOW || render.height < SSIM_WINDOW {
        return Err(Error::Dimension(alloc::format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            render.width, render.height
        )));
    }
    let k = ssim_kernel();
    let (w, h) = (render.width, render.height);
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * 3) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { Some(Image::new(w, h)) } else { None };
    for ch in 0..3 {
        let x = Plane::channel(render, ch);
        let y = Plane::channel(target, ch);
        let mx = x.filter(&k);
        let my = y.filter(&k);
        let exx = x.map2(&x, |a, _| a * a).filter(&k);
        let eyy = y.map2(&y, |a, _| a * a).filter(&k);
        let exy = x.map2(&y, |a, b| a * b).filter(&k);
        let n = mx.data.len();
        let (mut d_mx, mut d_exx, mut d_exy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ux, uy) = (mx.data[i], my.data[i]);
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * (exy.data[i] - ux * uy) + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = exx.data[i] - ux * ux + eyy.data[i] - uy * uy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let inv = 1.0 / (b1 * b2);
                d_mx[i] = (2.0 * uy * a2 - 2.0 * uy * a1) * inv - s * (2.0 * ux / b1 - 2.0 * ux / b2);
                d_exx[i] = -s / b2;
                d_exy[i] = 2.0 * a1 * inv;
            }
        }
        if let Some(g) = grad.as_mut() {
            let shape = |d: Vec<f64>| Plane { w: mx.w, h: mx.h, data: d };
            let gm = shape(d_mx).filter_adjoint(&k, w, h);
            let gxx = shape(d_exx).filter_adjoint(&k, w, h);
            let gxy = shape(d_exy).filter_adjoint(&k, w, h);
            for p in 0..w * h {
                g.data[p * 3 + ch] = (gm.data[p] + 2.0 * x.data[p] * gxx.data[p] + y.data[p] * gxy.data[p]) / count;
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean SSIM (11x11 Gaussian window, valid positions only).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

/// `1 - SSIM` and its gradient with respect to `render`.
pub fn loss_ssim(render: &Image, target: &Image) -> Result<ImageLoss> {
    let (s, g) = ssim_with_grad(render, target, true)?;
    let mut grad = g.expect("gradient requested");
    for v in grad.data.iter_mut() {
        *v = -*v;
    }
    Ok(ImageLoss { value: 1.0 - s, grad })
}

/// Per-Gaussian isotropy penalty `(min_scale / max_scale - s)^2`, averaged
/// over the cloud, with gradients on the log-scales.
pub fn loss_iso(cloud: &GaussianCloud, target: f64) -> Result<(f64, Vec<[f64; 3]>)> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(invalid!("isotropy target {target} outside (0, 1]"));
    }
    let n = cloud.len();
    let mut grads = vec![[0.0; 3]; n];
    if n == 0 {
        return Ok((0.0, grads));
    }
    let mut value = 0.0;
    for (ls, g) in cloud.log_scales.iter().zip(grads.iter_mut()) {
        let mut lo = 0;
        let mut hi = 0;
        for k in 1..3 {
            if ls[k] < ls[lo] {
                lo = k;
            }
            if ls[k] >= ls[hi] {
                hi = k;
            }
        }
        let r = (ls[lo] - ls[hi]).exp();
        let d = r - target;
        value += d * d;
        let dr = 2.0 * d * r / n as f64;
        if lo != hi {
            g[lo] += dr;
            g[hi] -= dr;
        }
    }
    Ok((value / n as f64, grads))
}

/// Pluggable perceptual term: returns a scalar and its image gradient.
pub trait PerceptualLoss {
    fn evaluate(&self, render: &Image, target: &Image) -> Result<ImageLoss>;
}

impl<T: PerceptualLoss + ?Sized> PerceptualLoss for Box<T> {
    fn evaluate(&self, render: &Image, target: &Image) -> Result<ImageLoss> {
        (**self).evaluate(render, target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub iso: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l1: 0.7, ssim: 0.1, perceptual: 0.1, iso: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("l1", self.l1), ("ssim", self.ssim), ("perceptual", self.perceptual), ("iso", self.iso)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid!("loss weight {name} = {w} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Unweighted term values, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub l1: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub iso: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossTerms,
    pub image_grad: Image,
    pub log_scale_grad: Vec<[f64; 3]>,
}

/// Weighted sum of the enabled terms. Terms with zero weight are skipped,
/// and the perceptual term is zero without a plug-in.
pub fn total_loss(
    render: &Image,
    target: &Image,
    cloud: &GaussianCloud,
    weights: &LossWeights,
    isotropy_target: f64,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<TotalLoss> {
    weights.validate()?;
    check_same(render, target)?;
    let mut out = TotalLoss {
        value: 0.0,
        terms: LossTerms::default(),
        image_grad: Image::new(render.width, render.height),
        log_scale_grad: vec![[0.0; 3]; cloud.len()],
    };
    let add = |out: &mut TotalLoss, w: f64, l: ImageLoss| {
        out.value += w * l.value;
        for (g, v) in out.image_grad.data.iter_mut().zip(&l.grad.data) {
            *g += w * v;
        }
        l.value
    };
    if weights.l1 > 0.0 {
        out.terms.l1 = add(&mut out, weights.l1, loss_l1(render, target)?);
    }
    if weights.ssim > 0.0 {
        out.terms.ssim = add(&mut out, weights.ssim, loss_ssim(render, target)?);
    }
    if let (true, Some(p)) = (weights.perceptual > 0.0, perceptual) {
        out.terms.perceptual = add(&mut out, weights.perceptual, p.evaluate(render, target)?);
    }
    if weights.iso > 0.0 {
        let (v, g) = loss_iso(cloud, isotropy_target)?;
        out.terms.iso = v;
        out.value += weights.iso * v;
        for (dst, src) in out.log_scale_grad.iter_mut().zip(&g) {
            for k in 0..3 {
                dst[k] += weights.iso * src[k];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let a = Image::filled(4, 3, [0.2, 0.4, 0.6]);
        let z = loss_l1(&a, &a).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.grad.data.iter().all(|g| *g == 0.0));
        assert_eq!(loss_l1(&Image::new(4, 3), &Image::filled(4, 3, [1.0; 3])).unwrap().value, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (r, t) = (random_image(&mut rng, 7, 5), random_image(&mut rng, 7, 5));
        let mut naive = 0.0;
        for i in 0..r.data.len() {
            naive += (r.data[i] - t.data[i]).abs();
        }
        assert!((loss_l1(&r, &t).unwrap().value - naive / 105.0).abs() < 1e-7);
        assert!(loss_l1(&r, &Image::new(5, 7)).is_err());
    }

    /// Direct sliding-window SSIM with the 2D window built explicitly.
    fn reference_ssim(a: &Image, b: &Image) -> f64 {
        let k = ssim_kernel();
        let (ow, oh) = (a.width - 10, a.height - 10);
        let mut total = 0.0;
        for ch in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let w = k[i] * k[j];
                            let x = a.pixel(ox + i, oy + j)[ch];
                            let y = b.pixel(ox + i, oy + j)[ch];
                            mx += w * x;
                            my += w * y;
                            xx += w * x * x;
                            yy += w * y * y;
                            xy += w * x * y;
                        }
                    }
                    let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / (ow * oh * 3) as f64
    }

    #[test]
    fn ssim_matches_reference_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Image::filled(12, 12, [0.3; 3]);
        assert!(loss_ssim(&a, &a).unwrap().value.abs() < 1e-15);
        let shifted = Image::filled(12, 12, [0.75; 3]);
        let t = Image::filled(12, 12, [0.25; 3]);
        assert!(loss_ssim(&shifted, &t).unwrap().value > 0.0);
        assert!(ssim(&Image::new(10, 12), &Image::new(10, 12)).is_err());

        let (r, t) = (random_image(&mut rng, 16, 13), random_image(&mut rng, 16, 13));
        let l = loss_ssim(&r, &t).unwrap();
        assert!((1.0 - l.value - reference_ssim(&r, &t)).abs() < 1e-5);
        let h = 1e-6;
        for p in 0..r.data.len() {
            let (mut up, mut dn) = (r.clone(), r.clone());
            up.data[p] += h;
            dn.data[p] -= h;
            let num = (loss_ssim(&up, &t).unwrap().value - loss_ssim(&dn, &t).unwrap().value) / (2.0 * h);
            let a = l.grad.data[p];
            assert!((num - a).abs() <= 1e-3 * num.abs().max(a.abs()) + 1e-8, "pixel {p}: {a} vs {num}");
        }
    }

    fn cloud_with_scales(scales: &[[f64; 3]]) -> GaussianCloud {
        let mut c = GaussianCloud::empty(0);
        for s in scales {
            let mut g = Gaussian::isotropic([0.0; 3], 1.0, 0.5, [0.5; 3]);
            g.log_scales = s.map(f64::ln);
            c.push(&g).unwrap();
        }
        c
    }

    #[test]
    fn iso_loss_values_and_gradient() {
        let (v, _) = loss_iso(&cloud_with_scales(&[[1.0, 1.0, 1.0], [0.3, 0.3, 0.3]]), 0.4).unwrap();
        assert!((v - 0.36).abs() < 1e-15);
        let (v, _) = loss_iso(&cloud_with_scales(&[[0.4, 1.0, 0.7], [0.2, 0.5, 0.3]]), 0.4).unwrap();
        assert!(v.abs() < 1e-15);
        let (v, _) = loss_iso(&cloud_with_scales(&[[0.2, 1.0, 1.0]]), 0.4).unwrap();
        assert!((v - 0.04).abs() < 1e-15);
        assert!(loss_iso(&GaussianCloud::empty(0), 0.0).is_err());

        let c = cloud_with_scales(&[[0.2, 0.9, 0.5], [0.7, 0.3, 0.4], [0.1, 0.2, 0.15]]);
        let (_, g) = loss_iso(&c, 0.4).unwrap();
        let h = 1e-6;
        for i in 0..c.len() {
            for k in 0..3 {
                let (mut a, mut b) = (c.clone(), c.clone());
                a.log_scales[i][k] += h;
                b.log_scales[i][k] -= h;
                let num = (loss_iso(&a, 0.4).unwrap().0 - loss_iso(&b, 0.4).unwrap().0) / (2.0 * h);
                assert!((num - g[i][k]).abs() < 1e-8);
            }
        }
    }

    struct MeanSquare;

    impl PerceptualLoss for MeanSquare {
        fn evaluate(&self, render: &Image, target: &Image) -> Result<ImageLoss> {
            let n = render.data.len() as f64;
            let mut grad = Image::new(render.width, render.height);
            let mut v = 0.0;
            for i in 0..render.data.len() {
                let d = render.data[i] - target.data[i];
                v += d * d / n;
                grad.data[i] = 2.0 * d / n;
            }
            Ok(ImageLoss { value: v, grad })
        }
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (r, t) = (random_image(&mut rng, 12, 12), random_image(&mut rng, 12, 12));
        let c = cloud_with_scales(&[[0.2, 0.9, 0.5], [0.7, 0.3, 0.4]]);
        let w1 = LossWeights { l1: 1.0, ssim: 0.0, perceptual: 0.0, iso: 0.0 };
        let only = total_loss(&r, &t, &c, &w1, 0.4, None).unwrap();
        let l1 = loss_l1(&r, &t).unwrap();
        assert_eq!(only.value, l1.value);
        assert_eq!(only.image_grad, l1.grad);
        assert!(only.log_scale_grad.iter().all(|g| *g == [0.0; 3]));

        let d = total_loss(&r, &t, &c, &LossWeights::default(), 0.4, None).unwrap();
        let expect = 0.7 * l1.value + 0.1 * loss_ssim(&r, &t).unwrap().value + 0.1 * loss_iso(&c, 0.4).unwrap().0;
        assert!((d.value - expect).abs() < 1e-12);

        let p = MeanSquare;
        let wa = LossWeights { l1: 0.3, ssim: 0.2, perceptual: 0.5, iso: 0.1 };
        let wb = LossWeights { l1: 0.6, ssim: 0.05, perceptual: 0.2, iso: 0.7 };
        let sum = LossWeights { l1: 0.9, ssim: 0.25, perceptual: 0.7, iso: 0.8 };
        let la = total_loss(&r, &t, &c, &wa, 0.4, Some(&p)).unwrap();
        let lb = total_loss(&r, &t, &c, &wb, 0.4, Some(&p)).unwrap();
        let ls = total_loss(&r, &t, &c, &sum, 0.4, Some(&p)).unwrap();
        assert!((la.value + lb.value - ls.value).abs() < 1e-9);
        for i in 0..ls.image_grad.data.len() {
            assert!((la.image_grad.data[i] + lb.image_grad.data[i] - ls.image_grad.data[i]).abs() < 1e-9);
        }
    }
}
