#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Isometry3, Matrix3, Matrix3x4, Point3, Vector2, Vector3};


use crate::error::{invalid, Result};

/// Pinhole camera. Pixel `(i, j)` is sampled at image coordinates `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Isometry3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_to_camera: Isometry3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(invalid!("focal lengths must be positive (fx={fx}, fy={fy})"));
        }
        if !(near > 0.0 && near < far) {
            return Err(invalid!("need 0 < near < far (near={near}, far={far})"));
        }
        if width == 0 || height == 0 {
            return Err(invalid!("image size must be non-zero"));
        }
        Ok(Self { fx, fy, cx, cy, width, height, world_to_camera, near, far })
    }

    /// Camera at `eye` looking at `target`, image y pointing along `-up`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = nalgebra::UnitQuaternion::from_matrix(&rot);
        let translation = -(rotation * eye.coords);
        let w2c = Isometry3::from_parts(translation.into(), rotation);
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            w2c,
            near,
            far,
        )
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.world_to_camera.inverse().translation.vector
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera.transform_point(&Point3::from(*p)).coords
    }

    /// Pixel coordinates and depth of a world point, `None` when it is not
    /// strictly in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy), c.z))
    }

    /// Pixel index containing image coordinates `uv`, if inside the image.
    pub fn pixel_of(&self, uv: &Vector2<f64>) -> Option<(usize, usize)> {
        let (i, j) = ((uv.x + 0.5).floor(), (uv.y + 0.5).floor());
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    /// Full 3×4 projection matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let k = Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.world_to_camera.translation.vector);
        k * rt
    }
}
