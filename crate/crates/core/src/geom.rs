//! Pinhole cameras, rigid poses, backprojection, plane-induced depth and
//! depth-derived normals.
//!
//! Pixel `(i, j)` has its center at image coordinates `u = j`, `v = i`.
//! Cameras look down their local `+z` axis.

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_dims, RegionLabel, RegionMask, ScalarField, Vec3, VectorField};

const ORTHO_TOL: f64 = 1e-9;
pub(crate) const GRAZING_EPS: f64 = 1e-6;

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Row-major rotation matrix.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;
    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = Matrix3::from_fn(|a, b| r.rotation[a][b]);
        Pose::new(m, Vec3::from(r.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let m = p.rotation;
        PoseRepr {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > ORTHO_TOL {
            return Err(Error::InvalidPose(format!("R^T R deviates from I by {ortho:e}")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidPose(format!("det(R) = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by translation `t`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, t: Vec3) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation: t,
        }
    }

    /// Camera-to-world pose for a camera at `eye` whose `+z` axis points at `target`.
    /// `up` fixes the roll; the camera's `+y` points away from it (image rows grow downward).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidPose("eye coincides with target".into()))?;
        let x = up
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidPose("up is parallel to view direction".into()))?;
        let x = -x;
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Pose::new(r, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

/// Pinhole camera with a world-from-camera pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Pose,
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(default)]
    pose: Pose,
}

impl TryFrom<CameraRepr> for Camera {
    type Error = Error;
    fn try_from(r: CameraRepr) -> Result<Self> {
        Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.pose)
    }
}

impl From<Camera> for CameraRepr {
    fn from(c: Camera) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            pose: c.pose,
        }
    }
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: Pose,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
        })
    }

    /// Camera centered on the image with equal focal lengths.
    pub fn centered(f: f64, width: usize, height: usize, pose: Pose) -> Result<Self> {
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            pose,
        )
    }

    pub fn with_pose(&self, pose: Pose) -> Camera {
        Camera { pose, ..*self }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// `K⁻¹ [u v 1]ᵀ` for pixel `(i, j)`; its z-component is 1.
    #[inline]
    pub fn ray(&self, i: usize, j: usize) -> Vec3 {
        self.ray_uv(j as f64, i as f64)
    }

    #[inline]
    pub fn ray_uv(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Camera-from-world transform.
    pub fn extrinsic(&self) -> Pose {
        self.pose.inverse()
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }
}

/// Camera-frame point for every pixel: `depth(i, j) · K⁻¹ [j i 1]ᵀ`.
pub fn backproject_depth(depth: &ScalarField, cam: &Camera) -> Result<VectorField> {
    check_dims(cam.dims(), depth.dims())?;
    let (w, h) = depth.dims();
    let mut pts = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            let d = depth.get(i, j);
            if d <= 0.0 {
                return Err(Error::NonPositiveDepth { i, j, value: d });
            }
            pts.push(cam.ray(i, j) * d);
        }
    }
    VectorField::new(w, h, pts)
}

/// Output of [`unbiased_depth`]. Invalid pixels hold 0 in `depth`.
#[derive(Debug, Clone)]
pub struct UnbiasedDepth {
    pub depth: ScalarField,
    pub invalid: RegionMask,
}

/// Depth along each pixel ray of the plane with offset `plane_distance` and normal `normals`:
/// `D̂(p) = D(p) / (N(p) · K⁻¹p̃)`. Pixels with `|N · K⁻¹p̃| < 1e-6` are flagged invalid.
pub fn unbiased_depth(
    plane_distance: &ScalarField,
    normals: &VectorField,
    cam: &Camera,
) -> Result<UnbiasedDepth> {
    check_dims(cam.dims(), plane_distance.dims())?;
    check_dims(cam.dims(), normals.dims())?;
    let (w, h) = cam.dims();
    let mut invalid = RegionMask::filled(w, h, false, RegionLabel::Invalid);
    let depth = ScalarField::from_fn(w, h, |i, j| {
        let denom = normals.get(i, j).dot(&cam.ray(i, j));
        if denom.abs() < GRAZING_EPS {
            invalid.set(i, j, true);
            0.0
        } else {
            plane_distance.get(i, j) / denom
        }
    });
    Ok(UnbiasedDepth { depth, invalid })
}

/// Output of [`normal_from_depth`]; sentinel pixels are `(0, 0, 0)` and set in `invalid`.
#[derive(Debug, Clone)]
pub struct DepthNormals {
    pub normals: VectorField,
    pub invalid: RegionMask,
}

/// Normals from the cross product of central-difference tangents of the backprojected
/// depth, oriented toward the camera center.
pub fn normal_from_depth(depth: &ScalarField, cam: &Camera) -> Result<DepthNormals> {
    let points = backproject_depth(depth, cam)?;
    Ok(normals_from_points(&points))
}

/// Same as [`normal_from_depth`] for an already backprojected camera-frame point map.
pub fn normals_from_points(points: &VectorField) -> DepthNormals {
    let (w, h) = points.dims();
    let mut invalid = RegionMask::filled(w, h, false, RegionLabel::Invalid);
    let normals = VectorField::from_fn(w, h, |i, j| match point_normal(points, i, j) {
        Some(n) => n,
        None => {
            invalid.set(i, j, true);
            Vec3::zeros()
        }
    });
    DepthNormals { normals, invalid }
}

/// Central difference along one axis at index `k` of an axis of length `len`,
/// one-sided at the ends. `None` when the axis has a single sample.
#[inline]
pub(crate) fn diff_stencil(k: usize, len: usize) -> Option<[(usize, f64); 2]> {
    if len < 2 {
        None
    } else if k == 0 {
        Some([(1, 1.0), (0, -1.0)])
    } else if k == len - 1 {
        Some([(k, 1.0), (k - 1, -1.0)])
    } else {
        Some([(k + 1, 0.5), (k - 1, -0.5)])
    }
}

/// Depth-derived normal at one pixel; used by the optimizer for local re-evaluation.
pub(crate) fn point_normal(points: &VectorField, i: usize, j: usize) -> Option<Vec3> {
    let (w, h) = points.dims();
    let su = diff_stencil(j, w)?;
    let sv = diff_stencil(i, h)?;
    let du = points.get(i, su[0].0) * su[0].1 + points.get(i, su[1].0) * su[1].1;
    let dv = points.get(sv[0].0, j) * sv[0].1 + points.get(sv[1].0, j) * sv[1].1;
    let n = du.cross(&dv);
    let norm = n.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let n = n / norm;
    if n.dot(&points.get(i, j)) > 0.0 {
        Some(-n)
    } else {
        Some(n)
    }
}

/// Maps points through `T_dst · T_src⁻¹`, where both poses are camera-from-world
/// extrinsics. With `src = T_n` and `dst = T_c` this carries neighbor-frame points
/// into the current frame. Zero-vector sentinels pass through unchanged.
pub fn transform_points(points: &VectorField, src: &Pose, dst: &Pose) -> VectorField {
    let rel = dst.compose(&src.inverse());
    let (w, h) = points.dims();
    VectorField::from_fn(w, h, |i, j| {
        let p = points.get(i, j);
        if p == Vec3::zeros() {
            p
        } else {
            rel.transform_point(&p)
        }
    })
}

/// Pinhole projection `(fx·x/z + cx, fy·y/z + cy, z)`. No bounds or sign checks.
#[inline]
pub fn project_point(p: &Vec3, cam: &Camera) -> (f64, f64, f64) {
    (
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
        p.z,
    )
}
