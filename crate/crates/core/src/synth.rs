//! Analytic scenes with exact depth, normals and plane offsets, plus seeded corruption.
//!
//! Corruption noise comes from ChaCha8 used as a counter-based generator: the key is
//! the 64-bit seed (expanded with `seed_from_u64`), the ChaCha stream id is the view
//! index, and pixel `k` reads the 16 words starting at word position `16·k`. Uniforms
//! take the top 53 bits of a little-endian `u64`; Gaussians use Box–Muller. Streams are
//! therefore independent of evaluation order.

use nalgebra::{Rotation3, Unit};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Image, ScalarField, Vec3, VectorField};
use crate::geom::{Camera, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Surface {
    /// World-frame plane `normal · X = offset`.
    TiltedPlane { normal: [f64; 3], offset: f64 },
    SphereCap { center: [f64; 3], radius: f64 },
    /// `z = base + amplitude · sin(2π f x) · sin(2π f y)` in world coordinates.
    SineHeightfield {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
}

/// Procedural albedo evaluated at the world `(x, y)` of the hit point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Texture {
    /// Cell edge length in meters.
    Checker { cell: f64 },
    Flat { value: f64 },
    /// Checker where `x < 0`, flat gray elsewhere.
    HalfCheckerHalfFlat { cell: f64, value: f64 },
}

const DARK: [f64; 3] = [0.1, 0.15, 0.2];
const LIGHT: [f64; 3] = [0.9, 0.85, 0.75];

impl Texture {
    pub fn color(&self, p: &Vec3) -> [f64; 3] {
        let checker = |cell: f64| {
            let k = (p.x / cell).floor() as i64 + (p.y / cell).floor() as i64;
            if k.rem_euclid(2) == 0 {
                LIGHT
            } else {
                DARK
            }
        };
        match *self {
            Texture::Checker { cell } => checker(cell),
            Texture::Flat { value } => [value; 3],
            Texture::HalfCheckerHalfFlat { cell, value } => {
                if p.x < 0.0 {
                    checker(cell)
                } else {
                    [value; 3]
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Texture::Checker { cell } | Texture::HalfCheckerHalfFlat { cell, .. } if !(cell > 0.0) => {
                Err(Error::param("texture.cell", "must be positive"))
            }
            Texture::Flat { value } | Texture::HalfCheckerHalfFlat { value, .. }
                if !(0.0..=1.0).contains(&value) =>
            {
                Err(Error::param("texture.value", "must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Noise {
    /// Additive depth noise standard deviation in meters.
    pub depth_sigma: f64,
    /// Normal rotation angle standard deviation in degrees.
    pub normal_sigma_deg: f64,
}

impl Noise {
    pub fn is_zero(&self) -> bool {
        self.depth_sigma == 0.0 && self.normal_sigma_deg == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub surface: Surface,
    pub texture: Texture,
    pub cameras: Vec<Camera>,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TiltedPlane,
    SphereCap,
    SineHeightfield,
}

impl SceneSpec {
    /// Two-camera scene of `size × size` pixels with the surface about `distance` meters
    /// away. The neighbor camera is placed so that the same pixel in both views sees
    /// congruent geometry: a general rigid offset for the plane, a one-period shift for
    /// the (obliquely viewed) heightfield, and a coincident camera for the sphere cap.
    pub fn preset(kind: SceneKind, size: usize, distance: f64, texture: Texture) -> Result<Self> {
        let f = size as f64;
        let cam_c = Camera::centered(f, size, size, Pose::identity())?;
        let (surface, pose_n) = match kind {
            SceneKind::TiltedPlane => {
                let n = Vec3::new(0.5, -0.6, -1.0).normalize();
                let offset = n.dot(&Vec3::new(0.0, 0.0, distance));
                let pose = Pose::from_axis_angle(
                    Vec3::new(0.2, 1.0, 0.1),
                    -4f64.to_radians(),
                    Vec3::new(0.08 * distance, 0.02 * distance, 0.03 * distance),
                );
                (
                    Surface::TiltedPlane {
                        normal: n.into(),
                        offset,
                    },
                    pose,
                )
            }
            SceneKind::SphereCap => (
                Surface::SphereCap {
                    center: [0.0, 0.0, distance],
                    radius: 0.7 * distance,
                },
                Pose::identity(),
            ),
            SceneKind::SineHeightfield => {
                let period = distance / 3.0;
                let surface = Surface::SineHeightfield {
                    base: distance,
                    amplitude: 0.03 * distance,
                    frequency: 1.0 / period,
                };
                // Oblique view from 25° off the surface normal; the neighbor sits one period
                // further along x.
                let tilt = 25f64.to_radians();
                let target = Vec3::new(0.0, 0.0, distance);
                let eye = target - Vec3::new(0.0, tilt.sin(), tilt.cos()) * distance;
                let up = Vec3::new(0.0, -1.0, 0.0);
                let shift = Vec3::new(period, 0.0, 0.0);
                let cams = vec![
                    cam_c.with_pose(Pose::look_at(eye, target, up)?),
                    cam_c.with_pose(Pose::look_at(eye + shift, target + shift, up)?),
                ];
                return Ok(SceneSpec {
                    surface,
                    texture,
                    cameras: cams,
                    noise: Noise::default(),
                    seed: 0,
                });
            }
        };
        Ok(SceneSpec {
            surface,
            texture,
            cameras: vec![cam_c, cam_c.with_pose(pose_n)],
            noise: Noise::default(),
            seed: 0,
        })
    }

    /// Checker cell size giving roughly `pixels` pixels per cell at the preset distance.
    pub fn cell_for(size: usize, distance: f64, pixels: f64) -> f64 {
        distance * pixels / size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::param("cameras", "at least one camera is required"));
        }
        self.texture.validate()?;
        if !(self.noise.depth_sigma >= 0.0 && self.noise.normal_sigma_deg >= 0.0) {
            return Err(Error::param("noise", "standard deviations must be >= 0"));
        }
        match self.surface {
            Surface::TiltedPlane { normal, offset } => {
                let n = Vec3::from(normal);
                if !(n.norm() > 0.0) || !offset.is_finite() {
                    return Err(Error::param("surface.normal", "must be non-zero and finite"));
                }
            }
            Surface::SphereCap { center, radius } => {
                if !(radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
                    return Err(Error::param("surface.radius", "must be positive"));
                }
            }
            Surface::SineHeightfield {
                base,
                amplitude,
                frequency,
            } => {
                if !(base.is_finite() && amplitude >= 0.0 && frequency > 0.0) {
                    return Err(Error::param("surface", "invalid heightfield parameters"));
                }
            }
        }
        Ok(())
    }
}

/// Ground truth (or corrupted observation) for one camera. Normals are camera-frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub rgb: Image,
    pub depth: ScalarField,
    pub plane_distance: ScalarField,
    pub normals: VectorField,
    pub cam: Camera,
}

impl ViewBundle {
    /// Normals rotated into the world frame.
    pub fn world_normals(&self) -> VectorField {
        let (w, h) = self.normals.dims();
        VectorField::from_fn(w, h, |i, j| self.cam.pose.transform_vector(&self.normals.get(i, j)))
    }
}

struct Hit {
    t: f64,
    point: Vec3,
    normal: Vec3,
}

fn intersect(surface: &Surface, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
    match *surface {
        Surface::TiltedPlane { normal, offset } => {
            let n = Vec3::from(normal).normalize();
            let offset = offset / Vec3::from(normal).norm();
            let denom = n.dot(dir);
            if denom == 0.0 {
                return None;
            }
            let t = (offset - n.dot(origin)) / denom;
            (t > 0.0).then(|| Hit {
                t,
                point: origin + dir * t,
                normal: n,
            })
        }
        Surface::SphereCap { center, radius } => {
            let c = Vec3::from(center);
            let oc = origin - c;
            let a = dir.norm_squared();
            let half_b = dir.dot(&oc);
            let cc = oc.norm_squared() - radius * radius;
            let disc = half_b * half_b - a * cc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            // stable roots of a t² + 2 half_b t + cc
            let q = -(half_b + half_b.signum() * sq);
            let (r1, r2) = if q != 0.0 { (q / a, cc / q) } else { (0.0, 0.0) };
            let t = [r1.min(r2), r1.max(r2)].into_iter().find(|&t| t > 0.0)?;
            let point = origin + dir * t;
            Some(Hit {
                t,
                point,
                normal: (point - c) / radius,
            })
        }
        Surface::SineHeightfield {
            base,
            amplitude,
            frequency,
        } => {
            let k = 2.0 * std::f64::consts::PI * frequency;
            let height = |x: f64, y: f64| base + amplitude * (k * x).sin() * (k * y).sin();
            let g = |t: f64| {
                let p = origin + dir * t;
                p.z - height(p.x, p.y)
            };
            if dir.z == 0.0 {
                return None;
            }
            let t_far = (base - origin.z) / dir.z + 2.0 * amplitude / dir.z.abs();
            if !(t_far > 0.0) {
                return None;
            }
            let steps = 4000;
            let dt = t_far / steps as f64;
            let mut lo = 0.0;
            let g0 = g(lo);
            let mut hi = None;
            for s in 1..=steps {
                let t = s as f64 * dt;
                if g(t).signum() != g0.signum() {
                    hi = Some(t);
                    break;
                }
                lo = t;
            }
            let mut hi = hi?;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if g(mid).signum() == g0.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
            let point = origin + dir * t;
            let hx = amplitude * k * (k * point.x).cos() * (k * point.y).sin();
            let hy = amplitude * k * (k * point.x).sin() * (k * point.y).cos();
            Some(Hit {
                t,
                point,
                normal: Vec3::new(-hx, -hy, 1.0).normalize(),
            })
        }
    }
}

fn render_view(spec: &SceneSpec, cam: &Camera) -> Result<ViewBundle> {
    let (w, h) = cam.dims();
    let rot_t = cam.pose.rotation().transpose();
    let origin = cam.center();
    let mut depth = Vec::with_capacity(w * h);
    let mut normals = Vec::with_capacity(w * h);
    let mut colors = Vec::with_capacity(w * h);
    let mut plane_distance = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            let ray = cam.ray(i, j);
            let dir = cam.pose.transform_vector(&ray);
            let hit = intersect(&spec.surface, &origin, &dir).ok_or(Error::RayMiss { i, j })?;
            let mut n = rot_t * hit.normal;
            if n.dot(&ray) > 0.0 {
                n = -n;
            }
            depth.push(hit.t);
            plane_distance.push(hit.t * n.dot(&ray));
            normals.push(n);
            colors.push(spec.texture.color(&hit.point));
        }
    }
    Ok(ViewBundle {
        rgb: Image::new(w, h, colors)?,
        depth: ScalarField::new(w, h, depth)?,
        plane_distance: ScalarField::new(w, h, plane_distance)?,
        normals: VectorField::new(w, h, normals)?,
        cam: *cam,
    })
}

/// Uncorrupted bundle per camera.
pub fn render_scene(spec: &SceneSpec) -> Result<Vec<ViewBundle>> {
    spec.validate()?;
    spec.cameras.iter().map(|cam| render_view(spec, cam)).collect()
}

/// Rendered bundles with the spec's noise applied, view `k` drawing from stream `k`.
pub fn render_observed(spec: &SceneSpec) -> Result<Vec<ViewBundle>> {
    Ok(render_scene(spec)?
        .iter()
        .enumerate()
        .map(|(k, b)| corrupt(b, &spec.noise, spec.seed, k as u64))
        .collect())
}

/// Per-pixel noise source; see the module docs for the layout.
pub struct PixelNoise {
    rng: ChaCha8Rng,
}

impl PixelNoise {
    pub const WORDS_PER_PIXEL: u128 = 16;

    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Positions the generator at the start of pixel `index`'s block.
    pub fn at_pixel(&mut self, index: usize) -> &mut Self {
        self.rng.set_word_pos(index as u128 * Self::WORDS_PER_PIXEL);
        self
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Pair of independent standard normals.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        (r * phi.cos(), r * phi.sin())
    }
}

/// Adds Gaussian depth noise and rotates each normal by a normally distributed angle
/// about a uniformly random tangent axis. The plane offsets are left untouched, so the
/// plane-induced depth of the corrupted bundle no longer matches its depth.
pub fn corrupt(bundle: &ViewBundle, noise: &Noise, seed: u64, stream: u64) -> ViewBundle {
    if noise.is_zero() {
        return bundle.clone();
    }
    let mut out = bundle.clone();
    let mut gen = PixelNoise::new(seed, stream);
    let sigma_n = noise.normal_sigma_deg.to_radians();
    let (w, h) = bundle.depth.dims();
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            gen.at_pixel(k);
            let (zd, za) = gen.gaussian_pair();
            let phi = 2.0 * std::f64::consts::PI * gen.uniform();
            if noise.depth_sigma > 0.0 {
                let d = bundle.depth.get(i, j);
                let noisy = d + noise.depth_sigma * zd;
                out.depth.set(i, j, if noisy > 0.0 { noisy } else { d * 1e-3 });
            }
            if sigma_n > 0.0 {
                let n = bundle.normals.get(i, j);
                let (t1, t2) = tangent_basis(&n);
                let axis = t1 * phi.cos() + t2 * phi.sin();
                let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), sigma_n * za);
                out.normals.set(i, j, (rot * n).normalize());
            }
        }
    }
    out
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}
