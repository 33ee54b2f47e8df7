//! Reference implementations shared by the integration suites. They are written
//! independently of the library code paths they check.
#![allow(dead_code)]

use geocon::sv_loss::{discrepancy_field, SvConfig, SvInputs, SvProblem};
use geocon::{Camera, Image, Pose, ScalarField, Vec3, VectorField};
use rand::Rng;

pub const SOBEL_KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Plain 3×3 correlation with replicate padding, written against an explicitly padded copy.
pub fn sobel_naive(lum: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let pw = w + 2;
    let mut padded = vec![0.0; pw * (h + 2)];
    for i in 0..h + 2 {
        for j in 0..pw {
            let si = i.saturating_sub(1).min(h - 1);
            let sj = j.saturating_sub(1).min(w - 1);
            padded[i * pw + j] = lum[si * w + sj];
        }
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for i in 0..h {
        for j in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for a in 0..3 {
                for b in 0..3 {
                    let v = padded[(i + a) * pw + j + b];
                    sx += SOBEL_KX[a][b] * v;
                    // K_y is the transpose of K_x.
                    sy += SOBEL_KX[b][a] * v;
                }
            }
            gx[i * w + j] = sx;
            gy[i * w + j] = sy;
        }
    }
    (gx, gy)
}

/// Candidate filtering and top-S by repeated selection of the first strict maximum in
/// row-major order.
pub fn top_s_oracle(
    w_avg: &[f64],
    valid: &[bool],
    w: usize,
    h: usize,
    gamma_fraction: f64,
    s: usize,
) -> Vec<(usize, usize)> {
    let mean = w_avg.iter().sum::<f64>() / w_avg.len() as f64;
    let gamma = gamma_fraction * mean;
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let interior = i > 0 && j > 0 && i + 1 < h && j + 1 < w;
            if interior && valid[i * w + j] && w_avg[i * w + j] >= gamma {
                pool.push((i, j));
            }
        }
    }
    let mut out = Vec::new();
    while out.len() < s && !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            let (bi, bj) = pool[best];
            let (ki, kj) = pool[k];
            if w_avg[ki * w + kj] > w_avg[bi * w + bj] {
                best = k;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

/// Smallest eigenpair of a symmetric 3×3 matrix from the closed-form roots of its
/// characteristic polynomial; the eigenvector is the longest cross product of two rows
/// of `A − λI`.
pub fn smallest_eigenpair(a: [[f64; 3]; 3]) -> (f64, Vec3) {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let lambda = if p == 0.0 {
        q
    } else {
        let mut b = a;
        for (k, row) in b.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= p;
            }
            row[k] -= q / p;
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
    };
    // acos loses half the digits when two eigenvalues nearly coincide; polish the
    // (simple) smallest root with Newton steps on det(A − λI).
    let charpoly = |l: f64| {
        let m = |r: usize, c: usize| a[r][c] - if r == c { l } else { 0.0 };
        m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
    };
    let mut lambda = lambda;
    for _ in 0..4 {
        let step = 1e-7 * p.max(1e-300);
        let d = (charpoly(lambda + step) - charpoly(lambda - step)) / (2.0 * step);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        lambda -= charpoly(lambda) / d;
    }
    let rows: Vec<Vec3> = (0..3)
        .map(|k| {
            let mut r = Vec3::new(a[k][0], a[k][1], a[k][2]);
            r[k] -= lambda;
            r
        })
        .collect();
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let v = candidates
        .iter()
        .copied()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap();
    (lambda, v.normalize())
}

/// Scatter matrix `Σ (p − c)(p − c)ᵀ` built entry by entry.
pub fn scatter(points: &[Vec3; 9]) -> [[f64; 3]; 3] {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / 9.0;
        }
    }
    let mut m = [[0.0; 3]; 3];
    for p in points {
        for r in 0..3 {
            for s in 0..3 {
                m[r][s] += (p[r] - c[r]) * (p[s] - c[s]);
            }
        }
    }
    m
}

/// Angle between two vectors, accurate for tiny angles.
pub fn angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Nine points on a jittered 3×3 grid in a random plane in front of the origin.
pub fn random_patch(rng: &mut impl Rng) -> [Vec3; 9] {
    let n = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), -1.0).normalize();
    let t1 = n.cross(&Vec3::new(rng.gen_range(-1.0..1.0), 1.0, 0.0)).normalize();
    let t2 = n.cross(&t1);
    let center = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..10.0));
    let spacing = rng.gen_range(0.01..0.5);
    let mut out = [Vec3::zeros(); 9];
    for (k, p) in out.iter_mut().enumerate() {
        let (a, b) = ((k / 3) as f64 - 1.0, (k % 3) as f64 - 1.0);
        let jitter = n * rng.gen_range(-0.02..0.02) * spacing;
        *p = center + t1 * (a * spacing) + t2 * (b * spacing) + jitter;
    }
    out
}

/// Owned inputs for one single-view gradient-check instance.
pub struct SvInstance {
    pub image: Image,
    pub depth: ScalarField,
    pub unbiased: ScalarField,
    pub normals: VectorField,
    pub depth_normals: VectorField,
}

impl SvInstance {
    pub fn inputs(&self) -> SvInputs<'_> {
        SvInputs {
            image: &self.image,
            depth: &self.depth,
            unbiased: &self.unbiased,
            normals: &self.normals,
            depth_normals: &self.depth_normals,
        }
    }
}

fn random_unit_facing(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), -1.0).normalize()
}

/// Random `w × h` instance. The discrepancy is small except for one outlier, so most
/// pixels land in the trust region at the default θ.
pub fn random_sv_instance(rng: &mut impl Rng, w: usize, h: usize) -> SvInstance {
    let image = Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let depth = ScalarField::from_fn(w, h, |_, _| rng.gen_range(1.0..3.0));
    let outlier = rng.gen_range(0..w * h);
    let mut unbiased = depth.clone();
    for (k, v) in unbiased.data_mut().iter_mut().enumerate() {
        *v += if k == outlier { 1.0 } else { rng.gen_range(-0.1..0.1) };
    }
    let normals = VectorField::from_fn(w, h, |_, _| random_unit_facing(rng));
    let depth_normals = VectorField::from_fn(w, h, |_, _| random_unit_facing(rng));
    SvInstance {
        image,
        depth,
        unbiased,
        normals,
        depth_normals,
    }
}

/// Outcome of one gradient check.
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compares analytic `(∂ℒ/∂N, ∂ℒ/∂δ)` with central differences of the frozen-region
/// loss. Returns `None` if some L1 residual lies within reach of a kink for step `h`.
pub fn sv_gradient_check(inst: &SvInstance, cfg: &SvConfig, h: f64) -> Option<GradCheck> {
    let inputs = inst.inputs();
    let problem = SvProblem::new(&inputs, cfg).unwrap();
    let delta = discrepancy_field(&inst.depth, &inst.unbiased).unwrap();
    if near_kink(&problem, &inst.normals, &delta, h) {
        return None;
    }
    let g = problem.gradients(&inst.normals, &delta).unwrap();
    let f = |n: &VectorField, d: &ScalarField| problem.evaluate(n, d).unwrap().l_svgeo;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for p in 0..delta.len() {
        for c in 0..3 {
            let mut np = inst.normals.clone();
            np.data_mut()[p][c] += h;
            let mut nm = inst.normals.clone();
            nm.data_mut()[p][c] -= h;
            let fd = (f(&np, &delta) - f(&nm, &delta)) / (2.0 * h);
            worst = worst.max(rel(fd, g.normals.data()[p][c]));
            coords += 1;
        }
        let mut dp = delta.clone();
        dp.data_mut()[p] += h;
        let mut dm = delta.clone();
        dm.data_mut()[p] -= h;
        let fd = (f(&inst.normals, &dp) - f(&inst.normals, &dm)) / (2.0 * h);
        worst = worst.max(rel(fd, g.delta.data()[p]));
        coords += 1;
    }
    Some(GradCheck {
        max_rel_err: worst,
        coords,
    })
}

fn near_kink(problem: &SvProblem<'_>, n: &VectorField, delta: &ScalarField, h: f64) -> bool {
    let (w, hh) = delta.dims();
    let margin = 10.0 * h;
    let d = |i: usize, j: usize| delta.get(i, j);
    for (i, j) in problem.regions.rich_trust.iter_set() {
        let diff = problem.depth_normals.get(i, j) - n.get(i, j);
        if diff.iter().any(|c| c.abs() < margin) {
            return true;
        }
        let dx = if w < 2 {
            0.0
        } else if j == 0 {
            d(i, 1) - d(i, 0)
        } else if j == w - 1 {
            d(i, j) - d(i, j - 1)
        } else {
            0.5 * (d(i, j + 1) - d(i, j - 1))
        };
        let dy = if hh < 2 {
            0.0
        } else if i == 0 {
            d(1, j) - d(0, j)
        } else if i == hh - 1 {
            d(i, j) - d(i - 1, j)
        } else {
            0.5 * (d(i + 1, j) - d(i - 1, j))
        };
        let nn = n.get(i, j);
        if (dx * nn.y - dy * nn.x).abs() < margin * (1.0 + dx.abs() + dy.abs()) {
            return true;
        }
    }
    false
}

/// Random rigid pose.
pub fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let t = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    Pose::from_axis_angle(axis, rng.gen_range(-3.0..3.0), t)
}

pub fn camera(size: usize, pose: Pose) -> Camera {
    Camera::centered(size as f64, size, size, pose).unwrap()
}

/// Scenes used by the ground-truth checks: checker on the plane (so ℬ is non-empty),
/// flat albedo on the curved surfaces.
pub fn ground_truth_scene(kind: geocon::SceneKind, size: usize) -> Vec<geocon::ViewBundle> {
    use geocon::{SceneKind, SceneSpec, Texture};
    let distance = 4.0;
    let texture = match kind {
        SceneKind::TiltedPlane => Texture::Checker {
            cell: SceneSpec::cell_for(size, distance, 6.0),
        },
        _ => Texture::Flat { value: 0.5 },
    };
    geocon::render_scene(&SceneSpec::preset(kind, size, distance, texture).unwrap()).unwrap()
}

/// `D̂` from a bundle's own plane offsets and normals.
pub fn bundle_unbiased(b: &geocon::ViewBundle) -> ScalarField {
    geocon::unbiased_depth(&b.plane_distance, &b.normals, &b.cam).unwrap().depth
}

/// Single-view report with `N_d` taken from the depth on the plane and equal to `N`
/// on curved surfaces, where central differences carry a second-order error.
pub fn sv_report(b: &geocon::ViewBundle, depth_normals_from_depth: bool, cfg: &SvConfig) -> geocon::SvLossReport {
    let unbiased = bundle_unbiased(b);
    let nd = if depth_normals_from_depth {
        geocon::normal_from_depth(&b.depth, &b.cam).unwrap().normals
    } else {
        b.normals.clone()
    };
    let inputs = SvInputs {
        image: &b.rgb,
        depth: &b.depth,
        unbiased: &unbiased,
        normals: &b.normals,
        depth_normals: &nd,
    };
    geocon::svgeo_loss(&inputs, cfg).unwrap()
}

/// Multi-view loss of view 0 against view 1 with `depths` as the rendered depth maps.
pub fn mv_report(bundles: &[geocon::ViewBundle], depths: [&ScalarField; 2], cfg: &geocon::MvConfig) -> geocon::MvReport {
    let ub: Vec<ScalarField> = bundles.iter().map(bundle_unbiased).collect();
    let view = |k: usize| geocon::MvView {
        depth: depths[k],
        rendered: depths[k],
        unbiased: &ub[k],
        cam: &bundles[k].cam,
    };
    geocon::mvgeo_loss(&view(0), &view(1), cfg).unwrap().report
}

/// `ℒ_mvgeo` on the plane scene with additive depth noise `sigma` in both views.
pub fn plane_mv_under_depth_noise(sigma: f64, seed: u64) -> f64 {
    let bundles = ground_truth_scene(geocon::SceneKind::TiltedPlane, 64);
    let noise = geocon::Noise {
        depth_sigma: sigma,
        normal_sigma_deg: 0.0,
    };
    let noisy: Vec<ScalarField> = bundles
        .iter()
        .enumerate()
        .map(|(k, b)| geocon::corrupt(b, &noise, seed, k as u64).depth)
        .collect();
    mv_report(&bundles, [&noisy[0], &noisy[1]], &geocon::MvConfig::default()).loss
}

/// Fixed protocol for the denoising runs: 48×48, 80 m, flat albedo, σ_d = 0.02 m,
/// σ_n = 5°.
pub fn denoising_scene(kind: geocon::SceneKind, seed: u64) -> (Vec<geocon::ViewBundle>, Vec<geocon::optim::Observation>) {
    use geocon::{Noise, SceneSpec, Texture};
    let mut spec = SceneSpec::preset(kind, 48, 80.0, Texture::Flat { value: 0.5 }).unwrap();
    spec.noise = Noise {
        depth_sigma: 0.02,
        normal_sigma_deg: 5.0,
    };
    spec.seed = seed;
    let gt = geocon::render_scene(&spec).unwrap();
    let obs = geocon::synth::render_observed(&spec)
        .unwrap()
        .iter()
        .map(geocon::optim::Observation::from)
        .collect();
    (gt, obs)
}

pub struct Denoised {
    pub normal_rms: (f64, f64),
    pub depth_rms: (f64, f64),
    pub state: geocon::optim::OptimState,
}

pub fn denoise(kind: geocon::SceneKind, seed: u64, cfg: &geocon::optim::OptimConfig) -> Denoised {
    use geocon::optim::*;
    let (gt, obs) = denoising_scene(kind, seed);
    let gt_n: Vec<VectorField> = gt.iter().map(|b| b.normals.clone()).collect();
    let gt_d: Vec<ScalarField> = gt.iter().map(|b| b.depth.clone()).collect();
    let init = OptimState::from_observations(&obs).unwrap();
    let n0 = rms_angular_error_deg(&init.normals, &gt_n);
    let d0 = rms_depth_error(&init.depths(), &gt_d);
    let (state, _) = run(init, &obs, cfg).unwrap();
    Denoised {
        normal_rms: (n0, rms_angular_error_deg(&state.normals, &gt_n)),
        depth_rms: (d0, rms_depth_error(&state.depths(), &gt_d)),
        state,
    }
}
