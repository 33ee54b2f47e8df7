//! Cross-view point-cloud normal consistency.
//!
//! Per-view depth confidences are fused, current-view points that land inside the
//! neighbor frustum beyond `ε_d` become candidates, and the `S` most confident
//! candidates are compared: a 3×3 patch PCA normal is fitted at the same pixel in the
//! current point map and in the neighbor point map carried into the current frame,
//! and the loss is the curvature-weighted mean of `1 − |n_cᵀ n_n|`.
//!
//! The curvature weight uses the smallest eigenvalue, `w_κ = exp(−10 · η_min / Ση)`,
//! so flat patches weigh close to 1. (An ascending-order listing of the same
//! procedure divides the *largest* eigenvalue instead; that variant is not used.)

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_dims, RegionLabel, RegionMask, ScalarField, Vec3, VectorField};
use crate::geom::{backproject_depth, project_point, transform_points, Camera, Pose};
use crate::partition::depth_weight_map;
use crate::sum::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvConfig {
    pub beta: f64,
    /// Near-field depth threshold in meters.
    pub eps_d: f64,
    pub gamma_fraction: f64,
    /// Number of sampled patches; 0 disables the term.
    pub s: usize,
    pub lambda3: f64,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            eps_d: 0.1,
            gamma_fraction: 0.3,
            s: 16,
            lambda3: 0.001,
        }
    }
}

impl MvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("{} is outside [0, 1]", self.beta)));
        }
        if !(self.eps_d > 0.0 && self.eps_d.is_finite()) {
            return Err(Error::param("eps_d", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma_fraction) {
            return Err(Error::param(
                "gamma_fraction",
                format!("{} is outside [0, 1)", self.gamma_fraction),
            ));
        }
        if !(self.lambda3 >= 0.0 && self.lambda3.is_finite()) {
            return Err(Error::param("lambda3", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Sampled pixels in non-increasing weight order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub pixels: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// `i,j,weight` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,weight\n");
        for (&(i, j), w) in self.pixels.iter().zip(&self.weights) {
            out.push_str(&format!("{i},{j},{w}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchAnalysis {
    pub normal: Vec3,
    /// Descending.
    pub eigenvalues: [f64; 3],
    pub centroid: Vec3,
    pub curvature_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchRejection {
    /// The 3×3 window leaves the image.
    Border,
    /// A patch point is the zero sentinel.
    Sentinel,
    /// Zero covariance (all points identical) or non-finite input.
    Degenerate,
}

/// `W_avg = β·W_c + (1 − β)·W_n`.
pub fn fuse_weights(w_c: &ScalarField, w_n: &ScalarField, beta: f64) -> Result<ScalarField> {
    check_dims(w_c.dims(), w_n.dims())?;
    let (w, h) = w_c.dims();
    Ok(ScalarField::from_fn(w, h, |i, j| {
        beta * w_c.get(i, j) + (1.0 - beta) * w_n.get(i, j)
    }))
}

/// `ℳ_d`: current-view points (camera frame) that project inside the neighbor image
/// with depth at least `eps_d`. Poses are world-from-camera.
pub fn validity_mask(
    points_c: &VectorField,
    pose_c: &Pose,
    pose_n: &Pose,
    cam_n: &Camera,
    eps_d: f64,
) -> RegionMask {
    let in_n = transform_points(points_c, &pose_c.inverse(), &pose_n.inverse());
    let (w, h) = points_c.dims();
    let (wn, hn) = (cam_n.width as f64, cam_n.height as f64);
    RegionMask::from_fn(w, h, RegionLabel::Validity, |i, j| {
        if points_c.get(i, j) == Vec3::zeros() {
            return false;
        }
        let (u, v, z) = project_point(&in_n.get(i, j), cam_n);
        z >= eps_d && (0.0..wn).contains(&u) && (0.0..hn).contains(&v)
    })
}

/// Interior pixels with `ℳ_d` set and `W_avg ≥ γ`, where `γ = γ_fraction · mean(W_avg)`.
/// Returned in row-major order together with `γ`.
pub fn candidate_set(
    w_avg: &ScalarField,
    valid: &RegionMask,
    gamma_fraction: f64,
) -> Result<(Vec<(usize, usize)>, f64)> {
    check_dims(w_avg.dims(), valid.dims())?;
    let gamma = gamma_fraction * w_avg.mean();
    let (w, h) = w_avg.dims();
    let mut out = Vec::new();
    for i in 1..h.saturating_sub(1) {
        for j in 1..w.saturating_sub(1) {
            if valid.get(i, j) && w_avg.get(i, j) >= gamma {
                out.push((i, j));
            }
        }
    }
    Ok((out, gamma))
}

/// The `min(S, |𝒬|)` highest-weight candidates; ties go to the smaller `(i, j)`.
pub fn top_s_sample(candidates: &[(usize, usize)], w_avg: &ScalarField, s: usize) -> SampleSet {
    let mut ranked: Vec<(f64, (usize, usize))> =
        candidates.iter().map(|&(i, j)| (w_avg.get(i, j), (i, j))).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(s);
    SampleSet {
        pixels: ranked.iter().map(|r| r.1).collect(),
        weights: ranked.iter().map(|r| r.0).collect(),
    }
}

/// PCA of nine points: normal along the smallest-eigenvalue eigenvector of the
/// unnormalized scatter matrix, oriented toward `camera_center`.
pub fn pca_normal(points: &[Vec3; 9], camera_center: &Vec3) -> std::result::Result<PatchAnalysis, PatchRejection> {
    if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
        return Err(PatchRejection::Degenerate);
    }
    let centroid = points.iter().sum::<Vec3>() / 9.0;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    if cov.iter().all(|&c| c == 0.0) {
        return Err(PatchRejection::Degenerate);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|k| eig.eigenvalues[k].max(0.0));
    let mut normal: Vec3 = eig.eigenvectors.column(order[2]).into_owned();
    normal /= normal.norm();
    // The QR sweep stops near 1e-8 relative residual when the two in-plane spreads are
    // almost equal; one inverse-iteration step restores full precision.
    if eigenvalues[1] > eigenvalues[2] {
        let shifted = cov - Matrix3::identity() * eig.eigenvalues[order[2]];
        if let Some(x) = shifted.lu().solve(&normal) {
            let n = x.norm();
            if n.is_finite() && n > 0.0 {
                normal = x / n;
            }
        }
    }
    if normal.dot(&(camera_center - centroid)) < 0.0 {
        normal = -normal;
    }
    let total: f64 = eigenvalues.iter().sum();
    let curvature_weight = if total > 0.0 {
        (-10.0 * eigenvalues[2] / total).exp()
    } else {
        1.0
    };
    Ok(PatchAnalysis {
        normal,
        eigenvalues,
        centroid,
        curvature_weight,
    })
}

/// Gathers the 3×3 patch centered at `center` and runs [`pca_normal`].
pub fn patch_pca(
    points: &VectorField,
    center: (usize, usize),
    camera_center: &Vec3,
) -> std::result::Result<PatchAnalysis, PatchRejection> {
    let (w, h) = points.dims();
    let (ci, cj) = center;
    if ci == 0 || cj == 0 || ci + 1 >= h || cj + 1 >= w {
        return Err(PatchRejection::Border);
    }
    let mut patch = [Vec3::zeros(); 9];
    for (k, p) in patch.iter_mut().enumerate() {
        *p = points.get(ci + k / 3 - 1, cj + k % 3 - 1);
        if *p == Vec3::zeros() {
            return Err(PatchRejection::Sentinel);
        }
    }
    pca_normal(&patch, camera_center)
}

/// One view as seen by the multi-view term.
#[derive(Debug, Clone, Copy)]
pub struct MvView<'a> {
    /// Depth that is backprojected into the point map.
    pub depth: &'a ScalarField,
    /// Rendered depth `D`.
    pub rendered: &'a ScalarField,
    /// Unbiased depth `D̂`.
    pub unbiased: &'a ScalarField,
    pub cam: &'a Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MvReport {
    pub loss: f64,
    pub n_candidates: usize,
    pub n_sampled: usize,
    pub n_accepted_patches: usize,
    pub gamma: f64,
    pub mean_w_kappa: f64,
    /// No accepted patch pairs; `loss` is 0 by convention.
    pub empty: bool,
}

#[derive(Debug, Clone)]
pub struct MvOutput {
    pub report: MvReport,
    pub samples: SampleSet,
}

/// Sampling stage: `W_c`, `W_n`, fusion, validity, candidates, top-S.
#[derive(Debug, Clone)]
pub struct MvSampling {
    pub w_avg: ScalarField,
    pub valid: RegionMask,
    pub n_candidates: usize,
    pub gamma: f64,
    pub samples: SampleSet,
}

pub fn mv_sampling(
    current: &MvView<'_>,
    neighbor: &MvView<'_>,
    points_c: &VectorField,
    cfg: &MvConfig,
) -> Result<MvSampling> {
    let w_c = depth_weight_map(current.rendered, current.unbiased)?;
    let w_n = depth_weight_map(neighbor.rendered, neighbor.unbiased)?;
    let w_avg = fuse_weights(&w_c, &w_n, cfg.beta)?;
    let valid = validity_mask(points_c, &current.cam.pose, &neighbor.cam.pose, neighbor.cam, cfg.eps_d);
    let (candidates, gamma) = candidate_set(&w_avg, &valid, cfg.gamma_fraction)?;
    let samples = top_s_sample(&candidates, &w_avg, cfg.s);
    Ok(MvSampling {
        w_avg,
        valid,
        n_candidates: candidates.len(),
        gamma,
        samples,
    })
}

/// Neighbor point map expressed in the current camera frame.
pub fn neighbor_points_in_current(points_n: &VectorField, cam_c: &Camera, cam_n: &Camera) -> VectorField {
    transform_points(points_n, &cam_n.extrinsic(), &cam_c.extrinsic())
}

/// Per-pixel cosine term for one sampled pixel, or `None` if either patch is rejected.
/// Returns `(w_κ · (1 − |n_cᵀ n_n|), w_κ)`.
#[inline]
pub fn patch_pair_term(points_c: &VectorField, points_n_in_c: &VectorField, px: (usize, usize)) -> Option<(f64, f64)> {
    let origin = Vec3::zeros();
    let pc = patch_pca(points_c, px, &origin).ok()?;
    let pn = patch_pca(points_n_in_c, px, &origin).ok()?;
    Some((pair_cosine_loss(&pc.normal, &pn.normal, pc.curvature_weight), pc.curvature_weight))
}

/// `w_κ · (1 − |n_cᵀ n_n|)`; unchanged when either normal is negated.
#[inline]
pub fn pair_cosine_loss(n_c: &Vec3, n_n: &Vec3, w_kappa: f64) -> f64 {
    w_kappa * (1.0 - n_c.dot(n_n).abs().min(1.0))
}

/// Loss over the given samples; `(loss, accepted, mean w_κ)`.
pub fn patch_loss(points_c: &VectorField, points_n_in_c: &VectorField, samples: &SampleSet) -> (f64, usize, f64) {
    let mut total = KahanSum::new();
    let mut wk = KahanSum::new();
    let mut accepted = 0usize;
    for &px in &samples.pixels {
        if let Some((t, w)) = patch_pair_term(points_c, points_n_in_c, px) {
            total.add(t);
            wk.add(w);
            accepted += 1;
        }
    }
    if accepted == 0 {
        (0.0, 0, 0.0)
    } else {
        let k = accepted as f64;
        (total.value() / k, accepted, wk.value() / k)
    }
}

/// Full multi-view pipeline for a current/neighbor pair of equal image size.
pub fn mvgeo_loss(current: &MvView<'_>, neighbor: &MvView<'_>, cfg: &MvConfig) -> Result<MvOutput> {
    cfg.validate()?;
    let dims = current.cam.dims();
    check_dims(dims, neighbor.cam.dims())?;
    for v in [current, neighbor] {
        check_dims(dims, v.depth.dims())?;
        check_dims(dims, v.rendered.dims())?;
        check_dims(dims, v.unbiased.dims())?;
    }
    if cfg.s == 0 {
        return Ok(MvOutput {
            report: MvReport {
                empty: true,
                ..Default::default()
            },
            samples: SampleSet::default(),
        });
    }
    let points_c = backproject_depth(current.depth, current.cam)?;
    let sampling = mv_sampling(current, neighbor, &points_c, cfg)?;
    let points_n = backproject_depth(neighbor.depth, neighbor.cam)?;
    let points_n_in_c = neighbor_points_in_current(&points_n, current.cam, neighbor.cam);
    let (loss, accepted, mean_w_kappa) = patch_loss(&points_c, &points_n_in_c, &sampling.samples);
    Ok(MvOutput {
        report: MvReport {
            loss,
            n_candidates: sampling.n_candidates,
            n_sampled: sampling.samples.len(),
            n_accepted_patches: accepted,
            gamma: sampling.gamma,
            mean_w_kappa,
            empty: accepted == 0,
        },
        samples: sampling.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fuse_examples() {
        let a = ScalarField::new(2, 1, vec![1.0, 0.3]).unwrap();
        let b = ScalarField::new(2, 1, vec![0.0, 0.3]).unwrap();
        let f = fuse_weights(&a, &b, 0.5).unwrap();
        assert_eq!(f.get(0, 0), 0.5);
        assert_eq!(fuse_weights(&a, &a, 0.37).unwrap().get(0, 1), 0.3);
        assert_eq!(fuse_weights(&a, &b, 1.0).unwrap(), a);
    }

    fn cam(w: usize, h: usize, pose: Pose) -> Camera {
        Camera::centered(w as f64, w, h, pose).unwrap()
    }

    #[test]
    fn validity_examples() {
        let c = cam(6, 5, Pose::identity());
        let pts = backproject_depth(&ScalarField::filled(6, 5, 1.0), &c).unwrap();
        assert_eq!(validity_mask(&pts, &c.pose, &c.pose, &c, 0.1).count(), 30);

        let near = backproject_depth(&ScalarField::filled(6, 5, 0.05), &c).unwrap();
        assert_eq!(validity_mask(&near, &c.pose, &c.pose, &c, 0.1).count(), 0);

        let flipped = Pose::from_axis_angle(Vec3::y(), std::f64::consts::PI, Vec3::zeros());
        assert_eq!(validity_mask(&pts, &c.pose, &flipped, &c, 0.1).count(), 0);
    }

    #[test]
    fn candidate_examples() {
        let w = ScalarField::filled(4, 4, 1.0);
        let none = RegionMask::filled(4, 4, false, RegionLabel::Validity);
        assert!(candidate_set(&w, &none, 0.3).unwrap().0.is_empty());
        let all = RegionMask::filled(4, 4, true, RegionLabel::Validity);
        assert_eq!(candidate_set(&w, &all, 0.3).unwrap().0, vec![(1, 1), (1, 2), (2, 1), (2, 2)]);

        // border pixels carry weights too, so balance 0.1/0.9 over the whole field
        let w = ScalarField::from_fn(4, 4, |i, j| if (i + j) % 2 == 0 { 0.9 } else { 0.1 });
        let (q, gamma) = candidate_set(&w, &all, 0.3).unwrap();
        assert!((gamma - 0.15).abs() < 1e-15);
        assert_eq!(q, vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn top_s_examples() {
        let mut w = ScalarField::filled(4, 4, 0.0);
        w.set(0, 1, 0.9);
        w.set(3, 3, 0.8);
        w.set(1, 1, 0.7);
        let s = top_s_sample(&[(1, 1), (3, 3), (0, 1)], &w, 2);
        assert_eq!(s.pixels, vec![(0, 1), (3, 3)]);
        assert_eq!(s.weights, vec![0.9, 0.8]);
        let s = top_s_sample(&[(1, 1), (3, 3), (0, 1)], &w, 10);
        assert_eq!(s.pixels, vec![(0, 1), (3, 3), (1, 1)]);

        let flat = ScalarField::filled(4, 4, 0.5);
        let s = top_s_sample(&[(2, 2), (1, 3), (1, 2), (3, 0)], &flat, 3);
        assert_eq!(s.pixels, vec![(1, 2), (1, 3), (2, 2)]);
    }

    #[test]
    fn pca_on_coplanar_points() {
        let pts: [Vec3; 9] = std::array::from_fn(|k| Vec3::new((k % 3) as f64, (k / 3) as f64 * 0.7, 0.0));
        let p = pca_normal(&pts, &Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_abs_diff_eq!(p.normal, Vec3::z(), epsilon = 1e-12);
        assert!(p.eigenvalues[2].abs() < 1e-12);
        assert!((p.curvature_weight - 1.0).abs() < 1e-12);
        let p = pca_normal(&pts, &Vec3::new(0.0, 0.0, -5.0)).unwrap();
        assert_abs_diff_eq!(p.normal, -Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn pca_on_slanted_plane() {
        let a = Vec3::new(1.0, -1.0, 0.0);
        let b = Vec3::new(1.0, 1.0, -2.0);
        let pts: [Vec3; 9] = std::array::from_fn(|k| a * (k % 3) as f64 + b * (k / 3) as f64 * 0.5);
        let p = pca_normal(&pts, &Vec3::new(10.0, 10.0, 10.0)).unwrap();
        let expected = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!((p.normal - expected).norm() < 1e-9);
    }

    #[test]
    fn isotropic_curvature_weight() {
        // ±e_k pairs plus three points at the origin: scatter = 2·I
        let mut pts = [Vec3::zeros(); 9];
        for k in 0..3 {
            pts[2 * k][k] = 1.0;
            pts[2 * k + 1][k] = -1.0;
        }
        let p = pca_normal(&pts, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((p.curvature_weight - (-10.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((p.curvature_weight - 0.03567).abs() < 1e-5);
    }

    #[test]
    fn degenerate_patches_rejected() {
        let same = [Vec3::new(1.0, 2.0, 3.0); 9];
        assert_eq!(pca_normal(&same, &Vec3::zeros()), Err(PatchRejection::Degenerate));
        let pts = VectorField::filled(3, 3, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(patch_pca(&pts, (0, 1), &Vec3::zeros()), Err(PatchRejection::Border));
        let mut pts = VectorField::from_fn(3, 3, |i, j| Vec3::new(j as f64, i as f64, 1.0));
        pts.set(2, 2, Vec3::zeros());
        assert_eq!(patch_pca(&pts, (1, 1), &Vec3::zeros()), Err(PatchRejection::Sentinel));
    }

    #[test]
    fn disabled_term_is_empty() {
        let c = cam(4, 4, Pose::identity());
        let d = ScalarField::filled(4, 4, 1.0);
        let v = MvView {
            depth: &d,
            rendered: &d,
            unbiased: &d,
            cam: &c,
        };
        let out = mvgeo_loss(&v, &v, &MvConfig { s: 0, ..Default::default() }).unwrap();
        assert!(out.report.empty);
        assert_eq!(out.report.loss, 0.0);
    }
}
