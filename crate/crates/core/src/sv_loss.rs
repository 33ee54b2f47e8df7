//! Texture-aware single-view normal loss.
//!
//! In texture-rich trust pixels (`ℛ ∩ ℋ`) the rendered normals are pulled toward the
//! depth-derived normals with confidence `W`, plus an orthogonality term between the
//! depth-discrepancy gradient and the normal. Texture-less pixels (`ℬ`) get a
//! color-weighted total-variation smoothness term instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_dims, Image, RegionLabel, RegionMask, ScalarField, Vec3, VectorField};
use crate::geom::diff_stencil;
use crate::partition::{
    depth_weight_map, gradient_magnitude, percentile_threshold, sobel_gradients, texture_partition,
    trust_region,
};
use crate::sum::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub theta: f64,
    pub percentile: f64,
}

impl Default for SvConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            lambda2: 0.01,
            theta: 0.8,
            percentile: 75.0,
        }
    }
}

impl SvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::param("lambda1", "must be finite and >= 0"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::param("lambda2", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::param("theta", format!("{} is outside [0, 1]", self.theta)));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::param(
                "percentile",
                format!("{} is outside (0, 100)", self.percentile),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SvLossReport {
    pub l_svn: f64,
    pub l_cross: f64,
    pub tv_normal: f64,
    pub l_svgeo: f64,
    pub n_rich_trust: usize,
    pub n_less: usize,
}

/// Signed discrepancy `δ = D − D̂`.
pub fn discrepancy_field(depth: &ScalarField, unbiased: &ScalarField) -> Result<ScalarField> {
    check_dims(depth.dims(), unbiased.dims())?;
    let (w, h) = depth.dims();
    Ok(ScalarField::from_fn(w, h, |i, j| depth.get(i, j) - unbiased.get(i, j)))
}

#[inline]
fn partials(delta: &ScalarField, i: usize, j: usize) -> (f64, f64) {
    let (w, h) = delta.dims();
    let dx = diff_stencil(j, w)
        .map(|s| s.iter().map(|&(jj, c)| c * delta.get(i, jj)).sum())
        .unwrap_or(0.0);
    let dy = diff_stencil(i, h)
        .map(|s| s.iter().map(|&(ii, c)| c * delta.get(ii, j)).sum())
        .unwrap_or(0.0);
    (dx, dy)
}

#[inline]
fn cross_residual(delta: &ScalarField, n: &Vec3, i: usize, j: usize) -> f64 {
    let (dx, dy) = partials(delta, i, j);
    dx * n.y - dy * n.x
}

/// Mean over `mask` of `|∂δ/∂x · N_y − ∂δ/∂y · N_x|`; 0 for an empty mask.
pub fn cross_loss(delta: &ScalarField, normals: &VectorField, mask: &RegionMask) -> Result<f64> {
    check_dims(delta.dims(), normals.dims())?;
    check_dims(delta.dims(), mask.dims())?;
    let n = mask.count();
    if n == 0 {
        return Ok(0.0);
    }
    let s: KahanSum = mask
        .iter_set()
        .map(|(i, j)| cross_residual(delta, &normals.get(i, j), i, j).abs())
        .collect();
    Ok(s.value() / n as f64)
}

/// `(1/|M|) Σ_M W · ‖N_d − N‖₁ + λ1 · cross_loss`.
pub fn svn_loss(
    depth_normals: &VectorField,
    normals: &VectorField,
    weights: &ScalarField,
    delta: &ScalarField,
    mask: &RegionMask,
    lambda1: f64,
) -> Result<f64> {
    check_dims(mask.dims(), depth_normals.dims())?;
    check_dims(mask.dims(), normals.dims())?;
    check_dims(mask.dims(), weights.dims())?;
    let n = mask.count();
    if n == 0 {
        return Ok(0.0);
    }
    let s: KahanSum = mask
        .iter_set()
        .map(|(i, j)| weights.get(i, j) * (depth_normals.get(i, j) - normals.get(i, j)).abs().sum())
        .collect();
    Ok(s.value() / n as f64 + lambda1 * cross_loss(delta, normals, mask)?)
}

/// Color-weighted TV over the texture-less pixels, using the up and left neighbors.
pub fn tv_normal_loss(img: &Image, normals: &VectorField, less: &RegionMask) -> Result<f64> {
    check_dims(less.dims(), img.dims())?;
    check_dims(less.dims(), normals.dims())?;
    let n = less.count();
    if n == 0 {
        return Ok(0.0);
    }
    let mut s = KahanSum::new();
    for (i, j) in less.iter_set() {
        let np = normals.get(i, j);
        for (qi, qj) in tv_neighbors(i, j) {
            let e = (-img.color_distance((i, j), (qi, qj))).exp();
            s.add(e * (np - normals.get(qi, qj)).norm_squared());
        }
    }
    Ok(s.value() / n as f64)
}

#[inline]
fn tv_neighbors(i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (i > 0).then(|| (i - 1, j));
    let left = (j > 0).then(|| (i, j - 1));
    up.into_iter().chain(left)
}

/// Everything the single-view loss needs for one view.
#[derive(Debug, Clone, Copy)]
pub struct SvInputs<'a> {
    pub image: &'a Image,
    /// Rendered depth `D`.
    pub depth: &'a ScalarField,
    /// Unbiased depth `D̂`.
    pub unbiased: &'a ScalarField,
    /// Rendered normals `N`.
    pub normals: &'a VectorField,
    /// Depth-derived normals `N_d`.
    pub depth_normals: &'a VectorField,
}

/// Region decomposition and confidence for one view. These are held fixed when
/// differentiating the loss.
#[derive(Debug, Clone)]
pub struct SvRegions {
    pub weights: ScalarField,
    pub trust: RegionMask,
    pub rich: RegionMask,
    pub less: RegionMask,
    /// `ℛ ∩ ℋ` minus pixels where either normal field holds the sentinel.
    pub rich_trust: RegionMask,
    pub tau: f64,
}

impl SvRegions {
    pub fn compute(inputs: &SvInputs<'_>, cfg: &SvConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = inputs.depth.dims();
        check_dims(dims, inputs.image.dims())?;
        check_dims(dims, inputs.unbiased.dims())?;
        check_dims(dims, inputs.normals.dims())?;
        check_dims(dims, inputs.depth_normals.dims())?;
        let weights = depth_weight_map(inputs.depth, inputs.unbiased)?;
        let trust = trust_region(&weights, cfg.theta);
        let (gx, gy) = sobel_gradients(inputs.image)?;
        let g = gradient_magnitude(&gx, &gy)?;
        let tau = percentile_threshold(&g, cfg.percentile)?;
        let (rich, less) = texture_partition(&g, tau);
        let (w, h) = dims;
        let zero = Vec3::zeros();
        let rich_trust = RegionMask::from_fn(w, h, RegionLabel::Other, |i, j| {
            rich.get(i, j)
                && trust.get(i, j)
                && inputs.normals.get(i, j) != zero
                && inputs.depth_normals.get(i, j) != zero
        });
        Ok(Self {
            weights,
            trust,
            rich,
            less,
            rich_trust,
            tau,
        })
    }
}

/// Analytic partial derivatives of `ℒ_svgeo`.
#[derive(Debug, Clone)]
pub struct SvGradients {
    pub normals: VectorField,
    pub delta: ScalarField,
}

/// The single-view loss as a function of `(N, δ)` with regions, `W`, `N_d` and the
/// image held constant.
#[derive(Debug, Clone)]
pub struct SvProblem<'a> {
    pub regions: SvRegions,
    pub image: &'a Image,
    pub depth_normals: &'a VectorField,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl<'a> SvProblem<'a> {
    pub fn new(inputs: &SvInputs<'a>, cfg: &SvConfig) -> Result<Self> {
        Ok(Self {
            regions: SvRegions::compute(inputs, cfg)?,
            image: inputs.image,
            depth_normals: inputs.depth_normals,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
        })
    }

    pub fn evaluate(&self, normals: &VectorField, delta: &ScalarField) -> Result<SvLossReport> {
        let r = &self.regions;
        let l_cross = cross_loss(delta, normals, &r.rich_trust)?;
        let l_svn = svn_loss(self.depth_normals, normals, &r.weights, delta, &r.rich_trust, self.lambda1)?;
        let tv_normal = tv_normal_loss(self.image, normals, &r.less)?;
        Ok(SvLossReport {
            l_svn,
            l_cross,
            tv_normal,
            l_svgeo: l_svn + self.lambda2 * tv_normal,
            n_rich_trust: r.rich_trust.count(),
            n_less: r.less.count(),
        })
    }

    /// Gradients with `sign(0) = 0` at the L1 kinks.
    pub fn gradients(&self, normals: &VectorField, delta: &ScalarField) -> Result<SvGradients> {
        let r = &self.regions;
        let dims = r.rich_trust.dims();
        check_dims(dims, normals.dims())?;
        check_dims(dims, delta.dims())?;
        let (w, h) = dims;
        let mut g_n = VectorField::filled(w, h, Vec3::zeros());
        let mut g_d = ScalarField::filled(w, h, 0.0);

        let m = r.rich_trust.count();
        if m > 0 {
            let inv_m = 1.0 / m as f64;
            for (i, j) in r.rich_trust.iter_set() {
                let n = normals.get(i, j);
                let diff = self.depth_normals.get(i, j) - n;
                let mut g = -diff.map(sign) * (r.weights.get(i, j) * inv_m);

                let (dx, dy) = partials(delta, i, j);
                let s = sign(dx * n.y - dy * n.x) * self.lambda1 * inv_m;
                if s != 0.0 {
                    g.y += s * dx;
                    g.x -= s * dy;
                    if let Some(st) = diff_stencil(j, w) {
                        for (jj, c) in st {
                            let v = g_d.get(i, jj) + s * n.y * c;
                            g_d.set(i, jj, v);
                        }
                    }
                    if let Some(st) = diff_stencil(i, h) {
                        for (ii, c) in st {
                            let v = g_d.get(ii, j) - s * n.x * c;
                            g_d.set(ii, j, v);
                        }
                    }
                }
                g_n.set(i, j, g_n.get(i, j) + g);
            }
        }

        let b = r.less.count();
        if b > 0 && self.lambda2 != 0.0 {
            let scale = 2.0 * self.lambda2 / b as f64;
            for (i, j) in r.less.iter_set() {
                let np = normals.get(i, j);
                for (qi, qj) in tv_neighbors(i, j) {
                    let e = (-self.image.color_distance((i, j), (qi, qj))).exp();
                    let g = (np - normals.get(qi, qj)) * (scale * e);
                    g_n.set(i, j, g_n.get(i, j) + g);
                    g_n.set(qi, qj, g_n.get(qi, qj) - g);
                }
            }
        }
        Ok(SvGradients {
            normals: g_n,
            delta: g_d,
        })
    }
}

/// Residuals this close to an L1 kink count as sitting on it.
pub(crate) const KINK_TOL: f64 = 1e-12;

/// Subgradient sign with `sign(x) = 0` for `|x| ≤ KINK_TOL`.
#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > KINK_TOL {
        1.0
    } else if x < -KINK_TOL {
        -1.0
    } else {
        0.0
    }
}

/// `ℒ_svgeo = ℒ_svn + λ2 · TV_normal` with all sub-terms and region sizes.
pub fn svgeo_loss(inputs: &SvInputs<'_>, cfg: &SvConfig) -> Result<SvLossReport> {
    let problem = SvProblem::new(inputs, cfg)?;
    let delta = discrepancy_field(inputs.depth, inputs.unbiased)?;
    problem.evaluate(inputs.normals, &delta)
}

/// `(∂ℒ/∂N, ∂ℒ/∂δ)` at the inputs, holding `W`, masks and `N_d` fixed.
pub fn svgeo_gradients(inputs: &SvInputs<'_>, cfg: &SvConfig) -> Result<SvGradients> {
    let problem = SvProblem::new(inputs, cfg)?;
    let delta = discrepancy_field(inputs.depth, inputs.unbiased)?;
    problem.gradients(inputs.normals, &delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(w: usize, h: usize) -> RegionMask {
        RegionMask::filled(w, h, true, RegionLabel::Other)
    }

    #[test]
    fn discrepancy_is_signed() {
        let d = ScalarField::new(2, 1, vec![2.0, 5.0]).unwrap();
        let dh = ScalarField::new(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(discrepancy_field(&d, &dh).unwrap().data(), &[-1.0, 1.0]);
        assert!(discrepancy_field(&d, &d).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(discrepancy_field(&d, &ScalarField::filled(1, 2, 0.0)).is_err());
    }

    #[test]
    fn cross_loss_examples() {
        let m = all(5, 4);
        let flat = ScalarField::filled(5, 4, 3.0);
        let any_n = VectorField::filled(5, 4, Vec3::new(0.3, 0.4, -0.866));
        assert_eq!(cross_loss(&flat, &any_n, &m).unwrap(), 0.0);

        let ramp = ScalarField::from_fn(5, 4, |_, j| j as f64);
        let ny = VectorField::filled(5, 4, Vec3::y());
        assert_eq!(cross_loss(&ramp, &ny, &m).unwrap(), 1.0);
        let nx = VectorField::filled(5, 4, Vec3::x());
        assert_eq!(cross_loss(&ramp, &nx, &m).unwrap(), 0.0);

        let empty = RegionMask::filled(5, 4, false, RegionLabel::Other);
        assert_eq!(cross_loss(&ramp, &ny, &empty).unwrap(), 0.0);
    }

    #[test]
    fn svn_loss_examples() {
        let n = VectorField::filled(3, 3, Vec3::new(0.0, 0.0, -1.0));
        let delta = ScalarField::filled(3, 3, 0.5);
        let w1 = ScalarField::filled(3, 3, 1.0);
        assert_eq!(svn_loss(&n, &n, &w1, &delta, &all(3, 3), 0.05).unwrap(), 0.0);

        let mut nd = n.clone();
        nd.set(1, 1, n.get(1, 1) + Vec3::new(0.1, 0.0, 0.0));
        let one = RegionMask::from_fn(3, 3, RegionLabel::Other, |i, j| (i, j) == (1, 1));
        let l = svn_loss(&nd, &n, &w1, &delta, &one, 0.05).unwrap();
        assert!((l - 0.1).abs() < 1e-15);
        let wh = ScalarField::filled(3, 3, 0.5);
        let l = svn_loss(&nd, &n, &wh, &delta, &one, 0.05).unwrap();
        assert!((l - 0.05).abs() < 1e-15);
    }

    #[test]
    fn tv_examples() {
        let img = Image::filled(1, 2, [0.5, 0.5, 0.5]);
        let less = all(1, 2);
        let n0 = Vec3::new(0.0, 0.0, -1.0);
        let n = VectorField::new(1, 2, vec![n0, n0 + Vec3::new(0.0, 0.0, 0.5f64.sqrt())]).unwrap();
        // only the lower pixel has an upper neighbor; |B| = 2
        let tv = tv_normal_loss(&img, &n, &less).unwrap();
        assert!((tv * 2.0 - 0.5).abs() < 1e-15);

        let img = Image::new(1, 2, vec![[0.0; 3], [1.0; 3]]).unwrap();
        let tv = tv_normal_loss(&img, &n, &less).unwrap();
        assert!((tv * 2.0 - 0.5 * (-1f64).exp()).abs() < 1e-15);
        assert!((tv * 2.0 - 0.18394).abs() < 1e-4);

        let c = VectorField::filled(1, 2, n0);
        assert_eq!(tv_normal_loss(&img, &c, &less).unwrap(), 0.0);
    }

    #[test]
    fn l1_gradient_is_negative_sign() {
        let img = Image::filled(3, 3, [0.5; 3]);
        let n = VectorField::filled(3, 3, Vec3::new(0.0, 0.0, -1.0));
        let mut nd = n.clone();
        nd.set(1, 1, Vec3::new(0.2, -0.1, -0.97));
        let mut mask = RegionMask::filled(3, 3, false, RegionLabel::Other);
        mask.set(1, 1, true);
        let problem = SvProblem {
            regions: SvRegions {
                weights: ScalarField::filled(3, 3, 1.0),
                trust: all(3, 3),
                rich: mask.clone(),
                less: RegionMask::filled(3, 3, false, RegionLabel::TextureLess),
                rich_trust: mask,
                tau: 0.0,
            },
            image: &img,
            depth_normals: &nd,
            lambda1: 0.0,
            lambda2: 0.0,
        };
        let g = problem.gradients(&n, &ScalarField::filled(3, 3, 0.0)).unwrap();
        assert_eq!(g.normals.get(1, 1), Vec3::new(-1.0, 1.0, -1.0));
        assert_eq!(g.normals.get(0, 0), Vec3::zeros());
    }
}
