//! Texture decoupling and depth-discrepancy confidence.
//!
//! Sobel gradients of the luminance split the image into texture-rich (`G ≥ τ`) and
//! texture-less pixels; the rendered/unbiased depth discrepancy becomes a `[0, 1]`
//! weight whose upper level set is the trust region.

use crate::error::{Error, Result};
use crate::field::{check_dims, Image, RegionLabel, RegionMask, ScalarField};

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Horizontal and vertical Sobel responses of the channel-mean luminance, with
/// replicate padding at the borders.
pub fn sobel_gradients(img: &Image) -> Result<(ScalarField, ScalarField)> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let lum = ScalarField::from_fn(w, h, |i, j| img.luminance(i, j));
    let at = |i: isize, j: isize| {
        let ii = i.clamp(0, h as isize - 1) as usize;
        let jj = j.clamp(0, w as isize - 1) as usize;
        lum.get(ii, jj)
    };
    let mut gx = ScalarField::filled(w, h, 0.0);
    let mut gy = ScalarField::filled(w, h, 0.0);
    for i in 0..h {
        for j in 0..w {
            let (i, j) = (i as isize, j as isize);
            let v = |a: isize, b: isize| at(i + a, j + b);
            // Paired differences keep the response exactly zero on constant patches.
            let sx = (v(-1, 1) - v(-1, -1)) + 2.0 * (v(0, 1) - v(0, -1)) + (v(1, 1) - v(1, -1));
            let sy = (v(1, -1) - v(-1, -1)) + 2.0 * (v(1, 0) - v(-1, 0)) + (v(1, 1) - v(-1, 1));
            let (i, j) = (i as usize, j as usize);
            gx.set(i, j, sx);
            gy.set(i, j, sy);
        }
    }
    Ok((gx, gy))
}

pub fn gradient_magnitude(gx: &ScalarField, gy: &ScalarField) -> Result<ScalarField> {
    check_dims(gx.dims(), gy.dims())?;
    let (w, h) = gx.dims();
    Ok(ScalarField::from_fn(w, h, |i, j| gx.get(i, j).hypot(gy.get(i, j))))
}

/// Nearest-rank percentile: the value at sorted index `⌈p/100 · n⌉ − 1`.
pub fn percentile_threshold(g: &ScalarField, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::param("percentile", format!("{p} is outside (0, 100)")));
    }
    let mut v = g.data().to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    Ok(v[rank.clamp(1, n) - 1])
}

/// `(ℛ, ℬ)`: `G ≥ τ` is texture-rich, everything else texture-less.
pub fn texture_partition(g: &ScalarField, tau: f64) -> (RegionMask, RegionMask) {
    let (w, h) = g.dims();
    let rich = RegionMask::from_fn(w, h, RegionLabel::TextureRich, |i, j| g.get(i, j) >= tau);
    let less = RegionMask::from_fn(w, h, RegionLabel::TextureLess, |i, j| !rich.get(i, j));
    (rich, less)
}

/// `W = 1 − |D − D̂| / max|D − D̂|`, or `W ≡ 1` when the discrepancy vanishes everywhere.
pub fn depth_weight_map(depth: &ScalarField, unbiased: &ScalarField) -> Result<ScalarField> {
    check_dims(depth.dims(), unbiased.dims())?;
    let (w, h) = depth.dims();
    let delta = ScalarField::from_fn(w, h, |i, j| (depth.get(i, j) - unbiased.get(i, j)).abs());
    let max = delta.max();
    if !max.is_finite() {
        return Err(Error::NonFinite { i: 0, j: 0 });
    }
    if max == 0.0 {
        return Ok(ScalarField::filled(w, h, 1.0));
    }
    Ok(delta.map(|d| (1.0 - d / max).clamp(0.0, 1.0)))
}

/// `ℋ = {W ≥ θ}`.
pub fn trust_region(weights: &ScalarField, theta: f64) -> RegionMask {
    let (w, h) = weights.dims();
    RegionMask::from_fn(w, h, RegionLabel::Trust, |i, j| weights.get(i, j) >= theta)
}
