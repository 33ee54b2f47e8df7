//! Dense per-pixel maps: scalar fields, 3-vector fields, boolean masks and RGB images.
//!
//! All maps are row-major with pixel `(i, j)` at row `i`, column `j`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[inline]
pub(crate) fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// H×W map of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("dimensions", "width and height must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::param(
                "data",
                format!("length {} != {}x{}", data.len(), width, height),
            ));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                i: k / width,
                j: k % width,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        crate::sum::mean(self.data.iter().copied())
    }
}

/// H×W map of 3-vectors. Normal fields use `(0, 0, 0)` for invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    width: usize,
    height: usize,
    data: Vec<Vec3>,
}

impl VectorField {
    pub fn new(width: usize, height: usize, data: Vec<Vec3>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("dimensions", "width and height must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::param(
                "data",
                format!("length {} != {}x{}", data.len(), width, height),
            ));
        }
        if let Some(k) = data.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite {
                i: k / width,
                j: k % width,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: Vec3) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vec3) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Vec3 {
        self.data[i * self.width + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Vec3) {
        self.data[i * self.width + j] = v;
    }
    pub fn data(&self) -> &[Vec3] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Vec3] {
        &mut self.data
    }

    /// True when every vector is unit length within `tol` or exactly the zero sentinel.
    pub fn is_normal_field(&self, tol: f64) -> bool {
        self.data
            .iter()
            .all(|v| *v == Vec3::zeros() || (v.norm() - 1.0).abs() <= tol)
    }
}

/// Which pixel subset a mask names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionLabel {
    Trust,
    TextureRich,
    TextureLess,
    Validity,
    /// Pixels where a derived field could not be computed.
    Invalid,
    /// Intersections and other derived sets.
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    label: RegionLabel,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>, label: RegionLabel) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::param(
                "bits",
                format!("length {} does not match {}x{}", bits.len(), width, height),
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
            label,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool, label: RegionLabel) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
            label,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        label: RegionLabel,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                bits.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            bits,
            label,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn label(&self) -> RegionLabel {
        self.label
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.width + j] = v;
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn with_label(mut self, label: RegionLabel) -> Self {
        self.label = label;
        self
    }

    pub fn and(&self, other: &RegionMask) -> Result<RegionMask> {
        check_dims(self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
            label: RegionLabel::Other,
        })
    }

    pub fn and_not(&self, other: &RegionMask) -> Result<RegionMask> {
        check_dims(self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && !b)
                .collect(),
            label: self.label,
        })
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Row-major iterator over `(i, j)` of set pixels.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / w, k % w))
    }
}

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::param(
                "data",
                format!("length {} does not match {}x{}", data.len(), width, height),
            ));
        }
        if let Some(k) = data
            .iter()
            .position(|px| !px.iter().all(|c| (0.0..=1.0).contains(c)))
        {
            return Err(Error::param(
                "image",
                format!("channel outside [0,1] at pixel ({}, {})", k / width, k % width),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                let px = f(i, j);
                data.push(px.map(|c| c.clamp(0.0, 1.0)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        self.data[i * self.width + j]
    }
    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    /// Unweighted channel mean.
    #[inline]
    pub fn luminance(&self, i: usize, j: usize) -> f64 {
        let [r, g, b] = self.get(i, j);
        (r + g + b) / 3.0
    }

    /// Mean absolute channel difference between two pixels.
    #[inline]
    pub fn color_distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let pa = self.get(a.0, a.1);
        let pb = self.get(b.0, b.1);
        ((pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs() + (pa[2] - pb[2]).abs()) / 3.0
    }
}
