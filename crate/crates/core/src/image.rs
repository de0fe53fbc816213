//! Two-dimensional grayscale images and volumes built from them.

use crate::error::{GmpError, Result};

/// Row-major grayscale image with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(GmpError::Empty("image with a zero dimension"));
        }
        if data.len() != height * width {
            return Err(GmpError::InvalidParameter(format!(
                "image data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(GmpError::InvalidParameter(format!(
                "non-finite pixel value {bad}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        assert!(value.is_finite());
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let v = f(r, c);
                assert!(v.is_finite(), "non-finite pixel at ({r}, {c})");
                data.push(v);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from data produced by this crate's own kernels,
    /// which only ever combine finite inputs with finite weights.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
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
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        Image2D::from_fn(self.height, self.width, |r, c| f(self.get(r, c)))
    }

    /// Copies the `h`×`w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Image2D> {
        if h == 0 || w == 0 || row + h > self.height || col + w > self.width {
            return Err(GmpError::InvalidParameter(format!(
                "crop {h}x{w} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for r in row..row + h {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + w]);
        }
        Ok(Image2D::from_raw(h, w, data))
    }

    pub fn max_abs_diff(&self, other: &Image2D) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Ordered stack of equally sized slices with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    slices: Vec<Image2D>,
    meta: String,
}

impl Volume {
    pub fn new(slices: Vec<Image2D>, meta: impl Into<String>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or(GmpError::Empty("volume needs at least one slice"))?;
        let dims = first.dims();
        for s in &slices {
            if s.dims() != dims {
                return Err(GmpError::DimensionMismatch {
                    expected: dims,
                    found: s.dims(),
                });
            }
            if let Some(v) = s.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(GmpError::InvalidParameter(format!(
                    "volume value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            slices,
            meta: meta.into(),
        })
    }

    /// Same as [`Volume::new`] but clamps every sample into `[0, 1]` first.
    pub fn new_clamped(slices: Vec<Image2D>, meta: impl Into<String>) -> Result<Self> {
        let slices = slices
            .into_iter()
            .map(|s| {
                let (h, w) = s.dims();
                let data = s.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
                Image2D::from_raw(h, w, data)
            })
            .collect();
        Volume::new(slices, meta)
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth(), self.height(), self.width())
    }

    pub fn slices(&self) -> &[Image2D] {
        &self.slices
    }

    pub fn slice(&self, index: usize) -> &Image2D {
        &self.slices[index]
    }

    pub fn into_slices(self) -> Vec<Image2D> {
        self.slices
    }

    pub fn meta(&self) -> &str {
        &self.meta
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    pub fn min(&self) -> f64 {
        self.slices.iter().map(Image2D::min).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.slices
            .iter()
            .map(Image2D::max)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rescales the volume so its minimum maps to 0 and its maximum to 1.
    /// Constant volumes are returned unchanged.
    pub fn minmax_normalized(&self) -> Volume {
        let (lo, hi) = (self.min(), self.max());
        if hi <= lo {
            return self.clone();
        }
        let scale = 1.0 / (hi - lo);
        let slices = self
            .slices
            .iter()
            .map(|s| s.map(|v| ((v - lo) * scale).clamp(0.0, 1.0)))
            .collect();
        Volume {
            slices,
            meta: self.meta.clone(),
        }
    }
}
