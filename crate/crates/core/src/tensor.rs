//! Dense rank-3 tensors and the constrained abundance / endmember wrappers.
//!
//! All tensors use channel-major, row-major layout: element `(c, i, j)` lives
//! at linear index `c·H·W + i·W + j`.

use crate::error::{Error, Result};

/// Default tolerance for the per-pixel sum-to-one check.
pub const ASC_TOLERANCE: f64 = 1e-6;

/// A `channels × height × width` grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, fill: f64) -> Result<Self> {
        check_dims(channels, height, width)?;
        if !fill.is_finite() {
            return Err(Error::Dimension(format!("non-finite fill value {fill}")));
        }
        let len = checked_len(channels, height, width)?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![fill; len],
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, 0.0)
    }

    /// Wraps existing data, checking length and finiteness.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(channels, height, width)?;
        let len = checked_len(channels, height, width)?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite value at linear index {pos}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the
    /// length matches and values come from finite arithmetic.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(c < self.channels && i < self.height && j < self.width);
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    /// Panics on a non-finite value in debug builds.
    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, value: f64) {
        debug_assert!(value.is_finite());
        let idx = self.index(c, i, j);
        self.data[idx] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Applies `f` elementwise; fails if any result is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_vec(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Rounds every value to the nearest binary32, the precision stored on disk.
    pub fn quantize_f32(&self) -> Self {
        Self::from_raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32 as f64).collect(),
        )
    }

    /// Copies the window `[top, top+h) × [left, left+w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::Dimension(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for i in top..top + h {
                let start = self.index(c, i, left);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Self::from_raw(self.channels, h, w, data))
    }

    pub fn same_dims(&self, other: &Tensor3) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "zero dimension in {channels}x{height}x{width}"
        )));
    }
    Ok(())
}

fn checked_len(channels: usize, height: usize, width: usize) -> Result<usize> {
    channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::Dimension(format!("{channels}x{height}x{width} overflows")))
}

/// Per-pixel abundance fractions, one channel per material.
///
/// Non-negativity always holds. `normalized` records that every pixel sums to
/// one within [`ASC_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    inner: Tensor3,
    normalized: bool,
}

impl AbundanceMap {
    /// Wraps a tensor as raw (not sum-to-one) abundances. Rejects negatives.
    pub fn new_raw(inner: Tensor3) -> Result<Self> {
        if let Some(pos) = inner.data().iter().position(|&v| v < 0.0) {
            return Err(Error::Normalization(format!(
                "negative abundance {} at linear index {pos}",
                inner.data()[pos]
            )));
        }
        Ok(Self {
            inner,
            normalized: false,
        })
    }

    /// Wraps a tensor that must already satisfy both constraints at `tol`.
    pub fn new_normalized(inner: Tensor3, tol: f64) -> Result<Self> {
        let map = Self {
            inner,
            normalized: false,
        };
        let report = validate_abundance(&map, tol);
        if !report.anc_ok {
            return Err(Error::Normalization("negative abundance value".into()));
        }
        if !report.asc_ok {
            return Err(Error::Normalization(format!(
                "pixel sums deviate from one by up to {:e} (tolerance {tol:e})",
                report.worst_pixel_sum_error
            )));
        }
        Ok(Self {
            normalized: true,
            ..map
        })
    }

    pub(crate) fn from_parts(inner: Tensor3, normalized: bool) -> Self {
        Self { inner, normalized }
    }

    /// Uniform `1/N` abundances.
    pub fn uniform(materials: usize, height: usize, width: usize) -> Result<Self> {
        let inner = Tensor3::new(materials, height, width, 1.0 / materials.max(1) as f64)?;
        Ok(Self {
            inner,
            normalized: true,
        })
    }

    pub fn materials(&self) -> usize {
        self.inner.channels()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.inner
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.inner
    }

    pub(crate) fn tensor_mut(&mut self) -> &mut Tensor3 {
        &mut self.inner
    }
}

/// Outcome of [`validate_abundance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbundanceReport {
    pub anc_ok: bool,
    pub asc_ok: bool,
    pub worst_pixel_sum_error: f64,
}

/// Checks non-negativity and per-pixel sum-to-one of an abundance tensor.
pub fn validate_abundance(a: &AbundanceMap, tol: f64) -> AbundanceReport {
    validate_tensor(a.tensor(), tol)
}

/// Same as [`validate_abundance`] but on an unwrapped tensor.
pub fn validate_tensor(t: &Tensor3, tol: f64) -> AbundanceReport {
    let plane = t.plane_len();
    let data = t.data();
    let anc_ok = data.iter().all(|&v| v >= 0.0);
    let mut worst = 0.0f64;
    for p in 0..plane {
        let sum: f64 = (0..t.channels()).map(|c| data[c * plane + p]).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    AbundanceReport {
        anc_ok,
        asc_ok: worst <= tol,
        worst_pixel_sum_error: worst,
    }
}

/// `L × N` matrix of endmember spectra; column `n` is material `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    bands: usize,
    materials: usize,
    values: Vec<f64>,
}

impl EndmemberMatrix {
    /// `values` is row-major: entry `(l, n)` at `l·N + n`.
    pub fn new(bands: usize, materials: usize, values: Vec<f64>) -> Result<Self> {
        if bands == 0 || materials == 0 {
            return Err(Error::Dimension("endmember matrix needs L, N >= 1".into()));
        }
        if materials > bands {
            return Err(Error::Dimension(format!(
                "more materials ({materials}) than bands ({bands})"
            )));
        }
        if values.len() != bands * materials {
            return Err(Error::Dimension(format!(
                "expected {} endmember values, got {}",
                bands * materials,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Dimension(format!(
                "endmember value {} at index {pos} is negative or non-finite",
                values[pos]
            )));
        }
        Ok(Self {
            bands,
            materials,
            values,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for k in 0..n {
            values[k * n + k] = 1.0;
        }
        Self::new(n, n, values)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn materials(&self) -> usize {
        self.materials
    }

    #[inline]
    pub fn get(&self, band: usize, material: usize) -> f64 {
        self.values[band * self.materials + material]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The on-disk form: a tensor of dims `(L, N, 1)`.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_raw(self.bands, self.materials, 1, self.values.clone())
    }

    pub fn from_tensor(t: &Tensor3) -> Result<Self> {
        if t.width() != 1 {
            return Err(Error::Dimension(format!(
                "endmember tensor must have dims (L, N, 1), got {:?}",
                t.dims()
            )));
        }
        Self::new(t.channels(), t.height(), t.data().to_vec())
    }
}
