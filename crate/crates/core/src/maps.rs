//! Dense per-pixel rasters: hard label maps, logits, probabilities and
//! binary maps (boundaries, confidence).
//!
//! Every raster is stored row-major; multi-channel rasters are channel-last,
//! so the scores of pixel `(row, col)` live at
//! `values[(row * width + col) * C..][..C]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_LABEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue(format!("image dimensions must be positive, got {height}x{width}")));
        }
        Ok(Self { height, width })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn ensure_same(&self, other: ImageDims, what: &str) -> Result<()> {
        if *self != other {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ImageDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Axis-aligned pixel rectangle `[row, row + height) x [col, col + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self { row, col, height, width }
    }

    pub fn full(dims: ImageDims) -> Self {
        Self::new(0, 0, dims.height, dims.width)
    }

    pub fn row_end(&self) -> usize {
        self.row + self.height
    }

    pub fn col_end(&self) -> usize {
        self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims { height: self.height, width: self.width }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row_end() && col >= self.col && col < self.col_end()
    }

    pub fn fits_in(&self, dims: ImageDims) -> bool {
        self.area() > 0 && self.row_end() <= dims.height && self.col_end() <= dims.width
    }

    /// Interval intersection per axis; `None` when the result is empty.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let row = self.row.max(other.row);
        let col = self.col.max(other.col);
        let row_end = self.row_end().min(other.row_end());
        let col_end = self.col_end().min(other.col_end());
        if row < row_end && col < col_end {
            Some(Rect::new(row, col, row_end - row, col_end - col))
        } else {
            None
        }
    }
}

/// Hard per-pixel class indices with an ignore value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub(crate) dims: ImageDims,
    pub(crate) num_classes: usize,
    pub(crate) ignore_label: u8,
    pub(crate) labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: ImageDims, num_classes: usize, ignore_label: u8, labels: Vec<u8>) -> Result<Self> {
        if num_classes == 0 || num_classes > 255 {
            return Err(Error::Format(format!("num_classes must be in 1..=255, got {num_classes}")));
        }
        if labels.len() != dims.pixels() {
            return Err(Error::DimensionMismatch(format!("label buffer has {} entries for {dims}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != ignore_label && l as usize >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad, num_classes });
        }
        Ok(Self { dims, num_classes, ignore_label, labels })
    }

    pub fn filled(dims: ImageDims, num_classes: usize, ignore_label: u8, value: u8) -> Result<Self> {
        Self::new(dims, num_classes, ignore_label, vec![value; dims.pixels()])
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_label(&self) -> u8 {
        self.ignore_label
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[self.dims.index(row, col)]
    }

    pub fn is_ignore(&self, label: u8) -> bool {
        label == self.ignore_label
    }

    /// Sets a pixel, validating the label against the class range.
    pub fn set(&mut self, row: usize, col: usize, label: u8) -> Result<()> {
        if label != self.ignore_label && label as usize >= self.num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes: self.num_classes });
        }
        let idx = self.dims.index(row, col);
        self.labels[idx] = label;
        Ok(())
    }
}

/// Real-valued per-pixel class scores (`H x W x C`, channel-last).
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsMap {
    pub(crate) dims: ImageDims,
    pub(crate) num_classes: usize,
    pub(crate) values: Vec<f32>,
}

impl LogitsMap {
    pub fn new(dims: ImageDims, num_classes: usize, values: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Format("logits must have at least one channel".into()));
        }
        if values.len() != dims.pixels() * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "logits buffer has {} entries for {dims}x{num_classes}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite logit at flat index {pos}")));
        }
        Ok(Self { dims, num_classes, values })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Channel vector of the pixel at flat index `idx`.
    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.num_classes..(idx + 1) * self.num_classes]
    }

    pub fn softmax(&self) -> ProbMap {
        softmax(self)
    }

    /// Hard prediction; ties resolve to the smaller class index.
    pub fn argmax(&self, ignore_label: u8) -> LabelMap {
        let labels = (0..self.dims.pixels()).map(|i| argmax_index(self.pixel(i)) as u8).collect();
        LabelMap { dims: self.dims, num_classes: self.num_classes, ignore_label, labels }
    }
}

/// Per-pixel class distributions (softmax of a [`LogitsMap`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub(crate) dims: ImageDims,
    pub(crate) num_classes: usize,
    pub(crate) values: Vec<f64>,
}

impl ProbMap {
    /// Builds a probability map, checking every pixel is a distribution.
    pub fn new(dims: ImageDims, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Format("probabilities must have at least one channel".into()));
        }
        if values.len() != dims.pixels() * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "probability buffer has {} entries for {dims}x{num_classes}",
                values.len()
            )));
        }
        for (i, px) in values.chunks_exact(num_classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidValue(format!("pixel {i} is not a probability vector")));
            }
        }
        Ok(Self { dims, num_classes, values })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.num_classes..(idx + 1) * self.num_classes]
    }

    /// Hard prediction; ties resolve to the smaller class index.
    pub fn argmax(&self, ignore_label: u8) -> LabelMap {
        let labels = (0..self.dims.pixels()).map(|i| argmax_index(self.pixel(i)) as u8).collect();
        LabelMap { dims: self.dims, num_classes: self.num_classes, ignore_label, labels }
    }
}

pub(crate) fn argmax_index<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax of one pixel's scores, written into `out`.
pub fn softmax_pixel(logits: &[f32], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = (v as f64 - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &LogitsMap) -> ProbMap {
    let c = logits.num_classes;
    let mut values = vec![0.0; logits.values.len()];
    for (src, dst) in logits.values.chunks_exact(c).zip(values.chunks_exact_mut(c)) {
        softmax_pixel(src, dst);
    }
    ProbMap { dims: logits.dims, num_classes: c, values }
}

/// Binary raster over `{0, 1}`, used for boundary and confidence maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    pub(crate) dims: ImageDims,
    pub(crate) bits: Vec<bool>,
}

/// Boundary rasters are plain binary maps.
pub type BoundaryMap = BinaryMap;

impl BinaryMap {
    pub fn new(dims: ImageDims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.pixels() {
            return Err(Error::DimensionMismatch(format!("binary buffer has {} entries for {dims}", bits.len())));
        }
        Ok(Self { dims, bits })
    }

    pub fn zeros(dims: ImageDims) -> Self {
        Self { dims, bits: vec![false; dims.pixels()] }
    }

    pub fn ones(dims: ImageDims) -> Self {
        Self { dims, bits: vec![true; dims.pixels()] }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[self.dims.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let idx = self.dims.index(row, col);
        self.bits[idx] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Flat indices of set pixels in row-major order.
    pub fn ones_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn and(&self, other: &BinaryMap) -> Result<BinaryMap> {
        self.dims.ensure_same(other.dims, "binary and")?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(BinaryMap { dims: self.dims, bits })
    }

    pub fn and_not(&self, other: &BinaryMap) -> Result<BinaryMap> {
        self.dims.ensure_same(other.dims, "binary and-not")?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Ok(BinaryMap { dims: self.dims, bits })
    }

    pub fn hamming(&self, other: &BinaryMap) -> Result<usize> {
        self.dims.ensure_same(other.dims, "hamming distance")?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    pub fn is_subset_of(&self, other: &BinaryMap) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}
