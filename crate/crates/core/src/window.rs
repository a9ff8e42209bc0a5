//! Sliding-window planning over equirectangular images.
//!
//! Horizontal windows sweep left to right and vertical windows sweep top to
//! bottom, both with a stride equal to the window size. When a size does not
//! divide the image, the last window along that axis is clamped flush to the
//! image edge and therefore overlaps its predecessor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{BinaryMap, ImageDims, LabelMap, LogitsMap, ProbMap, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Window extent as `height x width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSize {
    pub height: usize,
    pub width: usize,
}

impl WindowSize {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl std::str::FromStr for WindowSize {
    type Err = Error;

    /// Parses `HxW`, e.g. `400x256`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| Error::Config(format!("expected HxW, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad size component {v:?} in {s:?}")))
        };
        Ok(Self::new(parse(h)?, parse(w)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub id: usize,
    pub orientation: Orientation,
    pub rect: Rect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub dims: ImageDims,
    pub horizontal: Vec<Window>,
    pub vertical: Vec<Window>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRegion {
    pub horiz_id: usize,
    pub vert_id: usize,
    pub rect: Rect,
}

/// Origins along one axis: stride = size, last origin clamped to `extent - size`.
fn axis_origins(extent: usize, size: usize) -> Vec<usize> {
    let count = extent.div_ceil(size);
    (0..count).map(|i| (i * size).min(extent - size)).collect()
}

fn tile(dims: ImageDims, size: WindowSize, orientation: Orientation, first_id: usize) -> Result<Vec<Window>> {
    if size.height == 0 || size.width == 0 || size.height > dims.height || size.width > dims.width {
        return Err(Error::WindowTooLarge {
            window_h: size.height,
            window_w: size.width,
            image_h: dims.height,
            image_w: dims.width,
        });
    }
    let rows = axis_origins(dims.height, size.height);
    let cols = axis_origins(dims.width, size.width);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            out.push(Window {
                id: first_id + out.len(),
                orientation,
                rect: Rect::new(row, col, size.height, size.width),
            });
        }
    }
    Ok(out)
}

/// Plans horizontal and vertical windows, row-major within each orientation.
///
/// Ids are assigned horizontal first, then vertical, so they are unique
/// across the whole plan.
pub fn plan_windows(dims: ImageDims, h_size: WindowSize, v_size: WindowSize) -> Result<WindowPlan> {
    let horizontal = tile(dims, h_size, Orientation::Horizontal, 0)?;
    let vertical = tile(dims, v_size, Orientation::Vertical, horizontal.len())?;
    Ok(WindowPlan { dims, horizontal, vertical })
}

/// Intersection of one horizontal and one vertical window, if non-empty.
pub fn overlap_of(horizontal: &Window, vertical: &Window) -> Option<OverlapRegion> {
    horizontal.rect.intersect(&vertical.rect).map(|rect| OverlapRegion {
        horiz_id: horizontal.id,
        vert_id: vertical.id,
        rect,
    })
}

/// All non-empty (horizontal, vertical) intersections, horizontal-major.
pub fn overlap_regions(plan: &WindowPlan) -> Vec<OverlapRegion> {
    plan.horizontal.iter().flat_map(|h| plan.vertical.iter().filter_map(move |v| overlap_of(h, v))).collect()
}

fn crop_buffer<T: Copy>(data: &[T], dims: ImageDims, channels: usize, rect: Rect) -> Result<Vec<T>> {
    if !rect.fits_in(dims) {
        return Err(Error::DimensionMismatch(format!("window {:?} lies outside image {dims}", rect)));
    }
    let mut out = Vec::with_capacity(rect.area() * channels);
    for row in rect.row..rect.row_end() {
        let start = dims.index(row, rect.col) * channels;
        out.extend_from_slice(&data[start..start + rect.width * channels]);
    }
    Ok(out)
}

/// A raster that can be restricted to a window and re-assembled from windows.
pub trait Raster: Sized {
    fn dims(&self) -> ImageDims;

    /// Restriction of the raster to `rect`.
    fn crop(&self, rect: Rect) -> Result<Self>;

    /// Assembles a whole-image raster from per-window parts given in plan
    /// order. Every pixel must be covered by at least one part.
    fn stitch(parts: &[(Rect, Self)], dims: ImageDims) -> Result<Self>;
}

fn check_parts<T: Raster>(parts: &[(Rect, T)], dims: ImageDims) -> Result<()> {
    if parts.is_empty() {
        return Err(Error::EmptyInput("no windows to stitch"));
    }
    for (rect, part) in parts {
        if !rect.fits_in(dims) {
            return Err(Error::DimensionMismatch(format!("window {rect:?} outside image {dims}")));
        }
        rect.dims().ensure_same(part.dims(), "stitched part")?;
    }
    Ok(())
}

/// Later-wins stitching for single-channel rasters.
fn stitch_last_wins<T: Copy + Default>(
    parts: impl Iterator<Item = (Rect, impl AsRef<[T]>)>,
    dims: ImageDims,
) -> Result<Vec<T>> {
    let mut out = vec![T::default(); dims.pixels()];
    let mut covered = vec![false; dims.pixels()];
    for (rect, data) in parts {
        let data = data.as_ref();
        for r in 0..rect.height {
            let dst = dims.index(rect.row + r, rect.col);
            out[dst..dst + rect.width].copy_from_slice(&data[r * rect.width..(r + 1) * rect.width]);
            covered[dst..dst + rect.width].fill(true);
        }
    }
    ensure_covered(&covered, dims)?;
    Ok(out)
}

fn ensure_covered(covered: &[bool], dims: ImageDims) -> Result<()> {
    match covered.iter().position(|&c| !c) {
        Some(i) => Err(Error::Uncovered { row: i / dims.width, col: i % dims.width }),
        None => Ok(()),
    }
}

impl Raster for LabelMap {
    fn dims(&self) -> ImageDims {
        self.dims
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        Ok(LabelMap {
            dims: rect.dims(),
            num_classes: self.num_classes,
            ignore_label: self.ignore_label,
            labels: crop_buffer(&self.labels, self.dims, 1, rect)?,
        })
    }

    fn stitch(parts: &[(Rect, Self)], dims: ImageDims) -> Result<Self> {
        check_parts(parts, dims)?;
        let first = &parts[0].1;
        if parts.iter().any(|(_, p)| p.num_classes != first.num_classes || p.ignore_label != first.ignore_label) {
            return Err(Error::DimensionMismatch("stitched label maps disagree on classes".into()));
        }
        let labels = stitch_last_wins(parts.iter().map(|(r, p)| (*r, &p.labels)), dims)?;
        Ok(LabelMap { dims, num_classes: first.num_classes, ignore_label: first.ignore_label, labels })
    }
}

impl Raster for BinaryMap {
    fn dims(&self) -> ImageDims {
        self.dims
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        Ok(BinaryMap { dims: rect.dims(), bits: crop_buffer(&self.bits, self.dims, 1, rect)? })
    }

    fn stitch(parts: &[(Rect, Self)], dims: ImageDims) -> Result<Self> {
        check_parts(parts, dims)?;
        let bits = stitch_last_wins(parts.iter().map(|(r, p)| (*r, &p.bits)), dims)?;
        Ok(BinaryMap { dims, bits })
    }
}

/// Mean-combining stitch for multi-channel rasters.
fn stitch_mean<'a>(
    parts: impl Iterator<Item = (Rect, &'a [f64])>,
    dims: ImageDims,
    channels: usize,
) -> Result<Vec<f64>> {
    let mut sum = vec![0.0f64; dims.pixels() * channels];
    let mut hits = vec![0u32; dims.pixels()];
    for (rect, data) in parts {
        for r in 0..rect.height {
            for c in 0..rect.width {
                let dst = dims.index(rect.row + r, rect.col + c);
                let src = (r * rect.width + c) * channels;
                hits[dst] += 1;
                for k in 0..channels {
                    sum[dst * channels + k] += data[src + k];
                }
            }
        }
    }
    let covered: Vec<bool> = hits.iter().map(|&h| h > 0).collect();
    ensure_covered(&covered, dims)?;
    for (i, &h) in hits.iter().enumerate() {
        if h > 1 {
            for v in &mut sum[i * channels..(i + 1) * channels] {
                *v /= h as f64;
            }
        }
    }
    Ok(sum)
}

fn check_channels(counts: impl Iterator<Item = usize>) -> Result<usize> {
    let mut counts = counts.peekable();
    let first = *counts.peek().ok_or(Error::EmptyInput("no windows to stitch"))?;
    if counts.any(|c| c != first) {
        return Err(Error::DimensionMismatch("stitched parts disagree on channel count".into()));
    }
    Ok(first)
}

impl Raster for LogitsMap {
    fn dims(&self) -> ImageDims {
        self.dims
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        Ok(LogitsMap {
            dims: rect.dims(),
            num_classes: self.num_classes,
            values: crop_buffer(&self.values, self.dims, self.num_classes, rect)?,
        })
    }

    fn stitch(parts: &[(Rect, Self)], dims: ImageDims) -> Result<Self> {
        check_parts(parts, dims)?;
        let channels = check_channels(parts.iter().map(|(_, p)| p.num_classes))?;
        let wide: Vec<Vec<f64>> = parts.iter().map(|(_, p)| p.values.iter().map(|&v| v as f64).collect()).collect();
        let mean = stitch_mean(parts.iter().zip(&wide).map(|((r, _), w)| (*r, w.as_slice())), dims, channels)?;
        LogitsMap::new(dims, channels, mean.into_iter().map(|v| v as f32).collect())
    }
}

impl Raster for ProbMap {
    fn dims(&self) -> ImageDims {
        self.dims
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        Ok(ProbMap {
            dims: rect.dims(),
            num_classes: self.num_classes,
            values: crop_buffer(&self.values, self.dims, self.num_classes, rect)?,
        })
    }

    fn stitch(parts: &[(Rect, Self)], dims: ImageDims) -> Result<Self> {
        check_parts(parts, dims)?;
        let channels = check_channels(parts.iter().map(|(_, p)| p.num_classes))?;
        let values = stitch_mean(parts.iter().map(|(r, p)| (*r, p.values.as_slice())), dims, channels)?;
        Ok(ProbMap { dims, num_classes: channels, values })
    }
}

/// Stitches per-window rasters in the given order.
pub fn stitch<T: Raster + Clone>(per_window: &[(Window, T)], dims: ImageDims) -> Result<T> {
    let parts: Vec<(Rect, T)> = per_window.iter().map(|(w, m)| (w.rect, m.clone())).collect();
    T::stitch(&parts, dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(h: usize, w: usize) -> ImageDims {
        ImageDims::new(h, w).unwrap()
    }

    #[test]
    fn default_plan_on_densepass_resolution() {
        let plan = plan_windows(dims(400, 2048), WindowSize::new(400, 256), WindowSize::new(200, 512)).unwrap();
        assert_eq!(plan.horizontal.len(), 8);
        assert_eq!(plan.vertical.len(), 8);
        assert_eq!(plan.vertical[4].rect, Rect::new(200, 0, 200, 512));
        assert_eq!(plan.vertical[4].id, 12);
    }

    #[test]
    fn full_image_window_is_a_single_window() {
        let plan = plan_windows(dims(400, 2048), WindowSize::new(400, 2048), WindowSize::new(400, 2048)).unwrap();
        assert_eq!(plan.horizontal.len(), 1);
        assert_eq!(plan.horizontal[0].rect, Rect::new(0, 0, 400, 2048));
        let regions = overlap_regions(&plan);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].rect, Rect::new(0, 0, 400, 2048));
    }

    #[test]
    fn non_divisible_width_clamps_last_window() {
        let plan = plan_windows(dims(400, 2000), WindowSize::new(400, 256), WindowSize::new(200, 500)).unwrap();
        let cols: Vec<usize> = plan.horizontal.iter().map(|w| w.rect.col).collect();
        assert_eq!(cols, vec![0, 256, 512, 768, 1024, 1280, 1536, 1744]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let err = plan_windows(dims(100, 100), WindowSize::new(101, 10), WindowSize::new(10, 10)).unwrap_err();
        assert!(matches!(err, Error::WindowTooLarge { .. }));
    }

    #[test]
    fn disjoint_windows_produce_no_overlap() {
        let h = Window { id: 0, orientation: Orientation::Horizontal, rect: Rect::new(0, 0, 2, 2) };
        let v = Window { id: 1, orientation: Orientation::Vertical, rect: Rect::new(2, 2, 2, 2) };
        assert_eq!(overlap_of(&h, &v), None);
    }

    #[test]
    fn crop_identity_map() {
        let d = dims(4, 4);
        let map = LabelMap::new(d, 16, 255, (0..16).collect()).unwrap();
        let top_left = map.crop(Rect::new(0, 0, 2, 2)).unwrap();
        assert_eq!(top_left.labels(), &[0, 1, 4, 5]);
        assert_eq!(map.crop(Rect::full(d)).unwrap(), map);
        assert!(map.crop(Rect::new(3, 3, 2, 2)).is_err());
    }

    #[test]
    fn stitch_of_crops_is_identity() {
        let d = dims(3, 16);
        let map = LabelMap::new(d, 5, 255, (0..48).map(|i| (i % 5) as u8).collect()).unwrap();
        let plan = plan_windows(d, WindowSize::new(3, 2), WindowSize::new(3, 16)).unwrap();
        let parts: Vec<(Window, LabelMap)> = plan.horizontal.iter().map(|w| (*w, map.crop(w.rect).unwrap())).collect();
        assert_eq!(parts.len(), 8);
        assert_eq!(stitch(&parts, d).unwrap(), map);
    }

    #[test]
    fn clamped_label_overlap_takes_later_window() {
        let d = dims(1, 3);
        let a = LabelMap::filled(dims(1, 2), 6, 255, 3).unwrap();
        let b = LabelMap::filled(dims(1, 2), 6, 255, 5).unwrap();
        let out = LabelMap::stitch(&[(Rect::new(0, 0, 1, 2), a), (Rect::new(0, 1, 1, 2), b)], d).unwrap();
        assert_eq!(out.labels(), &[3, 5, 5]);
    }

    #[test]
    fn clamped_logits_overlap_takes_mean() {
        let d = dims(1, 3);
        let a = LogitsMap::new(dims(1, 2), 1, vec![0.2, 0.2]).unwrap();
        let b = LogitsMap::new(dims(1, 2), 1, vec![0.6, 0.6]).unwrap();
        let out = LogitsMap::stitch(&[(Rect::new(0, 0, 1, 2), a), (Rect::new(0, 1, 1, 2), b)], d).unwrap();
        assert_eq!(out.values()[0], 0.2);
        assert!((out.values()[1] - 0.4).abs() < 1e-7);
        assert_eq!(out.values()[2], 0.6);
    }

    #[test]
    fn uncovered_pixel_is_reported() {
        let d = dims(1, 3);
        let a = LabelMap::filled(dims(1, 2), 6, 255, 3).unwrap();
        let err = LabelMap::stitch(&[(Rect::new(0, 0, 1, 2), a)], d).unwrap_err();
        assert!(matches!(err, Error::Uncovered { row: 0, col: 2 }));
    }

    #[test]
    fn window_size_parses() {
        assert_eq!("400x256".parse::<WindowSize>().unwrap(), WindowSize::new(400, 256));
        assert!("400-256".parse::<WindowSize>().is_err());
    }
}
