//! Class-agnostic instance masks with COCO-style uncompressed run-length
//! encoding: counts are column-major and alternate zero-runs and one-runs,
//! starting with a (possibly empty) zero-run.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{BinaryMap, ImageDims, Rect};

/// Run-length counts of a binary raster in column-major order.
pub fn encode_rle(bitmap: &BinaryMap) -> Vec<u32> {
    let dims = bitmap.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for col in 0..dims.width {
        for row in 0..dims.height {
            let bit = bitmap.get(row, col);
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn decode_rle(counts: &[u32], dims: ImageDims) -> Result<BinaryMap> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != dims.pixels() as u64 {
        return Err(Error::Format(format!("rle counts sum to {total}, expected {} for {dims}", dims.pixels())));
    }
    let mut bits = vec![false; dims.pixels()];
    let mut pos = 0usize;
    for (i, &count) in counts.iter().enumerate() {
        let value = i % 2 == 1;
        for k in pos..pos + count as usize {
            if value {
                let (col, row) = (k / dims.height, k % dims.height);
                bits[dims.index(row, col)] = true;
            }
        }
        pos += count as usize;
    }
    BinaryMap::new(dims, bits)
}

fn ones_in(counts: &[u32]) -> usize {
    counts.iter().skip(1).step_by(2).map(|&c| c as usize).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub id: u32,
    pub area: usize,
    pub rle: Vec<u32>,
}

impl InstanceMask {
    /// Encodes a non-empty bitmap.
    pub fn from_bitmap(id: u32, bitmap: &BinaryMap) -> Result<Self> {
        let rle = encode_rle(bitmap);
        let area = ones_in(&rle);
        if area == 0 {
            return Err(Error::EmptyInput("instance mask has no pixels"));
        }
        Ok(Self { id, area, rle })
    }

    pub fn decode(&self, dims: ImageDims) -> Result<BinaryMap> {
        decode_rle(&self.rle, dims)
    }

    fn validate(&self, dims: ImageDims) -> Result<()> {
        let total: u64 = self.rle.iter().map(|&c| c as u64).sum();
        if total != dims.pixels() as u64 {
            return Err(Error::Format(format!(
                "mask {}: rle counts sum to {total}, expected {}",
                self.id,
                dims.pixels()
            )));
        }
        let ones = ones_in(&self.rle);
        if ones != self.area {
            return Err(Error::Format(format!(
                "mask {}: declared area {} but rle covers {ones} pixels",
                self.id, self.area
            )));
        }
        if ones == 0 {
            return Err(Error::Format(format!("mask {} is empty", self.id)));
        }
        Ok(())
    }
}

/// A set of possibly overlapping instance masks over one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskSetFile", into = "MaskSetFile")]
pub struct InstanceMaskSet {
    dims: ImageDims,
    masks: Vec<InstanceMask>,
}

#[derive(Serialize, Deserialize)]
struct MaskSetFile {
    height: usize,
    width: usize,
    masks: Vec<InstanceMask>,
}

impl TryFrom<MaskSetFile> for InstanceMaskSet {
    type Error = Error;

    fn try_from(file: MaskSetFile) -> Result<Self> {
        InstanceMaskSet::new(ImageDims::new(file.height, file.width)?, file.masks)
    }
}

impl From<InstanceMaskSet> for MaskSetFile {
    fn from(set: InstanceMaskSet) -> Self {
        MaskSetFile { height: set.dims.height, width: set.dims.width, masks: set.masks }
    }
}

impl InstanceMaskSet {
    pub fn new(dims: ImageDims, masks: Vec<InstanceMask>) -> Result<Self> {
        let mut seen = HashSet::new();
        for mask in &masks {
            mask.validate(dims)?;
            if !seen.insert(mask.id) {
                return Err(Error::Format(format!("duplicate mask id {}", mask.id)));
            }
        }
        Ok(Self { dims, masks })
    }

    pub fn empty(dims: ImageDims) -> Self {
        Self { dims, masks: Vec::new() }
    }

    /// Builds a set from bitmaps, assigning ids `0..n` and dropping empty ones.
    pub fn from_bitmaps(dims: ImageDims, bitmaps: &[BinaryMap]) -> Result<Self> {
        let mut masks = Vec::new();
        for (i, bm) in bitmaps.iter().enumerate() {
            dims.ensure_same(bm.dims(), "instance bitmap")?;
            if bm.count_ones() > 0 {
                masks.push(InstanceMask::from_bitmap(i as u32, bm)?);
            }
        }
        Self::new(dims, masks)
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn masks(&self) -> &[InstanceMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Decodes every mask, in set order.
    pub fn decode_all(&self) -> Result<Vec<BinaryMap>> {
        self.masks.iter().map(|m| m.decode(self.dims)).collect()
    }

    /// Restricts every mask to `rect`; masks with no pixel inside are dropped.
    /// Surviving masks keep their ids.
    pub fn crop(&self, rect: Rect) -> Result<Self> {
        use crate::window::Raster;
        let mut masks = Vec::new();
        for mask in &self.masks {
            let cropped = mask.decode(self.dims)?.crop(rect)?;
            if cropped.count_ones() > 0 {
                masks.push(InstanceMask::from_bitmap(mask.id, &cropped)?);
            }
        }
        Ok(Self { dims: rect.dims(), masks })
    }
}
