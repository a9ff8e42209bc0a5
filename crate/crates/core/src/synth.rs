//! Seeded synthetic scenes standing in for real model outputs.
//!
//! Ground truth is a background of class 0 with random axis-aligned
//! rectangles painted over it. Instance masks are the 4-connected components
//! of the ground truth, optionally eroded at their contour. TA and student
//! logits are one-hot ground truth with uniform label flips: a flipped pixel
//! votes for a random wrong class while keeping half the score on the true
//! class, and all logits are divided by the temperature.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::mask_contour;
use crate::error::{Error, Result};
use crate::maps::{BinaryMap, ImageDims, LabelMap, LogitsMap, DEFAULT_IGNORE_LABEL};
use crate::rle::InstanceMaskSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Probability that a TA pixel votes for a wrong class.
    pub noise_rate: f64,
    pub temperature: f64,
    /// Probability that a mask contour pixel survives.
    pub fidelity: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 128,
            num_classes: 6,
            min_shapes: 4,
            max_shapes: 10,
            noise_rate: 0.2,
            temperature: 0.5,
            fidelity: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<ImageDims> {
        let dims = ImageDims::new(self.height, self.width)?;
        if !(2..=255).contains(&self.num_classes) {
            return Err(Error::Config(format!("synthetic scenes need 2..=255 classes, got {}", self.num_classes)));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Config("min_shapes exceeds max_shapes".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::Config("noise_rate and fidelity must lie in [0, 1]".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(dims)
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub gt: LabelMap,
    pub masks: InstanceMaskSet,
    /// TA as seen through the horizontal windows.
    pub ta_logits: LogitsMap,
    /// An independently noised TA view for the vertical windows.
    pub ta_logits_v: LogitsMap,
    pub student_logits: LogitsMap,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    let dims = spec.validate()?;
    let gt = ground_truth(spec, dims, &mut stream(spec.seed, 1))?;
    let masks = instance_masks(&gt, spec.fidelity, &mut stream(spec.seed, 2))?;
    let ta_logits = noisy_logits(&gt, spec, &mut stream(spec.seed, 3))?;
    let ta_logits_v = noisy_logits(&gt, spec, &mut stream(spec.seed, 4))?;
    let student_logits = noisy_logits(&gt, spec, &mut stream(spec.seed, 5))?;
    Ok(SynthScene { gt, masks, ta_logits, ta_logits_v, student_logits })
}

fn ground_truth(spec: &SynthSpec, dims: ImageDims, rng: &mut ChaCha8Rng) -> Result<LabelMap> {
    let mut labels = vec![0u8; dims.pixels()];
    let shapes = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let span = |extent: usize| ((extent / 8).max(1), (extent / 3).max(1));
    for _ in 0..shapes {
        let class = rng.gen_range(1..spec.num_classes) as u8;
        let (hmin, hmax) = span(dims.height);
        let (wmin, wmax) = span(dims.width);
        let h = rng.gen_range(hmin..=hmax);
        let w = rng.gen_range(wmin..=wmax);
        let row = rng.gen_range(0..=dims.height - h);
        let col = rng.gen_range(0..=dims.width - w);
        for r in row..row + h {
            labels[dims.index(r, col)..dims.index(r, col) + w].fill(class);
        }
    }
    LabelMap::new(dims, spec.num_classes, DEFAULT_IGNORE_LABEL, labels)
}

/// 4-connected components of equal labels, in row-major order of first pixel.
pub fn connected_components(map: &LabelMap) -> Vec<BinaryMap> {
    let dims = map.dims();
    let mut seen = vec![false; dims.pixels()];
    let mut out = Vec::new();
    for start in 0..dims.pixels() {
        if seen[start] || map.is_ignore(map.labels()[start]) {
            continue;
        }
        let label = map.labels()[start];
        let mut comp = BinaryMap::zeros(dims);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            comp.bits[idx] = true;
            let (r, c) = (idx / dims.width, idx % dims.width);
            let mut visit = |n: usize| {
                if !seen[n] && map.labels()[n] == label {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if r > 0 {
                visit(idx - dims.width);
            }
            if r + 1 < dims.height {
                visit(idx + dims.width);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < dims.width {
                visit(idx + 1);
            }
        }
        out.push(comp);
    }
    out
}

fn instance_masks(gt: &LabelMap, fidelity: f64, rng: &mut ChaCha8Rng) -> Result<InstanceMaskSet> {
    let mut comps = connected_components(gt);
    if fidelity < 1.0 {
        for comp in &mut comps {
            let contour = mask_contour(comp);
            for idx in contour.ones_indices() {
                if rng.gen::<f64>() >= fidelity {
                    comp.bits[idx] = false;
                }
            }
        }
    }
    InstanceMaskSet::from_bitmaps(gt.dims(), &comps)
}

fn noisy_logits(gt: &LabelMap, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<LogitsMap> {
    let c = spec.num_classes;
    let scale = (1.0 / spec.temperature) as f32;
    let mut values = vec![0.0f32; gt.dims().pixels() * c];
    let mut others: Vec<u8> = Vec::with_capacity(c);
    for (idx, &truth) in gt.labels().iter().enumerate() {
        let px = &mut values[idx * c..(idx + 1) * c];
        if rng.gen::<f64>() < spec.noise_rate {
            others.clear();
            others.extend((0..c as u8).filter(|&l| l != truth));
            let wrong = *others.choose(rng).expect("at least two classes");
            px[wrong as usize] = scale;
            px[truth as usize] = 0.5 * scale;
        } else {
            px[truth as usize] = scale;
        }
    }
    LogitsMap::new(gt.dims(), c, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let spec = SynthSpec { seed: 11, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.ta_logits, b.ta_logits);
        assert_eq!(a.student_logits, b.student_logits);
    }

    #[test]
    fn zero_noise_ta_is_ground_truth() {
        let spec = SynthSpec { seed: 3, noise_rate: 0.0, ..Default::default() };
        let s = generate(&spec).unwrap();
        assert_eq!(s.ta_logits.argmax(255), s.gt);
    }

    #[test]
    fn full_fidelity_masks_are_components() {
        let spec = SynthSpec { seed: 5, fidelity: 1.0, noise_rate: 0.2, ..Default::default() };
        let s = generate(&spec).unwrap();
        let comps = connected_components(&s.gt);
        assert_eq!(s.masks.decode_all().unwrap(), comps);
        let covered: usize = s.masks.masks().iter().map(|m| m.area).sum();
        assert_eq!(covered, s.gt.dims().pixels());
    }

    #[test]
    fn degenerate_spec_is_rejected() {
        assert!(generate(&SynthSpec { num_classes: 0, ..Default::default() }).is_err());
        assert!(generate(&SynthSpec { temperature: 0.0, ..Default::default() }).is_err());
    }
}
