//! Reference implementations used as oracles by the integration tests.
//!
//! Everything here is written directly from the algorithm descriptions and
//! deliberately avoids calling the library routines it is compared against.

#![allow(dead_code)]

use std::collections::BTreeSet;

use panofuse::fusion::SizeLevel;
use panofuse::fusion::{DecisionPath, FusionVariant};
use panofuse::rle::InstanceMaskSet;
use panofuse::{BinaryMap, ImageDims, LabelMap, LogitsMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dims(h: usize, w: usize) -> ImageDims {
    ImageDims::new(h, w).unwrap()
}

// ---------------------------------------------------------------- k-means

/// SSE of one group as an exact fraction `(num, den)`, computed as
/// `sum((n*x - s)^2) / n^2`.
fn group_sse(group: &[u64]) -> (i128, i128) {
    let n = group.len() as i128;
    let s: i128 = group.iter().map(|&x| x as i128).sum();
    let num: i128 = group.iter().map(|&x| (n * x as i128 - s).pow(2)).sum();
    (num, n * n)
}

fn total_sse(groups: &[&[u64]]) -> (i128, i128) {
    groups.iter().fold((0, 1), |(an, ad), g| {
        let (gn, gd) = group_sse(g);
        let num = an * gd + gn * ad;
        let den = ad * gd;
        let g = gcd(num, den);
        (num / g, den / g)
    })
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Exhaustive search over contiguous partitions of the sorted list into
/// `k = min(3, #distinct)` groups, never cutting between equal values.
/// Ties keep the earliest cut positions. Returns a level per input element.
pub fn oracle_kmeans(areas: &[u64]) -> Vec<SizeLevel> {
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by_key(|&i| areas[i]);
    let sorted: Vec<u64> = order.iter().map(|&i| areas[i]).collect();
    let n = sorted.len();
    let k = sorted.iter().collect::<BTreeSet<_>>().len().min(3);
    let valid_cut = |c: usize| c > 0 && c < n && sorted[c - 1] != sorted[c];

    let mut partitions: Vec<Vec<usize>> = Vec::new();
    match k {
        1 => partitions.push(vec![]),
        2 => partitions.extend((1..n).filter(|&c| valid_cut(c)).map(|c| vec![c])),
        _ => {
            for a in (1..n).filter(|&c| valid_cut(c)) {
                for b in (a + 1..n).filter(|&c| valid_cut(c)) {
                    partitions.push(vec![a, b]);
                }
            }
        }
    }

    let mut best: Option<(Vec<usize>, (i128, i128))> = None;
    for cuts in partitions {
        let mut bounds = vec![0];
        bounds.extend(&cuts);
        bounds.push(n);
        let groups: Vec<&[u64]> = bounds.windows(2).map(|w| &sorted[w[0]..w[1]]).collect();
        let sse = total_sse(&groups);
        let better = match &best {
            None => true,
            Some((_, b)) => sse.0 * b.1 < b.0 * sse.1,
        };
        if better {
            best = Some((cuts, sse));
        }
    }
    let cuts = best.unwrap().0;

    let mut levels = vec![SizeLevel::Large; n];
    for (pos, &orig) in order.iter().enumerate() {
        let group = cuts.iter().filter(|&&c| pos >= c).count();
        let from_top = k - 1 - group;
        levels[orig] = [SizeLevel::Large, SizeLevel::Medium, SizeLevel::Small][from_top];
    }
    levels
}

// ----------------------------------------------------------------- fusion

pub struct OracleFusion {
    pub labels: Vec<u8>,
    pub confidence: Vec<bool>,
    /// `(mask id, label, path)` in input mask order.
    pub decisions: Vec<(u32, u8, DecisionPath)>,
}

fn probs_of(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().map(|&v| v as f64).fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn first_max(p: &[f64]) -> usize {
    let m = p.iter().cloned().fold(f64::MIN, f64::max);
    p.iter().position(|&v| v == m).unwrap()
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().map(|&q| if q > 0.0 { -q * q.ln() } else { 0.0 }).sum()
}

/// Brute-force transliteration of the fusion algorithm.
pub fn oracle_fuse(masks: &InstanceMaskSet, ta: &LogitsMap, variant: FusionVariant) -> OracleFusion {
    let d = ta.dims();
    let c = ta.num_classes();
    let probs: Vec<Vec<f64>> = (0..d.pixels()).map(|i| probs_of(&ta.values()[i * c..(i + 1) * c])).collect();
    let argmax: Vec<u8> = probs.iter().map(|p| first_max(p) as u8).collect();

    struct M {
        id: u32,
        area: usize,
        pixels: Vec<usize>,
        ranked: Vec<(u8, usize)>,
        lcr: f64,
    }
    let mut ms = Vec::new();
    for (mask, bitmap) in masks.masks().iter().zip(masks.decode_all().unwrap()) {
        let pixels: Vec<usize> = (0..d.pixels()).filter(|&i| bitmap.bits()[i]).collect();
        let mut counts = vec![0usize; c];
        for &i in &pixels {
            counts[argmax[i] as usize] += 1;
        }
        let mut ranked: Vec<(u8, usize)> = (0..c).filter(|&l| counts[l] > 0).map(|l| (l as u8, counts[l])).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        if ranked.is_empty() {
            continue;
        }
        let lcr = ranked[0].1 as f64 / pixels.len() as f64;
        ms.push(M { id: mask.id, area: mask.area, pixels, ranked, lcr });
    }

    let levels =
        if ms.is_empty() { Vec::new() } else { oracle_kmeans(&ms.iter().map(|m| m.area as u64).collect::<Vec<_>>()) };
    let theta_of = |level: SizeLevel| {
        let members: Vec<f64> = ms.iter().zip(&levels).filter(|(_, &l)| l == level).map(|(m, _)| m.lcr).collect();
        members.iter().sum::<f64>() / members.len() as f64
    };

    let mut decisions = Vec::new();
    for (m, &level) in ms.iter().zip(&levels) {
        let theta = match variant {
            FusionVariant::Adaptive => theta_of(level),
            FusionVariant::FixedTheta(t) => t,
        };
        if m.lcr >= theta - 1e-12 {
            decisions.push((m.id, m.ranked[0].0, DecisionPath::DirectLcr));
            continue;
        }
        let ents: Vec<(u8, f64)> = m
            .ranked
            .iter()
            .take(3)
            .map(|&(label, _)| {
                let sel: Vec<f64> =
                    m.pixels.iter().filter(|&&i| argmax[i] == label).map(|&i| entropy(&probs[i])).collect();
                (label, sel.iter().sum::<f64>() / sel.len() as f64)
            })
            .collect();
        let lowest = ents.iter().map(|e| e.1).fold(f64::MAX, f64::min);
        let chosen = ents.iter().find(|e| e.1 <= lowest + 1e-12).unwrap().0;
        decisions.push((m.id, chosen, DecisionPath::Entropy));
    }

    let mut labels = argmax.clone();
    let mut confidence = vec![false; d.pixels()];
    let mut order: Vec<usize> = (0..ms.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(ms[i].area), ms[i].id));
    for i in order {
        for &p in &ms[i].pixels {
            labels[p] = decisions[i].1;
            confidence[p] = decisions[i].2 == DecisionPath::DirectLcr;
        }
    }
    OracleFusion { labels, confidence, decisions }
}

/// Random fusion instance: up to 16x16, 2..=5 classes, up to 6 masks.
pub fn random_fusion_instance(r: &mut ChaCha8Rng) -> (InstanceMaskSet, LogitsMap) {
    let d = dims(r.gen_range(1..=16), r.gen_range(1..=16));
    let c = r.gen_range(2..=5);
    // A few dominant regions so masks see skewed histograms.
    let base: Vec<usize> = (0..d.pixels()).map(|i| (i * c / d.pixels().max(1) + i % 2) % c).collect();
    let values: Vec<f32> = (0..d.pixels())
        .flat_map(|i| {
            let b = base[i];
            (0..c)
                .map(|k| r.gen_range(-2.0f32..2.0) + if k == b { r.gen_range(0.0f32..3.0) } else { 0.0 })
                .collect::<Vec<_>>()
        })
        .collect();
    let ta = LogitsMap::new(d, c, values).unwrap();

    let n = r.gen_range(0..=6);
    let mut bitmaps = Vec::new();
    for _ in 0..n {
        let h = r.gen_range(1..=d.height);
        let w = r.gen_range(1..=d.width);
        let r0 = r.gen_range(0..=d.height - h);
        let c0 = r.gen_range(0..=d.width - w);
        let holes = r.gen_bool(0.3);
        let bits = (0..d.pixels())
            .map(|i| {
                let (y, x) = (i / d.width, i % d.width);
                y >= r0 && y < r0 + h && x >= c0 && x < c0 + w && !(holes && r.gen_bool(0.2))
            })
            .collect();
        bitmaps.push(BinaryMap::new(d, bits).unwrap());
    }
    (InstanceMaskSet::from_bitmaps(d, &bitmaps).unwrap(), ta)
}

// ------------------------------------------------------------------- mIoU

/// Per-class `|gt ∩ pred| / |gt ∪ pred|` from pixel index sets; classes with
/// an empty union are skipped.
pub fn oracle_miou(gt: &LabelMap, pred: &LabelMap) -> Option<f64> {
    let ignore = gt.ignore_label();
    let valid: Vec<usize> = (0..gt.labels().len()).filter(|&i| gt.labels()[i] != ignore).collect();
    let mut ious = Vec::new();
    for class in 0..gt.num_classes() as u8 {
        let g: BTreeSet<usize> = valid.iter().copied().filter(|&i| gt.labels()[i] == class).collect();
        let p: BTreeSet<usize> = valid.iter().copied().filter(|&i| pred.labels()[i] == class).collect();
        let union = g.union(&p).count();
        if union > 0 {
            ious.push(g.intersection(&p).count() as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

// ---------------------------------------------------------------- windows

/// Pixel sets of windows placed by hand: stride = size, last one flush.
pub fn brute_windows(extent_h: usize, extent_w: usize, h: usize, w: usize) -> Vec<BTreeSet<(usize, usize)>> {
    let starts = |extent: usize, size: usize| {
        let mut v = Vec::new();
        let mut s = 0;
        loop {
            if s + size >= extent {
                v.push(extent - size);
                break;
            }
            v.push(s);
            s += size;
        }
        v
    };
    let mut out = Vec::new();
    for &r in &starts(extent_h, h) {
        for &c in &starts(extent_w, w) {
            out.push((r..r + h).flat_map(|y| (c..c + w).map(move |x| (y, x))).collect());
        }
    }
    out
}
