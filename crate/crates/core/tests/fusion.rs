mod support;

use panofuse::fusion::{fuse_with, kmeans_area_levels, DecisionPath, FusionVariant, SizeLevel};
use panofuse::rle::InstanceMaskSet;
use panofuse::{BinaryMap, LogitsMap};
use rand::Rng;
use support::{dims, oracle_fuse, oracle_kmeans, random_fusion_instance, rng};

/// Top probability `x` such that `(x, (1-x)/(c-1), ...)` has entropy `h`.
fn peak_for_entropy(h: f64, c: usize) -> f64 {
    let ent = |x: f64| {
        let rest = (1.0 - x) / (c - 1) as f64;
        -(x * x.ln()) - (c - 1) as f64 * if rest > 0.0 { rest * rest.ln() } else { 0.0 }
    };
    let (mut lo, mut hi) = (1.0 / c as f64, 1.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ent(mid) > h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn entropy_path_picks_the_most_certain_candidate() {
    let c = 10;
    let d = dims(4, 5);
    // 8 pixels vote 0, 7 vote 1, 5 vote 2: coverage 40% / 35% / 25%.
    let plan: Vec<(usize, f64)> = [(0, 2.1); 8].into_iter().chain([(1, 0.3); 7]).chain([(2, 1.0); 5]).collect();
    let mut values = Vec::new();
    for &(label, h) in &plan {
        let x = peak_for_entropy(h, c);
        let rest = (1.0 - x) / (c - 1) as f64;
        values.extend((0..c).map(|k| if k == label { x.ln() } else { rest.ln() } as f32));
    }
    let ta = LogitsMap::new(d, c, values).unwrap();
    let masks = InstanceMaskSet::from_bitmaps(d, &[BinaryMap::ones(d)]).unwrap();

    let bundle = fuse_with(&masks, &ta, 255, FusionVariant::FixedTheta(0.7)).unwrap();
    let decision = &bundle.decisions[0];
    assert_eq!(decision.path, DecisionPath::Entropy);
    assert_eq!(decision.label, 1);
    assert!((decision.lcr_top - 0.4).abs() < 1e-12);
    let ents: Vec<f64> = decision.entropy_values.as_ref().unwrap().iter().map(|c| c.entropy).collect();
    for (got, want) in ents.iter().zip([2.1, 0.3, 1.0]) {
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
    assert!(bundle.pseudo_map.labels().iter().all(|&l| l == 1));
    assert_eq!(bundle.confidence.count_ones(), 0);
}

#[test]
fn matches_brute_force_on_random_instances() {
    let mut r = rng(7);
    let mut entropy_paths = 0;
    for case in 0..300 {
        let (masks, ta) = random_fusion_instance(&mut r);
        let variant =
            if r.gen_bool(0.25) { FusionVariant::FixedTheta(r.gen_range(0.05..=1.0)) } else { FusionVariant::Adaptive };
        let got = fuse_with(&masks, &ta, 255, variant).unwrap();
        let want = oracle_fuse(&masks, &ta, variant);
        assert_eq!(got.pseudo_map.labels(), want.labels.as_slice(), "labels, case {case}");
        assert_eq!(got.confidence.bits(), want.confidence.as_slice(), "confidence, case {case}");
        let paths: Vec<_> = got.decisions.iter().map(|d| (d.mask_id, d.label, d.path)).collect();
        assert_eq!(paths, want.decisions, "decisions, case {case}");
        entropy_paths += paths.iter().filter(|p| p.2 == DecisionPath::Entropy).count();
    }
    assert!(entropy_paths > 50, "entropy path barely exercised: {entropy_paths}");
}

#[test]
fn kmeans_matches_exhaustive_partitions() {
    let mut r = rng(11);
    for _ in 0..300 {
        let n = r.gen_range(1..=12);
        let hi = if r.gen_bool(0.5) { 8 } else { 5000 };
        let areas: Vec<u64> = (0..n).map(|_| r.gen_range(1..=hi)).collect();
        let input: Vec<(u32, usize)> = areas.iter().enumerate().map(|(i, &a)| (i as u32, a as usize)).collect();
        let levels = kmeans_area_levels(&input).unwrap();
        let got: Vec<SizeLevel> = (0..n as u32).map(|i| levels.level_of(i).unwrap()).collect();
        assert_eq!(got, oracle_kmeans(&areas), "areas {areas:?}");
    }
}

#[test]
fn unanimous_masks_copy_the_ta_argmax() {
    let d = dims(6, 6);
    let labels: Vec<u8> = (0..36).map(|i| if i % 6 < 3 { 0 } else { 2 }).collect();
    let values = labels.iter().flat_map(|&l| (0..3).map(move |k| if k == l as usize { 4.0f32 } else { 0.0 })).collect();
    let ta = LogitsMap::new(d, 3, values).unwrap();
    let left = BinaryMap::new(d, (0..36).map(|i| i % 6 < 3).collect()).unwrap();
    let right = BinaryMap::new(d, (0..36).map(|i| i % 6 >= 3).collect()).unwrap();
    let masks = InstanceMaskSet::from_bitmaps(d, &[left, right]).unwrap();
    let bundle = fuse_with(&masks, &ta, 255, FusionVariant::Adaptive).unwrap();
    assert_eq!(bundle.pseudo_map.labels(), labels.as_slice());
    assert_eq!(bundle.confidence.count_ones(), 36);
}
