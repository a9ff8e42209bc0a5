//! Size levels for instance masks via exact one-dimensional k-means.
//!
//! In one dimension an optimal k-means clustering is a partition of the
//! sorted values into contiguous runs, and equal values never need to be
//! split. We enumerate cut points over the distinct areas with prefix sums
//! and compare within-cluster SSE exactly as rationals, so the result is the
//! global optimum rather than a Lloyd local minimum. Among equally good
//! partitions the one with the lexicographically smallest cuts wins.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeLevel {
    Large,
    Medium,
    Small,
}

impl SizeLevel {
    pub const ALL: [SizeLevel; 3] = [SizeLevel::Large, SizeLevel::Medium, SizeLevel::Small];
}

/// Mask id to size level.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeLevels {
    pub assignment: BTreeMap<u32, SizeLevel>,
}

impl SizeLevels {
    pub fn level_of(&self, mask_id: u32) -> Option<SizeLevel> {
        self.assignment.get(&mask_id).copied()
    }

    pub fn members(&self, level: SizeLevel) -> impl Iterator<Item = u32> + '_ {
        self.assignment.iter().filter(move |(_, &l)| l == level).map(|(&id, _)| id)
    }
}

/// Prefix sums over the distinct sorted values, weighted by multiplicity.
struct Prefix {
    count: Vec<u128>,
    sum: Vec<u128>,
    sumsq: Vec<u128>,
}

impl Prefix {
    fn new(distinct: &[(u128, u128)]) -> Self {
        let mut p = Prefix { count: vec![0], sum: vec![0], sumsq: vec![0] };
        for &(value, mult) in distinct {
            p.count.push(p.count.last().unwrap() + mult);
            p.sum.push(p.sum.last().unwrap() + value * mult);
            p.sumsq.push(p.sumsq.last().unwrap() + value * value * mult);
        }
        p
    }

    /// SSE of distinct values `[a, b)` as the fraction `num / den`.
    fn cost(&self, a: usize, b: usize) -> Fraction {
        let n = self.count[b] - self.count[a];
        let s = self.sum[b] - self.sum[a];
        let sq = self.sumsq[b] - self.sumsq[a];
        Fraction { num: n * sq - s * s, den: n }
    }
}

#[derive(Clone, Copy, Debug)]
struct Fraction {
    num: u128,
    den: u128,
}

impl Fraction {
    fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Exact comparison of two sums of fractions, falling back to floating point
/// only if the cross products overflow 128 bits.
fn compare_sums(a: &[Fraction], b: &[Fraction]) -> Ordering {
    fn exact(parts: &[Fraction]) -> Option<(u128, u128)> {
        parts.iter().try_fold((0u128, 1u128), |(num, den), f| {
            let n = num.checked_mul(f.den)?.checked_add(f.num.checked_mul(den)?)?;
            Some((n, den.checked_mul(f.den)?))
        })
    }
    if let (Some((an, ad)), Some((bn, bd))) = (exact(a), exact(b)) {
        if let (Some(l), Some(r)) = (an.checked_mul(bd), bn.checked_mul(ad)) {
            return l.cmp(&r);
        }
    }
    let fa: f64 = a.iter().map(|f| f.as_f64()).sum();
    let fb: f64 = b.iter().map(|f| f.as_f64()).sum();
    fa.total_cmp(&fb)
}

/// Optimal contiguous partition of `distinct` into `k` runs; returns the
/// start index of every run after the first.
fn best_cuts(distinct: &[(u128, u128)], k: usize) -> Vec<usize> {
    let d = distinct.len();
    let prefix = Prefix::new(distinct);
    match k {
        1 => Vec::new(),
        2 => {
            let mut best: Option<(usize, [Fraction; 2])> = None;
            for c in 1..d {
                let cost = [prefix.cost(0, c), prefix.cost(c, d)];
                if best.as_ref().is_none_or(|(_, b)| compare_sums(&cost, b) == Ordering::Less) {
                    best = Some((c, cost));
                }
            }
            vec![best.unwrap().0]
        }
        _ => {
            let mut best: Option<((usize, usize), [Fraction; 3])> = None;
            for c1 in 1..d - 1 {
                for c2 in c1 + 1..d {
                    let cost = [prefix.cost(0, c1), prefix.cost(c1, c2), prefix.cost(c2, d)];
                    if best.as_ref().is_none_or(|(_, b)| compare_sums(&cost, b) == Ordering::Less) {
                        best = Some(((c1, c2), cost));
                    }
                }
            }
            let (c1, c2) = best.unwrap().0;
            vec![c1, c2]
        }
    }
}

/// Clusters mask areas into Large/Medium/Small with `k = min(3, #distinct)`.
///
/// Clusters are ranked by centroid, largest first; with fewer than three
/// clusters the lower levels stay empty (one cluster is Large, two are
/// Large and Medium).
pub fn kmeans_area_levels(areas: &[(u32, usize)]) -> Result<SizeLevels> {
    if areas.is_empty() {
        return Err(Error::EmptyInput("k-means needs at least one mask area"));
    }
    let mut values: BTreeMap<usize, u128> = BTreeMap::new();
    for &(_, area) in areas {
        *values.entry(area).or_default() += 1;
    }
    let distinct: Vec<(u128, u128)> = values.iter().map(|(&v, &m)| (v as u128, m)).collect();
    let k = distinct.len().min(3);
    let cuts = best_cuts(&distinct, k);

    // Rank of each distinct value's cluster counted from the top.
    let cluster_of = |idx: usize| cuts.iter().filter(|&&c| idx >= c).count();
    let mut level_by_area = BTreeMap::new();
    for (idx, &area) in values.keys().enumerate() {
        let from_top = k - 1 - cluster_of(idx);
        level_by_area.insert(area, SizeLevel::ALL[from_top]);
    }

    let assignment = areas.iter().map(|&(id, area)| (id, level_by_area[&area])).collect();
    Ok(SizeLevels { assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels_of(areas: &[usize]) -> Vec<SizeLevel> {
        let input: Vec<(u32, usize)> = areas.iter().enumerate().map(|(i, &a)| (i as u32, a)).collect();
        let levels = kmeans_area_levels(&input).unwrap();
        (0..areas.len()).map(|i| levels.level_of(i as u32).unwrap()).collect()
    }

    #[test]
    fn three_well_separated_groups() {
        use SizeLevel::*;
        assert_eq!(levels_of(&[1000, 980, 500, 490, 10, 8]), vec![Large, Large, Medium, Medium, Small, Small]);
    }

    #[test]
    fn single_mask_is_large() {
        assert_eq!(levels_of(&[42]), vec![SizeLevel::Large]);
    }

    #[test]
    fn equal_areas_share_one_level() {
        assert_eq!(levels_of(&[7, 7, 7, 7]), vec![SizeLevel::Large; 4]);
    }

    #[test]
    fn two_distinct_areas_fill_large_and_medium() {
        assert_eq!(levels_of(&[5, 50, 5]), vec![SizeLevel::Medium, SizeLevel::Large, SizeLevel::Medium]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(kmeans_area_levels(&[]).is_err());
    }

    #[test]
    fn ties_resolve_to_smallest_cuts() {
        // {1},{2},{3,4} / {1},{2,3},{4} / {1,2},{3},{4} all have SSE 0.5.
        use SizeLevel::*;
        assert_eq!(levels_of(&[1, 2, 3, 4]), vec![Small, Medium, Large, Large]);
    }
}
