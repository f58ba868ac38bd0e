//! Fuzzy connectedness consolidation of airway candidates.
//!
//! The strength of a voxel is the best path, over all 26-connected paths from
//! a seed inside the region, of the weakest affinity along the path. Affinity
//! between adjacent voxels is a Gaussian of their intensity difference.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{neighbor_offsets, BinaryMask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    /// Intensity scale of the affinity, in image units.
    pub sigma: f64,
    /// Minimum connectedness for a voxel to be added.
    pub theta: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        // about 6 HU on the 0..255 window scale: wide enough to follow exactly
        // uniform lumen, narrow enough that 30 HU parenchyma noise does not
        // percolate at theta 0.85
        Self { sigma: 1.0, theta: 0.85 }
    }
}

impl AffinityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("affinity sigma {} must be positive", self.sigma)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::invalid(format!("theta {} outside (0, 1]", self.theta)));
        }
        Ok(())
    }
}

#[inline]
fn gaussian_affinity(ia: f32, ib: f32, sigma: f64) -> f64 {
    let d = ia as f64 - ib as f64;
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Affinity of voxels `a` and `b` (each `(z, y, x)`); zero unless they are
/// equal or 26-adjacent.
pub fn affinity(a: [usize; 3], b: [usize; 3], image: &Volume, params: &AffinityParams) -> f64 {
    let adjacent = (0..3).all(|k| a[k].abs_diff(b[k]) <= 1);
    if !adjacent {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    gaussian_affinity(image.get(a[0], a[1], a[2]), image.get(b[0], b[1], b[2]), params.sigma)
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Max-min connectedness of every region voxel to the seed set.
pub fn connectedness_map(
    image: &Volume,
    seeds: &BinaryMask,
    region: &BinaryMask,
    params: &AffinityParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let s = image.shape();
    if seeds.shape() != s || region.shape() != s {
        return Err(Error::invalid("image, seeds and region must share a shape"));
    }
    if seeds.count() == 0 {
        return Err(Error::invalid("fuzzy connectedness needs at least one seed"));
    }
    if !seeds.is_subset_of(region) {
        return Err(Error::invalid("seeds must lie inside the region"));
    }
    let img = image.data();
    let reg = region.data();
    let mut strength = vec![0.0f64; s.len()];
    let mut done = vec![false; s.len()];
    let mut heap = BinaryHeap::new();
    for (i, seed) in seeds.data().iter().enumerate() {
        if *seed {
            strength[i] = 1.0;
            heap.push(Entry(1.0, i));
        }
    }
    let offsets = neighbor_offsets().offsets();
    while let Some(Entry(st, i)) = heap.pop() {
        if done[i] || st < strength[i] {
            continue;
        }
        done[i] = true;
        let (z, y, x) = s.coords(i);
        for d in offsets {
            let Some(j) = s.offset(z, y, x, *d) else { continue };
            if !reg[j] || done[j] {
                continue;
            }
            let cand = st.min(gaussian_affinity(img[i], img[j], params.sigma));
            if cand > strength[j] {
                strength[j] = cand;
                heap.push(Entry(cand, j));
            }
        }
    }
    Ok(strength)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsolidationStatus {
    Grown { added: usize },
    /// No candidate survived the lung mask; nothing to propagate from.
    EmptyCandidates,
}

/// Candidates restricted to the lung field, plus every lung voxel whose
/// connectedness to them reaches `theta`.
pub fn consolidate_candidates(
    candidates: &BinaryMask,
    image: &Volume,
    lungmask: &BinaryMask,
    params: &AffinityParams,
) -> Result<(BinaryMask, ConsolidationStatus)> {
    params.validate()?;
    let s = image.shape();
    if candidates.shape() != s || lungmask.shape() != s {
        return Err(Error::invalid("candidates, image and lung mask must share a shape"));
    }
    let seeds = candidates.and(lungmask)?;
    let n_seeds = seeds.count();
    if n_seeds == 0 {
        log::warn!("fuzzy connectedness skipped: no candidate inside the lung mask");
        return Ok((seeds, ConsolidationStatus::EmptyCandidates));
    }
    let strength = connectedness_map(image, &seeds, lungmask, params)?;
    let out: Vec<bool> = seeds
        .data()
        .iter()
        .zip(&strength)
        .map(|(seed, st)| *seed || *st >= params.theta)
        .collect();
    let mask = BinaryMask::new(s, out)?;
    let added = mask.count() - n_seeds;
    Ok((mask, ConsolidationStatus::Grown { added }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::Shape3;

    fn params(sigma: f64, theta: f64) -> AffinityParams {
        AffinityParams { sigma, theta }
    }

    #[test]
    fn affinity_cases() {
        let s = Shape3::new(1, 1, 4);
        let img = Volume::new(s, [1.0; 3], vec![10.0, 10.0, 18.0, 0.0]).unwrap();
        let p = params(8.0, 0.5);
        assert_eq!(affinity([0, 0, 0], [0, 0, 1], &img, &p), 1.0);
        assert_eq!(affinity([0, 0, 0], [0, 0, 3], &img, &p), 0.0);
        let a = affinity([0, 0, 1], [0, 0, 2], &img, &p);
        assert!((a - (-0.5f64).exp()).abs() < 1e-15);
        assert!((a - 0.6065).abs() < 1e-4);
        assert_eq!(a, affinity([0, 0, 2], [0, 0, 1], &img, &p));
        assert_eq!(affinity([0, 0, 2], [0, 0, 2], &img, &p), 1.0);
    }

    #[test]
    fn chain_takes_weakest_link() {
        // affinities 0.9 then 0.4 along a 1x1x3 chain
        let sigma = 1.0f64;
        let d1 = (-2.0 * 0.9f64.ln()).sqrt() * sigma;
        let d2 = (-2.0 * 0.4f64.ln()).sqrt() * sigma;
        let s = Shape3::new(1, 1, 3);
        let img = Volume::new(s, [1.0; 3], vec![0.0, d1 as f32, (d1 + d2) as f32]).unwrap();
        let seeds = BinaryMask::new(s, vec![true, false, false]).unwrap();
        let region = BinaryMask::from_fn(s, |_, _, _| true);
        let st = connectedness_map(&img, &seeds, &region, &params(sigma, 0.5)).unwrap();
        assert_eq!(st[0], 1.0);
        assert!((st[1] - 0.9).abs() < 1e-6);
        assert!((st[2] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn rejects_empty_seeds() {
        let s = Shape3::new(2, 2, 2);
        let img = Volume::filled(s, 0.0);
        let r = BinaryMask::from_fn(s, |_, _, _| true);
        assert!(connectedness_map(&img, &BinaryMask::zeros(s), &r, &AffinityParams::default()).is_err());
    }

    #[test]
    fn theta_one_does_not_grow_on_varying_image() {
        let s = Shape3::new(3, 3, 3);
        let img = Volume::from_fn(s, |z, y, x| (z * 9 + y * 3 + x) as f32);
        let lung = BinaryMask::from_fn(s, |_, _, _| true);
        let mut cand = BinaryMask::zeros(s);
        cand.set(1, 1, 1, true);
        let (out, status) = consolidate_candidates(&cand, &img, &lung, &params(8.0, 1.0)).unwrap();
        assert_eq!(out, cand);
        assert_eq!(status, ConsolidationStatus::Grown { added: 0 });
    }

    #[test]
    fn uniform_tube_gap_is_filled() {
        let s = Shape3::new(1, 3, 9);
        let img = Volume::from_fn(s, |_, y, _| if y == 1 { 0.0 } else { 200.0 });
        let lung = BinaryMask::from_fn(s, |_, _, _| true);
        let cand = BinaryMask::from_fn(s, |_, y, x| y == 1 && x != 4);
        let (out, _) = consolidate_candidates(&cand, &img, &lung, &AffinityParams::default()).unwrap();
        assert!(out.get(0, 1, 4));
        assert_eq!(out.count(), 9);
    }

    #[test]
    fn candidates_outside_lung_are_removed() {
        let s = Shape3::new(1, 1, 4);
        let img = Volume::new(s, [1.0; 3], vec![0.0, 100.0, 200.0, 0.0]).unwrap();
        let lung = BinaryMask::new(s, vec![true, true, true, false]).unwrap();
        let cand = BinaryMask::new(s, vec![true, false, false, true]).unwrap();
        let (out, _) = consolidate_candidates(&cand, &img, &lung, &AffinityParams::default()).unwrap();
        assert_eq!(out.data(), &[true, false, false, false]);
        assert!(out.is_subset_of(&lung));
    }

    #[test]
    fn empty_candidates_are_a_noop() {
        let s = Shape3::new(2, 2, 2);
        let img = Volume::filled(s, 0.0);
        let lung = BinaryMask::from_fn(s, |_, _, _| true);
        let (out, status) =
            consolidate_candidates(&BinaryMask::zeros(s), &img, &lung, &AffinityParams::default()).unwrap();
        assert_eq!(out.count(), 0);
        assert_eq!(status, ConsolidationStatus::EmptyCandidates);
    }
}
