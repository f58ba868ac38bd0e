//! CT preprocessing: lung field extraction, distance map and intensity
//! windowing.

mod components;
mod edt;
mod gaussian;
mod hull;

pub use components::{connected_components_3d, Components};
pub use edt::{distance_transform, DistanceMap};
pub use gaussian::{gaussian_kernel_1d, gaussian_smooth_slices};
pub use hull::{convex_hull, convex_hull_repair_slice, filled_hull, Slice2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{BinaryMask, Volume};

/// Intensity window mapped linearly onto `[out_lo, out_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub lo: f32,
    pub hi: f32,
    pub out_lo: f32,
    pub out_hi: f32,
}

impl Default for HuWindow {
    fn default() -> Self {
        Self {
            lo: -1000.0,
            hi: 600.0,
            out_lo: 0.0,
            out_hi: 255.0,
        }
    }
}

impl HuWindow {
    pub fn new(lo: f32, hi: f32) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("window [{lo}, {hi}] is empty")));
        }
        Ok(Self { lo, hi, ..Self::default() })
    }

    #[inline]
    pub fn apply(&self, v: f32) -> f32 {
        let c = v.clamp(self.lo, self.hi);
        let t = (c as f64 - self.lo as f64) / (self.hi as f64 - self.lo as f64);
        (self.out_lo as f64 + t * (self.out_hi as f64 - self.out_lo as f64)) as f32
    }
}

pub fn clip_normalize(ct: &Volume, w: &HuWindow) -> Result<Volume> {
    if !(w.lo < w.hi) {
        return Err(Error::invalid(format!("window [{}, {}] is empty", w.lo, w.hi)));
    }
    Ok(ct.map_data(ct.data().iter().map(|v| w.apply(*v)).collect()))
}

/// Air mask: `v < thr`.
pub fn threshold_binarize(v: &Volume, thr: f32) -> BinaryMask {
    BinaryMask::new(v.shape(), v.data().iter().map(|x| *x < thr).collect())
        .expect("volume shape is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungParams {
    pub sigma: f64,
    pub threshold: f32,
    pub hull_ratio: f64,
    /// Components smaller than this fraction of the volume are dropped.
    pub min_fraction: f64,
}

impl Default for LungParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            threshold: -600.0,
            hull_ratio: 1.5,
            min_fraction: 0.001,
        }
    }
}

fn touches_axial_border(c: &Components, label: u32) -> bool {
    let s = c.shape;
    c.labels.iter().enumerate().any(|(i, l)| {
        if *l != label {
            return false;
        }
        let (_, y, x) = s.coords(i);
        y == 0 || x == 0 || y + 1 == s.h || x + 1 == s.w
    })
}

/// Applies [`convex_hull_repair_slice`] to every axial slice of `m`.
pub fn hull_repair_volume(m: &BinaryMask, ratio: f64) -> BinaryMask {
    let s = m.shape();
    let plane = s.h * s.w;
    let mut out = Vec::with_capacity(s.len());
    for z in 0..s.z {
        let slice = Slice2::new(s.h, s.w, m.data()[z * plane..(z + 1) * plane].to_vec());
        out.extend(convex_hull_repair_slice(&slice, ratio).data);
    }
    BinaryMask::new(s, out).expect("slice-wise repair keeps the shape")
}

/// Smooth, threshold, drop exterior and tiny air components, keep the two
/// largest, repair each slice by its convex hull and return their union.
pub fn extract_lung_mask(ct: &Volume, p: &LungParams) -> Result<BinaryMask> {
    let smoothed = gaussian_smooth_slices(ct, p.sigma)?;
    let air = threshold_binarize(&smoothed, p.threshold);
    let comps = connected_components_3d(&air);
    let min_size = (p.min_fraction * ct.shape().len() as f64).ceil() as usize;
    let mut candidates: Vec<(usize, u32)> = comps
        .sizes
        .iter()
        .enumerate()
        .map(|(k, size)| (*size, k as u32 + 1))
        .filter(|(size, label)| *size >= min_size.max(1) && !touches_axial_border(&comps, *label))
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyResult(
            "no enclosed air component below the lung threshold".into(),
        ));
    }
    // larger first; ties broken by scan order
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut lungs = BinaryMask::zeros(ct.shape());
    for (_, label) in candidates.iter().take(2) {
        let repaired = hull_repair_volume(&comps.mask_of(*label), p.hull_ratio);
        lungs = lungs.or(&repaired)?;
    }
    Ok(lungs)
}
