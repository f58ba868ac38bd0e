//! Connectivity labels: encoding a mask into 26 neighbor channels and
//! decoding (possibly soft) channel predictions back into a mask.
//!
//! Channel `i` at voxel `P` is set when both `P` and its `i`-th neighbor are
//! foreground. Every link is therefore recorded twice, once from each end, in
//! complementary channels. Decoding keeps a link only when both records agree.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::voxel::{neighbor_offsets, BinaryMask, Shape3, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeKind {
    Label,
    Probability,
}

/// A `26 × Z × H × W` grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityCube {
    shape: Shape3,
    kind: CubeKind,
    data: Vec<f32>,
}

impl ConnectivityCube {
    pub fn new(shape: Shape3, kind: CubeKind, data: Vec<f32>) -> Result<Self> {
        if data.len() != CHANNELS * shape.len() {
            return Err(Error::invalid(format!(
                "connectivity cube needs {} values for 26x{shape}, got {}",
                CHANNELS * shape.len(),
                data.len()
            )));
        }
        match kind {
            CubeKind::Label => {
                if let Some(v) = data.iter().find(|v| **v != 0.0 && **v != 1.0) {
                    return Err(Error::invalid(format!("label cube value {v} is not 0 or 1")));
                }
            }
            CubeKind::Probability => {
                if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
                }
            }
        }
        Ok(Self { shape, kind, data })
    }

    pub fn zeros(shape: Shape3, kind: CubeKind) -> Self {
        Self {
            shape,
            kind,
            data: vec![0.0; CHANNELS * shape.len()],
        }
    }

    pub fn filled(shape: Shape3, value: f32) -> Result<Self> {
        Self::new(shape, CubeKind::Probability, vec![value; CHANNELS * shape.len()])
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// 0-indexed channel slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, idx: usize) -> f32 {
        self.data[c * self.shape.len() + idx]
    }

    /// Reinterprets a probability cube as labels if it only holds 0 and 1.
    pub fn into_kind(self, kind: CubeKind) -> Result<Self> {
        Self::new(self.shape, kind, self.data)
    }
}

pub fn encode_connectivity(mask: &BinaryMask) -> ConnectivityCube {
    let s = mask.shape();
    let n = s.len();
    let offsets = neighbor_offsets().offsets();
    let m = mask.data();
    let mut data = vec![0.0f32; CHANNELS * n];
    data.par_chunks_mut(n).enumerate().for_each(|(c, plane)| {
        let d = offsets[c];
        for (idx, out) in plane.iter_mut().enumerate() {
            if !m[idx] {
                continue;
            }
            let (z, y, x) = s.coords(idx);
            if s.offset(z, y, x, d).is_some_and(|j| m[j]) {
                *out = 1.0;
            }
        }
    });
    ConnectivityCube {
        shape: s,
        kind: CubeKind::Label,
        data,
    }
}

/// Clears every link whose complementary record at the neighbor is missing.
pub fn pairwise_agreement_filter(cube: &ConnectivityCube) -> Result<ConnectivityCube> {
    if cube.kind != CubeKind::Label {
        return Err(Error::invalid(
            "pairwise agreement needs a hard-label cube; binarize first",
        ));
    }
    Ok(agreement(cube.shape, |c, i| cube.get(c, i) == 1.0))
}

fn agreement(s: Shape3, set: impl Fn(usize, usize) -> bool + Sync) -> ConnectivityCube {
    let n = s.len();
    let offsets = neighbor_offsets().offsets();
    let mut data = vec![0.0f32; CHANNELS * n];
    data.par_chunks_mut(n).enumerate().for_each(|(c, plane)| {
        let d = offsets[c];
        let comp = CHANNELS - 1 - c;
        for (idx, out) in plane.iter_mut().enumerate() {
            if !set(c, idx) {
                continue;
            }
            let (z, y, x) = s.coords(idx);
            if s.offset(z, y, x, d).is_some_and(|j| set(comp, j)) {
                *out = 1.0;
            }
        }
    });
    ConnectivityCube {
        shape: s,
        kind: CubeKind::Label,
        data,
    }
}

/// Binarizes at `threshold` (values `>= threshold` are links), applies
/// pairwise agreement and marks every voxel with at least one surviving link.
pub fn decode_connectivity(cube: &ConnectivityCube, threshold: f32) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let s = cube.shape;
    let filtered = agreement(s, |c, i| cube.get(c, i) >= threshold);
    let n = s.len();
    let out = (0..n)
        .into_par_iter()
        .map(|i| (0..CHANNELS).any(|c| filtered.data[c * n + i] != 0.0))
        .collect();
    BinaryMask::new(s, out)
}
