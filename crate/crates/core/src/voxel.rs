//! Grid types shared by every stage and the fixed 26-neighbor scheme.
//!
//! All grids are stored densely in (Z, H, W) order with W varying fastest.
//! Neighbor channels are 1-indexed in the public API (`1..=26`) to match the
//! usual channel numbering of connectivity labels; internal tables are
//! 0-indexed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of neighbor directions in a 3×3×3 window.
pub const CHANNELS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub z: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(z: usize, h: usize, w: usize) -> Self {
        Self { z, h, w }
    }

    pub fn len(&self) -> usize {
        self.z * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.w;
        let y = (idx / self.w) % self.h;
        let z = idx / (self.w * self.h);
        (z, y, x)
    }

    /// Index of `(z, y, x) + delta`, or `None` when it falls outside the grid.
    #[inline]
    pub fn offset(&self, z: usize, y: usize, x: usize, delta: [i32; 3]) -> Option<usize> {
        let nz = z as i64 + delta[0] as i64;
        let ny = y as i64 + delta[1] as i64;
        let nx = x as i64 + delta[2] as i64;
        if nz < 0 || ny < 0 || nx < 0 {
            return None;
        }
        let (nz, ny, nx) = (nz as usize, ny as usize, nx as usize);
        if nz >= self.z || ny >= self.h || nx >= self.w {
            return None;
        }
        Some(self.index(nz, ny, nx))
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.z, self.h, self.w]
    }

    fn check_positive(&self) -> Result<()> {
        if self.z == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::invalid(format!("shape {self:?} has a zero extent")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.h, self.w)
    }
}

/// Dense scalar grid: CT intensities, probabilities or distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape3,
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: Shape3, spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        shape.check_positive()?;
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "volume data length {} does not match shape {shape} ({})",
                data.len(),
                shape.len()
            )));
        }
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing {spacing:?} must be positive")));
        }
        Ok(Self { shape, spacing, data })
    }

    pub fn filled(shape: Shape3, value: f32) -> Self {
        Self {
            shape,
            spacing: [1.0; 3],
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for z in 0..shape.z {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    data.push(f(z, y, x));
                }
            }
        }
        Self {
            shape,
            spacing: [1.0; 3],
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("spacing {spacing:?} must be positive")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.index(z, y, x)]
    }

    /// Same geometry, new values.
    pub(crate) fn map_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape,
            spacing: self.spacing,
            data,
        }
    }
}

/// Dense boolean grid (airway or lung masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Shape3,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: Shape3, data: Vec<bool>) -> Result<Self> {
        shape.check_positive()?;
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "mask data length {} does not match shape {shape} ({})",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a mask from `u8` values, rejecting anything other than 0 or 1.
    pub fn from_u8(shape: Shape3, values: &[u8]) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| **v > 1) {
            return Err(Error::invalid(format!("mask value {bad} is not 0 or 1")));
        }
        Self::new(shape, values.iter().map(|v| *v == 1).collect())
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![false; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for z in 0..shape.z {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.shape.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: bool) {
        let i = self.shape.index(z, y, x);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| u8::from(*v)).collect()
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "mask shapes differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(BinaryMask {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Voxels of the mask that have at least one 26-neighbor in the mask.
    pub fn with_neighbor(&self) -> BinaryMask {
        let scheme = neighbor_offsets();
        let s = self.shape;
        BinaryMask::from_fn(s, |z, y, x| {
            self.get(z, y, x)
                && scheme
                    .offsets()
                    .iter()
                    .any(|d| s.offset(z, y, x, *d).is_some_and(|j| self.data[j]))
        })
    }

    /// Inclusive-exclusive bounding box of set voxels, `None` when empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let s = self.shape;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, v) in self.data.iter().enumerate() {
            if *v {
                any = true;
                let (z, y, x) = s.coords(i);
                for (k, c) in [z, y, x].into_iter().enumerate() {
                    lo[k] = lo[k].min(c);
                    hi[k] = hi[k].max(c + 1);
                }
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }
}

/// Axis-aligned box `[lo, hi)` in (Z, H, W) voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn full(shape: Shape3) -> Self {
        Self {
            lo: [0; 3],
            hi: shape.as_array(),
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.hi[0].saturating_sub(self.lo[0]),
            self.hi[1].saturating_sub(self.lo[1]),
            self.hi[2].saturating_sub(self.lo[2]),
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.extent().contains(&0)
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] < self.hi[k])
    }
}

/// The ordered table of the 26 neighbor offsets `(dz, dy, dx)`.
///
/// Offsets are sorted lexicographically with `-1 < 0 < 1`, so channel `i`
/// and channel `27 - i` always point in opposite directions; channels 13 and
/// 14 are the `(0, 0, -1)` / `(0, 0, +1)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborScheme {
    offsets: [[i32; 3]; CHANNELS],
}

impl NeighborScheme {
    /// 0-indexed offset table.
    pub fn offsets(&self) -> &[[i32; 3]; CHANNELS] {
        &self.offsets
    }

    /// Offset of 1-indexed channel `i`.
    pub fn offset(&self, i: usize) -> Result<[i32; 3]> {
        check_channel(i)?;
        Ok(self.offsets[i - 1])
    }
}

const fn build_offsets() -> [[i32; 3]; CHANNELS] {
    let mut out = [[0i32; 3]; CHANNELS];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dz == 0 && dy == 0 && dx == 0) {
                    out[n] = [dz, dy, dx];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
}

static SCHEME: NeighborScheme = NeighborScheme {
    offsets: build_offsets(),
};

pub fn neighbor_offsets() -> &'static NeighborScheme {
    &SCHEME
}

fn check_channel(i: usize) -> Result<()> {
    if !(1..=CHANNELS).contains(&i) {
        return Err(Error::invalid(format!("channel index {i} outside 1..=26")));
    }
    Ok(())
}

/// Channel whose offset is the negation of channel `i` (both 1-indexed).
pub fn complement_index(i: usize) -> Result<usize> {
    check_channel(i)?;
    Ok(CHANNELS + 1 - i)
}

/// `out[p] = mask[p + offset(i)]`, reading zero outside the grid.
pub fn shifted_lookup(mask: &BinaryMask, i: usize) -> Result<BinaryMask> {
    let d = neighbor_offsets().offset(i)?;
    let s = mask.shape();
    Ok(BinaryMask::from_fn(s, |z, y, x| {
        s.offset(z, y, x, d).is_some_and(|j| mask.data()[j])
    }))
}
