//! Sliding-window tiles over the lung bounding box: planning, training
//! sample extraction and overlap-averaged stitching of predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connectivity::{encode_connectivity, ConnectivityCube, CubeKind};
use crate::error::{Error, Result};
use crate::voxel::{BinaryMask, BoundingBox, Shape3, Volume, CHANNELS};

/// Number of auxiliary input channels: three normalized coordinates and the
/// normalized lung distance.
pub const AUX_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub cube: [usize; 3],
    pub stride: [usize; 3],
}

impl TileSpec {
    pub fn new(cube: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let spec = Self { cube, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if self.cube[k] == 0 || self.stride[k] == 0 || self.stride[k] > self.cube[k] {
                return Err(Error::invalid(format!(
                    "tile spec needs 0 < stride <= cube per axis, got cube {:?} stride {:?}",
                    self.cube, self.stride
                )));
            }
        }
        Ok(())
    }

    pub fn cube_shape(&self) -> Shape3 {
        Shape3::new(self.cube[0], self.cube[1], self.cube[2])
    }
}

/// Tile origins along one axis covering `[lo, hi)` of an axis of length `len`.
fn plan_axis(lo: usize, hi: usize, len: usize, cube: usize, stride: usize) -> Result<Vec<usize>> {
    if cube > len {
        return Err(Error::invalid(format!("tile size {cube} exceeds volume extent {len}")));
    }
    if hi - lo <= cube {
        return Ok(vec![lo.min(len - cube)]);
    }
    let mut out = Vec::new();
    let mut o = lo;
    while o + cube < hi {
        out.push(o);
        o += stride;
    }
    let last = hi - cube;
    if out.last() != Some(&last) {
        out.push(last);
    }
    Ok(out)
}

/// Grid of tile origins over `bbox`, Z-major then H then W. The last tile on
/// each axis is pulled back so it ends exactly at the box edge.
pub fn plan_tiles(volume: Shape3, bbox: &BoundingBox, spec: &TileSpec) -> Result<Vec<[usize; 3]>> {
    spec.validate()?;
    if bbox.is_empty() {
        return Err(Error::invalid("cannot tile an empty bounding box"));
    }
    let dims = volume.as_array();
    if (0..3).any(|k| bbox.hi[k] > dims[k]) {
        return Err(Error::invalid(format!("bounding box {bbox:?} exceeds volume {volume}")));
    }
    let axes: Vec<Vec<usize>> = (0..3)
        .map(|k| plan_axis(bbox.lo[k], bbox.hi[k], dims[k], spec.cube[k], spec.stride[k]))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &z in &axes[0] {
        for &y in &axes[1] {
            for &x in &axes[2] {
                out.push([z, y, x]);
            }
        }
    }
    Ok(out)
}

pub fn crop_volume(v: &Volume, origin: [usize; 3], size: Shape3) -> Volume {
    Volume::from_fn(size, |z, y, x| v.get(origin[0] + z, origin[1] + y, origin[2] + x))
        .with_spacing(v.spacing())
        .expect("spacing already validated")
}

pub fn crop_mask(m: &BinaryMask, origin: [usize; 3], size: Shape3) -> BinaryMask {
    BinaryMask::from_fn(size, |z, y, x| m.get(origin[0] + z, origin[1] + y, origin[2] + x))
}

/// Global context channels for the network: normalized coordinates over the
/// lung box and the distance map scaled by its maximum.
#[derive(Debug, Clone)]
pub struct AuxContext {
    bbox: BoundingBox,
    distance: Volume,
    distance_max: f32,
}

impl AuxContext {
    pub fn new(bbox: BoundingBox, distance: Volume) -> Self {
        let distance_max = distance.data().iter().copied().fold(0.0f32, f32::max);
        Self {
            bbox,
            distance,
            distance_max,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    fn coord(&self, axis: usize, g: usize) -> f32 {
        let lo = self.bbox.lo[axis] as f32;
        let span = (self.bbox.hi[axis] - self.bbox.lo[axis]).saturating_sub(1) as f32;
        if span == 0.0 {
            0.0
        } else {
            ((g as f32 - lo) / span).clamp(0.0, 1.0)
        }
    }

    /// `4 × z × h × w` channels for the tile at `origin`.
    pub fn tile(&self, origin: [usize; 3], size: Shape3) -> Vec<f32> {
        let n = size.len();
        let mut out = vec![0.0f32; AUX_CHANNELS * n];
        for z in 0..size.z {
            for y in 0..size.h {
                for x in 0..size.w {
                    let i = size.index(z, y, x);
                    let g = [origin[0] + z, origin[1] + y, origin[2] + x];
                    out[i] = self.coord(0, g[0]);
                    out[n + i] = self.coord(1, g[1]);
                    out[2 * n + i] = self.coord(2, g[2]);
                    out[3 * n + i] = if self.distance_max > 0.0 {
                        self.distance.get(g[0], g[1], g[2]) / self.distance_max
                    } else {
                        0.0
                    };
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub origin: [usize; 3],
    pub image: Volume,
    pub mask: BinaryMask,
    pub label: ConnectivityCube,
    /// `4 × z × h × w`: z, y, x coordinates then distance.
    pub aux: Vec<f32>,
}

fn flip_w<T: Copy>(data: &mut [T], s: Shape3) {
    for row in data.chunks_mut(s.w) {
        row.reverse();
    }
}

impl Sample {
    /// Mirrors the sample along W. Image, mask and context channels are
    /// flipped and the label is re-encoded from the flipped mask.
    pub fn flipped_w(&self) -> Sample {
        let s = self.image.shape();
        let mut image = self.image.clone();
        flip_w(image.data_mut(), s);
        let mut mask = self.mask.clone();
        flip_w(mask.data_mut(), s);
        let mut aux = self.aux.clone();
        flip_w(&mut aux, s);
        let label = encode_connectivity(&mask);
        Sample {
            origin: self.origin,
            image,
            mask,
            label,
            aux,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    /// Probability of keeping a tile that contains no airway voxel.
    pub bg_keep_prob: f64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self { bg_keep_prob: 0.25 }
    }
}

/// Lazily crops training samples from the planned tiles. Airway tiles are
/// always emitted; airway-free tiles survive with `bg_keep_prob`.
pub struct SampleStream<'a> {
    image: &'a Volume,
    airway: &'a BinaryMask,
    aux: AuxContext,
    origins: std::vec::IntoIter<[usize; 3]>,
    size: Shape3,
    policy: SamplingPolicy,
    rng: ChaCha8Rng,
}

impl Iterator for SampleStream<'_> {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        for origin in self.origins.by_ref() {
            let mask = crop_mask(self.airway, origin, self.size);
            let keep = mask.count() > 0 || self.rng.random_bool(self.policy.bg_keep_prob);
            if !keep {
                continue;
            }
            let label = encode_connectivity(&mask);
            return Some(Sample {
                origin,
                image: crop_volume(self.image, origin, self.size),
                mask,
                label,
                aux: self.aux.tile(origin, self.size),
            });
        }
        None
    }
}

/// `image` is the windowed CT, `distance` the lung distance map.
pub fn sample_training_cubes<'a>(
    image: &'a Volume,
    airway: &'a BinaryMask,
    lungmask: &BinaryMask,
    distance: &Volume,
    spec: &TileSpec,
    policy: SamplingPolicy,
    seed: u64,
) -> Result<SampleStream<'a>> {
    let s = image.shape();
    if airway.shape() != s || lungmask.shape() != s || distance.shape() != s {
        return Err(Error::invalid("image, airway, lung mask and distance map must share a shape"));
    }
    if !(0.0..=1.0).contains(&policy.bg_keep_prob) {
        return Err(Error::invalid(format!("bg keep probability {} outside [0, 1]", policy.bg_keep_prob)));
    }
    let bbox = lungmask
        .bounding_box()
        .ok_or_else(|| Error::invalid("lung mask is empty"))?;
    let origins = plan_tiles(s, &bbox, spec)?;
    Ok(SampleStream {
        image,
        airway,
        aux: AuxContext::new(bbox, distance.clone()),
        origins: origins.into_iter(),
        size: spec.cube_shape(),
        policy,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

/// A `channels × Z × H × W` grid of per-voxel predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    pub channels: usize,
    pub shape: Shape3,
    pub data: Vec<f32>,
}

impl ChannelGrid {
    pub fn new(channels: usize, shape: Shape3, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * shape.len() {
            return Err(Error::invalid(format!(
                "grid needs {} values for {channels}x{shape}, got {}",
                channels * shape.len(),
                data.len()
            )));
        }
        Ok(Self { channels, shape, data })
    }

    pub fn into_cube(self) -> Result<ConnectivityCube> {
        if self.channels != CHANNELS {
            return Err(Error::invalid(format!("expected 26 channels, got {}", self.channels)));
        }
        ConnectivityCube::new(self.shape, CubeKind::Probability, self.data)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Per-voxel mean over all tiles covering each voxel; voxels outside every
/// tile are 0. Every voxel of `coverage` must be covered.
pub fn stitch_predictions(
    tiles: &[([usize; 3], ChannelGrid)],
    full: Shape3,
    coverage: &BoundingBox,
) -> Result<ChannelGrid> {
    let channels = tiles.first().map_or(CHANNELS, |t| t.1.channels);
    let n = full.len();
    let mut sum = vec![0.0f64; channels * n];
    let mut count = vec![0u32; n];
    // fixed accumulation order regardless of how the tiles were produced
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by_key(|i| tiles[*i].0);
    for i in order {
        let (origin, grid) = &tiles[i];
        if grid.channels != channels {
            return Err(Error::invalid("tiles disagree on channel count"));
        }
        let t = grid.shape;
        if origin[0] + t.z > full.z || origin[1] + t.h > full.h || origin[2] + t.w > full.w {
            return Err(Error::invalid(format!("tile at {origin:?} of size {t} leaves the volume {full}")));
        }
        let tn = t.len();
        for z in 0..t.z {
            for y in 0..t.h {
                let src = t.index(z, y, 0);
                let dst = full.index(origin[0] + z, origin[1] + y, origin[2]);
                for x in 0..t.w {
                    count[dst + x] += 1;
                }
                for c in 0..channels {
                    let s_row = &grid.data[c * tn + src..c * tn + src + t.w];
                    let d_row = &mut sum[c * n + dst..c * n + dst + t.w];
                    for (d, v) in d_row.iter_mut().zip(s_row) {
                        *d += *v as f64;
                    }
                }
            }
        }
    }
    for z in coverage.lo[0]..coverage.hi[0] {
        for y in coverage.lo[1]..coverage.hi[1] {
            for x in coverage.lo[2]..coverage.hi[2] {
                if count[full.index(z, y, x)] == 0 {
                    return Err(Error::invalid(format!("voxel ({z}, {y}, {x}) is not covered by any tile")));
                }
            }
        }
    }
    let mut data = vec![0.0f32; channels * n];
    for c in 0..channels {
        for i in 0..n {
            if count[i] > 0 {
                data[c * n + i] = (sum[c * n + i] / count[i] as f64) as f32;
            }
        }
    }
    ChannelGrid::new(channels, full, data)
}
