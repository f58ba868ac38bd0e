//! Exact Euclidean distance transform (separable lower-envelope method).
//!
//! Everything outside the grid counts as background, so each 1-D pass sees a
//! virtual zero sample just before and just after the line.

use rayon::prelude::*;

use crate::voxel::{BinaryMask, Shape3, Volume};

/// Squared distances (voxel units) from each mask voxel to the nearest
/// non-mask voxel; 0 outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    shape: Shape3,
    squared: Vec<u32>,
}

impl DistanceMap {
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn squared(&self) -> &[u32] {
        &self.squared
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        (self.squared[self.shape.index(z, y, x)] as f64).sqrt()
    }

    pub fn max(&self) -> f64 {
        (self.squared.iter().copied().max().unwrap_or(0) as f64).sqrt()
    }

    pub fn to_volume(&self) -> Volume {
        let data = self.squared.iter().map(|d| (*d as f64).sqrt() as f32).collect();
        Volume::new(self.shape, [1.0; 3], data).expect("distance map shape is valid")
    }
}

/// Lower envelope of parabolas rooted at `positions` with heights `f`.
/// `out[q] = min_i (q - positions[i])^2 + f[i]` for `q in 0..n`.
fn envelope_1d(positions: &[f64], f: &[f64], n: usize, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let m = positions.len();
    let mut first = None;
    for i in 0..m {
        if f[i].is_finite() {
            first = Some(i);
            break;
        }
    }
    let Some(first) = first else {
        out[..n].iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v.push(first);
    z.push(f64::NEG_INFINITY);
    z.push(f64::INFINITY);
    for q in first + 1..m {
        if !f[q].is_finite() {
            continue;
        }
        let pq = positions[q];
        loop {
            let r = v[v.len() - 1];
            let pr = positions[r];
            let s = ((f[q] + pq * pq) - (f[r] + pr * pr)) / (2.0 * (pq - pr));
            // z[0] is -inf, so the envelope never empties
            if s <= z[z.len() - 2] {
                v.pop();
                z.pop();
            } else {
                let last = z.len() - 1;
                z[last] = s;
                v.push(q);
                z.push(f64::INFINITY);
                break;
            }
        }
    }
    let mut k = 0;
    for (q, o) in out[..n].iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = positions[v[k]];
        *o = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Runs one separable pass along the axis with the given stride/length,
/// in place over `grid`, treating positions -1 and `len` as background.
fn pass(grid: &mut [f64], shape: Shape3, axis: usize) {
    let dims = shape.as_array();
    let len = dims[axis];
    let strides = [shape.h * shape.w, shape.w, 1];
    let stride = strides[axis];
    let mut starts = Vec::with_capacity(shape.len() / len);
    for i in 0..shape.len() {
        let c = [i / strides[0], (i / strides[1]) % shape.h, i % shape.w];
        if c[axis] == 0 {
            starts.push(i);
        }
    }
    let lines: Vec<(usize, Vec<f64>)> = starts
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
            |(pos, f, v, z), &start| {
                pos.clear();
                f.clear();
                pos.push(-1.0);
                f.push(0.0);
                for k in 0..len {
                    pos.push(k as f64);
                    f.push(grid[start + k * stride]);
                }
                pos.push(len as f64);
                f.push(0.0);
                let mut out = vec![0.0; len];
                envelope_1d(pos, f, len, &mut out, v, z);
                (start, out)
            },
        )
        .collect();
    for (start, out) in lines {
        for (k, val) in out.into_iter().enumerate() {
            grid[start + k * stride] = val;
        }
    }
}

pub fn distance_transform(m: &BinaryMask) -> DistanceMap {
    let s = m.shape();
    let mut grid: Vec<f64> = m
        .data()
        .iter()
        .map(|v| if *v { f64::INFINITY } else { 0.0 })
        .collect();
    for axis in [2, 1, 0] {
        pass(&mut grid, s, axis);
    }
    let squared = grid.iter().map(|d| d.round() as u32).collect();
    DistanceMap { shape: s, squared }
}
