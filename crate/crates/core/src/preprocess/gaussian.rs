use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::voxel::Volume;

/// Normalized 1-D Gaussian truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `0..n` using the `d c b a | a b c d | d c b a` rule.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - 1 - r;
    }
    r as usize
}

/// Smooths every axial (H, W) slice independently with a truncated 2-D
/// Gaussian; borders are reflected.
pub fn gaussian_smooth_slices(v: &Volume, sigma: f64) -> Result<Volume> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("gaussian sigma {sigma} must be positive")));
    }
    let k = gaussian_kernel_1d(sigma);
    let r = (k.len() / 2) as i64;
    let s = v.shape();
    let plane = s.h * s.w;
    let mut out = vec![0.0f32; s.len()];
    out.par_chunks_mut(plane)
        .zip(v.data().par_chunks(plane))
        .for_each(|(dst, src)| {
            let mut tmp = vec![0.0f64; plane];
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        let xx = reflect(x as i64 + j as i64 - r, s.w);
                        acc += kv * src[y * s.w + xx] as f64;
                    }
                    tmp[y * s.w + x] = acc;
                }
            }
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        let yy = reflect(y as i64 + j as i64 - r, s.h);
                        acc += kv * tmp[yy * s.w + x];
                    }
                    dst[y * s.w + x] = acc as f32;
                }
            }
        });
    Ok(v.map_data(out))
}
