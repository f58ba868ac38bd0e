//! Layer primitives with hand-written adjoints: same-padded convolution,
//! batch normalization, ReLU, 2×2×2 max pooling and ×2 linear upsampling.

use rayon::prelude::*;

use super::tensor::{Scalar, Tensor};
use crate::voxel::Shape3;

/// Kernel taps of a `k × k × k` convolution as `(dz, dy, dx)`, row-major.
fn taps(k: usize) -> Vec<[isize; 3]> {
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(k * k * k);
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                out.push([dz, dy, dx]);
            }
        }
    }
    out
}

/// Valid output range `[lo, hi)` along an axis of length `n` for shift `d`.
#[inline]
fn valid(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(lo as isize) as usize;
    (lo, hi)
}

/// Patch matrix of one sample: row `ci * taps + t`, column = voxel.
fn im2col<T: Scalar>(x: &[T], c: usize, s: Shape3, k: usize, cols: &mut [T]) {
    let p = s.len();
    let taps = taps(k);
    let nt = taps.len();
    cols.par_chunks_mut(p).enumerate().for_each(|(row, dst)| {
        let (ci, t) = (row / nt, row % nt);
        let src = &x[ci * p..(ci + 1) * p];
        let [dz, dy, dx] = taps[t];
        dst.fill(T::zero());
        let (z0, z1) = valid(s.z, dz);
        let (y0, y1) = valid(s.h, dy);
        let (x0, x1) = valid(s.w, dx);
        for z in z0..z1 {
            for y in y0..y1 {
                let d = s.index(z, y, 0);
                let sz = (z as isize + dz) as usize;
                let sy = (y as isize + dy) as usize;
                let so = (s.index(sz, sy, 0) + x0) as isize + dx;
                let so = so as usize;
                dst[d + x0..d + x1].copy_from_slice(&src[so..so + (x1 - x0)]);
            }
        }
    });
    debug_assert_eq!(cols.len(), c * nt * p);
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
fn col2im<T: Scalar>(cols: &[T], c: usize, s: Shape3, k: usize, dx_out: &mut [T]) {
    let p = s.len();
    let taps = taps(k);
    let nt = taps.len();
    dx_out.par_chunks_mut(p).enumerate().for_each(|(ci, dst)| {
        for (t, &[dz, dy, dx]) in taps.iter().enumerate() {
            let src = &cols[(ci * nt + t) * p..(ci * nt + t + 1) * p];
            let (z0, z1) = valid(s.z, dz);
            let (y0, y1) = valid(s.h, dy);
            let (x0, x1) = valid(s.w, dx);
            for z in z0..z1 {
                for y in y0..y1 {
                    let o = s.index(z, y, 0);
                    let sz = (z as isize + dz) as usize;
                    let sy = (y as isize + dy) as usize;
                    let di = ((s.index(sz, sy, 0) + x0) as isize + dx) as usize;
                    for (a, b) in dst[di..di + (x1 - x0)].iter_mut().zip(&src[o + x0..o + x1]) {
                        *a += *b;
                    }
                }
            }
        }
    });
    debug_assert_eq!(dx_out.len(), c * p);
}

/// Same-padded stride-1 convolution; `w` is `[out][in][k][k][k]`.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &[T], bias: Option<&[T]>, out_c: usize, k: usize) -> Tensor<T> {
    let p = x.plane();
    let kk = x.c * k * k * k;
    assert_eq!(w.len(), out_c * kk, "conv weight size");
    let mut out = Tensor::zeros(x.n, out_c, x.shape);
    let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); kk * p] };
    for i in 0..x.n {
        let xs = x.sample(i);
        let b: &[T] = if k == 1 {
            xs
        } else {
            im2col(xs, x.c, x.shape, k, &mut cols);
            &cols
        };
        let o = out.sample_mut(i);
        if let Some(bias) = bias {
            for (c, chunk) in o.chunks_mut(p).enumerate() {
                chunk.fill(bias[c]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(out_c, kk, p, w, [kk as isize, 1], b, [p as isize, 1], beta, o);
    }
    out
}

/// Gradients of [`conv_forward`]: `(dx, dw, db)`; `dx` only when asked.
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    dy: &Tensor<T>,
    k: usize,
    with_bias: bool,
    need_dx: bool,
) -> (Option<Tensor<T>>, Vec<T>, Option<Vec<T>>) {
    let p = x.plane();
    let out_c = dy.c;
    let kk = x.c * k * k * k;
    let mut dw = vec![T::zero(); out_c * kk];
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.shape));
    let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcols = if need_dx && k != 1 { vec![T::zero(); kk * p] } else { Vec::new() };
    for i in 0..x.n {
        let xs = x.sample(i);
        let b: &[T] = if k == 1 {
            xs
        } else {
            im2col(xs, x.c, x.shape, k, &mut cols);
            &cols
        };
        let g = dy.sample(i);
        // dW += dY · colsᵀ
        T::gemm(out_c, p, kk, g, [p as isize, 1], b, [1, p as isize], T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            if k == 1 {
                T::gemm(kk, out_c, p, w, [1, kk as isize], g, [p as isize, 1], T::zero(), dx.sample_mut(i));
            } else {
                T::gemm(kk, out_c, p, w, [1, kk as isize], g, [p as isize, 1], T::zero(), &mut dcols);
                col2im(&dcols, x.c, x.shape, k, dx.sample_mut(i));
            }
        }
    }
    let db = with_bias.then(|| {
        (0..out_c)
            .map(|c| (0..dy.n).map(|i| dy.channel(i, c).iter().copied().sum::<T>()).sum())
            .collect()
    });
    (dx, dw, db)
}

/// Per-channel mean and biased variance over batch and space, in f64.
fn channel_stats<T: Scalar>(x: &Tensor<T>) -> Vec<(f64, f64)> {
    (0..x.c)
        .map(|c| {
            let m = (x.n * x.plane()) as f64;
            let mut sum = 0.0;
            for i in 0..x.n {
                sum += x.channel(i, c).iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
            let mean = sum / m;
            let mut ss = 0.0;
            for i in 0..x.n {
                ss += x.channel(i, c).iter().map(|v| (v.to_f64().unwrap() - mean).powi(2)).sum::<f64>();
            }
            (mean, ss / m)
        })
        .collect()
}

pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Batch-statistics normalization. Returns the normalized-and-scaled output,
/// the cache and per-channel `(mean, unbiased variance)` for the running stats.
pub fn bn_train_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Tensor<T>, BnCache<T>, Vec<(f64, f64)>) {
    let stats = channel_stats(x);
    let m = (x.n * x.plane()) as f64;
    let inv_std: Vec<T> = stats.iter().map(|(_, v)| T::from_f64(1.0 / (v + eps).sqrt())).collect();
    let mean: Vec<T> = stats.iter().map(|(mu, _)| T::from_f64(*mu)).collect();
    let xhat = normalize(x, &mean, &inv_std);
    let y = affine(&xhat, gamma, beta);
    let unbiased = stats.iter().map(|(mu, v)| (*mu, if m > 1.0 { v * m / (m - 1.0) } else { *v })).collect();
    (y, BnCache { xhat, inv_std }, unbiased)
}

pub fn bn_eval_forward<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: f64) -> Tensor<T> {
    let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v.to_f64().unwrap() + eps).sqrt())).collect();
    affine(&normalize(x, mean, &inv_std), gamma, beta)
}

fn normalize<T: Scalar>(x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Tensor<T> {
    let mut out = x.clone();
    let p = x.plane();
    for (j, chunk) in out.data.chunks_mut(p).enumerate() {
        let c = j % x.c;
        for v in chunk {
            *v = (*v - mean[c]) * inv_std[c];
        }
    }
    out
}

fn affine<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    let mut out = x.clone();
    let p = x.plane();
    for (j, chunk) in out.data.chunks_mut(p).enumerate() {
        let c = j % x.c;
        for v in chunk {
            *v = *v * gamma[c] + beta[c];
        }
    }
    out
}

/// `(dx, dgamma, dbeta)` of the batch-statistics normalization.
pub fn bn_backward<T: Scalar>(dy: &Tensor<T>, cache: &BnCache<T>, gamma: &[T]) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let c_n = dy.c;
    let m = (dy.n * dy.plane()) as f64;
    let mut dgamma = vec![T::zero(); c_n];
    let mut dbeta = vec![T::zero(); c_n];
    let mut sums = vec![(0.0f64, 0.0f64); c_n];
    for c in 0..c_n {
        for i in 0..dy.n {
            for (g, xh) in dy.channel(i, c).iter().zip(cache.xhat.channel(i, c)) {
                let g = g.to_f64().unwrap();
                sums[c].0 += g;
                sums[c].1 += g * xh.to_f64().unwrap();
            }
        }
        dbeta[c] = T::from_f64(sums[c].0);
        dgamma[c] = T::from_f64(sums[c].1);
    }
    let mut dx = dy.clone();
    let p = dy.plane();
    for (j, chunk) in dx.data.chunks_mut(p).enumerate() {
        let c = j % c_n;
        let scale = gamma[c] * cache.inv_std[c];
        let mean_g = T::from_f64(sums[c].0 / m);
        let mean_gx = T::from_f64(sums[c].1 / m);
        let xh = &cache.xhat.data[j * p..(j + 1) * p];
        for (v, x) in chunk.iter_mut().zip(xh) {
            *v = scale * (*v - mean_g - *x * mean_gx);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut Tensor<T>, out: &Tensor<T>) {
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2×2 max pooling; also returns the winning corner (0..8) of each window.
/// Ties go to the first corner in z, y, x order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let s = x.shape;
    let o = Shape3::new(s.z / 2, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(x.n, x.c, o);
    let mut arg = vec![0u8; out.data.len()];
    let (p, q) = (s.len(), o.len());
    for j in 0..x.n * x.c {
        let src = &x.data[j * p..(j + 1) * p];
        for z in 0..o.z {
            for y in 0..o.h {
                for xx in 0..o.w {
                    let mut best = T::neg_infinity();
                    let mut which = 0u8;
                    for k in 0..8u8 {
                        let (dz, dy, dx) = ((k >> 2) as usize, ((k >> 1) & 1) as usize, (k & 1) as usize);
                        let v = src[s.index(2 * z + dz, 2 * y + dy, 2 * xx + dx)];
                        if v > best {
                            best = v;
                            which = k;
                        }
                    }
                    let oi = j * q + o.index(z, y, xx);
                    out.data[oi] = best;
                    arg[oi] = which;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor<T>, arg: &[u8], full: Shape3) -> Tensor<T> {
    let o = dy.shape;
    let mut dx = Tensor::zeros(dy.n, dy.c, full);
    let (p, q) = (full.len(), o.len());
    for j in 0..dy.n * dy.c {
        for z in 0..o.z {
            for y in 0..o.h {
                for xx in 0..o.w {
                    let oi = j * q + o.index(z, y, xx);
                    let k = arg[oi];
                    let (dz, ddy, dx_) = ((k >> 2) as usize, ((k >> 1) & 1) as usize, (k & 1) as usize);
                    dx.data[j * p + full.index(2 * z + dz, 2 * y + ddy, 2 * xx + dx_)] += dy.data[oi];
                }
            }
        }
    }
    dx
}

/// The two source taps and weights of output index `o` when doubling an axis
/// of length `n` with half-pixel (align-corners off) sampling.
#[inline]
fn up_taps(o: usize, n: usize) -> [(usize, f64); 2] {
    let k = o / 2;
    if o % 2 == 0 {
        if k == 0 {
            [(0, 1.0), (0, 0.0)]
        } else {
            [(k, 0.75), (k - 1, 0.25)]
        }
    } else if k + 1 < n {
        [(k, 0.75), (k + 1, 0.25)]
    } else {
        [(k, 1.0), (k, 0.0)]
    }
}

/// Doubles axis `n` of data laid out as `[outer][n][inner]`.
fn up_axis<T: Scalar>(data: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); outer * 2 * n * inner];
    for a in 0..outer {
        for o in 0..2 * n {
            let [(i0, w0), (i1, w1)] = up_taps(o, n);
            let (w0, w1) = (T::from_f64(w0), T::from_f64(w1));
            let dst = &mut out[(a * 2 * n + o) * inner..][..inner];
            let s0 = &data[(a * n + i0) * inner..][..inner];
            let s1 = &data[(a * n + i1) * inner..][..inner];
            for ((d, u), v) in dst.iter_mut().zip(s0).zip(s1) {
                *d = w0 * *u + w1 * *v;
            }
        }
    }
    out
}

fn up_axis_adjoint<T: Scalar>(grad: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); outer * n * inner];
    for a in 0..outer {
        for o in 0..2 * n {
            let [(i0, w0), (i1, w1)] = up_taps(o, n);
            let (w0, w1) = (T::from_f64(w0), T::from_f64(w1));
            let g = &grad[(a * 2 * n + o) * inner..][..inner];
            for (j, gv) in g.iter().enumerate() {
                out[(a * n + i0) * inner + j] += w0 * *gv;
                out[(a * n + i1) * inner + j] += w1 * *gv;
            }
        }
    }
    out
}

/// Trilinear ×2 upsampling, applied separably W, then H, then Z.
pub fn upsample_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape;
    let nc = x.n * x.c;
    let a = up_axis(&x.data, nc * s.z * s.h, s.w, 1);
    let b = up_axis(&a, nc * s.z, s.h, 2 * s.w);
    let data = up_axis(&b, nc, s.z, 4 * s.h * s.w);
    Tensor {
        n: x.n,
        c: x.c,
        shape: Shape3::new(2 * s.z, 2 * s.h, 2 * s.w),
        data,
    }
}

pub fn upsample_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let o = dy.shape;
    let s = Shape3::new(o.z / 2, o.h / 2, o.w / 2);
    let nc = dy.n * dy.c;
    let b = up_axis_adjoint(&dy.data, nc, s.z, o.h * o.w);
    let a = up_axis_adjoint(&b, nc * s.z, s.h, o.w);
    let data = up_axis_adjoint(&a, nc * s.z * s.h, s.w, 1);
    Tensor {
        n: dy.n,
        c: dy.c,
        shape: s,
        data,
    }
}
