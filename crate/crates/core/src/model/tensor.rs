//! Dense `N × C × Z × H × W` tensors and the scalar trait the network is
//! generic over (f32 for training, f64 for gradient checks).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::voxel::Shape3;

pub trait Scalar: Float + AddAssign + Sum + Debug + Send + Sync + 'static {
    /// `C = A·B + beta·C` on row/column-strided matrices (`m × k` times `k × n`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_s: [isize; 2], b: &[Self], b_s: [isize; 2], beta: Self, c: &mut [Self]);

    fn from_f64(v: f64) -> Self;
}

fn check_gemm_bounds<T>(m: usize, k: usize, n: usize, a: &[T], a_s: [isize; 2], b: &[T], b_s: [isize; 2], c: &[T]) {
    let extent = |rows: usize, cols: usize, s: [isize; 2]| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s[0] as usize + (cols - 1) * s[1] as usize + 1
        }
    };
    assert!(a_s.iter().chain(&b_s).all(|s| *s >= 0));
    assert!(extent(m, k, a_s) <= a.len(), "gemm: A out of bounds");
    assert!(extent(k, n, b_s) <= b.len(), "gemm: B out of bounds");
    assert!(m * n <= c.len(), "gemm: C out of bounds");
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_s: [isize; 2], b: &[f32], b_s: [isize; 2], beta: f32, c: &mut [f32]) {
        check_gemm_bounds(m, k, n, a, a_s, b, b_s, c);
        // SAFETY: every strided access was bounds-checked above; C is row-major m × n.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), a_s[0], a_s[1], b.as_ptr(), b_s[0], b_s[1], beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_s: [isize; 2], b: &[f64], b_s: [isize; 2], beta: f64, c: &mut [f64]) {
        check_gemm_bounds(m, k, n, a, a_s, b, b_s, c);
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), a_s[0], a_s[1], b.as_ptr(), b_s[0], b_s[1], beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }

    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub shape: Shape3,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, shape: Shape3) -> Self {
        Self {
            n,
            c,
            shape,
            data: vec![T::zero(); n * c * shape.len()],
        }
    }

    pub fn from_vec(n: usize, c: usize, shape: Shape3, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * shape.len() {
            return Err(Error::invalid(format!(
                "tensor {n}x{c}x{shape} needs {} values, got {}",
                n * c * shape.len(),
                data.len()
            )));
        }
        Ok(Self { n, c, shape, data })
    }

    /// Voxels per channel.
    pub fn plane(&self) -> usize {
        self.shape.len()
    }

    /// All channels of sample `i`.
    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.c * self.plane();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.c * self.plane();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[T] {
        let p = self.plane();
        &self.sample(i)[c * p..(c + 1) * p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack tensors along the channel axis, sample by sample.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        if parts.iter().any(|t| t.n != first.n || t.shape != first.shape) {
            return Err(Error::invalid("concatenated tensors differ in batch or spatial size"));
        }
        let c = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(first.n * c * first.plane());
        for i in 0..first.n {
            for t in parts {
                data.extend_from_slice(t.sample(i));
            }
        }
        Ok(Self {
            n: first.n,
            c,
            shape: first.shape,
            data,
        })
    }

    /// Inverse of [`Tensor::concat`]: split off channel groups of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Vec<Self> {
        assert_eq!(sizes.iter().sum::<usize>(), self.c, "split sizes must cover every channel");
        let p = self.plane();
        let mut out: Vec<Self> = sizes.iter().map(|&c| Self::zeros(self.n, c, self.shape)).collect();
        for i in 0..self.n {
            let src = self.sample(i);
            let mut at = 0;
            for t in &mut out {
                let len = t.c * p;
                t.sample_mut(i).copy_from_slice(&src[at..at + len]);
                at += len;
            }
        }
        out
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            shape: self.shape,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        // A 2x3 row-major, B given transposed (3x2 read through column strides)
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c = [1.0f64; 4];
        f64::gemm(2, 3, 2, &a, [3, 1], &bt, [1, 3], 1.0, &mut c);
        assert_eq!(c, [59.0, 65.0, 140.0, 155.0]);
    }

    #[test]
    fn concat_then_split() {
        let s = Shape3::new(1, 1, 2);
        let a = Tensor::from_vec(2, 1, s, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(2, 2, s, vec![5.0f32, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let cat = Tensor::concat(&[&a, &b]).unwrap();
        assert_eq!(cat.data, vec![1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let parts = cat.split(&[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
