//! Multidimensional FFTs on row-major buffers, built from rustfft line transforms.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

#[derive(Clone)]
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("shape", &self.shape).finish()
    }
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform, `sum_j a_j exp(-2 pi i jk/N)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, FftDirection::Forward);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, FftDirection::Inverse);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], direction: FftDirection) {
        assert_eq!(data.len(), self.len(), "buffer does not match FFT shape");
        let plans = match direction {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        };
        let d = self.shape.len();
        let scratch_len = plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        let mut scratch = vec![Complex64::default(); scratch_len];
        let mut block = Vec::new();
        for axis in 0..d {
            let n = self.shape[axis];
            let plan = &plans[axis];
            let stride: usize = self.shape[axis + 1..].iter().product();
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // Transpose each (n x stride) slab so lines become contiguous.
            block.resize(n * stride, Complex64::default());
            for slab in data.chunks_exact_mut(n * stride) {
                for j in 0..n {
                    for s in 0..stride {
                        block[s * n + j] = slab[j * stride + s];
                    }
                }
                plan.process_with_scratch(&mut block, &mut scratch);
                for j in 0..n {
                    for s in 0..stride {
                        slab[j * stride + s] = block[s * n + j];
                    }
                }
            }
        }
    }
}

/// One-dimensional FFT of length `n` applied in place; convenience for small buffers.
pub fn fft_1d(data: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(data.len()).process(data);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft_2d(a: &[Complex64], n0: usize, n1: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); n0 * n1];
        for k0 in 0..n0 {
            for k1 in 0..n1 {
                let mut s = Complex64::default();
                for j0 in 0..n0 {
                    for j1 in 0..n1 {
                        let ph = -2.0 * PI * ((j0 * k0) as f64 / n0 as f64 + (j1 * k1) as f64 / n1 as f64);
                        s += a[j0 * n1 + j1] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[k0 * n1 + k1] = s;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_and_inverts() {
        let (n0, n1) = (4, 8);
        let a: Vec<Complex64> = (0..n0 * n1)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let fft = FftNd::new(&[n0, n1]);
        let mut b = a.clone();
        fft.forward(&mut b);
        let want = naive_dft_2d(&a, n0, n1);
        for (x, y) in b.iter().zip(&want) {
            assert!((x - y).norm() < 1e-12);
        }
        fft.inverse(&mut b);
        for (x, y) in b.iter().zip(&a) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn three_axes_roundtrip() {
        let fft = FftNd::new(&[4, 2, 8]);
        let a: Vec<Complex64> = (0..64).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut b = a.clone();
        fft.forward(&mut b);
        assert!((b[0] - a.iter().sum::<Complex64>()).norm() < 1e-10);
        fft.inverse(&mut b);
        for (x, y) in b.iter().zip(&a) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
