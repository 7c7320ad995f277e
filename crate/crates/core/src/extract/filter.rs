//! Separable Gaussian smoothing with reflecting boundaries.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::grid::GriddedFieldStack;

/// Normalised discrete Gaussian kernel truncated at four standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror an out-of-range index back into `0..n` (edge sample repeated).
#[inline]
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Convolve `data` (shape `dims`, last axis fastest) along `axis` in place.
fn convolve_axis(data: &mut [f64], dims: [usize; 3], axis: usize, kernel: &[f64]) {
    if kernel.len() == 1 {
        return;
    }
    let radius = (kernel.len() / 2) as i64;
    let n = dims[axis] as i64;
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut line = vec![0.0; dims[axis]];
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * dims[axis] * stride + inner;
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[base + i * stride];
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * line[reflect(i + k as i64 - radius, n)];
                }
                data[base + i as usize * stride] = acc;
            }
        }
    }
}

/// Spatio-temporal Gaussian filter of a stack; a zero sigma leaves that
/// dimension untouched.
pub fn gaussian_filter_st(stack: &GriddedFieldStack, sigma_space: f64, sigma_time: f64) -> GriddedFieldStack {
    let dims = [stack.n_t(), stack.grid.n_y, stack.grid.n_x];
    let mut data: Vec<f64> = stack.data().iter().map(|&v| v as f64).collect();
    let ks = gaussian_kernel(sigma_space);
    convolve_axis(&mut data, dims, 0, &gaussian_kernel(sigma_time));
    convolve_axis(&mut data, dims, 1, &ks);
    convolve_axis(&mut data, dims, 2, &ks);
    let mut out = stack.clone();
    for (o, v) in out.data_mut().iter_mut().zip(data) {
        *o = v as f32;
    }
    out
}

/// Spatial Gaussian filter of one raster held in `f64`.
pub fn gaussian_filter_2d(raster: &[f64], n_x: usize, n_y: usize, sigma: f64) -> Vec<f64> {
    let mut data = raster.to_vec();
    let k = gaussian_kernel(sigma);
    convolve_axis(&mut data, [1, n_y, n_x], 1, &k);
    convolve_axis(&mut data, [1, n_y, n_x], 2, &k);
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, ScaleTag};

    fn stack(n: usize, nt: usize, f: impl Fn(usize, usize, usize) -> f32) -> GriddedFieldStack {
        let g = Grid::new(n, n, 1.0, 0.0, 0.0).unwrap();
        let mut s = GriddedFieldStack::filled(g, nt, ScaleTag::Exp1, 0.0);
        for t in 0..nt {
            for y in 0..n {
                for x in 0..n {
                    s.raster_mut(t)[y * n + x] = f(t, x, y);
                }
            }
        }
        s
    }

    #[test]
    fn constant_field_unchanged() {
        let s = stack(12, 4, |_, _, _| 2.5);
        let f = gaussian_filter_st(&s, 3.0, 1.0);
        assert!(f.data().iter().all(|v| (*v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn impulse_matches_dense_kernel() {
        let s = stack(41, 1, |_, x, y| if x == 20 && y == 20 { 1.0 } else { 0.0 });
        let f = gaussian_filter_st(&s, 2.0, 0.0);
        // dense 2-D oracle: normalised Gaussian weights over the truncated square
        let r = 8i64;
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                total += (-((dx * dx + dy * dy) as f64) / 8.0).exp();
            }
        }
        for dy in -r..=r {
            for dx in -r..=r {
                let expect = (-((dx * dx + dy * dy) as f64) / 8.0).exp() / total;
                let got = f.get(0, (20 + dx) as usize, (20 + dy) as usize) as f64;
                assert!((got - expect).abs() < 1e-7, "{dx},{dy}");
            }
        }
    }

    #[test]
    fn linear() {
        let a = stack(10, 3, |t, x, y| ((t * 7 + x * 3 + y) % 5) as f32);
        let b = stack(10, 3, |t, x, y| ((t + x * y) % 4) as f32);
        let ab = stack(10, 3, |t, x, y| 2.0 * a.get(t, x, y) - 3.0 * b.get(t, x, y));
        let (fa, fb, fab) = (gaussian_filter_st(&a, 1.5, 1.0), gaussian_filter_st(&b, 1.5, 1.0), gaussian_filter_st(&ab, 1.5, 1.0));
        for i in 0..fa.data().len() {
            let lhs = fab.data()[i] as f64;
            let rhs = 2.0 * fa.data()[i] as f64 - 3.0 * fb.data()[i] as f64;
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let a = stack(6, 2, |t, x, y| (t + x + 2 * y) as f32);
        assert_eq!(gaussian_filter_st(&a, 0.0, 0.0), a);
    }
}
