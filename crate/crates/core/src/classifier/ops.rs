//! Layer kernels over channel-major batches: a tensor of shape
//! `[c, b, h, w]` stores each channel's whole batch contiguously, so a
//! convolution is one GEMM and normalization statistics are row reductions.

use super::scalar::{gemm, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.b * self.h * self.w
    }

    /// Elements per channel row.
    pub fn row(&self) -> usize {
        self.b * self.h * self.w
    }
}

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    pub shape: Shape,
    pub data: Vec<T>,
}

pub fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        Shape {
            c: self.cout,
            b: s.b,
            h: out_dim(s.h, self.k, self.stride, self.pad),
            w: out_dim(s.w, self.k, self.stride, self.pad),
        }
    }
}

/// Input offset for output index `o` and kernel tap `t`, or None when it
/// falls in the zero padding.
#[inline]
fn src_index(o: usize, t: usize, g: &ConvGeom, size: usize) -> Option<usize> {
    let i = (o * g.stride + t) as isize - g.pad as isize;
    (i >= 0 && (i as usize) < size).then_some(i as usize)
}

/// Output positions `lo..hi` whose tap `t` lands inside an input of `size`.
fn valid_range(t: usize, g: &ConvGeom, size: usize, out: usize) -> (usize, usize) {
    let lo = if g.pad > t { (g.pad - t).div_ceil(g.stride) } else { 0 };
    let hi = if size + g.pad > t { ((size + g.pad - t - 1) / g.stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

pub fn im2col<T: Scalar>(x: &Tensor<T>, g: &ConvGeom) -> Vec<T> {
    let s = x.shape;
    let os = g.out_shape(s);
    let cols_n = s.b * os.h * os.w;
    let mut cols = vec![T::zero(); g.cin * g.k * g.k * cols_n];
    let plane = s.h * s.w;
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                let (lo, hi) = valid_range(kj, g, s.w, os.w);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for b in 0..s.b {
                    let src = &x.data[(c * s.b + b) * plane..(c * s.b + b + 1) * plane];
                    for oh in 0..os.h {
                        let Some(ih) = src_index(oh, ki, g, s.h) else { continue };
                        let d = &mut dst[(b * os.h + oh) * os.w + lo..(b * os.h + oh) * os.w + hi];
                        let srow = &src[ih * s.w + first..];
                        if g.stride == 1 {
                            d.copy_from_slice(&srow[..hi - lo]);
                        } else {
                            for (v, &x) in d.iter_mut().zip(srow.iter().step_by(g.stride)) {
                                *v = x;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im<T: Scalar>(cols: &[T], s: Shape, g: &ConvGeom) -> Vec<T> {
    let os = g.out_shape(s);
    let cols_n = s.b * os.h * os.w;
    let plane = s.h * s.w;
    let mut x = vec![T::zero(); s.len()];
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                let (lo, hi) = valid_range(kj, g, s.w, os.w);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for b in 0..s.b {
                    let dst = &mut x[(c * s.b + b) * plane..(c * s.b + b + 1) * plane];
                    for oh in 0..os.h {
                        let Some(ih) = src_index(oh, ki, g, s.h) else { continue };
                        let srow = &src[(b * os.h + oh) * os.w + lo..(b * os.h + oh) * os.w + hi];
                        let drow = &mut dst[ih * s.w + first..(ih + 1) * s.w];
                        for (d, &v) in drow.iter_mut().step_by(g.stride).zip(srow) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output and the column matrix needed by the backward pass.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &[T], g: &ConvGeom) -> (Tensor<T>, Vec<T>) {
    let os = g.out_shape(x.shape);
    let cols = im2col(x, g);
    let mut y = vec![T::zero(); os.len()];
    gemm(false, false, g.cout, os.row(), g.cin * g.k * g.k, w, &cols, T::zero(), &mut y);
    (Tensor { shape: os, data: y }, cols)
}

/// Accumulates the weight gradient into `dw`; returns the input gradient
/// when `need_dx` is set.
pub fn conv_backward<T: Scalar>(
    dy: &Tensor<T>,
    cols: &[T],
    w: &[T],
    x_shape: Shape,
    g: &ConvGeom,
    dw: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let ckk = g.cin * g.k * g.k;
    let n = dy.shape.row();
    gemm(false, true, g.cout, ckk, n, &dy.data, cols, T::one(), dw);
    if !need_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); ckk * n];
    gemm(true, false, ckk, n, g.cout, w, &dy.data, T::zero(), &mut dcols);
    Some(Tensor {
        shape: x_shape,
        data: col2im(&dcols, x_shape, g),
    })
}

pub const BN_EPS: f64 = 1e-5;

pub struct BnCache<T> {
    /// Normalized input (batch mode) or raw input (affine mode).
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch-statistics normalization; also returns the per-channel batch mean
/// and unbiased variance for the running averages.
pub fn bn_forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, BnCache<T>, Vec<T>, Vec<T>) {
    let l = x.shape.row();
    let lf = T::of_f64(l as f64);
    let eps = T::of_f64(BN_EPS);
    let mut y = vec![T::zero(); x.data.len()];
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut inv_std = Vec::with_capacity(x.shape.c);
    let mut means = Vec::with_capacity(x.shape.c);
    let mut vars = Vec::with_capacity(x.shape.c);
    for c in 0..x.shape.c {
        let row = &x.data[c * l..(c + 1) * l];
        let mean = row.iter().copied().sum::<T>() / lf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / lf;
        let inv = T::one() / (var + eps).sqrt();
        let (g, bt) = (gamma[c], beta[c]);
        for i in 0..l {
            let h = (row[i] - mean) * inv;
            xhat[c * l + i] = h;
            y[c * l + i] = g * h + bt;
        }
        inv_std.push(inv);
        means.push(mean);
        let unbiased = if l > 1 { var * lf / T::of_f64((l - 1) as f64) } else { var };
        vars.push(unbiased);
    }
    (Tensor { shape: x.shape, data: y }, BnCache { xhat, inv_std }, means, vars)
}

pub fn bn_backward_train<T: Scalar>(dy: &Tensor<T>, cache: &BnCache<T>, gamma: &[T], dgamma: &mut [T], dbeta: &mut [T]) -> Tensor<T> {
    let l = dy.shape.row();
    let lf = T::of_f64(l as f64);
    let mut dx = vec![T::zero(); dy.data.len()];
    for c in 0..dy.shape.c {
        let d = &dy.data[c * l..(c + 1) * l];
        let h = &cache.xhat[c * l..(c + 1) * l];
        let sum_d = d.iter().copied().sum::<T>();
        let sum_dh = d.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
        dgamma[c] = dgamma[c] + sum_dh;
        dbeta[c] = dbeta[c] + sum_d;
        let k = gamma[c] * cache.inv_std[c] / lf;
        for i in 0..l {
            dx[c * l + i] = k * (lf * d[i] - sum_d - h[i] * sum_dh);
        }
    }
    Tensor { shape: dy.shape, data: dx }
}

/// Per-channel `gamma * (x - mean) / sqrt(var + eps) + beta` with fixed
/// statistics; with zero mean and `var + eps = 1` this is the stats-free
/// affine mode.
pub fn bn_forward_fixed<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: T) -> Tensor<T> {
    let l = x.shape.row();
    let mut y = vec![T::zero(); x.data.len()];
    for c in 0..x.shape.c {
        let scale = gamma[c] / (var[c] + eps).sqrt();
        let shift = beta[c] - mean[c] * scale;
        for (o, &v) in y[c * l..(c + 1) * l].iter_mut().zip(&x.data[c * l..(c + 1) * l]) {
            *o = v * scale + shift;
        }
    }
    Tensor { shape: x.shape, data: y }
}

/// Backward of `gamma * x + beta`; `x` is the layer input.
pub fn affine_backward<T: Scalar>(dy: &Tensor<T>, x: &[T], gamma: &[T], dgamma: &mut [T], dbeta: &mut [T]) -> Tensor<T> {
    let l = dy.shape.row();
    let mut dx = vec![T::zero(); dy.data.len()];
    for c in 0..dy.shape.c {
        let d = &dy.data[c * l..(c + 1) * l];
        dgamma[c] = dgamma[c] + d.iter().zip(&x[c * l..(c + 1) * l]).map(|(&a, &b)| a * b).sum::<T>();
        dbeta[c] = dbeta[c] + d.iter().copied().sum::<T>();
        for (o, &v) in dx[c * l..(c + 1) * l].iter_mut().zip(d) {
            *o = gamma[c] * v;
        }
    }
    Tensor { shape: dy.shape, data: dx }
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` where the ReLU output `y` was zero.
pub fn relu_backward_in_place<T: Scalar>(dy: &mut Tensor<T>, y: &[T]) {
    for (d, &v) in dy.data.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub const POOL_K: usize = 3;
pub const POOL_STRIDE: usize = 2;
pub const POOL_PAD: usize = 1;

/// 3×3 stride-2 max pool; returns the winning input offset of each output.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let s = x.shape;
    let (oh_n, ow_n) = (
        out_dim(s.h, POOL_K, POOL_STRIDE, POOL_PAD),
        out_dim(s.w, POOL_K, POOL_STRIDE, POOL_PAD),
    );
    let os = Shape { h: oh_n, w: ow_n, ..s };
    let mut y = vec![T::zero(); os.len()];
    let mut arg = vec![0u32; os.len()];
    let plane = s.h * s.w;
    for p in 0..s.c * s.b {
        let src = &x.data[p * plane..(p + 1) * plane];
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for ki in 0..POOL_K {
                    let ih = (oh * POOL_STRIDE + ki) as isize - POOL_PAD as isize;
                    if ih < 0 || ih as usize >= s.h {
                        continue;
                    }
                    for kj in 0..POOL_K {
                        let iw = (ow * POOL_STRIDE + kj) as isize - POOL_PAD as isize;
                        if iw < 0 || iw as usize >= s.w {
                            continue;
                        }
                        let i = ih as usize * s.w + iw as usize;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                let o = p * oh_n * ow_n + oh * ow_n + ow;
                y[o] = best;
                arg[o] = (p * plane + best_i) as u32;
            }
        }
    }
    (Tensor { shape: os, data: y }, arg)
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor<T>, arg: &[u32], x_shape: Shape) -> Tensor<T> {
    let mut dx = vec![T::zero(); x_shape.len()];
    for (&d, &i) in dy.data.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + d;
    }
    Tensor { shape: x_shape, data: dx }
}

/// Global average pool to a `[c, b]` matrix.
pub fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let plane = x.shape.h * x.shape.w;
    let pf = T::of_f64(plane as f64);
    x.data.chunks(plane).map(|p| p.iter().copied().sum::<T>() / pf).collect()
}

pub fn gap_backward<T: Scalar>(dp: &[T], x_shape: Shape) -> Tensor<T> {
    let plane = x_shape.h * x_shape.w;
    let pf = T::of_f64(plane as f64);
    let mut dx = Vec::with_capacity(x_shape.len());
    for &d in dp {
        dx.extend(std::iter::repeat_n(d / pf, plane));
    }
    Tensor { shape: x_shape, data: dx }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &Tensor<f64>, w: &[f64], g: &ConvGeom) -> Tensor<f64> {
        let s = x.shape;
        let os = g.out_shape(s);
        let mut y = vec![0.0; os.len()];
        for co in 0..g.cout {
            for b in 0..s.b {
                for oh in 0..os.h {
                    for ow in 0..os.w {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                                    let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                                    if ih < 0 || iw < 0 || ih as usize >= s.h || iw as usize >= s.w {
                                        continue;
                                    }
                                    acc += w[((co * g.cin + ci) * g.k + ki) * g.k + kj]
                                        * x.data[((ci * s.b + b) * s.h + ih as usize) * s.w + iw as usize];
                                }
                            }
                        }
                        y[((co * s.b + b) * os.h + oh) * os.w + ow] = acc;
                    }
                }
            }
        }
        Tensor { shape: os, data: y }
    }

    fn ramp(n: usize, k: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (2, 0, 1)] {
            let g = ConvGeom { cin: 3, cout: 4, k, stride, pad };
            let s = Shape { c: 3, b: 2, h: 7, w: 6 };
            let x = Tensor { shape: s, data: ramp(s.len(), 0.7) };
            let w = ramp(g.weights(), 1.3);
            let (y, _) = conv_forward(&x, &w, &g);
            let want = direct_conv(&x, &w, &g);
            assert_eq!(y.shape, want.shape);
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom { cin: 2, cout: 1, k: 3, stride: 2, pad: 1 };
        let s = Shape { c: 2, b: 3, h: 5, w: 8 };
        let x = Tensor { shape: s, data: ramp(s.len(), 0.3) };
        let cols = im2col(&x, &g);
        let c = ramp(cols.len(), 0.77);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let back = col2im(&c, s, &g);
        let rhs: f64 = x.data.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let s = Shape { c: 1, b: 1, h: 4, w: 4 };
        let x = Tensor { shape: s, data: (0..16).map(|v| v as f64).collect() };
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y.shape.h, 2);
        assert_eq!(y.data, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
    }

    #[test]
    fn batch_norm_output_is_standardized() {
        let s = Shape { c: 2, b: 4, h: 3, w: 3 };
        let x = Tensor { shape: s, data: ramp(s.len(), 2.1).iter().map(|v| 3.0 * v + 1.0).collect() };
        let (y, _, means, _) = bn_forward_train(&x, &[1.0, 2.0], &[0.0, -1.0]);
        let l = s.row();
        for c in 0..2 {
            let row = &y.data[c * l..(c + 1) * l];
            let m: f64 = row.iter().sum::<f64>() / l as f64;
            let v: f64 = row.iter().map(|r| (r - m).powi(2)).sum::<f64>() / l as f64;
            assert!((m - [0.0, -1.0][c]).abs() < 1e-12);
            assert!((v.sqrt() - [1.0, 2.0][c]).abs() < 1e-3);
            let want_mean: f64 = x.data[c * l..(c + 1) * l].iter().sum::<f64>() / l as f64;
            assert!((means[c] - want_mean).abs() < 1e-12);
        }
    }
}
