//! Forward and backward kernels for each layer type.
//!
//! Matrix products go through a blocked GEMM; work is split across samples
//! only, so every output element is reduced in the same order for any rayon
//! pool size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// `c = a b + beta c` for row-major `c` of `m x n`. `a` is stored
/// row-major as `m x k`, or as `k x m` when `a_t`; likewise `b` as `k x n`
/// or `n x k` when `b_t`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n, "gemm operand sizes");
    if m == 0 || n == 0 {
        return;
    }
    let (m_, k_, n_) = (m as isize, k as isize, n as isize);
    let sa = if a_t { [1, m_] } else { [k_, 1] };
    let sb = if b_t { [1, k_] } else { [n_, 1] };
    // SAFETY: the strides above address exactly the asserted slice extents.
    unsafe { T::gemm_raw(m, k, n, T::one(), a, sa, b, sb, beta, c, [n_, 1]) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape4, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let out = |extent: usize| -> Result<usize> {
            let padded = extent + 2 * padding;
            if padded < kernel || (padded - kernel) % stride != 0 {
                return Err(Error::InvalidGeometry(format!(
                    "kernel {kernel}, stride {stride}, padding {padding} do not tile extent {extent}"
                )));
            }
            Ok((padded - kernel) / stride + 1)
        };
        Ok(ConvGeometry {
            in_channels: input.c,
            in_h: input.h,
            in_w: input.w,
            kernel,
            stride,
            padding,
            out_h: out(input.h)?,
            out_w: out(input.w)?,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample into a `(patch_len, positions)` matrix.
    fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let positions = self.positions();
        for c in 0..self.in_channels {
            let plane = &sample[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * positions;
                    let dst = &mut cols[row..row + positions];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let (lo, hi) = self.valid_ox(kx);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        let ix0 = lo * s + kx - self.padding;
                        if s == 1 {
                            line[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                        } else {
                            for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output columns `lo..hi` whose tap `kx` lands inside the input row.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if self.in_w + p > kx {
            ((self.in_w + p - kx - 1) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Adds a `(patch_len, positions)` matrix back onto one sample.
    fn col2im<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let positions = self.positions();
        for c in 0..self.in_channels {
            let plane = &mut sample[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * positions;
                    let src = &cols[row..row + positions];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let (lo, hi) = self.valid_ox(kx);
                        let line = &src[oy * self.out_w + lo..oy * self.out_w + hi];
                        let ix0 = lo * s + kx - self.padding;
                        if s == 1 {
                            for (d, &v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (j, &v) in line.iter().enumerate() {
                                dst[ix0 + j * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_params<T: Scalar>(
    input: Shape4,
    weights: &Tensor4<T>,
    biases: &[T],
) -> Result<(usize, usize)> {
    let ws = weights.shape();
    if ws.c != input.c || ws.h != ws.w {
        return Err(Error::mismatch(
            format!("square kernel over {} input channels", input.c),
            format!("weights {ws}"),
        ));
    }
    if biases.len() != ws.n {
        return Err(Error::mismatch(
            format!("{} biases", ws.n),
            biases.len(),
        ));
    }
    Ok((ws.n, ws.h))
}

pub fn conv_forward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    biases: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let s = input.shape();
    let (out_c, kernel) = check_conv_params(s, weights, biases)?;
    let g = ConvGeometry::new(s, kernel, stride, padding)?;
    let (patch, positions) = (g.patch_len(), g.positions());
    let mut out = Tensor4::zeros(Shape4::new(s.n, out_c, g.out_h, g.out_w))?;
    let w = weights.data();
    out.data_mut()
        .par_chunks_mut(out_c * positions)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); patch * positions],
            |cols, (n, y)| {
                g.im2col(input.sample(n), cols);
                for (co, row) in y.chunks_mut(positions).enumerate() {
                    row.fill(biases[co]);
                }
                gemm(out_c, patch, positions, w, false, cols, false, T::one(), y);
            },
        );
    Ok(out)
}

/// Parameter gradients of a learnable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Tensor4<T>,
    pub biases: Vec<T>,
}

/// Returns `(input gradient if requested, parameter gradients)`.
pub fn conv_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: usize,
    want_input_grad: bool,
) -> Result<(Option<Tensor4<T>>, ParamGrads<T>)> {
    let s = input.shape();
    let ws = weights.shape();
    let g = ConvGeometry::new(s, ws.h, stride, padding)?;
    let expected = Shape4::new(s.n, ws.n, g.out_h, g.out_w);
    if grad_out.shape() != expected || ws.c != s.c {
        return Err(Error::mismatch(expected, grad_out.shape()));
    }
    let (out_c, patch, positions) = (ws.n, g.patch_len(), g.positions());
    let mut gw = weights.zeros_like();
    let mut gb = vec![T::zero(); out_c];
    let mut gx = want_input_grad.then(|| input.zeros_like());
    let mut cols = vec![T::zero(); patch * positions];
    let mut dcols = vec![T::zero(); if want_input_grad { patch * positions } else { 0 }];
    let w = weights.data();
    for n in 0..s.n {
        let gy = grad_out.sample(n);
        g.im2col(input.sample(n), &mut cols);
        gemm(out_c, positions, patch, gy, false, &cols, true, T::one(), gw.data_mut());
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gy[co * positions..(co + 1) * positions]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(patch, out_c, positions, w, true, gy, false, T::zero(), &mut dcols);
            g.col2im(&dcols, gx.sample_mut(n));
        }
    }
    Ok((
        gx,
        ParamGrads {
            weights: gw,
            biases: gb,
        },
    ))
}

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::mismatch(input.shape(), grad_out.shape()));
    }
    let mut gx = grad_out.clone();
    for (g, &x) in gx.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(gx)
}

fn pool_dims(s: Shape4, window: usize, stride: usize) -> Result<(usize, usize)> {
    let out = |e: usize| -> Result<usize> {
        if e < window || (e - window) % stride != 0 {
            return Err(Error::InvalidGeometry(format!(
                "pool window {window} stride {stride} does not tile extent {e}"
            )));
        }
        Ok((e - window) / stride + 1)
    };
    Ok((out(s.h)?, out(s.w)?))
}

/// Visits each pooling window, passing `(plane index, out offset, argmax
/// offset in the input plane)`. The first maximum in row-major window order
/// wins ties.
fn for_each_window<T: Scalar>(
    input: &Tensor4<T>,
    window: usize,
    stride: usize,
    mut f: impl FnMut(usize, usize, usize),
) -> Result<(usize, usize)> {
    let s = input.shape();
    let (oh, ow) = pool_dims(s, window, stride)?;
    let plane_len = s.h * s.w;
    for (pi, plane) in input.data().chunks(plane_len).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = oy * stride * s.w + ox * stride;
                let mut best_v = plane[best];
                for ky in 0..window {
                    for kx in 0..window {
                        let off = (oy * stride + ky) * s.w + ox * stride + kx;
                        if plane[off] > best_v {
                            best_v = plane[off];
                            best = off;
                        }
                    }
                }
                f(pi, oy * ow + ox, best);
            }
        }
    }
    Ok((oh, ow))
}

pub fn maxpool_forward<T: Scalar>(
    input: &Tensor4<T>,
    window: usize,
    stride: usize,
) -> Result<Tensor4<T>> {
    let s = input.shape();
    let (oh, ow) = pool_dims(s, window, stride)?;
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, oh, ow))?;
    let plane_len = s.h * s.w;
    let src = input.data();
    let dst = out.data_mut();
    for_each_window(input, window, stride, |pi, o, arg| {
        dst[pi * oh * ow + o] = src[pi * plane_len + arg];
    })?;
    Ok(out)
}

pub fn maxpool_backward<T: Scalar>(
    input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    window: usize,
    stride: usize,
) -> Result<Tensor4<T>> {
    let s = input.shape();
    let (oh, ow) = pool_dims(s, window, stride)?;
    if grad_out.shape() != Shape4::new(s.n, s.c, oh, ow) {
        return Err(Error::mismatch(Shape4::new(s.n, s.c, oh, ow), grad_out.shape()));
    }
    let mut gx = input.zeros_like();
    let plane_len = s.h * s.w;
    let gy = grad_out.data();
    let dst = gx.data_mut();
    for_each_window(input, window, stride, |pi, o, arg| {
        dst[pi * plane_len + arg] += gy[pi * oh * ow + o];
    })?;
    Ok(gx)
}

fn check_fc<T: Scalar>(input: Shape4, weights: &Tensor4<T>, biases: &[T]) -> Result<usize> {
    let ws = weights.shape();
    if ws.c * ws.h * ws.w != input.sample_len() || biases.len() != ws.n {
        return Err(Error::mismatch(
            format!("{} inputs and {} biases", ws.c * ws.h * ws.w, ws.n),
            format!("{} inputs and {} biases", input.sample_len(), biases.len()),
        ));
    }
    Ok(ws.n)
}

/// Flattens each sample and emits an `(n, out, 1, 1)` tensor.
pub fn fc_forward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    biases: &[T],
) -> Result<Tensor4<T>> {
    let s = input.shape();
    let out_n = check_fc(s, weights, biases)?;
    let in_len = s.sample_len();
    let mut out = Tensor4::zeros(Shape4::new(s.n, out_n, 1, 1))?;
    for row in out.data_mut().chunks_mut(out_n) {
        row.copy_from_slice(biases);
    }
    gemm(s.n, in_len, out_n, input.data(), false, weights.data(), true, T::one(), out.data_mut());
    Ok(out)
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    want_input_grad: bool,
) -> Result<(Option<Tensor4<T>>, ParamGrads<T>)> {
    let s = input.shape();
    let ws = weights.shape();
    let out_n = ws.n;
    let in_len = s.sample_len();
    if grad_out.shape() != Shape4::new(s.n, out_n, 1, 1) || ws.c * ws.h * ws.w != in_len {
        return Err(Error::mismatch(
            Shape4::new(s.n, out_n, 1, 1),
            grad_out.shape(),
        ));
    }
    let gy = grad_out.data();
    let mut gw = weights.zeros_like();
    gemm(out_n, s.n, in_len, gy, true, input.data(), false, T::zero(), gw.data_mut());
    let mut gb = vec![T::zero(); out_n];
    for n in 0..s.n {
        for (o, b) in gb.iter_mut().enumerate() {
            *b += gy[n * out_n + o];
        }
    }
    let gx = if want_input_grad {
        let mut gx = input.zeros_like();
        gemm(s.n, out_n, in_len, gy, false, weights.data(), false, T::zero(), gx.data_mut());
        Some(gx)
    } else {
        None
    };
    Ok((
        gx,
        ParamGrads {
            weights: gw,
            biases: gb,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: Vec<f64>) -> Tensor4<f64> {
        let [n, c, h, w] = shape;
        Tensor4::from_vec(Shape4::new(n, c, h, w), data).unwrap()
    }

    /// Direct nested-loop cross-correlation, independent of im2col.
    fn conv_oracle(
        x: &Tensor4<f64>,
        w: &Tensor4<f64>,
        b: &[f64],
        stride: usize,
        pad: usize,
    ) -> Tensor4<f64> {
        let s = x.shape();
        let ws = w.shape();
        let oh = (s.h + 2 * pad - ws.h) / stride + 1;
        let ow = (s.w + 2 * pad - ws.w) / stride + 1;
        let mut out = Tensor4::zeros(Shape4::new(s.n, ws.n, oh, ow)).unwrap();
        for n in 0..s.n {
            for co in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..s.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                        acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        *out.at_mut(n, co, oy, ox) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_on_ones_image() {
        let x = t([1, 1, 3, 3], vec![1.0; 9]);
        let w = t([1, 1, 3, 3], vec![1.0; 9]);
        let y = conv_forward(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn strided_conv_matches_oracle() {
        let xs: Vec<f64> = (0..2 * 2 * 9 * 9).map(|i| ((i * 29 % 23) as f64 - 11.0) / 9.0).collect();
        let x = t([2, 2, 9, 9], xs);
        for (k, stride, pad) in [(3, 2, 0), (3, 2, 1), (5, 2, 2), (5, 1, 0), (1, 2, 0)] {
            let ws: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 7 % 11) as f64 - 5.0) / 6.0).collect();
            let w = t([3, 2, k, k], ws);
            let b = [0.1, 0.2, -0.3];
            let got = conv_forward(&x, &w, &b, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let xs: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let ws: Vec<f64> = (0..4 * 3 * 3 * 3).map(|i| ((i * 11 % 13) as f64 - 6.0) / 7.0).collect();
        let x = t([2, 3, 7, 6], xs);
        let w = t([4, 3, 3, 3], ws);
        let b = [0.5, -1.0, 0.0, 2.0];
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            if ConvGeometry::new(x.shape(), 3, stride, pad).is_err() {
                continue;
            }
            let got = conv_forward(&x, &w, &b, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_clamps() {
        let x = t([1, 1, 1, 3], vec![-2.0, 0.0, 3.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn maxpool_picks_max_and_routes_first_tie() {
        let x = t([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 5.0, 2.0, 0.0]);
        let y = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        let gy = t([1, 1, 1, 2], vec![1.0, 1.0]);
        let gx = maxpool_backward(&x, &gy, 2, 2).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_224_to_112() {
        let x = Tensor4::new(1, 64, 224, 224, 1.0f64).unwrap();
        let y = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 64, 112, 112));
    }

    #[test]
    fn fc_identity_passes_input_through() {
        let x = t([1, 2, 1, 1], vec![3.0, -4.0]);
        let w = t([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
        let y = fc_forward(&x, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(y.data(), &[3.0, -4.0]);
    }

    #[test]
    fn fc_weight_grad_is_outer_product() {
        let x = t([1, 3, 1, 1], vec![1.0, 2.0, 3.0]);
        let w = t([2, 3, 1, 1], vec![0.0; 6]);
        let gy = t([1, 2, 1, 1], vec![0.5, -1.0]);
        let (gx, g) = fc_backward(&x, &w, &gy, true).unwrap();
        assert_eq!(g.weights.data(), &[0.5, 1.0, 1.5, -1.0, -2.0, -3.0]);
        assert_eq!(g.biases, vec![0.5, -1.0]);
        assert_eq!(gx.unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_shape_mismatch() {
        let x = t([1, 2, 3, 3], vec![0.0; 18]);
        let w = t([1, 3, 3, 3], vec![0.0; 27]);
        assert!(matches!(
            conv_forward(&x, &w, &[0.0], 1, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
