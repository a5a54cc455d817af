//! Differentiable building blocks: convolutions (plain, strided, transpose),
//! instance normalization, and the pointwise activations.
//!
//! Every layer provides a plain `forward` and a `backward` that consumes the
//! upstream gradient together with whatever the forward pass cached. All
//! accumulation runs in a fixed order so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Reflection-pad the spatial dims of a `[C, H, W]` tensor by `p` (edge not repeated).
pub fn reflect_pad(x: &Tensor, p: usize) -> Result<Tensor> {
    let c = x.channels();
    let (h, w) = x.hw();
    if p == 0 {
        return Ok(x.clone());
    }
    if p > h - 1 || p > w - 1 {
        return Err(Error::shape(format!(
            "reflection padding {} needs spatial dims of at least {}x{}, got {}x{}",
            p,
            p + 1,
            p + 1,
            h,
            w
        )));
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor::zeros(&[c, hp, wp]);
    let reflect = |t: isize, n: usize| -> usize {
        if t < 0 {
            (-t) as usize
        } else if t as usize >= n {
            2 * (n - 1) - t as usize
        } else {
            t as usize
        }
    };
    for ci in 0..c {
        let src = x.plane(ci);
        let dst = out.plane_mut(ci);
        for oy in 0..hp {
            let sy = reflect(oy as isize - p as isize, h);
            let drow = &mut dst[oy * wp..(oy + 1) * wp];
            let srow = &src[sy * w..(sy + 1) * w];
            for ox in 0..wp {
                drow[ox] = srow[reflect(ox as isize - p as isize, w)];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`reflect_pad`]: folds gradients on padded positions back onto
/// their source pixels.
pub fn reflect_fold(gpad: &Tensor, p: usize, h: usize, w: usize) -> Tensor {
    let c = gpad.channels();
    if p == 0 {
        return gpad.clone();
    }
    let wp = w + 2 * p;
    let mut out = Tensor::zeros(&[c, h, w]);
    let reflect = |t: isize, n: usize| -> usize {
        if t < 0 {
            (-t) as usize
        } else if t as usize >= n {
            2 * (n - 1) - t as usize
        } else {
            t as usize
        }
    };
    for ci in 0..c {
        let src = gpad.plane(ci);
        let dst = out.plane_mut(ci);
        for py in 0..h + 2 * p {
            let sy = reflect(py as isize - p as isize, h);
            let srow = &src[py * wp..(py + 1) * wp];
            for px in 0..wp {
                let sx = reflect(px as isize - p as isize, w);
                dst[sy * w + sx] += srow[px];
            }
        }
    }
    out
}

/// A 2-D convolution layer. `transpose` selects a stride-2 transposed
/// convolution (spatial doubling); otherwise `stride` is 1 (shape preserving,
/// reflection padded) or 2 (spatial halving).
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub kernel: usize,
    pub stride: usize,
    pub transpose: bool,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, transpose: bool) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            kernel,
            stride,
            transpose,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if self.transpose {
            (h * 2, w * 2)
        } else if self.stride == 1 {
            (h, w)
        } else {
            ((h + 2 * self.pad() - self.kernel) / 2 + 1, (w + 2 * self.pad() - self.kernel) / 2 + 1)
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_impl(x, true)
    }

    /// Forward without the bias term; used by linearized receptive-field probes.
    pub fn forward_no_bias(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_impl(x, false)
    }

    fn forward_impl(&self, x: &Tensor, with_bias: bool) -> Result<Tensor> {
        if x.channels() != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.channels()
            )));
        }
        if self.transpose {
            return Ok(self.forward_transpose(x, with_bias));
        }
        let (h, w) = x.hw();
        let xp = reflect_pad(x, self.pad())?;
        let (oh, ow) = self.out_hw(h, w);
        let mut y = Tensor::zeros(&[self.out_channels(), oh, ow]);
        let k = self.kernel;
        let s = self.stride;
        let wp = w + 2 * self.pad();
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let wdat = self.weight.data();
        // row-blocked loop order: the output row stays hot across all taps
        for co in 0..cout {
            let yplane = y.plane_mut(co);
            if with_bias {
                yplane.fill(self.bias.data()[co]);
            }
            for oy in 0..oh {
                let yrow = &mut yplane[oy * ow..(oy + 1) * ow];
                for ci in 0..cin {
                    let xplane = xp.plane(ci);
                    let wbase = (co * cin + ci) * k * k;
                    for ky in 0..k {
                        let xbase = (s * oy + ky) * wp;
                        for kx in 0..k {
                            let wv = wdat[wbase + ky * k + kx];
                            if s == 1 {
                                let xrow = &xplane[xbase + kx..xbase + kx + ow];
                                for (yv, xv) in yrow.iter_mut().zip(xrow) {
                                    *yv += wv * xv;
                                }
                            } else {
                                let xrow = &xplane[xbase + kx..];
                                for (ox, yv) in yrow.iter_mut().enumerate() {
                                    *yv += wv * xrow[s * ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    fn forward_transpose(&self, x: &Tensor, with_bias: bool) -> Tensor {
        // stride-2 transposed conv with padding (k-1)/2 and output padding 1,
        // so output dims are exactly twice the input dims
        let (h, w) = x.hw();
        let (oh, ow) = (2 * h, 2 * w);
        let k = self.kernel;
        let p = self.pad() as isize;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let mut y = Tensor::zeros(&[cout, oh, ow]);
        let wdat = self.weight.data();
        for co in 0..cout {
            let yplane = y.plane_mut(co);
            if with_bias {
                yplane.fill(self.bias.data()[co]);
            }
            for ci in 0..cin {
                let xplane = x.plane(ci);
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[wbase + ky * k + kx];
                        for iy in 0..h {
                            let oy = 2 * iy as isize + ky as isize - p;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            // ox = 2*ix + kx - p must land in [0, ow)
                            let off = kx as isize - p;
                            let ix_lo = if off < 0 { ((-off) as usize).div_ceil(2) } else { 0 };
                            let ix_hi_excl =
                                (((ow as isize - off - 1) / 2) + 1).clamp(0, w as isize) as usize;
                            let yrow = &mut yplane[oy as usize * ow..(oy as usize + 1) * ow];
                            let xrow = &xplane[iy * w..(iy + 1) * w];
                            for ix in ix_lo..ix_hi_excl {
                                let ox = (2 * ix as isize + off) as usize;
                                yrow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Gradients w.r.t. input, weight, and bias given the forward input and
    /// the upstream gradient.
    pub fn backward(&self, x: &Tensor, gy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        for co in 0..self.out_channels() {
            gb.data_mut()[co] = gy.plane(co).iter().sum();
        }
        let gx = if self.transpose {
            self.backward_transpose(x, gy, &mut gw)
        } else {
            self.backward_conv(x, gy, &mut gw)
        };
        (gx, gw, gb)
    }

    fn backward_conv(&self, x: &Tensor, gy: &Tensor, gw: &mut Tensor) -> Tensor {
        let (h, w) = x.hw();
        let xp = reflect_pad(x, self.pad()).expect("validated in forward");
        let (oh, ow) = gy.hw();
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad();
        let wp = w + 2 * p;
        let hp = h + 2 * p;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let mut gxp = Tensor::zeros(&[cin, hp, wp]);
        let wdat = self.weight.data();
        let gwdat = gw.data_mut();
        for co in 0..cout {
            let gyplane = gy.plane(co);
            for oy in 0..oh {
                let gyrow = &gyplane[oy * ow..(oy + 1) * ow];
                for ci in 0..cin {
                    let xplane = xp.plane(ci);
                    let gxplane = gxp.plane_mut(ci);
                    let wbase = (co * cin + ci) * k * k;
                    for ky in 0..k {
                        let xbase = (s * oy + ky) * wp;
                        for kx in 0..k {
                            let wv = wdat[wbase + ky * k + kx];
                            let mut acc = 0.0;
                            if s == 1 {
                                let xoff = xbase + kx;
                                let xrow = &xplane[xoff..xoff + ow];
                                let gxrow = &mut gxplane[xoff..xoff + ow];
                                for ((g, xv), gxv) in gyrow.iter().zip(xrow).zip(gxrow) {
                                    acc += g * xv;
                                    *gxv += wv * g;
                                }
                            } else {
                                let xoff = xbase + kx;
                                for (ox, g) in gyrow.iter().enumerate() {
                                    acc += g * xplane[xoff + s * ox];
                                    gxplane[xoff + s * ox] += wv * g;
                                }
                            }
                            gwdat[wbase + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
        reflect_fold(&gxp, p, h, w)
    }

    fn backward_transpose(&self, x: &Tensor, gy: &Tensor, gw: &mut Tensor) -> Tensor {
        let (h, w) = x.hw();
        let (oh, ow) = gy.hw();
        let k = self.kernel;
        let p = self.pad() as isize;
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let mut gx = Tensor::zeros(&[cin, h, w]);
        let wdat = self.weight.data();
        let gwdat = gw.data_mut();
        for co in 0..cout {
            let gyplane = gy.plane(co);
            for ci in 0..cin {
                let xplane = x.plane(ci);
                let gxplane = gx.plane_mut(ci);
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[wbase + ky * k + kx];
                        let mut acc = 0.0;
                        for iy in 0..h {
                            let oy = 2 * iy as isize + ky as isize - p;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let off = kx as isize - p;
                            let ix_lo = if off < 0 { ((-off) as usize).div_ceil(2) } else { 0 };
                            let ix_hi_excl =
                                (((ow as isize - off - 1) / 2) + 1).clamp(0, w as isize) as usize;
                            let gyrow = &gyplane[oy as usize * ow..(oy as usize + 1) * ow];
                            let xrow = &xplane[iy * w..(iy + 1) * w];
                            let gxrow = &mut gxplane[iy * w..(iy + 1) * w];
                            for ix in ix_lo..ix_hi_excl {
                                let ox = (2 * ix as isize + off) as usize;
                                acc += gyrow[ox] * xrow[ix];
                                gxrow[ix] += wv * gyrow[ox];
                            }
                        }
                        gwdat[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
        gx
    }
}

/// Instance normalization with learnable affine terms: per channel, per sample,
/// normalize over the spatial extent.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    /// `[channels]`
    pub gamma: Tensor,
    /// `[channels]`
    pub beta: Tensor,
}

/// What instance-norm backward needs from the forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(1.0);
        InstanceNorm {
            gamma,
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Tensor) -> (Tensor, NormCache) {
        let c = x.channels();
        let (h, w) = x.hw();
        let n = (h * w) as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for ci in 0..c {
            let plane = x.plane(ci);
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            inv_std[ci] = inv;
            let (g, b) = (self.gamma.data()[ci], self.beta.data()[ci]);
            let xh = xhat.plane_mut(ci);
            for (i, v) in plane.iter().enumerate() {
                xh[i] = (v - mean) * inv;
            }
            let yp = y.plane_mut(ci);
            for (yv, xv) in yp.iter_mut().zip(xh.iter()) {
                *yv = g * xv + b;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    /// Returns (grad_input, grad_gamma, grad_beta).
    pub fn backward(&self, cache: &NormCache, gy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let c = gy.channels();
        let (h, w) = gy.hw();
        let n = (h * w) as f64;
        let mut gx = Tensor::zeros(gy.shape());
        let mut ggamma = Tensor::zeros(&[c]);
        let mut gbeta = Tensor::zeros(&[c]);
        for ci in 0..c {
            let gyp = gy.plane(ci);
            let xh = cache.xhat.plane(ci);
            let sum_gy: f64 = gyp.iter().sum();
            let sum_gy_xhat: f64 = gyp.iter().zip(xh).map(|(a, b)| a * b).sum();
            ggamma.data_mut()[ci] = sum_gy_xhat;
            gbeta.data_mut()[ci] = sum_gy;
            let scale = self.gamma.data()[ci] * cache.inv_std[ci];
            let mean_gy = sum_gy / n;
            let mean_gy_xhat = sum_gy_xhat / n;
            let gxp = gx.plane_mut(ci);
            for i in 0..gxp.len() {
                gxp[i] = scale * (gyp[i] - mean_gy - xh[i] * mean_gy_xhat);
            }
        }
        (gx, ggamma, gbeta)
    }
}

/// Leaky rectifier applied in place.
pub fn leaky_relu_forward(x: &mut Tensor) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Backward through the leaky rectifier. The slope is recoverable from the
/// output sign because the activation is monotone through zero.
pub fn leaky_relu_backward(out: &Tensor, gy: &mut Tensor) {
    for (g, y) in gy.data_mut().iter_mut().zip(out.data()) {
        if *y < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

pub fn tanh_forward(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = v.tanh();
    }
}

pub fn tanh_backward(out: &Tensor, gy: &mut Tensor) {
    for (g, y) in gy.data_mut().iter_mut().zip(out.data()) {
        *g *= 1.0 - y * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<F: FnMut(&[f64]) -> f64>(
        mut loss: F,
        params: &mut [f64],
        analytic: &[f64],
        tol: f64,
    ) {
        let h = 1e-6;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = loss(params);
            params[i] = orig - h;
            let lm = loss(params);
            params[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let diff = (analytic[i] - num).abs();
            let denom = analytic[i].abs().max(num.abs());
            assert!(
                diff < 1e-7 || diff / denom < tol,
                "param {}: analytic {} vs numeric {}",
                i,
                analytic[i],
                num
            );
        }
    }

    fn arange_tensor(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) / 17.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn reflect_pad_matches_hand_example() {
        // 1x3x3 plane, pad 1: borders mirror without repeating the edge
        let x = Tensor::from_vec(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let p = reflect_pad(&x, 1).unwrap();
        assert_eq!(p.shape(), &[1, 5, 5]);
        // row 0 reflects row 1 of the source (values 4,5,6 with column reflection)
        assert_eq!(&p.plane(0)[..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
        // row 1 is source row 0
        assert_eq!(&p.plane(0)[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn reflect_pad_rejects_small_input() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(reflect_pad(&x, 3).is_err());
    }

    #[test]
    fn reflect_fold_is_adjoint_of_pad() {
        // <pad(x), g> == <x, fold(g)> for random x, g
        let x = arange_tensor(&[2, 4, 5]);
        let g = arange_tensor(&[2, 6, 7]);
        let px = reflect_pad(&x, 1).unwrap();
        let fg = reflect_fold(&g, 1, 4, 5);
        let lhs: f64 = px.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(fg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut conv = Conv2d::zeros(1, 1, 3, 1, false);
        conv.weight.data_mut()[4] = 1.0; // center tap
        let x = arange_tensor(&[1, 5, 6]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_conv_halves_even_dims() {
        let conv = Conv2d::zeros(2, 3, 7, 2, false);
        let x = Tensor::zeros(&[2, 8, 12]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 4, 6]);
    }

    #[test]
    fn transpose_conv_doubles_dims() {
        let conv = Conv2d::zeros(3, 2, 7, 2, true);
        let x = Tensor::zeros(&[3, 4, 6]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 8, 12]);
    }

    #[test]
    fn transpose_conv_is_adjoint_of_strided_zero_pad_conv() {
        // <T(x), g> must equal <x, T^*(g)> where T^* is what backward computes
        let mut conv = Conv2d::zeros(2, 3, 5, 2, true);
        for (i, v) in conv.weight.data_mut().iter_mut().enumerate() {
            *v = ((i * 13 % 29) as f64 - 14.0) / 31.0;
        }
        let x = arange_tensor(&[2, 4, 4]);
        let g = arange_tensor(&[3, 8, 8]);
        let y = conv.forward_no_bias(&x).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let (gx, _, _) = conv.backward(&x, &g);
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (stride, transpose, hw) in [(1, false, (6, 7)), (2, false, (6, 8)), (2, true, (3, 4))] {
            let mut conv = Conv2d::zeros(2, 2, 3, stride, transpose);
            for (i, v) in conv.weight.data_mut().iter_mut().enumerate() {
                *v = ((i * 31 % 17) as f64 - 8.0) / 19.0;
            }
            for (i, v) in conv.bias.data_mut().iter_mut().enumerate() {
                *v = (i as f64 - 0.5) / 7.0;
            }
            let x = arange_tensor(&[2, hw.0, hw.1]);
            // scalar loss: weighted sum of outputs
            let weight_of = |y: &Tensor| -> Vec<f64> {
                (0..y.len()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 11.0).collect()
            };
            let y0 = conv.forward(&x).unwrap();
            let lw = weight_of(&y0);
            let gy = Tensor::from_vec(y0.shape(), lw.clone()).unwrap();
            let (gx, gw, gb) = conv.backward(&x, &gy);

            // input gradient
            let mut xv = x.data().to_vec();
            let shape = x.shape().to_vec();
            let conv_ref = conv.clone();
            fd_check(
                |p| {
                    let xt = Tensor::from_vec(&shape, p.to_vec()).unwrap();
                    let y = conv_ref.forward(&xt).unwrap();
                    y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
                },
                &mut xv,
                gx.data(),
                1e-5,
            );

            // weight gradient
            let mut wv = conv.weight.data().to_vec();
            let conv_ref = conv.clone();
            let x_ref = x.clone();
            fd_check(
                |p| {
                    let mut c = conv_ref.clone();
                    c.weight.data_mut().copy_from_slice(p);
                    let y = c.forward(&x_ref).unwrap();
                    y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
                },
                &mut wv,
                gw.data(),
                1e-5,
            );

            // bias gradient
            let mut bv = conv.bias.data().to_vec();
            let conv_ref = conv.clone();
            let x_ref = x.clone();
            fd_check(
                |p| {
                    let mut c = conv_ref.clone();
                    c.bias.data_mut().copy_from_slice(p);
                    let y = c.forward(&x_ref).unwrap();
                    y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
                },
                &mut bv,
                gb.data(),
                1e-5,
            );
        }
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let norm = InstanceNorm::new(2);
        let x = arange_tensor(&[2, 5, 5]);
        let (y, _) = norm.forward_cached(&x);
        for c in 0..2 {
            let plane = y.plane(c);
            let mean: f64 = plane.iter().sum::<f64>() / plane.len() as f64;
            let var: f64 = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / plane.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3); // eps shrinks variance slightly
        }
    }

    #[test]
    fn instance_norm_gradients_match_finite_differences() {
        let mut norm = InstanceNorm::new(2);
        for (i, v) in norm.gamma.data_mut().iter_mut().enumerate() {
            *v = 1.0 + 0.1 * i as f64;
        }
        for (i, v) in norm.beta.data_mut().iter_mut().enumerate() {
            *v = -0.2 + 0.3 * i as f64;
        }
        let x = arange_tensor(&[2, 4, 4]);
        let lw: Vec<f64> = (0..x.len()).map(|i| ((i * 5 % 11) as f64 - 5.0) / 9.0).collect();
        let (y0, cache) = norm.forward_cached(&x);
        let gy = Tensor::from_vec(y0.shape(), lw.clone()).unwrap();
        let (gx, ggamma, gbeta) = norm.backward(&cache, &gy);

        let mut xv = x.data().to_vec();
        let shape = x.shape().to_vec();
        let norm_ref = norm.clone();
        fd_check(
            |p| {
                let xt = Tensor::from_vec(&shape, p.to_vec()).unwrap();
                let y = norm_ref.forward(&xt);
                y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
            },
            &mut xv,
            gx.data(),
            1e-4,
        );

        let mut gv = norm.gamma.data().to_vec();
        let norm_ref = norm.clone();
        let x_ref = x.clone();
        fd_check(
            |p| {
                let mut n = norm_ref.clone();
                n.gamma.data_mut().copy_from_slice(p);
                let y = n.forward(&x_ref);
                y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
            },
            &mut gv,
            ggamma.data(),
            1e-5,
        );

        let mut bv = norm.beta.data().to_vec();
        fd_check(
            |p| {
                let mut n = norm.clone();
                n.beta.data_mut().copy_from_slice(p);
                let y = n.forward(&x);
                y.data().iter().zip(&lw).map(|(a, b)| a * b).sum()
            },
            &mut bv,
            gbeta.data(),
            1e-5,
        );
    }

    #[test]
    fn activations_round_trip_gradients() {
        let x = arange_tensor(&[1, 3, 4]);
        let mut y = x.clone();
        leaky_relu_forward(&mut y);
        let mut g = Tensor::from_vec(x.shape(), vec![1.0; x.len()]).unwrap();
        leaky_relu_backward(&y, &mut g);
        for (xv, gv) in x.data().iter().zip(g.data()) {
            let expect = if *xv < 0.0 { LEAKY_SLOPE } else { 1.0 };
            assert_eq!(*gv, expect);
        }

        let mut t = x.clone();
        tanh_forward(&mut t);
        let mut gt = Tensor::from_vec(x.shape(), vec![1.0; x.len()]).unwrap();
        tanh_backward(&t, &mut gt);
        for (xv, gv) in x.data().iter().zip(gt.data()) {
            let expect = 1.0 - xv.tanh() * xv.tanh();
            assert!((gv - expect).abs() < 1e-12);
        }
    }
}
