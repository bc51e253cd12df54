//! Differentiable layers: valid cross-correlation, affine, rectifier, and
//! spatial softmax, each with an exact reverse-mode backward.
//!
//! Forward passes are plain f32 loops with a fixed accumulation order, so
//! results are bit-reproducible for identical inputs regardless of build
//! flags or thread counts.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Valid (no padding) 2D cross-correlation with per-output-channel bias.
///
/// Weight layout `[out_c, in_c, kh, kw]`, activations `[c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// Parameter gradients produced by [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(out_c: usize, in_c: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[out_c, in_c, kernel, kernel]),
            bias: Tensor::zeros(&[out_c]),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Output shape for a `[c, h, w]` input, or a shape error if the input
    /// does not match the layer.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<[usize; 3]> {
        let (kh, kw) = self.kernel();
        if in_shape.len() != 3 || in_shape[0] != self.in_channels() {
            return Err(Error::shape(
                format!("[{}, h, w]", self.in_channels()),
                format!("{:?}", in_shape),
            ));
        }
        let (h, w) = (in_shape[1], in_shape[2]);
        if h < kh || w < kw {
            return Err(Error::shape(
                format!("input at least {}x{}", kh, kw),
                format!("{}x{}", h, w),
            ));
        }
        let oh = (h - kh) / self.stride + 1;
        let ow = (w - kw) / self.stride + 1;
        Ok([self.out_channels(), oh, ow])
    }

    /// Lowers the input into the `[ic*kh*kw, oh*ow]` patch matrix so both
    /// the forward pass and the two backward products are plain GEMMs.
    fn im2col(&self, input: &Tensor, oh: usize, ow: usize) -> Vec<f32> {
        let ic = self.in_channels();
        let (kh, kw) = self.kernel();
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let s = self.stride;
        let n = oh * ow;
        let x = input.data();
        let mut col = vec![0.0f32; ic * kh * kw * n];
        for i in 0..ic {
            for ky in 0..kh {
                for kx in 0..kw {
                    let krow = ((i * kh + ky) * kw + kx) * n;
                    for oy in 0..oh {
                        let xb = i * h * w + (oy * s + ky) * w + kx;
                        let cb = krow + oy * ow;
                        if s == 1 {
                            col[cb..cb + ow].copy_from_slice(&x[xb..xb + ow]);
                        } else {
                            for ox in 0..ow {
                                col[cb + ox] = x[xb + ox * s];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let [oc, oh, ow] = self.out_shape(input.shape())?;
        let k = self.in_channels() * self.weight.shape()[2] * self.weight.shape()[3];
        let n = oh * ow;
        let col = self.im2col(input, oh, ow);

        let mut out = Tensor::zeros(&[oc, oh, ow]);
        // out[oc x n] = weight[oc x k] * col[k x n]
        unsafe {
            matrixmultiply::sgemm(
                oc,
                k,
                n,
                1.0,
                self.weight.data().as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data_mut().as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let b = self.bias.data().to_vec();
        let y = out.data_mut();
        for o in 0..oc {
            let bo = b[o];
            for v in &mut y[o * n..(o + 1) * n] {
                *v += bo;
            }
        }
        debug_assert!(out.all_finite(), "conv forward produced non-finite values");
        Ok(out)
    }

    /// Exact gradients of the forward map: returns the input gradient and
    /// the parameter gradients for `upstream` of the forward output shape.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<(Tensor, Conv2dGrads)> {
        let out_shape = self.out_shape(input.shape())?;
        if upstream.shape() != out_shape {
            return Err(Error::shape(
                format!("{:?}", out_shape),
                format!("{:?}", upstream.shape()),
            ));
        }
        let [oc, oh, ow] = out_shape;
        let ic = self.in_channels();
        let (kh, kw) = self.kernel();
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let s = self.stride;
        let k = ic * kh * kw;
        let n = oh * ow;
        let col = self.im2col(input, oh, ow);
        let up = upstream.data();

        let mut dw = self.weight.zeros_like();
        // dW[oc x k] = up[oc x n] * col^T[n x k]
        unsafe {
            matrixmultiply::sgemm(
                oc,
                n,
                k,
                1.0,
                up.as_ptr(),
                n as isize,
                1,
                col.as_ptr(),
                1,
                n as isize,
                0.0,
                dw.data_mut().as_mut_ptr(),
                k as isize,
                1,
            );
        }

        let mut db = self.bias.zeros_like();
        for o in 0..oc {
            db.data_mut()[o] = up[o * n..(o + 1) * n].iter().sum();
        }

        // dcol[k x n] = W^T[k x oc] * up[oc x n]
        let mut dcol = vec![0.0f32; k * n];
        unsafe {
            matrixmultiply::sgemm(
                k,
                oc,
                n,
                1.0,
                self.weight.data().as_ptr(),
                1,
                k as isize,
                up.as_ptr(),
                n as isize,
                1,
                0.0,
                dcol.as_mut_ptr(),
                n as isize,
                1,
            );
        }

        // col2im: scatter-add patch gradients back onto the input grid.
        let mut din = input.zeros_like();
        let dx = din.data_mut();
        for i in 0..ic {
            for ky in 0..kh {
                for kx in 0..kw {
                    let krow = ((i * kh + ky) * kw + kx) * n;
                    for oy in 0..oh {
                        let xb = i * h * w + (oy * s + ky) * w + kx;
                        let cb = krow + oy * ow;
                        if s == 1 {
                            let src = &dcol[cb..cb + ow];
                            let dst = &mut dx[xb..xb + ow];
                            for ox in 0..ow {
                                dst[ox] += src[ox];
                            }
                        } else {
                            for ox in 0..ow {
                                dx[xb + ox * s] += dcol[cb + ox];
                            }
                        }
                    }
                }
            }
        }
        Ok((din, Conv2dGrads { weight: dw, bias: db }))
    }
}

/// Affine map `y = Wx + b` with weight layout `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameter gradients produced by [`Linear::backward`].
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::shape(
                format!("[{}]", self.in_dim()),
                format!("{:?}", input.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (out_d, in_d) = (self.out_dim(), self.in_dim());
        let x = input.data();
        let w = self.weight.data();
        let mut y = Tensor::zeros(&[out_d]);
        for o in 0..out_d {
            let row = &w[o * in_d..(o + 1) * in_d];
            let mut acc = self.bias.data()[o];
            for i in 0..in_d {
                acc += row[i] * x[i];
            }
            y.data_mut()[o] = acc;
        }
        debug_assert!(y.all_finite(), "linear forward produced non-finite values");
        Ok(y)
    }

    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<(Tensor, LinearGrads)> {
        self.check_input(input)?;
        if upstream.len() != self.out_dim() {
            return Err(Error::shape(
                format!("[{}]", self.out_dim()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let (out_d, in_d) = (self.out_dim(), self.in_dim());
        let x = input.data();
        let w = self.weight.data();
        let up = upstream.data();

        let mut din = input.zeros_like();
        let mut dw = self.weight.zeros_like();
        let dx = din.data_mut();
        for o in 0..out_d {
            let u = up[o];
            let wrow = &w[o * in_d..(o + 1) * in_d];
            let dwrow = &mut dw.data_mut()[o * in_d..(o + 1) * in_d];
            for i in 0..in_d {
                dx[i] += u * wrow[i];
                dwrow[i] = u * x[i];
            }
        }
        let db = Tensor::from_vec(&[out_d], up.to_vec())?;
        Ok((din, LinearGrads { weight: dw, bias: db }))
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of [`relu`]; the subgradient at 0 is taken as 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    debug_assert_eq!(input.shape(), upstream.shape());
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Normalized pixel-center coordinates along an axis of length `n`, mapped
/// linearly onto [-1, 1] (a single-element axis maps to 0).
pub fn axis_coords(n: usize) -> Vec<f32> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f32 / (n - 1) as f32)
        .collect()
}

/// Per-channel softmax attention weights for a `[c, h, w]` map.
fn softmax_weights(input: &Tensor, temperature: f32) -> Vec<f32> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let hw = h * w;
    let x = input.data();
    let mut alpha = vec![0.0f32; c * hw];
    for ch in 0..c {
        let z = &x[ch * hw..(ch + 1) * hw];
        let a = &mut alpha[ch * hw..(ch + 1) * hw];
        let m = z.iter().fold(f32::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut sum = 0.0f32;
        for (ai, &zi) in a.iter_mut().zip(z) {
            let e = ((zi - m) / temperature).exp();
            *ai = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for ai in a.iter_mut() {
            *ai *= inv;
        }
    }
    alpha
}

/// Spatial softmax: converts each channel of a `[c, h, w]` map into the
/// softmax-weighted expected pixel coordinate, yielding `[2c]` values
/// ordered `(x_0, y_0, x_1, y_1, ...)`, each in [-1, 1].
pub fn spatial_softmax(input: &Tensor, temperature: f32) -> Result<Tensor> {
    if temperature <= 0.0 {
        return Err(Error::Argument(format!(
            "spatial softmax temperature must be positive, got {temperature}"
        )));
    }
    if input.shape().len() != 3 {
        return Err(Error::shape("[c, h, w]", format!("{:?}", input.shape())));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let hw = h * w;
    let xs = axis_coords(w);
    let ys = axis_coords(h);
    let alpha = softmax_weights(input, temperature);

    let mut out = Tensor::zeros(&[2 * c]);
    for ch in 0..c {
        let a = &alpha[ch * hw..(ch + 1) * hw];
        let mut fx = 0.0f32;
        let mut fy = 0.0f32;
        for i in 0..h {
            let row = &a[i * w..(i + 1) * w];
            let mut rowsum = 0.0f32;
            for j in 0..w {
                fx += row[j] * xs[j];
                rowsum += row[j];
            }
            fy += rowsum * ys[i];
        }
        out.data_mut()[2 * ch] = fx;
        out.data_mut()[2 * ch + 1] = fy;
    }
    debug_assert!(out.all_finite(), "spatial softmax produced non-finite values");
    Ok(out)
}

/// Gradient of [`spatial_softmax`] with respect to the input map.
pub fn spatial_softmax_backward(
    input: &Tensor,
    temperature: f32,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if upstream.len() != 2 * c {
        return Err(Error::shape(
            format!("[{}]", 2 * c),
            format!("{:?}", upstream.shape()),
        ));
    }
    let hw = h * w;
    let xs = axis_coords(w);
    let ys = axis_coords(h);
    let alpha = softmax_weights(input, temperature);
    let fp = spatial_softmax(input, temperature)?;

    let mut din = input.zeros_like();
    let inv_t = 1.0 / temperature;
    for ch in 0..c {
        let a = &alpha[ch * hw..(ch + 1) * hw];
        let (gx, gy) = (upstream.data()[2 * ch], upstream.data()[2 * ch + 1]);
        let (fx, fy) = (fp.data()[2 * ch], fp.data()[2 * ch + 1]);
        let d = &mut din.data_mut()[ch * hw..(ch + 1) * hw];
        for i in 0..h {
            for j in 0..w {
                d[i * w + j] = inv_t * a[i * w + j] * (gx * (xs[j] - fx) + gy * (ys[i] - fy));
            }
        }
    }
    Ok(din)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_identity_passes_input_through() {
        let mut fc = Linear::new(3, 3);
        for i in 0..3 {
            fc.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[3], vec![0.5, -2.0, 7.0]).unwrap();
        let y = fc.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
        // Identity layer: input grad equals upstream grad.
        let up = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let (dx, _) = fc.backward(&x, &up).unwrap();
        assert_eq!(dx.data(), up.data());
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn one_by_one_conv_hand_value() {
        // 1x1 conv, single channel, weight=3, bias=1 on input [[2]] -> [[7]].
        let mut conv = Conv2d::new(1, 1, 1, 1);
        conv.weight.data_mut()[0] = 3.0;
        conv.bias.data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut conv = Conv2d::new(2, 1, 2, 1);
        for (i, v) in conv.weight.data_mut().iter_mut().enumerate() {
            *v = i as f32 * 0.1 - 0.3;
        }
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(|i| i as f32).collect()).unwrap();
        let up = Tensor::zeros(&[2, 2, 2]);
        let (dx, g) = conv.backward(&x, &up).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_error_names_both_shapes() {
        let conv = Conv2d::new(1, 2, 3, 1);
        let x = Tensor::zeros(&[1, 4, 4]);
        let err = conv.forward(&x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, h, w]") && msg.contains("[1, 4, 4]"), "{msg}");
    }

    #[test]
    fn spatial_softmax_uniform_map_is_centered() {
        let x = Tensor::from_vec(&[1, 4, 6], vec![0.7; 24]).unwrap();
        let fp = spatial_softmax(&x, 1.0).unwrap();
        assert!(fp.data()[0].abs() < 1e-6 && fp.data()[1].abs() < 1e-6);
    }

    #[test]
    fn spatial_softmax_corner_spike() {
        // Spike of 50 at (0,0) of an 8x8 map pins the feature point to the
        // corner's normalized coordinates (-1, -1).
        let mut x = Tensor::zeros(&[1, 8, 8]);
        x.data_mut()[0] = 50.0;
        let fp = spatial_softmax(&x, 1.0).unwrap();
        assert!((fp.data()[0] + 1.0).abs() < 1e-3, "fx = {}", fp.data()[0]);
        assert!((fp.data()[1] + 1.0).abs() < 1e-3, "fy = {}", fp.data()[1]);
    }

    #[test]
    fn spatial_softmax_rejects_bad_temperature() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(
            spatial_softmax(&x, 0.0),
            Err(crate::error::Error::Argument(_))
        ));
    }
}
