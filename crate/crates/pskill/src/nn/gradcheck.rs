//! Finite-difference gradient checking.
//!
//! A [`DiffUnit`] packs a differentiable computation into a scalar loss over
//! a flat coordinate vector (parameters first, then inputs). `grad_check`
//! runs central differences on the unit's f64 reference path and compares
//! against the analytic gradient from the production backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::nn::{layers, reference, Tensor};

/// Coordinates are probed exhaustively up to this count, then subsampled.
pub const SUBSAMPLE_LIMIT: usize = 10_000;

/// Relative error with an absolute floor:
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A differentiable computation reduced to a scalar loss over flat
/// coordinates, with a production gradient path and an independent f64
/// reference path for the oracle.
pub trait DiffUnit {
    fn name(&self) -> &str;

    /// Named coordinate segments, in flat-layout order.
    fn segments(&self) -> Vec<(String, usize)>;

    /// Baseline coordinates.
    fn coords(&self) -> Vec<f32>;

    /// Scalar loss along the production forward path.
    fn loss(&self, coords: &[f32]) -> f32;

    /// Scalar loss along the f64 reference path (used for differencing).
    fn loss_ref(&self, coords: &[f64]) -> f64;

    /// Analytic gradient from the production backward pass.
    fn grad(&self, coords: &[f32]) -> Vec<f32>;
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentReport {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub unit: String,
    pub epsilon: f64,
    pub threshold: f64,
    pub segments: Vec<SegmentReport>,
    pub max_rel_err: f64,
    /// |f32 production loss - f64 reference loss| at the baseline; a large
    /// value means the two forward paths disagree.
    pub forward_gap: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{:<28} max_rel_err={:.3e}  forward_gap={:.3e}  {}",
            self.unit,
            self.max_rel_err,
            self.forward_gap,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Central-difference check of `unit`'s analytic gradient.
///
/// Every coordinate is probed (or a random subsample above
/// [`SUBSAMPLE_LIMIT`]); failures are data in the report, not errors.
pub fn grad_check(
    unit: &dyn DiffUnit,
    epsilon: f64,
    threshold: f64,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport {
    let x0 = unit.coords();
    let analytic = unit.grad(&x0);
    assert_eq!(analytic.len(), x0.len(), "gradient/coordinate length mismatch");

    let x64: Vec<f64> = x0.iter().map(|&v| v as f64).collect();
    let forward_gap = (unit.loss(&x0) as f64 - unit.loss_ref(&x64)).abs();

    let n = x0.len();
    let picked: Vec<usize> = if n <= SUBSAMPLE_LIMIT {
        (0..n).collect()
    } else {
        (0..SUBSAMPLE_LIMIT).map(|_| rng.gen_range(0..n)).collect()
    };

    let segments = unit.segments();
    let seg_of = |idx: usize| -> usize {
        let mut off = 0;
        for (s, (_, len)) in segments.iter().enumerate() {
            if idx < off + len {
                return s;
            }
            off += len;
        }
        segments.len() - 1
    };

    let mut seg_reports: Vec<SegmentReport> = segments
        .iter()
        .map(|(name, len)| SegmentReport {
            name: name.clone(),
            len: *len,
            checked: 0,
            max_rel_err: 0.0,
        })
        .collect();

    let mut probe = x64.clone();
    for &i in &picked {
        let base = x64[i];
        probe[i] = base + epsilon;
        let lp = unit.loss_ref(&probe);
        probe[i] = base - epsilon;
        let lm = unit.loss_ref(&probe);
        probe[i] = base;
        let numeric = (lp - lm) / (2.0 * epsilon);
        let err = rel_err(analytic[i] as f64, numeric);
        let s = seg_of(i);
        seg_reports[s].checked += 1;
        if err > seg_reports[s].max_rel_err {
            seg_reports[s].max_rel_err = err;
        }
    }

    let max_rel_err = seg_reports
        .iter()
        .map(|s| s.max_rel_err)
        .fold(0.0f64, f64::max);
    GradCheckReport {
        unit: unit.name().to_string(),
        epsilon,
        threshold,
        pass: max_rel_err < threshold,
        segments: seg_reports,
        max_rel_err,
        forward_gap,
    }
}

fn fill_uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Unit for a fully-connected layer: loss = <upstream, Wx + b>.
pub struct LinearUnit {
    out_dim: usize,
    in_dim: usize,
    upstream: Vec<f32>,
    base: Vec<f32>,
}

impl LinearUnit {
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let n_params = out_dim * in_dim + out_dim;
        let mut base = fill_uniform(rng, n_params + in_dim, 1.0);
        // keep weights moderate so gradients are well-scaled
        for v in base.iter_mut().take(out_dim * in_dim) {
            *v *= 0.5;
        }
        let upstream = fill_uniform(rng, out_dim, 1.0);
        LinearUnit {
            out_dim,
            in_dim,
            upstream,
            base,
        }
    }

    fn split<'a, T: Copy>(&self, coords: &'a [T]) -> (&'a [T], &'a [T], &'a [T]) {
        let nw = self.out_dim * self.in_dim;
        (
            &coords[..nw],
            &coords[nw..nw + self.out_dim],
            &coords[nw + self.out_dim..],
        )
    }
}

impl DiffUnit for LinearUnit {
    fn name(&self) -> &str {
        "linear"
    }

    fn segments(&self) -> Vec<(String, usize)> {
        vec![
            ("weight".into(), self.out_dim * self.in_dim),
            ("bias".into(), self.out_dim),
            ("input".into(), self.in_dim),
        ]
    }

    fn coords(&self) -> Vec<f32> {
        self.base.clone()
    }

    fn loss(&self, coords: &[f32]) -> f32 {
        let (w, b, x) = self.split(coords);
        let layer = layers::Linear {
            weight: Tensor::from_vec(&[self.out_dim, self.in_dim], w.to_vec()).unwrap(),
            bias: Tensor::from_vec(&[self.out_dim], b.to_vec()).unwrap(),
        };
        let y = layer
            .forward(&Tensor::from_vec(&[self.in_dim], x.to_vec()).unwrap())
            .unwrap();
        y.data()
            .iter()
            .zip(&self.upstream)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn loss_ref(&self, coords: &[f64]) -> f64 {
        let (w, b, x) = self.split(coords);
        let y = reference::linear(x, w, b, self.out_dim);
        y.iter()
            .zip(&self.upstream)
            .map(|(a, &b)| a * b as f64)
            .sum()
    }

    fn grad(&self, coords: &[f32]) -> Vec<f32> {
        let (w, b, x) = self.split(coords);
        let layer = layers::Linear {
            weight: Tensor::from_vec(&[self.out_dim, self.in_dim], w.to_vec()).unwrap(),
            bias: Tensor::from_vec(&[self.out_dim], b.to_vec()).unwrap(),
        };
        let input = Tensor::from_vec(&[self.in_dim], x.to_vec()).unwrap();
        let up = Tensor::from_vec(&[self.out_dim], self.upstream.clone()).unwrap();
        let (dx, grads) = layer.backward(&input, &up).unwrap();
        let mut out = grads.weight.into_vec();
        out.extend(grads.bias.into_vec());
        out.extend(dx.into_vec());
        out
    }
}

/// Unit for a convolution layer: loss = <upstream, conv(x)>.
pub struct ConvUnit {
    out_c: usize,
    in_shape: [usize; 3],
    kernel: usize,
    stride: usize,
    upstream: Vec<f32>,
    base: Vec<f32>,
}

impl ConvUnit {
    pub fn new(
        out_c: usize,
        in_shape: [usize; 3],
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let [ic, h, w] = in_shape;
        let n_params = out_c * ic * kernel * kernel + out_c;
        let n_input = ic * h * w;
        let base = fill_uniform(rng, n_params + n_input, 0.8);
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let upstream = fill_uniform(rng, out_c * oh * ow, 1.0);
        ConvUnit {
            out_c,
            in_shape,
            kernel,
            stride,
            upstream,
            base,
        }
    }

    fn nw(&self) -> usize {
        self.out_c * self.in_shape[0] * self.kernel * self.kernel
    }
}

impl DiffUnit for ConvUnit {
    fn name(&self) -> &str {
        "conv2d"
    }

    fn segments(&self) -> Vec<(String, usize)> {
        let [ic, h, w] = self.in_shape;
        vec![
            ("weight".into(), self.nw()),
            ("bias".into(), self.out_c),
            ("input".into(), ic * h * w),
        ]
    }

    fn coords(&self) -> Vec<f32> {
        self.base.clone()
    }

    fn loss(&self, coords: &[f32]) -> f32 {
        let [ic, h, w] = self.in_shape;
        let nw = self.nw();
        let layer = layers::Conv2d {
            weight: Tensor::from_vec(
                &[self.out_c, ic, self.kernel, self.kernel],
                coords[..nw].to_vec(),
            )
            .unwrap(),
            bias: Tensor::from_vec(&[self.out_c], coords[nw..nw + self.out_c].to_vec()).unwrap(),
            stride: self.stride,
        };
        let x = Tensor::from_vec(&[ic, h, w], coords[nw + self.out_c..].to_vec()).unwrap();
        let y = layer.forward(&x).unwrap();
        y.data()
            .iter()
            .zip(&self.upstream)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn loss_ref(&self, coords: &[f64]) -> f64 {
        let nw = self.nw();
        let (y, _) = reference::conv2d(
            &coords[nw + self.out_c..],
            self.in_shape,
            &coords[..nw],
            &coords[nw..nw + self.out_c],
            self.out_c,
            self.kernel,
            self.stride,
        );
        y.iter()
            .zip(&self.upstream)
            .map(|(a, &b)| a * b as f64)
            .sum()
    }

    fn grad(&self, coords: &[f32]) -> Vec<f32> {
        let [ic, h, w] = self.in_shape;
        let nw = self.nw();
        let layer = layers::Conv2d {
            weight: Tensor::from_vec(
                &[self.out_c, ic, self.kernel, self.kernel],
                coords[..nw].to_vec(),
            )
            .unwrap(),
            bias: Tensor::from_vec(&[self.out_c], coords[nw..nw + self.out_c].to_vec()).unwrap(),
            stride: self.stride,
        };
        let x = Tensor::from_vec(&[ic, h, w], coords[nw + self.out_c..].to_vec()).unwrap();
        let out_shape = layer.out_shape(x.shape()).unwrap();
        let up = Tensor::from_vec(&out_shape, self.upstream.clone()).unwrap();
        let (dx, grads) = layer.backward(&x, &up).unwrap();
        let mut out = grads.weight.into_vec();
        out.extend(grads.bias.into_vec());
        out.extend(dx.into_vec());
        out
    }
}

/// Unit for the rectifier: loss = <upstream, relu(x)>. Inputs are sampled
/// away from the kink at 0 so central differences are valid.
pub struct ReluUnit {
    upstream: Vec<f32>,
    base: Vec<f32>,
}

impl ReluUnit {
    pub fn new(n: usize, epsilon: f32, rng: &mut ChaCha8Rng) -> Self {
        let base: Vec<f32> = (0..n)
            .map(|_| {
                let mag = rng.gen_range(2.0 * epsilon..1.0);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        ReluUnit {
            upstream: fill_uniform(rng, n, 1.0),
            base,
        }
    }
}

impl DiffUnit for ReluUnit {
    fn name(&self) -> &str {
        "relu"
    }

    fn segments(&self) -> Vec<(String, usize)> {
        vec![("input".into(), self.base.len())]
    }

    fn coords(&self) -> Vec<f32> {
        self.base.clone()
    }

    fn loss(&self, coords: &[f32]) -> f32 {
        let x = Tensor::from_vec(&[coords.len()], coords.to_vec()).unwrap();
        layers::relu(&x)
            .data()
            .iter()
            .zip(&self.upstream)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn loss_ref(&self, coords: &[f64]) -> f64 {
        reference::relu(coords)
            .iter()
            .zip(&self.upstream)
            .map(|(a, &b)| a * b as f64)
            .sum()
    }

    fn grad(&self, coords: &[f32]) -> Vec<f32> {
        let x = Tensor::from_vec(&[coords.len()], coords.to_vec()).unwrap();
        let up = Tensor::from_vec(&[coords.len()], self.upstream.clone()).unwrap();
        layers::relu_backward(&x, &up).into_vec()
    }
}

/// Unit for the spatial softmax: loss = <upstream, feature points>.
pub struct SpatialSoftmaxUnit {
    shape: [usize; 3],
    temperature: f32,
    upstream: Vec<f32>,
    base: Vec<f32>,
}

impl SpatialSoftmaxUnit {
    pub fn new(shape: [usize; 3], temperature: f32, rng: &mut ChaCha8Rng) -> Self {
        let [c, h, w] = shape;
        SpatialSoftmaxUnit {
            shape,
            temperature,
            upstream: fill_uniform(rng, 2 * c, 1.0),
            base: fill_uniform(rng, c * h * w, 2.0),
        }
    }
}

impl DiffUnit for SpatialSoftmaxUnit {
    fn name(&self) -> &str {
        "spatial_softmax"
    }

    fn segments(&self) -> Vec<(String, usize)> {
        vec![("input".into(), self.base.len())]
    }

    fn coords(&self) -> Vec<f32> {
        self.base.clone()
    }

    fn loss(&self, coords: &[f32]) -> f32 {
        let x = Tensor::from_vec(&self.shape, coords.to_vec()).unwrap();
        layers::spatial_softmax(&x, self.temperature)
            .unwrap()
            .data()
            .iter()
            .zip(&self.upstream)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn loss_ref(&self, coords: &[f64]) -> f64 {
        reference::spatial_softmax(coords, self.shape, self.temperature as f64)
            .iter()
            .zip(&self.upstream)
            .map(|(a, &b)| a * b as f64)
            .sum()
    }

    fn grad(&self, coords: &[f32]) -> Vec<f32> {
        let x = Tensor::from_vec(&self.shape, coords.to_vec()).unwrap();
        let up = Tensor::from_vec(&[self.upstream.len()], self.upstream.clone()).unwrap();
        layers::spatial_softmax_backward(&x, self.temperature, &up)
            .unwrap()
            .into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const EPS: f64 = 1e-3;
    const THRESHOLD: f64 = 1e-3;

    fn check(unit: &dyn DiffUnit, seed: u64) -> GradCheckReport {
        let mut rng = rng::stream(seed, &[0xC0FFEE]);
        grad_check(unit, EPS, THRESHOLD, &mut rng)
    }

    #[test]
    fn linear_passes() {
        let mut r = rng::stream(11, &[1]);
        let unit = LinearUnit::new(5, 7, &mut r);
        let rep = check(&unit, 11);
        assert!(rep.pass, "{}", rep.summary_line());
        assert!(rep.forward_gap < 1e-4);
    }

    #[test]
    fn conv_passes() {
        let mut r = rng::stream(12, &[1]);
        let unit = ConvUnit::new(2, [2, 4, 4], 3, 1, &mut r);
        let rep = check(&unit, 12);
        assert!(rep.pass, "{}", rep.summary_line());
    }

    #[test]
    fn strided_conv_passes() {
        let mut r = rng::stream(13, &[1]);
        let unit = ConvUnit::new(3, [2, 7, 7], 3, 2, &mut r);
        let rep = check(&unit, 13);
        assert!(rep.pass, "{}", rep.summary_line());
    }

    #[test]
    fn relu_passes_off_kink() {
        let mut r = rng::stream(14, &[1]);
        let unit = ReluUnit::new(32, EPS as f32, &mut r);
        let rep = check(&unit, 14);
        assert!(rep.pass, "{}", rep.summary_line());
    }

    #[test]
    fn spatial_softmax_passes() {
        let mut r = rng::stream(15, &[1]);
        let unit = SpatialSoftmaxUnit::new([2, 5, 6], 1.0, &mut r);
        let rep = check(&unit, 15);
        assert!(rep.pass, "{}", rep.summary_line());
    }
}
