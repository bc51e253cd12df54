//! Naive f64 forward implementations used by the finite-difference oracle.
//!
//! These mirror the layer semantics with straightforward quadruple loops and
//! double precision, and are deliberately kept free of the production
//! kernels' loop restructuring. `grad_check` differentiates these with
//! central differences and compares against the production backward pass;
//! tests also compare them against the f32 forwards directly.

/// Valid cross-correlation. Returns the output and its `[c, h, w]` shape.
pub fn conv2d(
    input: &[f64],
    in_shape: [usize; 3],
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, [usize; 3]) {
    let [ic, h, w] = in_shape;
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = vec![0.0f64; out_c * oh * ow];
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..ic {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let xv = input[i * h * w + (oy * stride + ky) * w + (ox * stride + kx)];
                            let wv = weight[((o * ic + i) * kernel + ky) * kernel + kx];
                            acc += xv * wv;
                        }
                    }
                }
                out[o * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    (out, [out_c, oh, ow])
}

pub fn linear(input: &[f64], weight: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    (0..out_dim)
        .map(|o| {
            let mut acc = bias[o];
            for i in 0..in_dim {
                acc += weight[o * in_dim + i] * input[i];
            }
            acc
        })
        .collect()
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

pub fn spatial_softmax(input: &[f64], shape: [usize; 3], temperature: f64) -> Vec<f64> {
    let [c, h, w] = shape;
    let coord = |i: usize, n: usize| -> f64 {
        if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    let mut out = vec![0.0f64; 2 * c];
    for ch in 0..c {
        let z = &input[ch * h * w..(ch + 1) * h * w];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| ((v - m) / temperature).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let mut fx = 0.0;
        let mut fy = 0.0;
        for i in 0..h {
            for j in 0..w {
                let a = exps[i * w + j] / sum;
                fx += a * coord(j, w);
                fy += a * coord(i, h);
            }
        }
        out[2 * ch] = fx;
        out[2 * ch + 1] = fy;
    }
    out
}
