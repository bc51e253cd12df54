//! Rough throughput probe for the conv kernels (run with --ignored).

use pskill::nn::{Conv2d, Tensor};
use std::time::Instant;

fn filled(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i % 13) as f32 - 6.0) * 0.1).collect()).unwrap()
}

fn bench_stack(label: &str, convs: &[(usize, usize, usize, usize)], in_shape: [usize; 3], iters: usize) {
    // (out_c, in_c, kernel, stride)
    let layers: Vec<Conv2d> = convs
        .iter()
        .map(|&(oc, ic, k, s)| {
            let mut c = Conv2d::new(oc, ic, k, s);
            for (i, v) in c.weight.data_mut().iter_mut().enumerate() {
                *v = ((i % 7) as f32 - 3.0) * 0.05;
            }
            c
        })
        .collect();

    let x0 = filled(&[in_shape[0], in_shape[1], in_shape[2]]);
    let mut macs = 0usize;

    let t0 = Instant::now();
    for _ in 0..iters {
        let mut x = x0.clone();
        let mut inputs = Vec::new();
        for l in &layers {
            inputs.push(x.clone());
            x = l.forward(&x).unwrap();
        }
        // backward with upstream = output
        let mut up = x.clone();
        for (l, inp) in layers.iter().zip(&inputs).rev() {
            let (dx, _g) = l.backward(inp, &up).unwrap();
            up = dx;
        }
    }
    let dt = t0.elapsed().as_secs_f64();

    // count MACs once
    let mut shape = in_shape;
    for &(oc, ic, k, s) in convs {
        let oh = (shape[1] - k) / s + 1;
        let ow = (shape[2] - k) / s + 1;
        macs += oc * oh * ow * ic * k * k;
        shape = [oc, oh, ow];
    }
    let total_macs = macs * 3 * iters; // fwd + ~2x bwd
    println!(
        "{label}: {:.1} ms/iter, ~{:.2} GMAC/s ({:.2} GFLOP/s)",
        dt * 1000.0 / iters as f64,
        total_macs as f64 / dt / 1e9,
        2.0 * total_macs as f64 / dt / 1e9
    );
}

#[test]
#[ignore]
fn bench_fast_profile_convs() {
    // lean fast-profile candidate: 5x5x8 s3 -> 3x3x16 -> 3x3x16 on 4x60x80
    bench_stack(
        "lean  (5x5x8s3,3x3x16,3x3x16) 60x80",
        &[(8, 4, 5, 3), (16, 8, 3, 1), (16, 16, 3, 1)],
        [4, 60, 80],
        30,
    );
    // spec full-profile stack at fast resolution for comparison
    bench_stack(
        "full@80 (7x7x16s2,3x3x32,3x3x32)",
        &[(16, 4, 7, 2), (32, 16, 3, 1), (32, 32, 3, 1)],
        [4, 60, 80],
        10,
    );
}

#[test]
#[ignore]
fn bench_gemm_shapes() {
    // conv2 of the lean stack as GEMM: M=16 (out ch), K=72, N=408 (positions)
    for (m, k, n, label) in [
        (16usize, 72usize, 408usize, "conv2-lean per-sample"),
        (16, 144, 330, "conv3-lean per-sample"),
        (8, 100, 494, "conv1-lean per-sample"),
        (16, 72, 408 * 64, "conv2-lean batched x64"),
        (16, 144, 330 * 64, "conv3-lean batched x64"),
        (8, 100, 494 * 64, "conv1-lean batched x64"),
    ] {
        let a = vec![0.5f32; m * k];
        let b = vec![0.25f32; k * n];
        let mut c = vec![0.0f32; m * n];
        let iters = if n > 10000 { 40 } else { 400 };
        let t0 = Instant::now();
        for _ in 0..iters {
            unsafe {
                matrixmultiply::sgemm(
                    m, k, n, 1.0,
                    a.as_ptr(), k as isize, 1,
                    b.as_ptr(), n as isize, 1,
                    0.0,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        let gmacs = (m * k * n * iters) as f64 / dt / 1e9;
        println!("{label}: {:.2} GMAC/s ({:.2} GFLOP/s)", gmacs, 2.0 * gmacs);
    }
}
