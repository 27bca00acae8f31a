//! Rough single-thread throughput of the convolution kernels.
//!
//! `cargo run --release -p patchwork-autograd --example conv_throughput`

use std::time::Instant;

use patchwork_autograd::{grad, Array, ConvGeom, Var};

fn main() {
    let cases = [
        // (batch, cin, cout, size, kernel, geom)
        (16, 8, 8, 64, 3, ConvGeom::new(1, 1, 1)),
        (16, 32, 32, 16, 3, ConvGeom::new(1, 1, 1)),
        (16, 5, 16, 64, 7, ConvGeom::new(1, 3, 1)),
        (16, 16, 32, 64, 4, ConvGeom::new(2, 1, 1)),
        (16, 64, 64, 16, 3, ConvGeom::new(1, 2, 2)),
    ];
    for (n, cin, cout, size, k, g) in cases {
        let x = Var::leaf(Array::<f32>::from_fn(&[n, cin, size, size], |i| (i as f32 * 0.01).sin()));
        let w = Var::leaf(Array::<f32>::from_fn(&[cout, cin, k, k], |i| (i as f32 * 0.1).cos() * 0.05));
        let reps = 5;
        let t = Instant::now();
        let mut out = None;
        for _ in 0..reps {
            out = Some(x.conv2d(&w, g));
        }
        let fwd = t.elapsed().as_secs_f64() / reps as f64;
        let y = out.unwrap();
        let macs = (y.value().len() * cin * k * k) as f64;
        let t = Instant::now();
        for _ in 0..reps {
            let _ = grad(&y.sum(), &[&x, &w], false);
        }
        let bwd = t.elapsed().as_secs_f64() / reps as f64;
        println!(
            "n={n} {cin}->{cout} {size}px k{k} {g:?}: fwd {:.2} ms ({:.1} GFLOP/s), bwd {:.2} ms ({:.1} GFLOP/s)",
            fwd * 1e3,
            2.0 * macs / fwd / 1e9,
            bwd * 1e3,
            4.0 * macs / bwd / 1e9
        );
    }
}
