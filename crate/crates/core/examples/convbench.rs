//! Op-level timing probe.
use sall_core::tensor::{Tape, Tensor};
use std::time::Instant;

fn timeit(label: &str, reps: usize, mut f: impl FnMut()) {
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    println!("{label}: {:.2}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

fn main() {
    let b = 16;
    let input = Tensor::filled(vec![b, 3, 64, 64], 0.5);
    let kernels = Tensor::filled(vec![8, 3, 3, 3], 0.1);
    let reps = 20;

    timeit("conv fwd", reps, || {
        let mut tape = Tape::new();
        let iv = tape.constant(&input);
        let kv = tape.leaf(&kernels, false);
        let _ = tape.conv2d(iv, kv, 1, 1).unwrap();
    });

    let big = Tensor::filled(vec![b, 8, 64, 64], 0.5);
    timeit("relu on 512k", reps, || {
        let mut tape = Tape::new();
        let v = tape.constant(&big);
        let _ = tape.relu(v);
    });
    timeit("leaf(constant) 512k", reps, || {
        let mut tape = Tape::new();
        let _ = tape.constant(&big);
    });

    timeit("conv fwd+bwd(k) sum-loss", reps, || {
        let mut tape = Tape::new();
        let iv = tape.constant(&input);
        let kv = tape.leaf(&kernels, true);
        let c = tape.conv2d(iv, kv, 1, 1).unwrap();
        let s = tape.sum(c);
        let _ = tape.backward(s).unwrap();
    });

    timeit("conv fwd+bwd(input) sum-loss", reps, || {
        let mut tape = Tape::new();
        let iv = tape.leaf(&input, true);
        let kv = tape.leaf(&kernels, false);
        let c = tape.conv2d(iv, kv, 1, 1).unwrap();
        let s = tape.sum(c);
        let _ = tape.backward(s).unwrap();
    });

    // Second conv layer shape: 8->8 at 32x32.
    let in2 = Tensor::filled(vec![b, 8, 32, 32], 0.5);
    let k2 = Tensor::filled(vec![8, 8, 3, 3], 0.1);
    timeit("conv2 fwd", reps, || {
        let mut tape = Tape::new();
        let iv = tape.constant(&in2);
        let kv = tape.leaf(&k2, false);
        let _ = tape.conv2d(iv, kv, 1, 1).unwrap();
    });
    timeit("conv2 fwd+bwd(k+input)", reps, || {
        let mut tape = Tape::new();
        let iv = tape.leaf(&in2, true);
        let kv = tape.leaf(&k2, true);
        let c = tape.conv2d(iv, kv, 1, 1).unwrap();
        let s = tape.sum(c);
        let _ = tape.backward(s).unwrap();
    });
}
