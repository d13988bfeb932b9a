//! Analytic gradients vs. the central finite-difference oracle, for every
//! differentiable primitive and for the full composite network.

mod common;

use common::{finite_diff_grad, max_rel_err, random_vec, seeded_rng, FD_STEP, GRAD_TOL};
use rand::Rng;
use sall_core::network::{
    forward_pass, init_params, LayerSpec, NetworkSpec, TaskId,
};
use sall_core::tensor::{Tape, Tensor};

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(11);
    for _ in 0..4 {
        let a_data = random_vec(&mut rng, 12, -2.0, 2.0);
        let b_data = random_vec(&mut rng, 8, -2.0, 2.0);
        let loss_of = |a: &[f64], b: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let av = tape.leaf(&Tensor::new(vec![3, 4], a.to_vec()).unwrap(), true);
            let bv = tape.leaf(&Tensor::new(vec![4, 2], b.to_vec()).unwrap(), true);
            let c = tape.matmul(av, bv).unwrap();
            let s = tape.sum(c);
            tape.value(s).item().unwrap()
        };
        // Analytic.
        let mut tape = Tape::new();
        let av = tape.leaf(&Tensor::new(vec![3, 4], a_data.clone()).unwrap(), true);
        let bv = tape.leaf(&Tensor::new(vec![4, 2], b_data.clone()).unwrap(), true);
        let c = tape.matmul(av, bv).unwrap();
        let s = tape.sum(c);
        let grads = tape.backward(s).unwrap();
        let ga = grads.get(av).unwrap().to_vec();
        let gb = grads.get(bv).unwrap().to_vec();

        let na = finite_diff_grad(&mut |a| loss_of(a, &b_data), &a_data, FD_STEP);
        let nb = finite_diff_grad(&mut |b| loss_of(&a_data, b), &b_data, FD_STEP);
        assert!(max_rel_err(&ga, &na) < GRAD_TOL, "dA: {:?} vs {:?}", ga, na);
        assert!(max_rel_err(&gb, &nb) < GRAD_TOL, "dB: {:?} vs {:?}", gb, nb);

        // d(sum)/dA[0,0] equals the sum of B's first row.
        let expected = b_data[0] + b_data[1];
        assert!((ga[0] - expected).abs() < 1e-10);
    }
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(12);
    for &(stride, padding) in &[(1usize, 0usize), (1, 1), (2, 1)] {
        let input_data = random_vec(&mut rng, 2 * 5 * 5, -1.0, 1.0);
        let kernel_data = random_vec(&mut rng, 3 * 2 * 3 * 3, -1.0, 1.0);
        let loss_of = |inp: &[f64], ker: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let iv = tape.leaf(&Tensor::new(vec![2, 5, 5], inp.to_vec()).unwrap(), true);
            let kv = tape.leaf(&Tensor::new(vec![3, 2, 3, 3], ker.to_vec()).unwrap(), true);
            let c = tape.conv2d(iv, kv, stride, padding).unwrap();
            // Weighted sum keeps the loss sensitive to every output position.
            let r = tape.relu(c);
            let s = tape.sum(r);
            tape.value(s).item().unwrap()
        };
        let mut tape = Tape::new();
        let iv = tape.leaf(&Tensor::new(vec![2, 5, 5], input_data.clone()).unwrap(), true);
        let kv = tape.leaf(&Tensor::new(vec![3, 2, 3, 3], kernel_data.clone()).unwrap(), true);
        let c = tape.conv2d(iv, kv, stride, padding).unwrap();
        let r = tape.relu(c);
        let s = tape.sum(r);
        let grads = tape.backward(s).unwrap();
        let gi = grads.get(iv).unwrap().to_vec();
        let gk = grads.get(kv).unwrap().to_vec();

        let ni = finite_diff_grad(&mut |i| loss_of(i, &kernel_data), &input_data, FD_STEP);
        let nk = finite_diff_grad(&mut |k| loss_of(&input_data, k), &kernel_data, FD_STEP);
        assert!(
            max_rel_err(&gi, &ni) < GRAD_TOL,
            "conv d_input failed at stride {stride} pad {padding}"
        );
        assert!(
            max_rel_err(&gk, &nk) < GRAD_TOL,
            "conv d_kernel failed at stride {stride} pad {padding}"
        );
    }
}

#[test]
fn relu_gradient_matches_finite_differences_away_from_zero() {
    let mut rng = seeded_rng(13);
    // Exclude entries within 1e-3 of the kink.
    let x: Vec<f64> = (0..40)
        .map(|_| {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() < 1e-3 {
                v + 0.5
            } else {
                v
            }
        })
        .collect();
    let loss_of = |x: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.leaf(&Tensor::new(vec![x.len()], x.to_vec()).unwrap(), true);
        let r = tape.relu(xv);
        let s = tape.sum(r);
        tape.value(s).item().unwrap()
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(&Tensor::new(vec![x.len()], x.clone()).unwrap(), true);
    let r = tape.relu(xv);
    let s = tape.sum(r);
    let grads = tape.backward(s).unwrap();
    let g = grads.get(xv).unwrap().to_vec();
    let n = finite_diff_grad(&mut |x| loss_of(x), &x, FD_STEP);
    assert!(max_rel_err(&g, &n) < GRAD_TOL);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(14);
    for &t in &[1.0, 2.0, 5.0] {
        let z = random_vec(&mut rng, 6, -3.0, 3.0);
        // Direction weights make the loss depend on all outputs unevenly.
        let w = random_vec(&mut rng, 6, -1.0, 1.0);
        let loss_of = |z: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let zv = tape.leaf(&Tensor::from_vec(z.to_vec()), true);
            let wv = tape.constant(&Tensor::from_vec(w.clone()));
            let p = tape.softmax_t(zv, t).unwrap();
            let m = tape.mul(p, wv).unwrap();
            let s = tape.sum(m);
            tape.value(s).item().unwrap()
        };
        let mut tape = Tape::new();
        let zv = tape.leaf(&Tensor::from_vec(z.clone()), true);
        let wv = tape.constant(&Tensor::from_vec(w.clone()));
        let p = tape.softmax_t(zv, t).unwrap();
        let m = tape.mul(p, wv).unwrap();
        let s = tape.sum(m);
        let grads = tape.backward(s).unwrap();
        let g = grads.get(zv).unwrap().to_vec();
        let n = finite_diff_grad(&mut |z| loss_of(z), &z, FD_STEP);
        assert!(max_rel_err(&g, &n) < GRAD_TOL, "softmax grad at T={t}");
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_target_at_t1() {
    let mut rng = seeded_rng(15);
    let z = random_vec(&mut rng, 5, -2.0, 2.0);
    let mut y = random_vec(&mut rng, 5, 0.01, 1.0);
    let sum: f64 = y.iter().sum();
    for v in y.iter_mut() {
        *v /= sum;
    }
    let targets = Tensor::new(vec![1, 5], y.clone()).unwrap();

    let mut tape = Tape::new();
    let zv = tape.leaf(&Tensor::new(vec![1, 5], z.clone()).unwrap(), true);
    let loss = tape.cross_entropy_soft(zv, &targets, 1.0).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(zv).unwrap().to_vec();

    // Analytic identity: grad = softmax(z) - y for one row at T=1.
    let mut p = z.clone();
    let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in p.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in p.iter_mut() {
        *v /= s;
    }
    for j in 0..5 {
        assert!((g[j] - (p[j] - y[j])).abs() < 1e-9, "identity at {j}");
    }

    let loss_of = |z: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let zv = tape.leaf(&Tensor::new(vec![1, 5], z.to_vec()).unwrap(), true);
        let loss = tape.cross_entropy_soft(zv, &targets, 1.0).unwrap();
        tape.value(loss).item().unwrap()
    };
    let n = finite_diff_grad(&mut |z| loss_of(z), &z, FD_STEP);
    assert!(max_rel_err(&g, &n) < GRAD_TOL);
}

/// A small spec exercising every layer kind, cheap enough for per-parameter
/// finite differences.
fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [3, 8, 8],
        trunk: vec![
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_dim: 4 },
            LayerSpec::Relu,
        ],
        heads: vec![
            sall_core::network::HeadSpec { task: TaskId::new("a"), classes: 3 },
            sall_core::network::HeadSpec { task: TaskId::new("b"), classes: 2 },
        ],
    }
}

#[test]
fn composite_network_gradients_match_finite_differences() {
    let spec = tiny_spec();
    let mut rng = seeded_rng(16);
    let batch_data = random_vec(&mut rng, 2 * 3 * 8 * 8, 0.0, 1.0);
    let batch = Tensor::new(vec![2, 3, 8, 8], batch_data).unwrap();
    let ta = TaskId::new("a");
    let tb = TaskId::new("b");
    let targets_a = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.2, 0.3, 0.5]).unwrap();
    let targets_b = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.0, 1.0]).unwrap();

    let loss_with = |params: &sall_core::network::ParameterSet| -> f64 {
        let mut pass = forward_pass(params, &spec, &batch, true).unwrap();
        let la = pass
            .tape
            .cross_entropy_rows(pass.logits[&ta], &targets_a, &[1.0, 3.0], &[1.0, 1.0])
            .unwrap();
        let lb = pass
            .tape
            .cross_entropy_rows(pass.logits[&tb], &targets_b, &[3.0, 1.0], &[1.0, 1.0])
            .unwrap();
        let total = pass.tape.add(la, lb).unwrap();
        pass.tape.value(total).item().unwrap()
    };

    let params = init_params(&spec, 7).unwrap();
    let mut pass = forward_pass(&params, &spec, &batch, true).unwrap();
    let la = pass
        .tape
        .cross_entropy_rows(pass.logits[&ta], &targets_a, &[1.0, 3.0], &[1.0, 1.0])
        .unwrap();
    let lb = pass
        .tape
        .cross_entropy_rows(pass.logits[&tb], &targets_b, &[3.0, 1.0], &[1.0, 1.0])
        .unwrap();
    let total = pass.tape.add(la, lb).unwrap();
    let (named, _) = pass.backward(total).unwrap();

    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let value = params.get(&name).unwrap().clone();
        let analytic = named.get(&name).unwrap_or_else(|| panic!("no grad for {name}"));
        let shape = value.shape().to_vec();
        let mut f = |x: &[f64]| -> f64 {
            let mut p = params.clone();
            p.set(&name, Tensor::new(shape.clone(), x.to_vec()).unwrap()).unwrap();
            loss_with(&p)
        };
        let numeric = finite_diff_grad(&mut f, value.data(), FD_STEP);
        let err = max_rel_err(analytic, &numeric);
        assert!(err < GRAD_TOL, "parameter {name}: max rel err {err}");
    }
}

#[test]
fn max_pool_and_bias_gradients_match_finite_differences() {
    let mut rng = seeded_rng(17);
    let input_data = random_vec(&mut rng, 2 * 4 * 4, -1.0, 1.0);
    let bias_data = random_vec(&mut rng, 2, -0.5, 0.5);
    let loss_of = |inp: &[f64], bias: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let iv = tape.leaf(&Tensor::new(vec![1, 2, 4, 4], inp.to_vec()).unwrap(), true);
        let bv = tape.leaf(&Tensor::from_vec(bias.to_vec()), true);
        let wb = tape.channel_bias(iv, bv).unwrap();
        let p = tape.max_pool2d(wb, 2).unwrap();
        let g = tape.global_avg_pool(p).unwrap();
        let s = tape.sum(g);
        tape.value(s).item().unwrap()
    };
    let mut tape = Tape::new();
    let iv = tape.leaf(&Tensor::new(vec![1, 2, 4, 4], input_data.clone()).unwrap(), true);
    let bv = tape.leaf(&Tensor::from_vec(bias_data.clone()), true);
    let wb = tape.channel_bias(iv, bv).unwrap();
    let p = tape.max_pool2d(wb, 2).unwrap();
    let g = tape.global_avg_pool(p).unwrap();
    let s = tape.sum(g);
    let grads = tape.backward(s).unwrap();
    let gi = grads.get(iv).unwrap().to_vec();
    let gb = grads.get(bv).unwrap().to_vec();
    let ni = finite_diff_grad(&mut |i| loss_of(i, &bias_data), &input_data, FD_STEP);
    let nb = finite_diff_grad(&mut |b| loss_of(&input_data, b), &bias_data, FD_STEP);
    assert!(max_rel_err(&gi, &ni) < GRAD_TOL);
    assert!(max_rel_err(&gb, &nb) < GRAD_TOL);
}
