use ndarray::Array2;
use ppa_nn::{Activation, LayerSpec, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference oracle for `L = sum(c * net(x))`.
fn numeric_gradients(net: &Network<f64>, x: &Array2<f64>, c: &Array2<f64>, h: f64) -> Vec<f64> {
    let loss = |n: &Network<f64>| (n.predict(x.view()).unwrap() * c).sum();
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|i| {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.params_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.params_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn check(specs: Vec<LayerSpec>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(specs, &mut rng).unwrap();
    let x = Array2::from_shape_fn((5, net.input_dim()), |_| rng.random_range(-1.0..1.0));
    let c = Array2::from_shape_fn((5, net.output_dim()), |_| rng.random_range(-1.0..1.0));
    net.forward(x.view()).unwrap();
    let (g, dx) = net.backward(c.view()).unwrap();
    let numeric = numeric_gradients(&net, &x, &c, 1e-5);
    let mut worst = g.0.iter().zip(&numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max);

    // input gradient
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[i] += 1e-5;
        xm.as_slice_mut().unwrap()[i] -= 1e-5;
        let n = ((net.predict(xp.view()).unwrap() * &c).sum() - (net.predict(xm.view()).unwrap() * &c).sum()) / 2e-5;
        worst = worst.max(rel_err(dx.as_slice().unwrap()[i], n));
    }
    worst
}

#[test]
fn dense_gradients_match_finite_differences() {
    for (seed, act) in [(1, Activation::ScaledTanh), (2, Activation::Identity)] {
        let e = check(
            vec![
                LayerSpec::dense(6, 8, Activation::Relu),
                LayerSpec::dense(8, 8, Activation::ScaledTanh),
                LayerSpec::dense(8, 3, act),
            ],
            seed,
        );
        assert!(e < 1e-4, "dense max rel err {e}");
    }
}

#[test]
fn equivariant_gradients_match_finite_differences() {
    let e = check(
        vec![
            LayerSpec::equivariant(3, 4, 5, Activation::Relu),
            LayerSpec::equivariant(3, 5, 5, Activation::ScaledTanh),
            LayerSpec::equivariant(3, 5, 1, Activation::ScaledTanh),
        ],
        3,
    );
    assert!(e < 1e-4, "equivariant max rel err {e}");
}

#[test]
fn invariant_gradients_match_finite_differences() {
    let e = check(
        vec![
            LayerSpec::equivariant(4, 3, 4, Activation::ScaledTanh),
            LayerSpec::equivariant(4, 4, 4, Activation::Relu),
            LayerSpec::invariant(4, 4, 1, Activation::Identity),
        ],
        4,
    );
    assert!(e < 1e-4, "invariant max rel err {e}");
}

#[test]
fn densified_network_reproduces_outputs_and_folded_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut shared = Network::<f64>::new(
        vec![
            LayerSpec::equivariant(3, 2, 3, Activation::Relu),
            LayerSpec::equivariant(3, 3, 2, Activation::ScaledTanh),
            LayerSpec::invariant(3, 2, 1, Activation::Identity),
        ],
        &mut rng,
    )
    .unwrap();
    let mut dense = shared.densified();
    let x = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
    let ys = shared.forward(x.view()).unwrap();
    let yd = dense.forward(x.view()).unwrap();
    for (a, b) in ys.iter().zip(yd.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let up = Array2::from_shape_fn((4, 1), |_| rng.random_range(-1.0..1.0));
    let (gs, dxs) = shared.backward(up.view()).unwrap();
    let (gd, dxd) = dense.backward(up.view()).unwrap();
    let folded = shared.fold_dense_gradients(&gd);
    for (a, b) in gs.0.iter().zip(&folded.0) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for (a, b) in dxs.iter().zip(dxd.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}
