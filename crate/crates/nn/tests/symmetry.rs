use ndarray::Array2;
use ppa_nn::{actor_specs, critic_specs, Architecture, NetDims, Network};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permute_rows(x: &Array2<f64>, perm: &[usize], width: usize) -> Array2<f64> {
    let mut out = x.clone();
    for b in 0..x.nrows() {
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..width {
                out[[b, dst * width + c]] = x[[b, src * width + c]];
            }
        }
    }
    out
}

fn dims(users: usize) -> NetDims {
    NetDims {
        users,
        state_width: 6,
        hidden_width: 8 * users,
        hidden_layers: 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn equivariant_actor_commutes_with_permutations(users in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims(users);
        let net = Network::<f64>::new(actor_specs(Architecture::Symmetric, d).unwrap(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, users * d.state_width), |_| rng.random_range(-2.0..2.0));
        let mut perm: Vec<usize> = (0..users).collect();
        perm.shuffle(&mut rng);
        let y = net.predict(x.view()).unwrap();
        let y_perm = net.predict(permute_rows(&x, &perm, d.state_width).view()).unwrap();
        let expected = permute_rows(&y, &perm, 1);
        for (a, b) in y_perm.iter().zip(expected.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn invariant_critic_ignores_permutations(users in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims(users);
        let net = Network::<f64>::new(critic_specs(Architecture::Symmetric, d).unwrap(), &mut rng).unwrap();
        let w = d.state_width + 1;
        let x = Array2::from_shape_fn((3, users * w), |_| rng.random_range(-2.0..2.0));
        let mut perm: Vec<usize> = (0..users).collect();
        perm.shuffle(&mut rng);
        let y = net.predict(x.view()).unwrap();
        let y_perm = net.predict(permute_rows(&x, &perm, w).view()).unwrap();
        for (a, b) in y_perm.iter().zip(y.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn fully_connected_actor_is_not_equivariant_in_general() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = dims(3);
    let net = Network::<f64>::new(actor_specs(Architecture::FullyConnected, d).unwrap(), &mut rng).unwrap();
    let x = Array2::from_shape_fn((1, 3 * d.state_width), |_| rng.random_range(-2.0..2.0));
    let perm = [1, 2, 0];
    let y = net.predict(x.view()).unwrap();
    let y_perm = net.predict(permute_rows(&x, &perm, d.state_width).view()).unwrap();
    let expected = permute_rows(&y, &perm, 1);
    let gap = y_perm.iter().zip(expected.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6);
}
