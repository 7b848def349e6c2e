use ppa_core::config::SimConfig;
use ppa_core::waterfill::{Waterfill, WaterfillError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

fn link() -> Waterfill {
    SimConfig::default().waterfill()
}

fn gain_at(d: f64) -> f64 {
    10f64.powf(-SimConfig::default().path_loss_db(d) / 10.0)
}

/// Exponential integral E1 by power series (x < 1) or continued fraction.
fn e1(x: f64) -> f64 {
    if x < 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            sum += term / k as f64;
            if term.abs() < 1e-18 {
                break;
            }
        }
        -0.577_215_664_901_532_9 - x.ln() - sum
    } else {
        // Lentz evaluation of e^-x / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let delta = c * d;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

#[test]
fn exponential_integral_oracle_is_sane() {
    // reference values from tables
    assert!((e1(0.1) - 1.822_923_958_419_390_7).abs() < 1e-12);
    assert!((e1(1.0) - 0.219_383_934_395_520_27).abs() < 1e-12);
    assert!((e1(5.0) - 0.001_148_295_591_275_325_9).abs() < 1e-15);
}

#[test]
fn quadrature_matches_closed_form() {
    let wf = link();
    for (d, nu) in [(200.0, 1.0), (400.0, 0.3), (900.0, 5.0), (250.0, 1e-3), (1500.0, 40.0)] {
        let alpha = gain_at(d);
        let g0 = wf.noise_power / (alpha * nu);
        let rate = wf.bandwidth / std::f64::consts::LN_2 * e1(g0);
        let power = nu * (-g0).exp() - wf.noise_power / alpha * e1(g0);
        let r = wf.expected_rate(alpha, nu);
        let p = wf.expected_power(alpha, nu);
        assert!((r - rate).abs() <= 1e-8 * rate, "d {d} nu {nu}: {r} vs {rate}");
        assert!((p - power).abs() <= 1e-8 * power, "d {d} nu {nu}: {p} vs {power}");
    }
}

#[test]
fn quadrature_matches_monte_carlo() {
    let wf = link();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (d, nu) in [(300.0, 10.0), (700.0, 200.0)] {
        let alpha = gain_at(d);
        let n = 10_000_000;
        let (mut rate, mut power) = (0.0, 0.0);
        for _ in 0..n {
            let g: f64 = Exp1.sample(&mut rng);
            let p = (nu - wf.noise_power / (alpha * g)).max(0.0);
            if p > 0.0 {
                rate += wf.bandwidth * (alpha * g * p / wf.noise_power).ln_1p() / std::f64::consts::LN_2;
                power += p;
            }
        }
        let (rate, power) = (rate / n as f64, power / n as f64);
        let r = wf.expected_rate(alpha, nu);
        let p = wf.expected_power(alpha, nu);
        assert!((r - rate).abs() < 1e-3 * r, "rate {r} vs MC {rate}");
        assert!((p - power).abs() < 1e-3 * p, "power {p} vs MC {power}");
    }
}

#[test]
fn rate_and_power_increase_with_level() {
    let wf = link();
    let alpha = gain_at(500.0);
    assert_eq!(wf.expected_rate(alpha, 0.0), 0.0);
    let mut nu = 1.0;
    let (mut r0, mut p0) = (0.0, 0.0);
    for _ in 0..30 {
        let (r, p) = (wf.expected_rate(alpha, nu), wf.expected_power(alpha, nu));
        assert!(r > r0 && p > p0);
        r0 = r;
        p0 = p;
        nu *= 2.0;
    }
}

#[test]
fn inversion_round_trip() {
    let wf = link();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let alpha = gain_at(rng.random_range(200.0..1500.0));
        let target = rng.random_range(0.0..8e6);
        let sol = wf.water_level_for_rate(alpha, target).unwrap();
        let back = wf.expected_rate(alpha, sol.water_level);
        assert!((back - target).abs() <= (1e-6 * target).max(1.0), "{back} vs {target}");
        assert!((sol.expected_power - wf.expected_power(alpha, sol.water_level)).abs() <= 1e-9 * sol.expected_power);
    }
    let zero = wf.water_level_for_rate(gain_at(300.0), 0.0).unwrap();
    assert_eq!((zero.water_level, zero.expected_power), (0.0, 0.0));
}

#[test]
fn ceiling_saturates() {
    let wf = Waterfill {
        rate_ceiling: Some(5e6),
        ..link()
    };
    assert!(matches!(
        wf.water_level_for_rate(gain_at(300.0), 6e6),
        Err(WaterfillError::Saturated { .. })
    ));
    assert!(wf.water_level_for_rate(gain_at(300.0), 4e6).is_ok());
}

#[test]
fn power_is_convex_in_rate() {
    let wf = link();
    for d in [250.0, 600.0, 1200.0] {
        let alpha = gain_at(d);
        let rates: Vec<f64> = (0..50).map(|i| i as f64 * 2e5).collect();
        let power: Vec<f64> = rates
            .iter()
            .map(|&r| wf.water_level_for_rate(alpha, r).unwrap().expected_power)
            .collect();
        let scale = power.last().unwrap();
        for w in power.windows(3) {
            let second = w[0] - 2.0 * w[1] + w[2];
            assert!(second >= -1e-9 * scale, "d {d}: second difference {second}");
        }
    }
}

#[test]
fn flat_channel_gets_flat_power() {
    let wf = link();
    let alpha = gain_at(400.0);
    let nu = 20.0;
    let g = 1.3;
    let slots = wf.slot_powers(alpha, nu, &[g; 8]);
    let expected = nu - wf.noise_power / (alpha * g);
    assert!(expected > 0.0);
    assert!(slots.powers.iter().all(|&p| (p - expected).abs() < 1e-12));
    let none = wf.slot_powers(alpha, 0.0, &[g; 8]);
    assert!(none.powers.iter().all(|&p| p == 0.0));
    assert_eq!((none.delivered_bits, none.energy), (0.0, 0.0));
}

#[test]
fn many_slots_converge_to_expectation() {
    let wf = Waterfill {
        slot_duration: 1e-5,
        ..link()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (d, target) in [(300.0, 4e6), (800.0, 1e6)] {
        let alpha = gain_at(d);
        let sol = wf.water_level_for_rate(alpha, target).unwrap();
        let gains: Vec<f64> = (0..100_000).map(|_| Exp1.sample(&mut rng)).collect();
        let slots = wf.slot_powers(alpha, sol.water_level, &gains);
        let rate = slots.delivered_bits / wf.frame_duration;
        let power = slots.radiated_energy / wf.frame_duration;
        assert!((rate - target).abs() < 0.01 * target, "{rate} vs {target}");
        assert!((power - sol.expected_power).abs() < 0.02 * sol.expected_power);
    }
}

#[test]
fn water_filling_beats_any_split_on_two_states() {
    let wf = Waterfill {
        slot_duration: 0.5,
        ..link()
    };
    let alpha = gain_at(500.0);
    let gains = [0.4, 2.2];
    let nu = 40.0;
    let slots = wf.slot_powers(alpha, nu, &gains);
    assert!(slots.powers.iter().all(|&p| p > 0.0));
    let bits = slots.delivered_bits;
    let tau = wf.slot_duration;
    let bits_of = |g: f64, p: f64| tau * wf.bandwidth * (alpha * g * p / wf.noise_power).ln_1p() / std::f64::consts::LN_2;
    // give the weak state power p1 and solve the strong state's power for the same bits
    let mut best = f64::INFINITY;
    let p_max = 2.0 * nu;
    for i in 0..=2000 {
        let p1 = p_max * i as f64 / 2000.0;
        let rest = bits - bits_of(gains[0], p1);
        if rest < 0.0 {
            break;
        }
        let p2 = ((rest / (tau * wf.bandwidth) * std::f64::consts::LN_2).exp_m1()) * wf.noise_power / (alpha * gains[1]);
        best = best.min(tau * (p1 + p2));
    }
    assert!(slots.radiated_energy <= best * (1.0 + 1e-9), "{} vs {best}", slots.radiated_energy);
    // the equal-power allocation delivering the same bits costs more
    let (mut lo, mut hi) = (0.0, 10.0 * nu);
    for _ in 0..200 {
        let p = 0.5 * (lo + hi);
        if bits_of(gains[0], p) + bits_of(gains[1], p) < bits {
            lo = p;
        } else {
            hi = p;
        }
    }
    assert!(slots.radiated_energy < 2.0 * tau * hi);
}
