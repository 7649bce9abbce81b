use std::f64::consts::TAU;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use ergocell::environment::{sample_env, EnvSpec};
use ergocell::oracle::{
    brute_force_min, fbar_linear_1d, hbar_1d_first_order, hbar_1d_first_order_full,
    hbar_flat_spot_value,
};

fn cosine_v(x: f64) -> f64 {
    2.0 + (TAU * x).cos()
}

fn a_periodic(x: f64) -> f64 {
    1.0 / (1.0 + 0.5 * (TAU * x).cos())
}

fn f_periodic(x: f64) -> f64 {
    0.3 * (TAU * x).sin() + 0.1
}

#[test]
fn cosine_large_p_self_consistent() {
    let a = hbar_1d_first_order(&cosine_v, 1.0, 2.0, 5.0, 4096);
    let b = hbar_1d_first_order(&cosine_v, 1.0, 2.0, 5.0, 8192);
    assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    // ∫√(V + c) = 5 with V averaging 2 gives c close to 23
    assert!((a - 23.0).abs() < 0.01);
}

#[test]
fn oracle_outputs_stable_under_refinement() {
    for p in [0.0, 0.5, 1.0, 2.0, 5.0] {
        for gamma in [1.5, 2.0, 3.0] {
            let a = hbar_1d_first_order(&cosine_v, 1.0, gamma, p, 2048);
            let b = hbar_1d_first_order(&cosine_v, 1.0, gamma, p, 4096);
            assert!((a - b).abs() < 1e-8, "p = {p}, gamma = {gamma}: {a} vs {b}");
        }
    }
    for p in [-1.0, 0.0, 2.0] {
        let a = fbar_linear_1d(&a_periodic, &f_periodic, p, 4096);
        let b = fbar_linear_1d(&a_periodic, &f_periodic, p, 8192);
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn flat_spot_width() {
    let exact = 2.0 * 2f64.sqrt() / std::f64::consts::PI;
    let width_err =
        |n| (hbar_1d_first_order_full(&cosine_v, 1.0, 2.0, 0.0, n).flat_width - exact).abs();
    // the integrand has a kink at min V, so the midpoint rule is second order
    let (coarse, fine) = (width_err(4096), width_err(65536));
    assert!(coarse < 1e-7, "{coarse}");
    assert!(fine < 1e-9 && fine < coarse / 100.0, "{coarse} -> {fine}");
    let g = hbar_1d_first_order_full(&cosine_v, 1.0, 2.0, 0.0, 4096).flat_width;
    for k in 0..=20 {
        let p = 0.9 * g * k as f64 / 20.0;
        assert_abs_diff_eq!(
            hbar_1d_first_order(&cosine_v, 1.0, 2.0, p, 4096),
            -1.0,
            epsilon = 1e-9
        );
    }
    let mut prev = hbar_1d_first_order(&cosine_v, 1.0, 2.0, 1.1 * g, 4096);
    assert!(prev > -1.0);
    for k in 1..=20 {
        let next = hbar_1d_first_order(&cosine_v, 1.0, 2.0, 1.1 * g + 0.2 * k as f64, 4096);
        assert!(next > prev);
        prev = next;
    }
}

#[test]
fn flat_spot_value_examples() {
    let env = sample_env(&EnvSpec::constant(1, 1.7), 0).unwrap();
    let fs = hbar_flat_spot_value(&env, 10.0, 257);
    assert_eq!(fs.value, -1.7);
    assert_eq!(fs.raw_min, 1.7);

    let env = sample_env(&EnvSpec::cosine(1, 1.0, 3.0, Some(0.0)), 0).unwrap();
    assert_abs_diff_eq!(
        hbar_flat_spot_value(&env, 1.0, 257).value,
        -1.0,
        epsilon = 1e-9
    );

    let env = sample_env(&EnvSpec::checkerboard(1, 0.0, 3.0, 0.25), 11).unwrap();
    let mins: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|&b| hbar_flat_spot_value(&env, b, (256.0 * b) as usize + 1).raw_min)
        .collect();
    assert!(mins.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{mins:?}");
}

#[test]
fn fbar_linear_examples() {
    for p in [-2.0, 0.0, 1.5] {
        assert_abs_diff_eq!(
            fbar_linear_1d(&|_| 1.0, &|_| 0.0, p, 512),
            -p,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            fbar_linear_1d(&|_| 2.0, &|_| 6.0, p, 512),
            6.0 - 2.0 * p,
            epsilon = 1e-12
        );
    }
}

#[test]
fn brute_force_examples() {
    let (v, at) = brute_force_min(&|x| cosine_v(x[0]), &[0.0], &[1.0], 16);
    assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(at[0], 0.5, epsilon = 1e-6);
    let (c, _) = brute_force_min(&|_| 4.25, &[0.0, 0.0], &[2.0, 3.0], 5);
    assert_eq!(c, 4.25);

    let f = |x: &[f64]| (x[0] - 0.377).powi(2) + (x[1] + 0.21).powi(2);
    let n = 7;
    let raw = (0..n * n)
        .map(|i| {
            let (a, b) = ((i % n) as f64, (i / n) as f64);
            f(&[
                -1.0 + 2.0 * a / (n - 1) as f64,
                -1.0 + 2.0 * b / (n - 1) as f64,
            ])
        })
        .fold(f64::INFINITY, f64::min);
    let (refined, _) = brute_force_min(&f, &[-1.0, -1.0], &[1.0, 1.0], n);
    assert!(refined <= raw);
}

proptest! {
    #[test]
    fn constant_potential_closed_form(v0 in -3.0f64..3.0, c1 in 0.2f64..5.0, gamma in 1.2f64..4.0, p in -4.0f64..4.0) {
        let h = hbar_1d_first_order(&|_| v0, c1, gamma, p, 512);
        let exact = c1 * p.abs().powf(gamma) - v0;
        prop_assert!((h - exact).abs() <= 1e-8 * (1.0 + exact.abs()), "{h} vs {exact}");
    }

    #[test]
    fn oracle_coercivity_sandwich(p in -6.0f64..6.0) {
        // power family on 2 + cos: C = 3 bounds coercivity and growth
        let h = hbar_1d_first_order(&cosine_v, 1.0, 2.0, p, 1024);
        let c = 3.0;
        prop_assert!(h >= p * p / c - c);
        prop_assert!(h <= c * p * p + c);
    }
}
