use proptest::prelude::*;

use ergocell::environment::{sample_env, shift_env, BumpParams, EnvSpec};
use ergocell::harness::{fit_rate, parse_point, point_label};
use ergocell::linalg::Sym2;
use ergocell::model::{
    eval_f, eval_h, CoefMap, ControlMap, EllipticFamily, EllipticSpec, HamiltonianSpec,
    StructuralConstants,
};
use ergocell::periodize::{eta_schedule_hjb, smoothstep, CutoffProfile, ETA_MAX};

fn env_spec(kind: u8, dim: usize) -> EnvSpec {
    match kind % 3 {
        0 => EnvSpec::checkerboard(dim, 0.0, 3.0, 0.25),
        1 => EnvSpec::poisson_bump(
            dim,
            0.5,
            2.0,
            BumpParams {
                amplitude: 1.0,
                radius: 0.3,
                intensity: 1.5,
                max_points: 4,
            },
        ),
        _ => EnvSpec::checkerboard(dim, -1.0, 1.0, 0.0),
    }
}

proptest! {
    #[test]
    fn cutoff_stays_in_unit_interval(eta in 0.01f64..=ETA_MAX, y0 in 0.0f64..1.0, y1 in 0.0f64..1.0) {
        let c = CutoffProfile::new(eta).unwrap();
        for y in [vec![y0], vec![y0, y1]] {
            let z = c.eval(&y);
            prop_assert!((0.0..=1.0).contains(&z), "zeta({y:?}) = {z}");
        }
    }

    #[test]
    fn cutoff_is_zero_inside_and_one_near_faces(eta in 0.01f64..=ETA_MAX, t in 0.0f64..1.0, s in 0.0f64..1.0) {
        let c = CutoffProfile::new(eta).unwrap();
        let interior = (t - 0.5) * (1.0 - 2.0 * eta);
        let face = 0.5 - 0.5 * eta * s;
        prop_assert_eq!(c.eval(&[interior]), 0.0);
        prop_assert_eq!(c.eval(&[interior, interior]), 0.0);
        prop_assert_eq!(c.eval(&[face]), 1.0);
        prop_assert_eq!(c.eval(&[interior, face]), 1.0);
        prop_assert_eq!(c.eval(&[0.5]), 1.0);
    }

    #[test]
    fn smoothstep_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(smoothstep(lo) <= smoothstep(hi));
    }

    #[test]
    fn hjb_schedule_in_range(l in 1.0f64..1e12, a_bar in 0.01f64..0.99) {
        let e = eta_schedule_hjb(l, a_bar);
        prop_assert!(e.eta > 0.0 && e.eta <= ETA_MAX);
        if !e.clamped {
            prop_assert_eq!(e.eta, l.powf(-a_bar / (4.0 * (a_bar + 1.0))));
        }
    }

    #[test]
    fn stationarity_bit_exact(kind in 0u8..3, seed in any::<u64>(), k in -50i64..50, m in -50i64..50, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let env = sample_env(&env_spec(kind, 2), seed).unwrap();
        let shifted = shift_env(&env, &[k, m]).unwrap();
        let xd = (x * 64.0).floor() / 64.0;
        let yd = (y * 64.0).floor() / 64.0;
        prop_assert_eq!(
            shifted.potential(&[xd, yd]).to_bits(),
            env.potential(&[xd + k as f64, yd + m as f64]).to_bits()
        );
        prop_assert!((shifted.potential(&[x, y]) - env.potential(&[x + k as f64, y + m as f64])).abs() <= 1e-9);
    }

    #[test]
    fn potential_within_range(kind in 0u8..3, seed in any::<u64>(), x in -100.0f64..100.0) {
        let spec = env_spec(kind, 1);
        let env = sample_env(&spec, seed).unwrap();
        let v = env.potential(&[x]);
        prop_assert!(v >= spec.v_min() - 1e-12 && v <= spec.v_max() + 1e-12);
    }

    #[test]
    fn hamiltonian_convex_in_p(seed in any::<u64>(), x in -20.0f64..20.0, p in prop::array::uniform2(-5.0f64..5.0), q in prop::array::uniform2(-5.0f64..5.0), t in 0.0f64..1.0, gamma in 1.05f64..=2.0) {
        let env = sample_env(&EnvSpec::checkerboard(2, 0.0, 3.0, 0.25), seed).unwrap();
        let spec = HamiltonianSpec::with_default_constants(env, 1.0, gamma).unwrap();
        let mid = [t * p[0] + (1.0 - t) * q[0], t * p[1] + (1.0 - t) * q[1]];
        let xs = [x, 0.5 * x];
        let lhs = eval_h(&spec, &mid, &xs);
        let rhs = t * eval_h(&spec, &p, &xs) + (1.0 - t) * eval_h(&spec, &q, &xs);
        prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn elliptic_operator_is_monotone(seed in any::<u64>(), x in prop::array::uniform2(-10.0f64..10.0), h in prop::array::uniform3(-3.0f64..3.0), b in prop::array::uniform4(-1.0f64..1.0)) {
        let env = sample_env(&EnvSpec::checkerboard(2, -1.0, 1.0, 0.25), seed).unwrap();
        let spec = EllipticSpec::new(
            env,
            EllipticFamily::Bellman {
                controls: vec![ControlMap {
                    a11: CoefMap::Affine { offset: 1.0, slope: 0.5 },
                    a22: CoefMap::Affine { offset: 1.5, slope: -0.25 },
                    a12: CoefMap::Affine { offset: 0.0, slope: 0.25 },
                    f: CoefMap::Affine { offset: 0.0, slope: 0.5 },
                }],
            },
            StructuralConstants { lambda_bar: 0.3, big_lambda_bar: 2.0, rho_slope: 10.0, ..StructuralConstants::default() },
        )
        .unwrap();
        let xm = Sym2::new(h[0], h[1], h[2]);
        let y = Sym2::new(b[0] * b[0] + b[1] * b[1], b[2] * b[2] + b[3] * b[3], b[0] * b[2] + b[1] * b[3]);
        let f0 = eval_f(&spec, &xm, &x);
        let f1 = eval_f(&spec, &xm.add(&y), &x);
        prop_assert!(f1 <= f0 + 1e-12);
        let tr = y.xx + y.yy;
        prop_assert!(f0 - f1 >= 0.3 * tr - 1e-9 && f0 - f1 <= 2.0 * tr + 1e-9);
    }

    #[test]
    fn fit_rate_recovers_planted_exponent(slope in -3.0f64..0.0, c in 0.01f64..100.0) {
        let pairs: Vec<(f64, f64)> = [8.0f64, 16.0, 32.0, 64.0, 128.0].iter().map(|&l| (l, c * l.powf(slope))).collect();
        let fit = fit_rate(&pairs).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-9);
    }

    #[test]
    fn point_labels_round_trip(p in prop::collection::vec(-1e6f64..1e6, 1..5)) {
        prop_assert_eq!(parse_point(&point_label(&p)).unwrap(), p);
    }
}
