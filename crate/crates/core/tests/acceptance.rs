//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::f64::consts::TAU;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ergocell::elliptic_solver::{
    ergodic_constant_elliptic_torus, ergodic_constant_periodic_elliptic_unchecked,
};
use ergocell::environment::{sample_env, splitmix64, EnvSpec};
use ergocell::grid::TorusGrid;
use ergocell::harness::{
    check_sandwich, fit_rate, median, median_error_by_l, run_convergence_study, StudyConfig,
    StudyResult,
};
use ergocell::hjb_solver::{
    ergodic_constant_periodic_unchecked, estimate_hbar_reference, SolverParams,
};
use ergocell::linalg::Sym2;
use ergocell::model::{
    CoefMap, ControlMap, EllipticFamily, EllipticSpec, HamiltonianSpec, StructuralConstants,
};
use ergocell::oracle::{fbar_linear_1d, hbar_1d_first_order, hbar_1d_first_order_full};
use ergocell::periodize::{eta_schedule_elliptic, periodize_elliptic, periodize_hjb, F0Choice};
use ergocell::validate::run_validation;

fn report(
    id: u32,
    name: &str,
    pass: bool,
    detail: &str,
    elapsed: Duration,
    budget: Duration,
) -> bool {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    let line = format!(
        "{} criterion {id} ({name}): {detail}; {:.2}s of {}s budget\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    ok
}

fn cosine_v(x: f64) -> f64 {
    2.0 + (TAU * x).cos()
}

fn cosine_hjb() -> HamiltonianSpec {
    let env = sample_env(&EnvSpec::cosine(1, 1.0, 3.0, Some(0.0)), 0).unwrap();
    HamiltonianSpec::with_default_constants(env, 1.0, 2.0).unwrap()
}

fn cosine_reference(spec: &HamiltonianSpec, p: f64) -> f64 {
    let r = estimate_hbar_reference(
        spec,
        &[p],
        &[4e-3, 2e-3, 1e-3],
        1.0,
        2048,
        1e-3,
        &SolverParams::default(),
    )
    .unwrap();
    assert!(
        r.estimate.converged,
        "reference at p = {p} did not converge"
    );
    r.estimate.value
}

#[test]
fn criterion_1_constant_medium() {
    let start = Instant::now();
    let env = sample_env(&EnvSpec::constant(1, 2.0), 0).unwrap();
    let spec = HamiltonianSpec::with_default_constants(env, 1.0, 2.0).unwrap();
    let params = SolverParams::default();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for p in [0.0, 1.0, 2.5] {
        let exact = p * p - 2.0;
        let r = estimate_hbar_reference(&spec, &[p], &[4e-3, 2e-3, 1e-3], 4.0, 64, 1e-3, &params)
            .unwrap();
        let oracle = hbar_1d_first_order(&|_| 2.0, 1.0, 2.0, p, 4096);
        let mut errs = vec![(r.estimate.value - exact).abs(), (oracle - exact).abs()];
        for l in [4.0, 16.0] {
            let per = periodize_hjb(&spec, l, 0.1).unwrap();
            let grid = TorusGrid::new(1, (32.0 * l) as usize, l).unwrap();
            let e = ergodic_constant_periodic_unchecked(&per, &[p], &grid, &params).unwrap();
            assert!(e.converged);
            errs.push((e.value - exact).abs());
            lines.push(format!("p={p} L={l} H_L={:.6}", e.value));
        }
        worst = errs.iter().fold(worst, |a, &b| a.max(b));
    }
    let pass = worst <= 1e-6;
    let ok = report(
        1,
        "constant medium",
        pass,
        &format!(
            "max deviation from |p|^2 - 2 is {worst:.3e} [{}]",
            lines.join(", ")
        ),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

#[test]
fn criterion_2_first_order_oracle() {
    let start = Instant::now();
    let spec = cosine_hjb();
    let mut worst = 0.0f64;
    let mut flat = f64::NAN;
    for p in [0.0, 0.5, 2.0, 5.0] {
        let r = cosine_reference(&spec, p);
        let o = hbar_1d_first_order(&cosine_v, 1.0, 2.0, p, 4096);
        worst = worst.max((r - o).abs());
        if p == 0.0 {
            flat = r;
        }
    }
    let pass = worst <= 2e-3 && (flat + 1.0).abs() <= 2e-3;
    let ok = report(
        2,
        "first-order oracle",
        pass,
        &format!("max |ref - oracle| = {worst:.3e}, flat value {flat:.8}"),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

#[test]
fn criterion_3_flat_spot() {
    let start = Instant::now();
    let spec = cosine_hjb();
    let g = hbar_1d_first_order_full(&cosine_v, 1.0, 2.0, 0.0, 4096).flat_width;
    let values: Vec<f64> = (0..=6)
        .map(|k| cosine_reference(&spec, 0.9 * g * k as f64 / 6.0))
        .collect();
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = report(
        3,
        "flat spot",
        hi - lo <= 5e-3,
        &format!("variation {:.3e} over |p| <= {:.4}", hi - lo, 0.9 * g),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

fn study_config() -> StudyConfig {
    let seeds: Vec<u64> = (1..=16).map(splitmix64).collect();
    let text = serde_json::json!({
        "env": {"kind": "checkerboard", "dimension": 1, "value_range": [0.0, 3.0], "mollify_radius": 0.25},
        "model": {"type": "hjb", "c1": 1.0, "gamma": 2.0},
        "points": [[0.0], [1.0], [2.0]],
        "l_list": [8.0, 16.0, 32.0, 64.0],
        "seeds": seeds,
        "eta": {"mode": "fixed", "eta": 0.1},
        "reference": {
            "method": "delta_extrapolation",
            "deltas": [2e-4, 1e-4, 5e-5],
            "box_len": 128.0,
            "nodes": 4096,
            "box_multiplier": 0.0064
        },
        "nodes_per_unit": 32
    })
    .to_string();
    StudyConfig::from_json(&text).unwrap()
}

fn study() -> &'static (StudyResult, Duration) {
    static STUDY: OnceLock<(StudyResult, Duration)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let result = run_convergence_study(&study_config()).unwrap();
        (result, start.elapsed())
    })
}

#[test]
fn criterion_4_periodization_convergence() {
    let (result, elapsed) = study();
    let medians = median_error_by_l(result);
    let at = |l: f64| medians.iter().find(|m| m.0 == l).map(|m| m.1);
    let (m8, m64) = (at(8.0).unwrap(), at(64.0).unwrap());
    let sandwich = check_sandwich(result, &StructuralConstants::default(), 1e-5).unwrap();
    let top = sandwich.at(64.0).unwrap();
    let converged = result.rows.iter().filter(|r| r.converged).count();
    let pass = m64 <= 0.5 * m8
        && top.upper_seed_pass * 16 >= 15 * top.seeds
        && top.lower_seed_pass * 16 >= 15 * top.seeds
        && sandwich.c_report.is_finite();
    let ok = report(
        4,
        "periodization convergence",
        pass,
        &format!(
            "medians {:?}; L=64 seeds upper {}/{} lower {}/{}; C_report {:.4}; {converged}/{} rows converged",
            medians.iter().map(|m| format!("{:.4}", m.1)).collect::<Vec<_>>(),
            top.upper_seed_pass,
            top.seeds,
            top.lower_seed_pass,
            top.seeds,
            sandwich.c_report,
            result.rows.len()
        ),
        *elapsed,
        Duration::from_secs(20 * 60),
    );
    assert!(ok);
}

#[test]
fn criterion_5_rate_harness() {
    let start = Instant::now();
    let exponent = -0.5 / (4.0 * 1.5);
    let pairs: Vec<(f64, f64)> = [8.0f64, 16.0, 32.0, 64.0]
        .iter()
        .map(|&l| (l, l.powf(exponent)))
        .collect();
    let fit = fit_rate(&pairs).unwrap();
    let synthetic_time = start.elapsed();
    let synthetic_ok =
        (fit.slope + 1.0 / 12.0).abs() <= 1e-10 && synthetic_time <= Duration::from_secs(1);

    let (result, _) = study();
    let study_fit = fit_rate(&median_error_by_l(result)).unwrap();
    let ok = report(
        5,
        "rate harness",
        synthetic_ok && study_fit.slope < 0.0,
        &format!(
            "synthetic slope {:.12} (|err| {:.1e}) in {:.1e}s; study slope {:.4}",
            fit.slope,
            (fit.slope + 1.0 / 12.0).abs(),
            synthetic_time.as_secs_f64(),
            study_fit.slope
        ),
        synthetic_time,
        Duration::from_secs(1),
    );
    assert!(ok);
}

fn reciprocal_cosine_spec(seed: u64) -> EllipticSpec {
    let env = sample_env(&EnvSpec::cosine(1, -1.0, 1.0, None), seed).unwrap();
    let m = CoefMap::Reciprocal {
        offset: 1.0,
        slope: 0.5,
    };
    EllipticSpec::new(
        env,
        EllipticFamily::Linear { a: m, f: m },
        StructuralConstants {
            lambda_bar: 0.6,
            big_lambda_bar: 2.0,
            c_bar: 2.0,
            ..StructuralConstants::default()
        },
    )
    .unwrap()
}

#[test]
fn criterion_6_elliptic_oracle() {
    let start = Instant::now();
    let spec = reciprocal_cosine_spec(3);
    let m = CoefMap::Reciprocal {
        offset: 1.0,
        slope: 0.5,
    };
    let v = |x: f64| spec.env.potential(&[x]);
    let params = SolverParams::default();
    let points = [-1.0, 0.0, 2.0];
    let oracle: Vec<f64> = points
        .iter()
        .map(|&p| fbar_linear_1d(&|x| m.eval(v(x)), &|x| m.eval(v(x)), p, 8192))
        .collect();

    let cell = TorusGrid::new(1, 2048, 1.0).unwrap();
    let mut cell_err = 0.0f64;
    for (&p, &o) in points.iter().zip(&oracle) {
        let e =
            ergodic_constant_elliptic_torus(&spec, &Sym2::new(p, 0.0, 0.0), &cell, &params, None)
                .unwrap();
        assert!(e.converged);
        cell_err = cell_err.max((e.value - o).abs());
    }

    let mut medians = Vec::new();
    for l in [4.0f64, 8.0, 16.0] {
        let eta = eta_schedule_elliptic(l.powi(-3), 1).eta;
        let per = periodize_elliptic(&spec, l, eta, F0Choice::MeanTrace).unwrap();
        let grid = TorusGrid::new(1, (128.0 * l) as usize, l).unwrap();
        let mut errs: Vec<f64> = points
            .iter()
            .zip(&oracle)
            .map(|(&p, &o)| {
                let e = ergodic_constant_periodic_elliptic_unchecked(
                    &per,
                    &Sym2::new(p, 0.0, 0.0),
                    &grid,
                    &params,
                )
                .unwrap();
                assert!(e.converged);
                (e.value - o).abs()
            })
            .collect();
        medians.push(median(&mut errs).unwrap());
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let ok = report(
        6,
        "elliptic oracle",
        cell_err <= 1e-4 && decreasing,
        &format!("cell max error {cell_err:.3e}; periodized median errors {medians:.4?}"),
        start.elapsed(),
        Duration::from_secs(600),
    );
    assert!(ok);
}

#[test]
fn criterion_7_ellipticity_bracket() {
    let start = Instant::now();
    let env = sample_env(&EnvSpec::checkerboard(2, -1.0, 1.0, 0.25), 5).unwrap();
    let (lam, big_lam) = (0.3, 2.0);
    let spec = EllipticSpec::new(
        env,
        EllipticFamily::Bellman {
            controls: vec![ControlMap {
                a11: CoefMap::Affine {
                    offset: 1.0,
                    slope: 0.5,
                },
                a22: CoefMap::Affine {
                    offset: 1.5,
                    slope: -0.25,
                },
                a12: CoefMap::Affine {
                    offset: 0.0,
                    slope: 0.25,
                },
                f: CoefMap::Affine {
                    offset: 0.0,
                    slope: 0.5,
                },
            }],
        },
        StructuralConstants {
            lambda_bar: lam,
            big_lambda_bar: big_lam,
            c_bar: 1.0,
            rho_slope: 10.0,
            ..StructuralConstants::default()
        },
    )
    .unwrap();
    let params = SolverParams::default();
    let l = 4.0f64;
    let eta = eta_schedule_elliptic(l.recip(), 2).eta;
    let per = periodize_elliptic(&spec, l, eta, F0Choice::MeanTrace).unwrap();
    let grid = TorusGrid::new(2, 32, l).unwrap();
    let p = Sym2::new(0.5, -0.3, 0.2);
    let t = 1e-2;
    let base = ergodic_constant_periodic_elliptic_unchecked(&per, &p, &grid, &params).unwrap();
    let bumped = ergodic_constant_periodic_elliptic_unchecked(
        &per,
        &p.add(&Sym2::identity(2).scale(t)),
        &grid,
        &params,
    )
    .unwrap();
    assert!(base.converged && bumped.converged);
    let diff = bumped.value - base.value;
    let tol = params.tol;
    let (lo, hi) = (-big_lam * t * 2.0 - 4.0 * tol, -lam * t * 0.95 + 4.0 * tol);
    let ok = report(
        7,
        "ellipticity bracket",
        lo <= diff && diff <= hi,
        &format!("difference {diff:.6} in [{lo:.6}, {hi:.6}]"),
        start.elapsed(),
        Duration::from_secs(600),
    );
    assert!(ok);
}

#[test]
fn criterion_8_structural_suite() {
    let start = Instant::now();
    let r = run_validation();
    for c in &r.checks {
        println!(
            "  {} {}: {}",
            if c.pass { "ok" } else { "failed" },
            c.name,
            c.detail
        );
    }
    let failed: Vec<&str> = r
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    let ok = report(
        8,
        "structural suite",
        r.all_pass(),
        &format!("{} checks, failed: {failed:?}", r.checks.len()),
        start.elapsed(),
        Duration::from_secs(300),
    );
    assert!(ok);
}
