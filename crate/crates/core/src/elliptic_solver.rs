//! Ergodic constants F̄(P), F̄_L(P) and the resolvent problem for uniformly
//! elliptic operators.

use crate::error::{Error, Result};
use crate::grid::{GridField, TorusGrid};
use crate::hjb_solver::{corrector_lipschitz, ErgodicEstimate, SolverParams};
use crate::linalg::Sym2;
use crate::model::EllipticProblem;
use crate::periodize::PeriodizedElliptic;
use crate::scheme::{DiscreteOperator, EllipticOperator};
use crate::solve::{self, RviOptions, Stepping};

const BISECTION_TOL: f64 = 1e-12;

/// Solves F(G + p, x) = c for G by bisection; the bracket comes from the
/// ellipticity constants and is widened by a factor 2.
fn invert_1d(
    problem: &dyn EllipticProblem,
    x: f64,
    p: f64,
    c: f64,
    lo_e: f64,
    hi_e: f64,
) -> Result<f64> {
    let f = |g: f64| problem.eval(&Sym2::new(g + p, 0.0, 0.0), &[x]);
    let gap = f(0.0) - c;
    // F(p + t) − F(p) ∈ [−Λ̄t, −λ̄t] for t ≥ 0, so the root lies between gap/Λ̄ and gap/λ̄.
    let (a, b) = if gap >= 0.0 {
        (gap / hi_e, gap / lo_e)
    } else {
        (gap / lo_e, gap / hi_e)
    };
    let slack = 1.0 + (b - a).abs();
    let (mut lo, mut hi) = (a - slack, b + slack);
    lo = lo.min(2.0 * a);
    hi = hi.max(2.0 * b);
    if f(lo) < c || f(hi) > c {
        return Err(Error::Bracket(format!(
            "no sign change for F(X) = {c} at x = {x} on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// 1D ergodic constant over one period [0, period): the c with
/// ∫ G(c, x) dx = 0, where F(G(c,x) + p, x) = c. Midpoint rule on quad_n nodes.
pub fn ergodic_constant_1d_exact_on(
    problem: &dyn EllipticProblem,
    p: f64,
    period: f64,
    quad_n: usize,
) -> Result<f64> {
    if problem.dimension() != 1 {
        return Err(Error::InvalidParams(
            "exact method is one-dimensional".into(),
        ));
    }
    if quad_n < 2 {
        return Err(Error::InvalidParams(format!("quad_n = {quad_n}")));
    }
    let (lo_e, hi_e) = problem.ellipticity();
    let h = period / quad_n as f64;
    let xs: Vec<f64> = (0..quad_n).map(|i| (i as f64 + 0.5) * h).collect();
    let mean_g = |c: f64| -> Result<f64> {
        let mut s = 0.0;
        for &x in &xs {
            s += invert_1d(problem, x, p, c, lo_e, hi_e)?;
        }
        Ok(s / quad_n as f64)
    };
    let fp: Vec<f64> = xs
        .iter()
        .map(|&x| problem.eval(&Sym2::new(p, 0.0, 0.0), &[x]))
        .collect();
    let mut lo = fp.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = fp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-15 * (1.0 + lo.abs()) {
        return Ok(0.5 * (lo + hi));
    }
    if mean_g(lo)? < 0.0 || mean_g(hi)? > 0.0 {
        return Err(Error::Bracket(format!(
            "mean corrector Hessian has no sign change on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// F̄(P) for a 1-periodic 1D operator.
pub fn ergodic_constant_1d_exact(
    problem: &dyn EllipticProblem,
    p: f64,
    quad_n: usize,
) -> Result<f64> {
    ergodic_constant_1d_exact_on(problem, p, 1.0, quad_n)
}

fn rvi_options(params: &SolverParams) -> RviOptions {
    RviOptions {
        stepping: params.stepping,
        tol: params.tol,
        max_iter: match params.stepping {
            Stepping::Implicit => params.max_iter.min(400),
            Stepping::Explicit => params.max_iter,
        },
        cfl_safety: params.cfl_safety,
        dt: params.dt,
    }
}

/// v^L solving v + F̂(D²_h v + P, L·x) = 0 on the grid, which should cover
/// the unit cell.
pub fn solve_resolvent(
    problem: &dyn EllipticProblem,
    p: &Sym2,
    l: f64,
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<GridField> {
    params.validate()?;
    let op = EllipticOperator::new(problem, grid, p, l)?;
    let n = grid.len();
    let zero = vec![0.0; n];
    let sol = match params.stepping {
        Stepping::Implicit => {
            solve::solve_discounted(&op, 1.0, &zero, vec![0.0; n], 0.0, params.tol)?
        }
        Stepping::Explicit => {
            let dt = solve::explicit_step(&op, 1.0, params.cfl_safety, params.dt)?;
            solve::explicit_discounted(
                &op,
                1.0,
                &zero,
                vec![0.0; n],
                dt,
                params.tol,
                params.max_iter,
            )?
        }
    };
    let values = sol.values();
    let mut g = vec![0.0; n];
    op.apply(&values, &mut g);
    let res = values
        .iter()
        .zip(&g)
        .fold(0.0f64, |m, (v, gv)| m.max((v + gv).abs()));
    if res > params.tol * (1.0 + 1e-6) {
        return Err(Error::NonConvergence {
            iterations: sol.iterations,
            residual: res,
            history: vec![sol.residual, res],
        });
    }
    GridField::new(grid.clone(), values)
}

/// Ergodic constant of an operator periodic on the grid's torus.
pub fn ergodic_constant_elliptic_torus(
    problem: &dyn EllipticProblem,
    p: &Sym2,
    grid: &TorusGrid,
    params: &SolverParams,
    init: Option<Vec<f64>>,
) -> Result<ErgodicEstimate> {
    params.validate()?;
    let op = EllipticOperator::new(problem, grid, p, 1.0)?;
    let init = init.unwrap_or_else(|| vec![0.0; grid.len()]);
    if init.len() != grid.len() {
        return Err(Error::InvalidParams(
            "initial field has the wrong size".into(),
        ));
    }
    let out = solve::relative_value_iteration(&op, init, &rvi_options(params))?;
    let corrector = GridField::new(grid.clone(), out.corrector)?;
    let lipschitz_estimate = corrector_lipschitz(&corrector);
    Ok(ErgodicEstimate {
        value: out.value,
        residual: out.residual,
        iterations: out.iterations,
        corrector,
        lipschitz_estimate,
        converged: out.converged,
    })
}

pub fn ergodic_constant_periodic_elliptic_unchecked(
    prob: &PeriodizedElliptic,
    p: &Sym2,
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<ErgodicEstimate> {
    if grid.period.iter().any(|&t| t != prob.l) {
        return Err(Error::InvalidGrid(format!(
            "grid period {:?} differs from L = {}",
            grid.period, prob.l
        )));
    }
    ergodic_constant_elliptic_torus(prob, p, grid, params, None)
}

/// F̄_L(P) on a grid over one period of the periodized operator.
pub fn ergodic_constant_periodic_elliptic(
    prob: &PeriodizedElliptic,
    p: &Sym2,
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<ErgodicEstimate> {
    let est = ergodic_constant_periodic_elliptic_unchecked(prob, p, grid, params)?;
    if !est.converged {
        return Err(Error::NonConvergence {
            iterations: est.iterations,
            residual: est.residual,
            history: vec![est.residual],
        });
    }
    Ok(est)
}

/// F̄(P) from discounted problems δv + F̂(D²_h v + P, x) = 0 on the torus
/// [−box/2, box/2)^d, read at the origin and extrapolated linearly in δ.
/// Returns (value, spread of the last two extrapolants).
pub fn estimate_fbar_reference(
    problem: &dyn EllipticProblem,
    p: &Sym2,
    delta_seq: &[f64],
    box_len: f64,
    nodes: usize,
    params: &SolverParams,
) -> Result<(f64, f64)> {
    if delta_seq.len() < 2
        || delta_seq.windows(2).any(|w| !(w[1] < w[0]))
        || delta_seq.iter().any(|&d| !(d > 0.0))
    {
        return Err(Error::InvalidParams(format!(
            "discount factors {delta_seq:?} must be positive, decreasing, at least two"
        )));
    }
    params.validate()?;
    let d = problem.dimension();
    let grid = TorusGrid::centered(d, nodes, box_len)?;
    let centre = grid.nearest_node(&vec![0.0; d]);
    let op = EllipticOperator::new(problem, &grid, p, 1.0)?;
    let n = grid.len();
    let zero = vec![0.0; n];
    let mut raw = Vec::with_capacity(delta_seq.len());
    for &delta in delta_seq {
        let sol = solve::solve_discounted(&op, delta, &zero, vec![0.0; n], 0.0, params.tol)?;
        raw.push((delta, -delta * (sol.w[centre] + sol.k)));
    }
    let ext: Vec<f64> = raw
        .windows(2)
        .map(|w| (w[0].0 * w[1].1 - w[1].0 * w[0].1) / (w[0].0 - w[1].0))
        .collect();
    let value = ext[ext.len() - 1];
    let spread = if ext.len() >= 2 {
        (value - ext[ext.len() - 2]).abs()
    } else {
        (value - raw[raw.len() - 1].1).abs()
    };
    Ok((value, spread))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_env, EnvSpec};
    use crate::model::{CoefMap, ControlMap, EllipticFamily, EllipticSpec, StructuralConstants};

    fn constants(lo: f64, hi: f64, c_bar: f64) -> StructuralConstants {
        StructuralConstants {
            lambda_bar: lo,
            big_lambda_bar: hi,
            c_bar,
            ..StructuralConstants::default()
        }
    }

    #[test]
    fn exact_linear_constant_coefficients() {
        let env = sample_env(&EnvSpec::constant(1, 0.0), 0).unwrap();
        let spec = EllipticSpec::new(
            env,
            EllipticFamily::Linear {
                a: CoefMap::constant(1.0),
                f: CoefMap::ZERO,
            },
            constants(0.5, 2.0, 1.0),
        )
        .unwrap();
        let c = ergodic_constant_1d_exact(&spec, 3.0, 64).unwrap();
        assert!((c + 3.0).abs() < 1e-10);
    }

    #[test]
    fn exact_cosine_coefficient() {
        // a = 1/(1 + 0.5 cos 2πx), f = 0  =>  F̄ = −P
        let env = sample_env(&EnvSpec::cosine(1, -1.0, 1.0, Some(0.0)), 0).unwrap();
        let spec = EllipticSpec::new(
            env,
            EllipticFamily::Linear {
                a: CoefMap::Reciprocal {
                    offset: 1.0,
                    slope: 0.5,
                },
                f: CoefMap::ZERO,
            },
            constants(0.6, 2.0, 1.0),
        )
        .unwrap();
        for p in [-1.0, 0.5, 2.0] {
            let c = ergodic_constant_1d_exact(&spec, p, 512).unwrap();
            assert!((c + p).abs() < 1e-10, "{c}");
        }
    }

    #[test]
    fn x_independent_bellman() {
        let env = sample_env(&EnvSpec::constant(1, 0.0), 0).unwrap();
        let spec = EllipticSpec::new(
            env,
            EllipticFamily::Bellman {
                controls: vec![
                    ControlMap {
                        a11: CoefMap::constant(1.0),
                        a22: CoefMap::ZERO,
                        a12: CoefMap::ZERO,
                        f: CoefMap::constant(0.2),
                    },
                    ControlMap {
                        a11: CoefMap::constant(1.5),
                        a22: CoefMap::ZERO,
                        a12: CoefMap::ZERO,
                        f: CoefMap::constant(-0.3),
                    },
                ],
            },
            constants(0.5, 2.0, 1.0),
        )
        .unwrap();
        let p = Sym2::new(0.7, 0.0, 0.0);
        let expect = spec.eval(&p, &[0.0]);
        let c = ergodic_constant_1d_exact(&spec, 0.7, 64).unwrap();
        assert!((c - expect).abs() < 1e-12);
        let grid = TorusGrid::new(1, 32, 1.0).unwrap();
        let v = solve_resolvent(&spec, &p, 4.0, &grid, &SolverParams::default()).unwrap();
        assert!(v.values.iter().all(|x| (x + expect).abs() < 1e-8));
        let est = ergodic_constant_elliptic_torus(&spec, &p, &grid, &SolverParams::default(), None)
            .unwrap();
        assert!((est.value - expect).abs() < 1e-8);
        let (r, _) =
            estimate_fbar_reference(&spec, &p, &[0.1, 0.05], 4.0, 64, &SolverParams::default())
                .unwrap();
        assert!((r - expect).abs() < 1e-8);
    }

    #[test]
    fn discounted_reference_matches_oracle() {
        let env = sample_env(&EnvSpec::cosine(1, -1.0, 1.0, Some(0.0)), 0).unwrap();
        let spec = EllipticSpec::new(
            env,
            EllipticFamily::Linear {
                a: CoefMap::Reciprocal {
                    offset: 1.0,
                    slope: 0.5,
                },
                f: CoefMap::ZERO,
            },
            constants(0.6, 2.0, 1.0),
        )
        .unwrap();
        let (r, spread) = estimate_fbar_reference(
            &spec,
            &Sym2::new(1.5, 0.0, 0.0),
            &[0.02, 0.01],
            8.0,
            512,
            &SolverParams::default(),
        )
        .unwrap();
        assert!((r + 1.5).abs() < 1e-3, "{r} {spread}");
    }
}
