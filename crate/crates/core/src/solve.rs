//! Nonlinear solvers shared by the HJB and elliptic modules: Newton for the
//! discounted problem κu + G(u) = b, implicit and explicit relative value
//! iteration for the ergodic problem G(u) = c.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::DiscreteOperator;

const NEWTON_MAX: usize = 200;
/// Below this multiple of the tolerance a growing residual is treated as
/// rounding noise and the step size is cut back.
const NOISE_BAND: f64 = 1e2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    /// Backward-Euler pseudo-time with a Newton inner solve.
    #[default]
    Implicit,
    /// Forward-Euler pseudo-time under the CFL bound.
    Explicit,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solution of κ(w + k) + G(w) = b with w stored separately from the scalar
/// shift k so that large constant parts do not pollute difference quotients.
#[derive(Debug, Clone)]
pub struct SplitSolution {
    pub w: Vec<f64>,
    pub k: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl SplitSolution {
    pub fn values(&self) -> Vec<f64> {
        self.w.iter().map(|v| v + self.k).collect()
    }
}

/// Newton's method for κu + G(u) = b (κ > 0), started from u = w0 + k0.
/// G is convex and monotone for every operator in this crate, so the
/// iteration is globally convergent.
pub fn newton(
    op: &dyn DiscreteOperator,
    kappa: f64,
    b: &[f64],
    w0: Vec<f64>,
    k0: f64,
    tol: f64,
) -> Result<SplitSolution> {
    let n = w0.len();
    let mut w = w0;
    let mut k = k0;
    let mut g = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut history = Vec::new();
    for it in 0..NEWTON_MAX {
        let jac = op.linearize(&w, &mut g);
        for i in 0..n {
            r[i] = kappa * w[i] + kappa * k + g[i] - b[i];
        }
        let res = sup(&r);
        history.push(res);
        if res <= tol {
            return Ok(SplitSolution {
                w,
                k,
                residual: res,
                iterations: it,
            });
        }
        // Rounding floor: no progress over the last few steps.
        if it >= 6 && res <= 1e3 * tol && res >= 0.5 * history[it - 3] {
            return Ok(SplitSolution {
                w,
                k,
                residual: res,
                iterations: it,
            });
        }
        for v in r.iter_mut() {
            *v = -*v;
        }
        let m = jac.add_diagonal(kappa);
        let du = m.solve(&r)?;
        let shift = du[0];
        k += shift;
        for i in 0..n {
            w[i] += du[i] - shift;
        }
    }
    let residual = *history.last().unwrap_or(&f64::NAN);
    Err(Error::NonConvergence {
        iterations: NEWTON_MAX,
        residual,
        history,
    })
}

/// κu + G(u) = b by pseudo-transient continuation: backward-Euler steps
/// (u⁺ − u)/dt + κu⁺ + G(u⁺) = b with growing dt, each solved by Newton from
/// the previous step, finishing with plain Newton once 1/dt is negligible.
pub fn solve_discounted(
    op: &dyn DiscreteOperator,
    kappa: f64,
    b: &[f64],
    w0: Vec<f64>,
    k0: f64,
    tol: f64,
) -> Result<SplitSolution> {
    let n = w0.len();
    let mut cur = SplitSolution {
        w: w0,
        k: k0,
        residual: f64::INFINITY,
        iterations: 0,
    };
    let mut g = vec![0.0; n];
    let mut dt = 0.05;
    let mut total = 0;
    let mut bb = vec![0.0; n];
    for _ in 0..400 {
        op.apply(&cur.w, &mut g);
        let res = (0..n).fold(0.0f64, |m, i| {
            m.max((kappa * (cur.w[i] + cur.k) + g[i] - b[i]).abs())
        });
        if res <= tol {
            cur.residual = res;
            cur.iterations = total;
            return Ok(cur);
        }
        let finish = 1.0 / dt <= 1e-10 * kappa;
        let (kk, target_tol) = if finish {
            (kappa, tol)
        } else {
            (kappa + 1.0 / dt, (1e-3 * tol).max(1e-14))
        };
        for i in 0..n {
            bb[i] = if finish {
                b[i]
            } else {
                b[i] + (cur.w[i] + cur.k) / dt
            };
        }
        match newton(op, kk, &bb, cur.w.clone(), cur.k, target_tol) {
            Ok(sol) => {
                total += sol.iterations;
                cur.w = sol.w;
                cur.k = sol.k;
                dt *= 4.0;
            }
            Err(Error::NonConvergence { .. }) if dt > 1e-8 => {
                dt *= 0.25;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonConvergence {
        iterations: total,
        residual: cur.residual,
        history: vec![],
    })
}

/// Explicit pseudo-time iteration u ← u − dt(κu + G(u) − b).
pub fn explicit_discounted(
    op: &dyn DiscreteOperator,
    kappa: f64,
    b: &[f64],
    u0: Vec<f64>,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SplitSolution> {
    let n = u0.len();
    let mut u = u0;
    let mut g = vec![0.0; n];
    let mut history = Vec::new();
    let mut res = f64::INFINITY;
    for it in 0..max_iter {
        op.apply(&u, &mut g);
        res = 0.0;
        for i in 0..n {
            let r = kappa * u[i] + g[i] - b[i];
            res = res.max(r.abs());
            u[i] -= dt * r;
        }
        if it % 1000 == 0 {
            history.push(res);
        }
        if res <= tol {
            let k = u[0];
            return Ok(SplitSolution {
                w: u.iter().map(|v| v - k).collect(),
                k,
                residual: res,
                iterations: it + 1,
            });
        }
    }
    history.push(res);
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: res,
        history,
    })
}

/// Largest explicit step allowed by the CFL condition, given a safety factor.
pub fn explicit_step(
    op: &dyn DiscreteOperator,
    kappa: f64,
    safety: f64,
    requested: Option<f64>,
) -> Result<f64> {
    let bound = 1.0 / (kappa + op.rate_bound());
    match requested {
        Some(dt) if dt > bound || dt <= 0.0 => Err(Error::Cfl { dt, bound }),
        Some(dt) => Ok(dt),
        None => Ok(safety * bound),
    }
}

#[derive(Debug, Clone)]
pub struct RviOutcome {
    /// Corrector normalized to 0 at node 0.
    pub corrector: Vec<f64>,
    /// Midpoint of [min G, max G] at the final iterate.
    pub value: f64,
    /// Half-width of [min G, max G]; the discrete ergodic constant lies in
    /// value ± residual.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RviOptions {
    pub stepping: Stepping,
    pub tol: f64,
    pub max_iter: usize,
    /// Explicit only: CFL safety factor or fixed dt.
    pub cfl_safety: f64,
    pub dt: Option<f64>,
}

fn spread(g: &[f64]) -> (f64, f64) {
    let (lo, hi) = g
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    (0.5 * (lo + hi), 0.5 * (hi - lo))
}

/// Relative value iteration for G(u) = c. The result never errors on
/// non-convergence; the caller decides (see `converged`).
pub fn relative_value_iteration(
    op: &dyn DiscreteOperator,
    init: Vec<f64>,
    opts: &RviOptions,
) -> Result<RviOutcome> {
    let n = init.len();
    let mut u = init;
    let u0 = u[0];
    u.iter_mut().for_each(|v| *v -= u0);
    let mut g = vec![0.0; n];
    let mut history = Vec::new();
    match opts.stepping {
        Stepping::Implicit => {
            let mut dt = 0.05;
            let mut dt_max: f64 = 1e8;
            op.apply(&u, &mut g);
            let (mut value, mut best_res) = spread(&g);
            let mut best = u.clone();
            let mut stalled = 0;
            for it in 1..=opts.max_iter {
                let kappa = 1.0 / dt;
                let b: Vec<f64> = u.iter().map(|v| kappa * v).collect();
                let inner_tol = (1e-3 * opts.tol).max(1e-14);
                // The step is u − dt·c up to a small remainder; seeding the
                // shift keeps the Newton update small when dt is large.
                let sol = match newton(op, kappa, &b, u.clone(), -dt * value, inner_tol) {
                    Ok(sol) => sol,
                    Err(Error::NonConvergence { .. }) if dt > 1e-8 => {
                        dt *= 0.25;
                        dt_max = dt_max.min(dt);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let v: Vec<f64> = sol.w.iter().map(|x| x - sol.w[0]).collect();
                op.apply(&v, &mut g);
                let (val, residual) = spread(&g);
                history.push(residual);
                if residual <= opts.tol {
                    return Ok(RviOutcome {
                        corrector: v,
                        value: val,
                        residual,
                        iterations: it,
                        converged: true,
                        history,
                    });
                }
                if residual < best_res || best_res > NOISE_BAND * opts.tol {
                    if residual < best_res {
                        best_res = residual;
                        best.clone_from(&v);
                    }
                    value = val;
                    u = v;
                    stalled = 0;
                    dt = (dt * 2.0).min(dt_max);
                } else {
                    // Rounding noise dominates at this step size: back off.
                    u.clone_from(&best);
                    dt_max = (0.25 * dt).max(1e-8);
                    dt = dt_max;
                    stalled += 1;
                    if stalled >= 12 {
                        break;
                    }
                }
            }
            u = best;
        }
        Stepping::Explicit => {
            let dt = explicit_step(op, 0.0, opts.cfl_safety, opts.dt)?;
            for it in 1..=opts.max_iter {
                op.apply(&u, &mut g);
                let (value, residual) = spread(&g);
                if it % 1000 == 1 {
                    history.push(residual);
                }
                if residual <= opts.tol {
                    return Ok(RviOutcome {
                        corrector: u,
                        value,
                        residual,
                        iterations: it,
                        converged: true,
                        history,
                    });
                }
                for i in 0..n {
                    u[i] -= dt * g[i];
                }
                let u0 = u[0];
                u.iter_mut().for_each(|v| *v -= u0);
            }
        }
    }
    op.apply(&u, &mut g);
    let (value, residual) = spread(&g);
    history.push(residual);
    Ok(RviOutcome {
        corrector: u,
        value,
        residual,
        iterations: opts.max_iter,
        converged: false,
        history,
    })
}
