//! Approximate correctors and ergodic constants for viscous HJB operators
//! H(Du + p, x) − tr(A(x)D²u) on tori.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, TorusGrid};
use crate::model::{HamiltonianSpec, HjbProblem};
use crate::periodize::PeriodizedHJB;
use crate::scheme::{DiscreteOperator, HjbOperator, SchemeKind};
use crate::solve::{self, RviOptions, Stepping};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub delta: f64,
    /// Dissipation per axis; computed from the coercivity data when absent.
    pub lf_theta: Option<Vec<f64>>,
    pub cfl_safety: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: SchemeKind,
    pub stepping: Stepping,
    /// Fixed explicit step; must respect the CFL bound.
    pub dt: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            delta: 1e-3,
            lf_theta: None,
            cfl_safety: 0.9,
            tol: 1e-8,
            max_iter: 2_000_000,
            scheme: SchemeKind::Godunov,
            stepping: Stepping::Implicit,
            dt: None,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParams(format!("delta = {}", self.delta)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "cfl_safety = {}",
                self.cfl_safety
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParams(format!("tol = {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParams("max_iter = 0".into()));
        }
        if let Some(t) = &self.lf_theta {
            if t.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidParams(format!("lf_theta = {t:?}")));
            }
        }
        Ok(())
    }

    fn rvi(&self) -> RviOptions {
        RviOptions {
            stepping: self.stepping,
            tol: self.tol,
            max_iter: match self.stepping {
                Stepping::Implicit => self.max_iter.min(400),
                Stepping::Explicit => self.max_iter,
            },
            cfl_safety: self.cfl_safety,
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicEstimate {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub corrector: GridField,
    pub lipschitz_estimate: f64,
    pub converged: bool,
}

/// θ_k = 1.1·γ·max(kinetic)·(C_corr(|p|+1) + |p|)^{γ−1}.
pub fn default_theta(
    problem: &dyn HjbProblem,
    grid: &TorusGrid,
    p: &[f64],
    c_corr: f64,
) -> Vec<f64> {
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let g = problem.gamma();
    let a = (0..grid.len())
        .map(|i| problem.kinetic(&grid.coords(i)[..grid.dim]))
        .fold(0.0f64, f64::max);
    let r = c_corr * (np + 1.0) + np;
    vec![1.1 * g * a * r.powf(g - 1.0); grid.dim]
}

fn build_operator(
    problem: &dyn HjbProblem,
    c_corr: f64,
    p: &[f64],
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<HjbOperator> {
    params.validate()?;
    let theta = match &params.lf_theta {
        Some(t) if t.len() == grid.dim => t.clone(),
        Some(t) => {
            return Err(Error::InvalidParams(format!(
                "lf_theta has {} entries for dimension {}",
                t.len(),
                grid.dim
            )))
        }
        None => default_theta(problem, grid, p, c_corr),
    };
    HjbOperator::new(problem, grid, p, params.scheme, &theta)
}

/// Objects the HJB solver accepts: the random Hamiltonian and its periodization.
pub trait HjbTarget {
    fn problem(&self) -> &dyn HjbProblem;
    fn corrector_constant(&self) -> f64;
}

impl HjbTarget for HamiltonianSpec {
    fn problem(&self) -> &dyn HjbProblem {
        self
    }
    fn corrector_constant(&self) -> f64 {
        self.constants.c_corr
    }
}

impl HjbTarget for PeriodizedHJB {
    fn problem(&self) -> &dyn HjbProblem {
        self
    }
    fn corrector_constant(&self) -> f64 {
        self.base.constants.c_corr
    }
}

/// Split solution (w, k) of δv + Ĥ(Dv + p) − tr(A D²v) = 0.
pub fn solve_delta_split(
    target: &dyn HjbTarget,
    p: &[f64],
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<solve::SplitSolution> {
    if !(params.delta > 0.0) {
        return Err(Error::InvalidParams(format!(
            "delta = {} must be positive",
            params.delta
        )));
    }
    let op = build_operator(
        target.problem(),
        target.corrector_constant(),
        p,
        grid,
        params,
    )?;
    let n = grid.len();
    let zero = vec![0.0; n];
    let sol = match params.stepping {
        Stepping::Implicit => {
            solve::solve_discounted(&op, params.delta, &zero, vec![0.0; n], 0.0, params.tol)?
        }
        Stepping::Explicit => {
            let dt = solve::explicit_step(&op, params.delta, params.cfl_safety, params.dt)?;
            solve::explicit_discounted(
                &op,
                params.delta,
                &zero,
                vec![0.0; n],
                dt,
                params.tol,
                params.max_iter,
            )?
        }
    };
    // Sanity bound ‖v‖∞ ≤ max|Ĥ(p, x)|/δ.
    let mut g = vec![0.0; n];
    op.apply(&zero, &mut g);
    let bound = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / params.delta;
    let vmax = sol.w.iter().fold(0.0f64, |m, w| m.max((w + sol.k).abs()));
    if vmax > bound * (1.0 + 1e-9) + params.tol / params.delta {
        return Err(Error::Verification(format!(
            "discounted solution sup {vmax} exceeds a priori bound {bound}"
        )));
    }
    Ok(sol)
}

/// Approximate corrector v^δ.
pub fn solve_delta_problem(
    target: &dyn HjbTarget,
    p: &[f64],
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<GridField> {
    let sol = solve_delta_split(target, p, grid, params)?;
    GridField::new(grid.clone(), sol.values())
}

/// Ergodic constant of an operator that is periodic on the grid's torus
/// (no check that the period matches the medium).
pub fn ergodic_constant_torus(
    target: &dyn HjbTarget,
    p: &[f64],
    grid: &TorusGrid,
    params: &SolverParams,
    init: Option<Vec<f64>>,
) -> Result<ErgodicEstimate> {
    let op = build_operator(
        target.problem(),
        target.corrector_constant(),
        p,
        grid,
        params,
    )?;
    let init = init.unwrap_or_else(|| vec![0.0; grid.len()]);
    if init.len() != grid.len() {
        return Err(Error::InvalidParams(
            "initial field has the wrong size".into(),
        ));
    }
    let out = solve::relative_value_iteration(&op, init, &params.rvi())?;
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

/// H̄_L(p): ergodic constant of the periodized operator on a grid over one
/// period. Returns the estimate even when not converged.
pub fn ergodic_constant_periodic_unchecked(
    prob: &PeriodizedHJB,
    p: &[f64],
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<ErgodicEstimate> {
    if grid.period.iter().any(|&t| t != prob.l) {
        return Err(Error::InvalidGrid(format!(
            "grid period {:?} differs from L = {}",
            grid.period, prob.l
        )));
    }
    ergodic_constant_torus(prob, p, grid, params, None)
}

pub fn ergodic_constant_periodic(
    prob: &PeriodizedHJB,
    p: &[f64],
    grid: &TorusGrid,
    params: &SolverParams,
) -> Result<ErgodicEstimate> {
    let est = ergodic_constant_periodic_unchecked(prob, p, grid, params)?;
    if !est.converged {
        return Err(Error::NonConvergence {
            iterations: est.iterations,
            residual: est.residual,
            history: vec![est.residual],
        });
    }
    Ok(est)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceEstimate {
    pub estimate: ErgodicEstimate,
    /// (δ, −δv^δ(0)) per entry of the δ sequence.
    pub raw: Vec<(f64, f64)>,
    /// Richardson extrapolants from consecutive pairs.
    pub extrapolants: Vec<f64>,
    /// Whether the raw values are monotone in δ.
    pub monotone: bool,
    /// sup over |x|∞ ≤ c/δ_min of |δv^δ + value| for the smallest δ.
    pub sup_deviation: f64,
    pub box_multiplier: f64,
}

/// H̄(p) from discounted problems on the torus [−box/2, box/2)^d with
/// `nodes` per axis, extrapolated linearly in δ.
pub fn estimate_hbar_reference(
    spec: &HamiltonianSpec,
    p: &[f64],
    delta_seq: &[f64],
    box_len: f64,
    nodes: usize,
    box_multiplier: f64,
    params: &SolverParams,
) -> Result<ReferenceEstimate> {
    if delta_seq.len() < 2 {
        return Err(Error::InvalidParams(
            "need at least two discount factors".into(),
        ));
    }
    if delta_seq.windows(2).any(|w| !(w[1] < w[0])) || delta_seq.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidParams(format!(
            "discount factors {delta_seq:?} must be positive and decreasing"
        )));
    }
    let d_min = *delta_seq.last().unwrap();
    if box_len < box_multiplier / d_min {
        return Err(Error::InvalidParams(format!(
            "box {box_len} smaller than c/delta = {}",
            box_multiplier / d_min
        )));
    }
    let grid = TorusGrid::centered(spec.dimension(), nodes, box_len)?;
    let centre = grid.nearest_node(&vec![0.0; spec.dimension()]);
    let mut raw = Vec::new();
    let mut last = None;
    let mut iterations = 0;
    for &delta in delta_seq {
        let prm = SolverParams {
            delta,
            ..params.clone()
        };
        let sol = solve_delta_split(spec, p, &grid, &prm)?;
        iterations += sol.iterations;
        raw.push((delta, -delta * (sol.w[centre] + sol.k)));
        last = Some((delta, sol));
    }
    let extrapolants: Vec<f64> = raw
        .windows(2)
        .map(|w| {
            let ((d1, y1), (d2, y2)) = (w[0], w[1]);
            (d1 * y2 - d2 * y1) / (d1 - d2)
        })
        .collect();
    let value = *extrapolants.last().unwrap();
    let residual = if extrapolants.len() >= 2 {
        (extrapolants[extrapolants.len() - 1] - extrapolants[extrapolants.len() - 2]).abs()
    } else {
        (value - raw.last().unwrap().1).abs()
    };
    let monotone =
        raw.windows(2).all(|w| w[1].1 >= w[0].1) || raw.windows(2).all(|w| w[1].1 <= w[0].1);
    if !monotone {
        log::warn!("non-monotone discounted values {raw:?}");
    }
    let (delta, sol) = last.unwrap();
    let radius = box_multiplier / delta;
    let mut sup_deviation = 0.0f64;
    for i in 0..grid.len() {
        let x = grid.coords(i);
        if x[..grid.dim].iter().all(|c| c.abs() <= radius) {
            sup_deviation = sup_deviation.max((delta * (sol.w[i] + sol.k) + value).abs());
        }
    }
    let w0 = sol.w[centre];
    let corrector = GridField::new(grid.clone(), sol.w.iter().map(|w| w - w0).collect())?;
    let lipschitz_estimate = corrector_lipschitz(&corrector);
    Ok(ReferenceEstimate {
        estimate: ErgodicEstimate {
            value,
            residual,
            iterations,
            corrector,
            lipschitz_estimate,
            converged: residual <= params.tol.max(1e-6),
        },
        raw,
        extrapolants,
        monotone,
        sup_deviation,
        box_multiplier,
    })
}

/// Largest one-sided difference quotient of the field, over nodes and axes.
pub fn corrector_lipschitz(field: &GridField) -> f64 {
    let g = &field.grid;
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        for a in 0..g.dim {
            let mut step = [0i64; 2];
            step[a] = 1;
            let j = g.offset(i, step);
            worst = worst.max(((field.values[j] - field.values[i]) / g.spacing(a)).abs());
        }
    }
    worst
}

/// Same, skipping the difference across the wrap of each axis.
pub fn corrector_lipschitz_interior(field: &GridField) -> f64 {
    let g = &field.grid;
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let m = g.multi_index(i);
        for a in 0..g.dim {
            if m[a] + 1 == g.n[a] {
                continue;
            }
            let mut step = [0i64; 2];
            step[a] = 1;
            let j = g.offset(i, step);
            worst = worst.max(((field.values[j] - field.values[i]) / g.spacing(a)).abs());
        }
    }
    worst
}

/// Maximum over nodes of H₀(D_h v + p), using the upwind gradient of the
/// scheme at each node. Testable form of H₀(Dv^δ + p) ≤ H̄(p).
pub fn h0_of_gradient_max(prob: &PeriodizedHJB, field: &GridField, p: &[f64]) -> f64 {
    let g = &field.grid;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..g.len() {
        let mut s = 0.0;
        for a in 0..g.dim {
            let h = g.spacing(a);
            let mut step = [0i64; 2];
            step[a] = -1;
            let qm = (field.values[i] - field.values[g.offset(i, step)]) / h + p[a];
            step[a] = 1;
            let qp = (field.values[g.offset(i, step)] - field.values[i]) / h + p[a];
            let m = qm.max(-qp).max(0.0);
            s += m * m;
        }
        let q = [s.sqrt(), 0.0];
        worst = worst.max(prob.h0(&q[..1]));
    }
    worst
}
