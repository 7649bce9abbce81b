//! Monotone finite-difference discretizations on a torus.
//!
//! Every operator is written as a map u ↦ G(u) that is nondecreasing in the
//! centre value, nonincreasing in neighbour values and invariant under adding
//! constants, which is what the solvers in [`crate::solve`] rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::linalg::{CsrBuilder, CsrMatrix, Sym2};
use crate::model::{EllipticProblem, HjbProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Upwind (Rouy–Tourin) Hamiltonian for the power family.
    #[default]
    Godunov,
    LaxFriedrichs,
}

/// A discrete operator G on the nodes of a torus grid.
pub trait DiscreteOperator: Sync {
    fn grid(&self) -> &TorusGrid;

    fn apply(&self, u: &[f64], out: &mut [f64]);

    /// Writes G(u) into `out` and returns a (generalized) Jacobian at u.
    fn linearize(&self, u: &[f64], out: &mut [f64]) -> CsrMatrix;

    /// Bound on the centre coefficient of G; an explicit step dt keeps the
    /// update u − dt·G(u) monotone when dt·rate_bound ≤ 1.
    fn rate_bound(&self) -> f64;
}

/// Lax–Friedrichs numerical Hamiltonian
/// H((p⁻+p⁺)/2, x) − Σ θ_i (p⁺_i − p⁻_i)/2.
pub fn lf_numerical_hamiltonian(
    h: &dyn Fn(&[f64], &[f64]) -> f64,
    p_minus: &[f64],
    p_plus: &[f64],
    x: &[f64],
    theta: &[f64],
) -> f64 {
    let d = p_minus.len();
    let mut mid = [0.0; 2];
    let mut diss = 0.0;
    for i in 0..d {
        mid[i] = 0.5 * (p_minus[i] + p_plus[i]);
        diss += theta[i] * (p_plus[i] - p_minus[i]) * 0.5;
    }
    h(&mid[..d], x) - diss
}

/// Upwind numerical Hamiltonian for a·|q|^γ − w:
/// a·(Σ m_k²)^{γ/2} − w with m_k = max(q⁻_k, −q⁺_k, 0).
pub fn godunov_numerical_hamiltonian(
    a: f64,
    w: f64,
    gamma: f64,
    p_minus: &[f64],
    p_plus: &[f64],
) -> f64 {
    let s: f64 = p_minus
        .iter()
        .zip(p_plus)
        .map(|(&qm, &qp)| {
            let m = qm.max(-qp).max(0.0);
            m * m
        })
        .sum();
    a * pow_half(s, gamma) - w
}

fn pow_half(s: f64, gamma: f64) -> f64 {
    if gamma == 2.0 {
        s
    } else {
        s.powf(0.5 * gamma)
    }
}

/// Neighbour weights of the monotone second-order stencil for tr(A D²u) at
/// one node: tr(A D²_h u)_i = Σ_j w_j (u_j − u_i), all w_j ≥ 0.
pub fn diffusion_weights(
    grid: &TorusGrid,
    node: usize,
    a: &Sym2,
    out: &mut Vec<(usize, f64)>,
) -> Result<()> {
    let hx = grid.spacing(0);
    if grid.dim == 1 {
        if a.xx < 0.0 {
            return Err(Error::StencilInfeasible {
                node,
                reason: format!("negative diffusion {}", a.xx),
            });
        }
        if a.xx > 0.0 {
            let w = a.xx / (hx * hx);
            out.push((grid.offset(node, [-1, 0]), w));
            out.push((grid.offset(node, [1, 0]), w));
        }
        return Ok(());
    }
    let hy = grid.spacing(1);
    let cross = a.xy.abs() / (hx * hy);
    let mut wx = a.xx / (hx * hx) - cross;
    let mut wy = a.yy / (hy * hy) - cross;
    let slack = 1e-12 * (a.xx / (hx * hx) + a.yy / (hy * hy));
    if wx < -slack || wy < -slack {
        return Err(Error::StencilInfeasible {
            node,
            reason: format!(
                "matrix ({}, {}, {}) is not diagonally dominant for spacings ({hx}, {hy})",
                a.xx, a.yy, a.xy
            ),
        });
    }
    wx = wx.max(0.0);
    wy = wy.max(0.0);
    if wx > 0.0 {
        out.push((grid.offset(node, [-1, 0]), wx));
        out.push((grid.offset(node, [1, 0]), wx));
    }
    if wy > 0.0 {
        out.push((grid.offset(node, [0, -1]), wy));
        out.push((grid.offset(node, [0, 1]), wy));
    }
    if cross > 0.0 {
        let s = if a.xy > 0.0 { 1 } else { -1 };
        out.push((grid.offset(node, [1, s]), cross));
        out.push((grid.offset(node, [-1, -s]), cross));
    }
    Ok(())
}

/// Linear pieces at each node: piece k contributes
/// −Σ_j w_j (u_j − u_i) + constant_k.
#[derive(Debug, Clone, Default)]
struct Pieces {
    node_ptr: Vec<usize>,
    piece_ptr: Vec<usize>,
    constant: Vec<f64>,
    cols: Vec<usize>,
    w: Vec<f64>,
}

impl Pieces {
    fn with_nodes(n: usize) -> Self {
        Pieces {
            node_ptr: Vec::with_capacity(n + 1),
            piece_ptr: vec![0],
            ..Pieces::default()
        }
    }

    fn start_node(&mut self) {
        self.node_ptr.push(self.constant.len());
    }

    fn push_piece(&mut self, weights: &[(usize, f64)], constant: f64) {
        for &(c, w) in weights {
            self.cols.push(c);
            self.w.push(w);
        }
        self.piece_ptr.push(self.cols.len());
        self.constant.push(constant);
    }

    fn finish(&mut self) {
        self.node_ptr.push(self.constant.len());
    }

    fn piece_value(&self, k: usize, node: usize, u: &[f64]) -> f64 {
        let ui = u[node];
        let mut s = 0.0;
        for j in self.piece_ptr[k]..self.piece_ptr[k + 1] {
            s += self.w[j] * (u[self.cols[j]] - ui);
        }
        self.constant[k] - s
    }

    fn weight_sum(&self, k: usize) -> f64 {
        self.w[self.piece_ptr[k]..self.piece_ptr[k + 1]]
            .iter()
            .sum()
    }
}

/// G(u)_i = Ĥ(D⁻u + p, D⁺u + p, x_i) − tr(A(x_i) D²_h u)_i.
#[derive(Debug, Clone)]
pub struct HjbOperator {
    grid: TorusGrid,
    p: [f64; 2],
    gamma: f64,
    kinetic: Vec<f64>,
    offset: Vec<f64>,
    diffusion: Pieces,
    scheme: SchemeKind,
    theta: [f64; 2],
    neighbours: Vec<[usize; 4]>,
}

impl HjbOperator {
    pub fn new(
        problem: &dyn HjbProblem,
        grid: &TorusGrid,
        p: &[f64],
        scheme: SchemeKind,
        theta: &[f64],
    ) -> Result<Self> {
        let d = grid.dim;
        if problem.dimension() != d || p.len() != d || theta.len() != d {
            return Err(Error::InvalidParams(format!(
                "dimension mismatch: problem {}, grid {d}, p {}, theta {}",
                problem.dimension(),
                p.len(),
                theta.len()
            )));
        }
        let n = grid.len();
        let mut kinetic = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        let mut diffusion = Pieces::with_nodes(n);
        let mut neighbours = Vec::with_capacity(n);
        let mut buf = Vec::new();
        for i in 0..n {
            let x = grid.coords(i);
            let x = &x[..d];
            kinetic.push(problem.kinetic(x));
            offset.push(problem.offset(x));
            buf.clear();
            diffusion_weights(grid, i, &problem.diffusion(x), &mut buf)?;
            diffusion.start_node();
            diffusion.push_piece(&buf, 0.0);
            let mut nb = [i; 4];
            for a in 0..d {
                let mut step = [0i64; 2];
                step[a] = -1;
                nb[2 * a] = grid.offset(i, step);
                step[a] = 1;
                nb[2 * a + 1] = grid.offset(i, step);
            }
            neighbours.push(nb);
        }
        diffusion.finish();
        let mut pp = [0.0; 2];
        let mut th = [0.0; 2];
        pp[..d].copy_from_slice(p);
        th[..d].copy_from_slice(theta);
        Ok(HjbOperator {
            grid: grid.clone(),
            p: pp,
            gamma: problem.gamma(),
            kinetic,
            offset,
            diffusion,
            scheme,
            theta: th,
            neighbours,
        })
    }

    pub fn kinetic_at(&self, node: usize) -> f64 {
        self.kinetic[node]
    }

    fn one_sided(&self, i: usize, u: &[f64]) -> ([f64; 2], [f64; 2]) {
        let mut qm = [0.0; 2];
        let mut qp = [0.0; 2];
        let nb = &self.neighbours[i];
        for a in 0..self.grid.dim {
            let h = self.grid.spacing(a);
            qm[a] = (u[i] - u[nb[2 * a]]) / h + self.p[a];
            qp[a] = (u[nb[2 * a + 1]] - u[i]) / h + self.p[a];
        }
        (qm, qp)
    }

    /// Numerical Hamiltonian at node i for given one-sided gradients.
    pub fn numerical_hamiltonian(&self, i: usize, qm: &[f64], qp: &[f64]) -> f64 {
        let (a, w, g) = (self.kinetic[i], self.offset[i], self.gamma);
        match self.scheme {
            SchemeKind::Godunov => godunov_numerical_hamiltonian(a, w, g, qm, qp),
            SchemeKind::LaxFriedrichs => {
                let h = |q: &[f64], _x: &[f64]| a * pow_half(q.iter().map(|v| v * v).sum(), g) - w;
                lf_numerical_hamiltonian(&h, qm, qp, &[], &self.theta[..self.grid.dim])
            }
        }
    }

    fn value_at(&self, i: usize, u: &[f64]) -> f64 {
        let d = self.grid.dim;
        let (qm, qp) = self.one_sided(i, u);
        self.numerical_hamiltonian(i, &qm[..d], &qp[..d]) + self.diffusion.piece_value(i, i, u)
    }
}

impl DiscreteOperator for HjbOperator {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.value_at(i, u);
        }
    }

    fn linearize(&self, u: &[f64], out: &mut [f64]) -> CsrMatrix {
        let n = self.grid.len();
        let d = self.grid.dim;
        let g = self.gamma;
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            out[i] = self.value_at(i, u);
            let (qm, qp) = self.one_sided(i, u);
            let nb = &self.neighbours[i];
            let a = self.kinetic[i];
            match self.scheme {
                SchemeKind::Godunov => {
                    let mut m = [0.0; 2];
                    let mut s = 0.0;
                    for k in 0..d {
                        m[k] = qm[k].max(-qp[k]).max(0.0);
                        s += m[k] * m[k];
                    }
                    if s > 0.0 {
                        // ∂/∂m_k of a·s^{γ/2}
                        let f = a * g * if g == 2.0 { 1.0 } else { s.powf(0.5 * g - 1.0) };
                        for k in 0..d {
                            if m[k] == 0.0 {
                                continue;
                            }
                            let c = f * m[k] / self.grid.spacing(k);
                            b.push(i, c);
                            if qm[k] >= -qp[k] {
                                b.push(nb[2 * k], -c);
                            } else {
                                b.push(nb[2 * k + 1], -c);
                            }
                        }
                    }
                }
                SchemeKind::LaxFriedrichs => {
                    let mut mid = [0.0; 2];
                    let mut s = 0.0;
                    for k in 0..d {
                        mid[k] = 0.5 * (qm[k] + qp[k]);
                        s += mid[k] * mid[k];
                    }
                    let f = if s > 0.0 {
                        a * g * if g == 2.0 { 1.0 } else { s.powf(0.5 * g - 1.0) }
                    } else {
                        0.0
                    };
                    for k in 0..d {
                        let h = self.grid.spacing(k);
                        let hk = f * mid[k];
                        let dm = 0.5 * (hk + self.theta[k]);
                        let dp = 0.5 * (hk - self.theta[k]);
                        // q⁻ = (u_i − u_l)/h, q⁺ = (u_r − u_i)/h
                        b.push(i, (dm - dp) / h);
                        b.push(nb[2 * k], -dm / h);
                        b.push(nb[2 * k + 1], dp / h);
                    }
                }
            }
            let dp = &self.diffusion;
            let mut diag = 0.0;
            for j in dp.piece_ptr[i]..dp.piece_ptr[i + 1] {
                b.push(dp.cols[j], -dp.w[j]);
                diag += dp.w[j];
            }
            b.push(i, diag);
            b.finish_row();
        }
        b.build()
    }

    fn rate_bound(&self) -> f64 {
        let d = self.grid.dim;
        let mut worst = 0.0f64;
        for i in 0..self.grid.len() {
            let mut r = self.diffusion.weight_sum(i);
            for k in 0..d {
                r += self.theta[k] / self.grid.spacing(k);
            }
            worst = worst.max(r);
        }
        worst
    }
}

/// G(u)_i = max_α ( −Σ_j w^α_j (u_j − u_i) − tr(A_α P) − f_α ), the monotone
/// discretization of F(D²u + P, s·x) with coefficients sampled at s·x.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: TorusGrid,
    pieces: Pieces,
}

impl EllipticOperator {
    pub fn new(
        problem: &dyn EllipticProblem,
        grid: &TorusGrid,
        p: &Sym2,
        coefficient_scale: f64,
    ) -> Result<Self> {
        let d = grid.dim;
        if problem.dimension() != d {
            return Err(Error::InvalidParams(format!(
                "problem dimension {} on a {d}-dimensional grid",
                problem.dimension()
            )));
        }
        let n = grid.len();
        let mut pieces = Pieces::with_nodes(n);
        let mut buf = Vec::new();
        for i in 0..n {
            let x = grid.coords(i);
            let mut xs = [0.0; 2];
            for a in 0..d {
                xs[a] = coefficient_scale * x[a];
            }
            pieces.start_node();
            for c in problem.controls(&xs[..d]) {
                buf.clear();
                diffusion_weights(grid, i, &c.a, &mut buf)?;
                pieces.push_piece(&buf, -c.a.trace_product(p, d) - c.f);
            }
        }
        pieces.finish();
        Ok(EllipticOperator {
            grid: grid.clone(),
            pieces,
        })
    }

    fn active(&self, i: usize, u: &[f64]) -> (usize, f64) {
        let pc = &self.pieces;
        let mut best = (pc.node_ptr[i], f64::NEG_INFINITY);
        for k in pc.node_ptr[i]..pc.node_ptr[i + 1] {
            let v = pc.piece_value(k, i, u);
            if v > best.1 {
                best = (k, v);
            }
        }
        best
    }
}

impl DiscreteOperator for EllipticOperator {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.active(i, u).1;
        }
    }

    fn linearize(&self, u: &[f64], out: &mut [f64]) -> CsrMatrix {
        let n = self.grid.len();
        let pc = &self.pieces;
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            let (k, v) = self.active(i, u);
            out[i] = v;
            let mut diag = 0.0;
            for j in pc.piece_ptr[k]..pc.piece_ptr[k + 1] {
                b.push(pc.cols[j], -pc.w[j]);
                diag += pc.w[j];
            }
            b.push(i, diag);
            b.finish_row();
        }
        b.build()
    }

    fn rate_bound(&self) -> f64 {
        (0..self.pieces.constant.len())
            .map(|k| self.pieces.weight_sum(k))
            .fold(0.0, f64::max)
    }
}
