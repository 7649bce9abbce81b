//! Small dense and sparse linear-algebra helpers used by the grid solvers.
//!
//! Everything here works on at most 2×2 symmetric matrices or on the sparse
//! Jacobians produced by the monotone schemes (periodic tridiagonal in 1D,
//! nine-point periodic in 2D).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric matrix of size at most 2×2. In one dimension only `xx` is used.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Sym2 { xx, yy, xy }
    }

    pub fn scalar(s: f64, dim: usize) -> Self {
        if dim == 1 {
            Sym2::new(s, 0.0, 0.0)
        } else {
            Sym2::new(s, s, 0.0)
        }
    }

    pub fn identity(dim: usize) -> Self {
        Sym2::scalar(1.0, dim)
    }

    /// Row-major entries of the `dim`×`dim` matrix.
    pub fn from_row_major(entries: &[f64], dim: usize) -> Result<Self> {
        match (dim, entries.len()) {
            (1, 1) => Ok(Sym2::new(entries[0], 0.0, 0.0)),
            (2, 4) => {
                if (entries[1] - entries[2]).abs() > 1e-12 * (1.0 + entries[1].abs()) {
                    return Err(Error::InvalidModel(format!(
                        "matrix {entries:?} is not symmetric"
                    )));
                }
                Ok(Sym2::new(entries[0], entries[3], entries[1]))
            }
            _ => Err(Error::InvalidModel(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            ))),
        }
    }

    pub fn to_row_major(&self, dim: usize) -> Vec<f64> {
        if dim == 1 {
            vec![self.xx]
        } else {
            vec![self.xx, self.xy, self.xy, self.yy]
        }
    }

    pub fn trace(&self, dim: usize) -> f64 {
        if dim == 1 {
            self.xx
        } else {
            self.xx + self.yy
        }
    }

    /// tr(self · other).
    pub fn trace_product(&self, other: &Sym2, dim: usize) -> f64 {
        if dim == 1 {
            self.xx * other.xx
        } else {
            self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
        }
    }

    /// Frobenius norm.
    pub fn norm(&self, dim: usize) -> f64 {
        if dim == 1 {
            self.xx.abs()
        } else {
            (self.xx * self.xx + self.yy * self.yy + 2.0 * self.xy * self.xy).sqrt()
        }
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.xx * s, self.yy * s, self.xy * s)
    }

    pub fn add(&self, other: &Sym2) -> Sym2 {
        Sym2::new(self.xx + other.xx, self.yy + other.yy, self.xy + other.xy)
    }

    pub fn sub(&self, other: &Sym2) -> Sym2 {
        Sym2::new(self.xx - other.xx, self.yy - other.yy, self.xy - other.xy)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self, dim: usize) -> (f64, f64) {
        if dim == 1 {
            return (self.xx, self.xx);
        }
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = (half_diff * half_diff + self.xy * self.xy).sqrt();
        (mean - radius, mean + radius)
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }
}

/// Compressed sparse rows with sorted, de-duplicated column indices.
#[derive(Debug, Clone, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Row-by-row builder for [`CsrMatrix`].
#[derive(Debug)]
pub struct CsrBuilder {
    mat: CsrMatrix,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        CsrBuilder {
            mat: CsrMatrix {
                n,
                indptr,
                cols: Vec::new(),
                vals: Vec::new(),
            },
            row: Vec::with_capacity(16),
        }
    }

    pub fn push(&mut self, col: usize, val: f64) {
        self.row.push((col, val));
    }

    pub fn finish_row(&mut self) {
        self.row.sort_unstable_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.row {
            if last == Some(c) {
                *self.mat.vals.last_mut().unwrap() += v;
            } else {
                self.mat.cols.push(c);
                self.mat.vals.push(v);
                last = Some(c);
            }
        }
        self.row.clear();
        self.mat.indptr.push(self.mat.cols.len());
    }

    pub fn build(self) -> CsrMatrix {
        debug_assert_eq!(self.mat.indptr.len(), self.mat.n + 1);
        self.mat
    }
}

impl CsrMatrix {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// Adds `s` to every diagonal entry (inserting missing ones).
    pub fn add_diagonal(&self, s: f64) -> CsrMatrix {
        let mut b = CsrBuilder::new(self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                b.push(c, v);
            }
            b.push(i, s);
            b.finish_row();
        }
        b.build()
    }

    /// Solves `self · x = rhs`. Periodic-tridiagonal matrices (the 1D
    /// schemes) use a direct bordered Thomas solve; anything else goes
    /// through ILU(0)-preconditioned BiCGSTAB.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.is_periodic_tridiagonal() {
            solve_periodic_tridiagonal(self, rhs)
        } else {
            bicgstab_ilu0(self, rhs, 1e-14, 20 * self.n.max(50))
        }
    }

    fn is_periodic_tridiagonal(&self) -> bool {
        let n = self.n;
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let (cols, _) = self.row(i);
            cols.iter()
                .all(|&c| c == i || c == (i + 1) % n || c == (i + n - 1) % n)
        })
    }
}

/// Direct solve of a periodic tridiagonal system by eliminating node 0 as
/// a border unknown and running two Thomas sweeps on the remaining chain.
pub fn solve_periodic_tridiagonal(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    if n < 3 {
        return Err(Error::LinearSolve(
            "periodic tridiagonal needs n >= 3".into(),
        ));
    }
    let lower = |i: usize| a.get(i, (i + n - 1) % n);
    let diag = |i: usize| a.get(i, i);
    let upper = |i: usize| a.get(i, (i + 1) % n);

    // Chain unknowns are nodes 1..n-1 (m of them).
    let m = n - 1;
    let mut sub = vec![0.0; m];
    let mut dia = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut b1 = vec![0.0; m];
    let mut g = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        dia[k] = diag(i);
        b1[k] = rhs[i];
        if k > 0 {
            sub[k] = lower(i);
        }
        if k + 1 < m {
            sup[k] = upper(i);
        }
    }
    g[0] += lower(1);
    g[m - 1] += upper(n - 1);

    let z1 = thomas(&sub, &dia, &sup, &b1)?;
    let z2 = thomas(&sub, &dia, &sup, &g)?;
    let r0 = upper(0);
    let l0 = lower(0);
    let denom = diag(0) - r0 * z2[0] - l0 * z2[m - 1];
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::LinearSolve("singular border pivot".into()));
    }
    let x0 = (rhs[0] - r0 * z1[0] - l0 * z1[m - 1]) / denom;
    let mut x = Vec::with_capacity(n);
    x.push(x0);
    x.extend(z1.iter().zip(&z2).map(|(a, b)| a - x0 * b));
    Ok(x)
}

fn thomas(sub: &[f64], dia: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = dia.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut piv = dia[0];
    if piv == 0.0 {
        return Err(Error::LinearSolve("zero pivot in Thomas sweep".into()));
    }
    c[0] = sup[0] / piv;
    d[0] = rhs[0] / piv;
    for k in 1..m {
        piv = dia[k] - sub[k] * c[k - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::LinearSolve("zero pivot in Thomas sweep".into()));
        }
        c[k] = sup[k] / piv;
        d[k] = (rhs[k] - sub[k] * d[k - 1]) / piv;
    }
    for k in (0..m - 1).rev() {
        d[k] -= c[k] * d[k + 1];
    }
    Ok(d)
}

struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                if lu.cols[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::LinearSolve(format!("missing diagonal in row {i}")));
            }
        }
        for i in 1..n {
            let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
            for kk in start..end {
                let k = lu.cols[kk];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(Error::LinearSolve("zero pivot in ILU(0)".into()));
                }
                let factor = lu.vals[kk] / pivot;
                lu.vals[kk] = factor;
                // row_i[j] -= factor * row_k[j] for j > k present in row i
                let (ks, ke) = (lu.indptr[k], lu.indptr[k + 1]);
                let mut p = kk + 1;
                for q in ks..ke {
                    let j = lu.cols[q];
                    if j <= k {
                        continue;
                    }
                    while p < end && lu.cols[p] < j {
                        p += 1;
                    }
                    if p < end && lu.cols[p] == j {
                        lu.vals[p] -= factor * lu.vals[q];
                    }
                }
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.lu.n;
        for i in 0..n {
            let mut s = r[i];
            for k in self.lu.indptr[i]..self.diag_pos[i] {
                s -= self.lu.vals[k] * z[self.lu.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_pos[i] + 1..self.lu.indptr[i + 1] {
                s -= self.lu.vals[k] * z[self.lu.cols[k]];
            }
            z[i] = s / self.lu.vals[self.diag_pos[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB with an ILU(0) preconditioner.
pub fn bicgstab_ilu0(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let pre = Ilu0::new(a)?;
    let mut x = vec![0.0; n];
    pre.apply(b, &mut x);
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    if norm2(&r) <= rel_tol * bnorm {
        return Ok(x);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut phat);
        a.matvec(&phat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            break;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= rel_tol * bnorm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(x);
        }
        pre.apply(&s, &mut shat);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= rel_tol * bnorm {
            return Ok(x);
        }
        if omega == 0.0 {
            break;
        }
    }
    // Accept a slightly looser answer before giving up.
    a.matvec(&x, &mut t);
    let res: f64 = (0..n).map(|i| (b[i] - t[i]).powi(2)).sum::<f64>().sqrt();
    if res <= 1e-9 * bnorm {
        Ok(x)
    } else {
        Err(Error::LinearSolve(format!(
            "BiCGSTAB stalled at relative residual {:e}",
            res / bnorm
        )))
    }
}
