//! Independent reference computations: the 1D first-order effective
//! Hamiltonian, the flat-spot value, the 1D linear elliptic constant and a
//! brute-force minimizer.

use crate::environment::EnvironmentSample;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid minimum of `f` over the box [lo, hi] with n points per axis, then
/// golden-section refinement (coordinate-wise in 2D) around the best node.
/// Never returns a value above the raw grid minimum.
pub fn brute_force_min(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    n: usize,
) -> (f64, Vec<f64>) {
    let d = lo.len();
    let n = n.max(2);
    let step: Vec<f64> = (0..d).map(|a| (hi[a] - lo[a]) / (n - 1) as f64).collect();
    let mut best = (f64::INFINITY, vec![0.0; d]);
    let total = n.pow(d as u32);
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for a in 0..d {
            x[a] = lo[a] + (r % n) as f64 * step[a];
            r /= n;
        }
        let v = f(&x);
        if v < best.0 {
            best = (v, x.clone());
        }
    }
    let mut point = best.1.clone();
    let mut value = best.0;
    for _round in 0..if d == 1 { 1 } else { 4 } {
        for a in 0..d {
            let a_lo = (point[a] - step[a]).max(lo[a]);
            let a_hi = (point[a] + step[a]).min(hi[a]);
            let g = |t: f64| {
                let mut y = point.clone();
                y[a] = t;
                f(&y)
            };
            let (t, v) = golden_section(&g, a_lo, a_hi);
            if v < value {
                value = v;
                point[a] = t;
            }
        }
    }
    (value, point)
}

/// Minimum of a 1-periodic function on [0, 1].
fn periodic_min(v: &dyn Fn(f64) -> f64, quad_n: usize) -> f64 {
    brute_force_min(&|x: &[f64]| v(x[0]), &[0.0], &[1.0], quad_n).0
}

fn g_of_c(v: &dyn Fn(f64) -> f64, c1: f64, gamma: f64, c: f64, quad_n: usize) -> f64 {
    let h = 1.0 / quad_n as f64;
    let mut s = 0.0;
    for i in 0..quad_n {
        let x = (i as f64 + 0.5) * h;
        s += ((v(x) + c).max(0.0) / c1).powf(1.0 / gamma);
    }
    s * h
}

/// Data of the 1D first-order formula for H(q,x) = c1|q|^γ − V(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrder1d {
    pub value: f64,
    /// −min V
    pub c_flat: f64,
    /// g(c_flat) = ∫((V − min V)/c1)^{1/γ}: half-width of the flat piece.
    pub flat_width: f64,
}

/// H̄(p) for a 1-periodic V, c1|q|^γ − V, without diffusion.
pub fn hbar_1d_first_order_full(
    v: &dyn Fn(f64) -> f64,
    c1: f64,
    gamma: f64,
    p: f64,
    quad_n: usize,
) -> FirstOrder1d {
    let quad_n = quad_n.max(256);
    let vmin = periodic_min(v, quad_n);
    let c_flat = -vmin;
    let flat_width = g_of_c(v, c1, gamma, c_flat, quad_n);
    let target = p.abs();
    if target <= flat_width {
        return FirstOrder1d {
            value: c_flat,
            c_flat,
            flat_width,
        };
    }
    let mut lo = c_flat;
    let mut hi = c1 * target.powf(gamma) - vmin;
    while g_of_c(v, c1, gamma, hi, quad_n) < target {
        hi += 1.0 + (hi - lo);
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if g_of_c(v, c1, gamma, mid, quad_n) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    FirstOrder1d {
        value: 0.5 * (lo + hi),
        c_flat,
        flat_width,
    }
}

pub fn hbar_1d_first_order(
    v: &dyn Fn(f64) -> f64,
    c1: f64,
    gamma: f64,
    p: f64,
    quad_n: usize,
) -> f64 {
    hbar_1d_first_order_full(v, c1, gamma, p, quad_n).value
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSpotValue {
    /// −min V: the value for H = c1|p|^γ − V.
    pub value: f64,
    /// min V itself, for comparison with the opposite sign convention.
    pub raw_min: f64,
    pub location: [f64; 2],
}

/// Flat value from the minimum of V over the box [−box/2, box/2]^d.
pub fn hbar_flat_spot_value(env: &EnvironmentSample, box_len: f64, grid_n: usize) -> FlatSpotValue {
    let d = env.dimension();
    let lo = vec![-0.5 * box_len; d];
    let hi = vec![0.5 * box_len; d];
    let (raw_min, at) = brute_force_min(&|x: &[f64]| env.potential(x), &lo, &hi, grid_n);
    let mut location = [0.0; 2];
    location[..d].copy_from_slice(&at);
    FlatSpotValue {
        value: -raw_min,
        raw_min,
        location,
    }
}

/// (∫f/a − P)/∫(1/a) over one period by the midpoint rule.
pub fn fbar_linear_1d(
    a: &dyn Fn(f64) -> f64,
    f: &dyn Fn(f64) -> f64,
    p: f64,
    quad_n: usize,
) -> f64 {
    let h = 1.0 / quad_n as f64;
    let (mut fa, mut ia) = (0.0, 0.0);
    for i in 0..quad_n {
        let x = (i as f64 + 0.5) * h;
        let ax = a(x);
        fa += f(x) / ax;
        ia += 1.0 / ax;
    }
    (fa * h - p) / (ia * h)
}
