//! L-periodic versions of the random operators: the cutoff ζ, the
//! space-independent operators H₀ and F₀, and the η schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Sym2;
use crate::model::{
    Control, Controls, EllipticProblem, EllipticSpec, HamiltonianSpec, HjbProblem,
    StructuralConstants,
};

/// Largest admissible η. Schedules are clamped to this value.
pub const ETA_MAX: f64 = 0.25;

/// Quintic smoothstep 6t⁵ − 15t⁴ + 10t³ on [0, 1], constant outside.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        (t * t * t * (t * (6.0 * t - 15.0) + 10.0)).min(1.0)
    }
}

fn smoothstep_d1(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (t - 1.0) * (t - 1.0)
    }
}

fn smoothstep_d2(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        60.0 * t * (t - 1.0) * (2.0 * t - 1.0)
    }
}

/// 1-periodic cutoff: 0 on Q_{1−2η}, 1 on Q_1∖Q_{1−η}.
///
/// Per axis the profile is s((|y_i| − (1/2 − η)) / (η/2)); in 2D the axes are
/// combined as ζ = 1 − Π(1 − s_i).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub eta: f64,
}

impl CutoffProfile {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= ETA_MAX) {
            return Err(Error::InvalidPeriodization(format!(
                "eta = {eta} outside (0, {ETA_MAX}]"
            )));
        }
        Ok(CutoffProfile { eta })
    }

    fn axis_arg(&self, y: f64) -> f64 {
        let r = (y - y.round()).abs();
        (r - (0.5 - self.eta)) / (0.5 * self.eta)
    }

    /// ζ at a point given in unit-cell coordinates (any real; reduced mod 1).
    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut keep = 1.0;
        for &yi in y {
            let s = smoothstep(self.axis_arg(yi));
            if s == 1.0 {
                return 1.0;
            }
            keep *= 1.0 - s;
        }
        if keep == 1.0 {
            0.0
        } else {
            1.0 - keep
        }
    }

    /// Analytic gradient and Hessian of ζ (unit-cell coordinates).
    pub fn derivatives(&self, y: &[f64]) -> (Vec<f64>, Sym2) {
        let d = y.len();
        let k = 2.0 / self.eta;
        let mut s = [0.0; 2];
        let mut s1 = [0.0; 2];
        let mut s2 = [0.0; 2];
        for i in 0..d {
            let r = y[i] - y[i].round();
            let t = self.axis_arg(y[i]);
            let sign = if r < 0.0 { -1.0 } else { 1.0 };
            s[i] = smoothstep(t);
            s1[i] = smoothstep_d1(t) * k * sign;
            s2[i] = smoothstep_d2(t) * k * k;
        }
        if d == 1 {
            return (vec![s1[0]], Sym2::new(s2[0], 0.0, 0.0));
        }
        let g = vec![s1[0] * (1.0 - s[1]), s1[1] * (1.0 - s[0])];
        let h = Sym2::new(s2[0] * (1.0 - s[1]), s2[1] * (1.0 - s[0]), -s1[0] * s1[1]);
        (g, h)
    }
}

pub fn eval_cutoff(profile: &CutoffProfile, y: &[f64]) -> f64 {
    profile.eval(y)
}

/// Constant C of H₀(p) = C⁻¹|p|^γ − C, large enough that
/// H₀(C_corr(|p|+1)) ≤ C_struct⁻¹|p|^γ − C_struct for every p.
/// The inequality is re-checked on |p| ∈ [0, 100].
pub fn choose_h0_constant(constants: &StructuralConstants) -> Result<f64> {
    let (cs, cc, g) = (constants.c_struct, constants.c_corr, constants.gamma);
    if cs < 1.0 || cc < 1.0 || g <= 1.0 {
        return Err(Error::InvalidModel(format!(
            "need c_struct >= 1, c_corr >= 1, gamma > 1 (got {cs}, {cc}, {g})"
        )));
    }
    let k = 2f64.powf(g - 1.0) * cc.powf(g);
    let c = (k * cs).max(k + cs);
    for i in 0..=100_000 {
        let t = i as f64 * 1e-3;
        let lhs = (cc * (t + 1.0)).powf(g) / c - c;
        let rhs = t.powf(g) / cs - cs;
        if lhs > rhs + 1e-12 * (1.0 + rhs.abs()) {
            return Err(Error::Verification(format!(
                "H0 constant {c} fails at |p| = {t}: {lhs} > {rhs}"
            )));
        }
    }
    Ok(c)
}

/// Value of the schedule and whether it had to be clamped to [`ETA_MAX`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaChoice {
    pub eta: f64,
    pub clamped: bool,
}

fn clamp_eta(raw: f64) -> EtaChoice {
    if raw >= ETA_MAX {
        log::warn!("eta schedule gave {raw}; clamped to {ETA_MAX}");
        EtaChoice {
            eta: ETA_MAX,
            clamped: true,
        }
    } else {
        EtaChoice {
            eta: raw,
            clamped: false,
        }
    }
}

/// η_L = L^{−ā/(4(ā+1))}.
pub fn eta_schedule_hjb(l: f64, a_bar: f64) -> EtaChoice {
    clamp_eta(l.powf(-a_bar / (4.0 * (a_bar + 1.0))))
}

/// η_L = λ^{d/(2d+1)}.
pub fn eta_schedule_elliptic(lambda: f64, d: usize) -> EtaChoice {
    let d = d as f64;
    clamp_eta(lambda.powf(d / (2.0 * d + 1.0)))
}

fn reduce(x: &[f64], l: f64) -> ([f64; 2], [f64; 2]) {
    // Representative of x in [−L/2, L/2]^d and its unit-cell coordinate.
    let mut xr = [0.0; 2];
    let mut y = [0.0; 2];
    for (i, &xi) in x.iter().enumerate() {
        let k = (xi / l).round();
        xr[i] = xi - k * l;
        y[i] = xr[i] / l;
    }
    (xr, y)
}

/// H_L = (1−ζ(x/L))H + ζ(x/L)H₀, A_L = (1−ζ(x/L))A on Q_L, extended L-periodically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodizedHJB {
    pub base: HamiltonianSpec,
    pub l: f64,
    pub cutoff: CutoffProfile,
    pub h0_constant: f64,
}

impl PeriodizedHJB {
    pub fn zeta(&self, x: &[f64]) -> f64 {
        let (_, y) = reduce(x, self.l);
        self.cutoff.eval(&y[..x.len()])
    }

    pub fn h0(&self, p: &[f64]) -> f64 {
        let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        n.powf(self.base.gamma) / self.h0_constant - self.h0_constant
    }

    fn parts(&self, x: &[f64]) -> (f64, [f64; 2]) {
        let (xr, y) = reduce(x, self.l);
        (self.cutoff.eval(&y[..x.len()]), xr)
    }
}

pub fn periodize_hjb(base: &HamiltonianSpec, l: f64, eta: f64) -> Result<PeriodizedHJB> {
    periodize_hjb_with(base, l, eta, None)
}

/// As [`periodize_hjb`], optionally overriding the H₀ constant (it must not be
/// smaller than the closed-form choice).
pub fn periodize_hjb_with(
    base: &HamiltonianSpec,
    l: f64,
    eta: f64,
    h0_override: Option<f64>,
) -> Result<PeriodizedHJB> {
    if !(l >= 1.0 && l.is_finite()) {
        return Err(Error::InvalidPeriodization(format!("L = {l} must be >= 1")));
    }
    let cutoff = CutoffProfile::new(eta)?;
    let c = choose_h0_constant(&base.constants)?;
    let h0_constant = match h0_override {
        Some(v) if v < c => {
            return Err(Error::InvalidPeriodization(format!(
                "H0 constant override {v} below the admissible value {c}"
            )))
        }
        Some(v) => v,
        None => c,
    };
    Ok(PeriodizedHJB {
        base: base.clone(),
        l,
        cutoff,
        h0_constant,
    })
}

impl HjbProblem for PeriodizedHJB {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn gamma(&self) -> f64 {
        self.base.gamma
    }

    fn kinetic(&self, x: &[f64]) -> f64 {
        let (z, xr) = self.parts(x);
        let xr = &xr[..x.len()];
        if z == 0.0 {
            self.base.kinetic(xr)
        } else if z == 1.0 {
            1.0 / self.h0_constant
        } else {
            (1.0 - z) * self.base.kinetic(xr) + z / self.h0_constant
        }
    }

    fn offset(&self, x: &[f64]) -> f64 {
        let (z, xr) = self.parts(x);
        let xr = &xr[..x.len()];
        if z == 0.0 {
            self.base.offset(xr)
        } else if z == 1.0 {
            self.h0_constant
        } else {
            (1.0 - z) * self.base.offset(xr) + z * self.h0_constant
        }
    }

    fn diffusion(&self, x: &[f64]) -> Sym2 {
        let (z, xr) = self.parts(x);
        let xr = &xr[..x.len()];
        if z == 0.0 {
            self.base.diffusion(xr)
        } else if z == 1.0 {
            Sym2::ZERO
        } else {
            self.base.diffusion(xr).scale(1.0 - z)
        }
    }

    fn coercivity_constant(&self) -> f64 {
        self.base.constants.c_struct.max(self.h0_constant)
    }
}

/// Space-independent operator used in the boundary layer of F_L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F0Choice {
    /// −((λ̄+Λ̄)/2)·tr X
    MeanTrace,
    /// −a·tr X
    Trace { a: f64 },
    /// The base operator frozen at a point.
    Frozen { at: Vec<f64> },
}

impl Default for F0Choice {
    fn default() -> Self {
        F0Choice::MeanTrace
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodizedElliptic {
    pub base: EllipticSpec,
    pub l: f64,
    pub cutoff: CutoffProfile,
    pub f0: F0Choice,
    f0_controls: Vec<Control>,
}

impl PeriodizedElliptic {
    pub fn zeta(&self, x: &[f64]) -> f64 {
        let (_, y) = reduce(x, self.l);
        self.cutoff.eval(&y[..x.len()])
    }

    pub fn eval_f0(&self, hessian: &Sym2) -> f64 {
        let d = self.dimension();
        self.f0_controls
            .iter()
            .map(|c| c.value(hessian, d))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn periodize_elliptic(
    base: &EllipticSpec,
    l: f64,
    eta: f64,
    f0: F0Choice,
) -> Result<PeriodizedElliptic> {
    if !(l >= 1.0 && l.is_finite()) {
        return Err(Error::InvalidPeriodization(format!("L = {l} must be >= 1")));
    }
    let cutoff = CutoffProfile::new(eta)?;
    let d = base.dimension();
    let (lo, hi) = base.ellipticity();
    let f0_controls: Vec<Control> = match &f0 {
        F0Choice::MeanTrace => vec![Control {
            a: Sym2::scalar(0.5 * (lo + hi), d),
            f: 0.0,
        }],
        F0Choice::Trace { a } => vec![Control {
            a: Sym2::scalar(*a, d),
            f: 0.0,
        }],
        F0Choice::Frozen { at } => {
            if at.len() != d {
                return Err(Error::InvalidPeriodization(format!(
                    "frozen point has {} coordinates, expected {d}",
                    at.len()
                )));
            }
            base.controls(at).to_vec()
        }
    };
    for c in &f0_controls {
        let (emin, emax) = c.a.eigenvalues(d);
        if emin < lo - 1e-12 || emax > hi + 1e-12 {
            return Err(Error::InvalidPeriodization(format!(
                "F0 eigenvalues [{emin}, {emax}] outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(PeriodizedElliptic {
        base: base.clone(),
        l,
        cutoff,
        f0,
        f0_controls,
    })
}

impl EllipticProblem for PeriodizedElliptic {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn controls(&self, x: &[f64]) -> Controls {
        let (xr, y) = reduce(x, self.l);
        let d = x.len();
        let z = self.cutoff.eval(&y[..d]);
        if z == 0.0 {
            return self.base.controls(&xr[..d]);
        }
        if z == 1.0 {
            return self.f0_controls.iter().copied().collect();
        }
        // max_α((1−ζ)F_α) + max_β(ζF₀_β) = max over pairs of the blended control.
        let inner = self.base.controls(&xr[..d]);
        let mut out = Controls::new();
        for a in &inner {
            for b in &self.f0_controls {
                out.push(Control {
                    a: a.a.scale(1.0 - z).add(&b.a.scale(z)),
                    f: (1.0 - z) * a.f + z * b.f,
                });
            }
        }
        out
    }

    fn ellipticity(&self) -> (f64, f64) {
        self.base.ellipticity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_env, EnvSpec};
    use crate::model::{CoefMap, EllipticFamily};
    use approx::assert_relative_eq;

    #[test]
    fn cutoff_examples() {
        let c = CutoffProfile::new(0.1).unwrap();
        assert_eq!(c.eval(&[0.30]), 0.0);
        assert_eq!(c.eval(&[0.47]), 1.0);
        assert_relative_eq!(c.eval(&[0.425]), 0.5, epsilon = 1e-12);
        assert_eq!(c.eval(&[0.30, -0.2]), 0.0);
        assert_eq!(c.eval(&[0.1, -0.47]), 1.0);
        // periodic reduction
        assert_eq!(c.eval(&[1.30]), 0.0);
        assert_eq!(c.eval(&[0.53]), 1.0);
    }

    #[test]
    fn invalid_eta_rejected() {
        assert!(CutoffProfile::new(0.0).is_err());
        assert!(CutoffProfile::new(0.3).is_err());
        assert!(CutoffProfile::new(f64::NAN).is_err());
    }

    #[test]
    fn h0_constant_examples() {
        let mk = |cs, cc| StructuralConstants {
            c_struct: cs,
            c_corr: cc,
            gamma: 2.0,
            ..StructuralConstants::default()
        };
        assert_eq!(choose_h0_constant(&mk(2.0, 1.0)).unwrap(), 4.0);
        assert_eq!(choose_h0_constant(&mk(2.0, 2.0)).unwrap(), 16.0);
        assert_eq!(choose_h0_constant(&mk(1.0, 1.0)).unwrap(), 3.0);
    }

    #[test]
    fn schedule_examples() {
        let e = eta_schedule_hjb(4096.0, 0.5);
        assert!(e.clamped);
        assert_eq!(e.eta, 0.25);
        let e = eta_schedule_hjb(2f64.powi(36), 0.5);
        assert!(!e.clamped);
        assert_relative_eq!(e.eta, 0.125, max_relative = 1e-14);

        let e = eta_schedule_elliptic(1e-3, 1);
        assert!(!e.clamped);
        assert_relative_eq!(e.eta, 0.1, max_relative = 1e-14);
        let e = eta_schedule_elliptic(2f64.powi(-10), 2);
        assert_relative_eq!(e.eta, 0.0625, max_relative = 1e-14);
        let e = eta_schedule_elliptic(1.0, 1);
        assert!(e.clamped);
        assert_eq!(e.eta, 0.25);
    }

    fn checker_hjb() -> HamiltonianSpec {
        let env = sample_env(&EnvSpec::checkerboard(1, 0.0, 3.0, 0.25), 11).unwrap();
        HamiltonianSpec::with_default_constants(env, 1.0, 2.0).unwrap()
    }

    #[test]
    fn periodized_hjb_interior_and_boundary() {
        let base = checker_hjb();
        let per = periodize_hjb(&base, 16.0, 0.1).unwrap();
        let p = [1.5];
        for x in [0.0, 1.25, -5.5, 6.375] {
            assert_eq!(per.hamiltonian(&p, &[x]), base.hamiltonian(&p, &[x]));
        }
        // |x/L| >= 0.45 gives ζ = 1.
        for x in [7.25, -7.5, 8.0] {
            assert_eq!(per.hamiltonian(&p, &[x]), per.h0(&p));
            assert_eq!(per.diffusion(&[x]), Sym2::ZERO);
        }
        // periodic
        for x in [0.125, 3.5, 7.0, -7.75] {
            for k in [-3.0, 1.0, 5.0] {
                assert_eq!(
                    per.hamiltonian(&p, &[x + 16.0 * k]),
                    per.hamiltonian(&p, &[x])
                );
            }
        }
    }

    #[test]
    fn periodize_rejects_bad_parameters() {
        let base = checker_hjb();
        assert!(periodize_hjb(&base, 0.5, 0.1).is_err());
        assert!(periodize_hjb(&base, 8.0, 0.3).is_err());
        assert!(periodize_hjb_with(&base, 8.0, 0.1, Some(1.0)).is_err());
    }

    fn linear_elliptic(d: usize) -> EllipticSpec {
        let env = sample_env(&EnvSpec::checkerboard(d, -1.0, 1.0, 0.25), 3).unwrap();
        EllipticSpec::new(
            env,
            EllipticFamily::Linear {
                a: CoefMap::Affine {
                    offset: 1.0,
                    slope: 0.5,
                },
                f: CoefMap::Affine {
                    offset: 0.0,
                    slope: 1.0,
                },
            },
            StructuralConstants {
                lambda_bar: 0.5,
                big_lambda_bar: 1.5,
                c_bar: 1.0,
                ..StructuralConstants::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn periodized_elliptic_zones() {
        let base = linear_elliptic(2);
        let per = periodize_elliptic(&base, 8.0, 0.1, F0Choice::MeanTrace).unwrap();
        let x = Sym2::new(0.3, -1.0, 0.2);
        assert_eq!(per.eval(&x, &[0.5, -1.25]), base.eval(&x, &[0.5, -1.25]));
        assert_eq!(per.eval(&x, &[3.75, 0.0]), per.eval_f0(&x));
        assert_relative_eq!(per.eval_f0(&x), -(0.3 - 1.0), epsilon = 1e-15);
        assert!(periodize_elliptic(&base, 8.0, 0.1, F0Choice::Trace { a: 3.0 }).is_err());
    }

    #[test]
    fn frozen_f0_of_constant_operator_is_identity() {
        let env = sample_env(&EnvSpec::constant(1, 0.4), 0).unwrap();
        let base = EllipticSpec::new(
            env,
            EllipticFamily::Linear {
                a: CoefMap::Affine {
                    offset: 1.0,
                    slope: 0.5,
                },
                f: CoefMap::Affine {
                    offset: 0.1,
                    slope: 1.0,
                },
            },
            StructuralConstants {
                lambda_bar: 0.5,
                big_lambda_bar: 1.5,
                ..StructuralConstants::default()
            },
        )
        .unwrap();
        let per = periodize_elliptic(&base, 4.0, 0.2, F0Choice::Frozen { at: vec![0.3] }).unwrap();
        let xm = Sym2::new(-0.7, 0.0, 0.0);
        for i in 0..64 {
            let x = -2.0 + i as f64 / 16.0;
            assert_relative_eq!(per.eval(&xm, &[x]), base.eval(&xm, &[x]), epsilon = 1e-14);
        }
    }
}
