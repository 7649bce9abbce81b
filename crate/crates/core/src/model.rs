//! Operator families: the power Hamiltonian `H(p,x) = c1|p|^γ − V(x)` with
//! diffusion `A = ΣΣᵀ`, and uniformly elliptic operators of linear or
//! Bellman type with coefficients driven by the medium.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::environment::EnvironmentSample;
use crate::error::{Error, Result};
use crate::linalg::Sym2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    /// Coercivity / Lipschitz constant of H.
    pub c_struct: f64,
    pub gamma: f64,
    /// Corrector gradient constant: ‖Dv^δ + p‖∞ ≤ c_corr(|p| + 1).
    pub c_corr: f64,
    pub lambda_bar: f64,
    pub big_lambda_bar: f64,
    /// Bound on |F(0, x)|.
    pub c_bar: f64,
    /// Slope of the modulus ρ(r) = C r.
    pub rho_slope: f64,
}

impl Default for StructuralConstants {
    fn default() -> Self {
        StructuralConstants {
            c_struct: 1.0,
            gamma: 2.0,
            c_corr: 1.0,
            lambda_bar: 1.0,
            big_lambda_bar: 2.0,
            c_bar: 1.0,
            rho_slope: 1.0,
        }
    }
}

impl StructuralConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c_struct,
            self.gamma,
            self.c_corr,
            self.lambda_bar,
            self.big_lambda_bar,
            self.c_bar,
            self.rho_slope,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "structural constants must be finite".into(),
            ));
        }
        if self.c_struct < 1.0 {
            return Err(Error::InvalidModel(format!(
                "c_struct = {} < 1",
                self.c_struct
            )));
        }
        if self.gamma <= 1.0 {
            return Err(Error::InvalidModel(format!("gamma = {} <= 1", self.gamma)));
        }
        if self.c_corr < 1.0 {
            return Err(Error::InvalidModel(format!("c_corr = {} < 1", self.c_corr)));
        }
        if !(0.0 < self.lambda_bar && self.lambda_bar < self.big_lambda_bar) {
            return Err(Error::InvalidModel(format!(
                "need 0 < lambda_bar < Lambda_bar, got {} and {}",
                self.lambda_bar, self.big_lambda_bar
            )));
        }
        Ok(())
    }

    /// Smallest constants under which the power family over `env` satisfies
    /// every sampled assumption: coercivity, the x- and p-Lipschitz bounds
    /// and the Lipschitz bound on Σ. The corrector constant is the first-order
    /// bound `max(1, (osc V / c1)^{1/γ})`.
    pub fn for_power_family(env: &EnvironmentSample, c1: f64, gamma: f64) -> Self {
        let spec = &env.spec;
        let lip_v = env.lipschitz_bound();
        let sigma_lip = spec.sigma.slope.abs() * lip_v * (spec.dimension as f64).sqrt();
        let mut c = 1.0f64
            .max(c1)
            .max(1.0 / c1)
            .max(spec.v_max())
            .max(-spec.v_min())
            .max(gamma * c1);
        for extra in [lip_v, sigma_lip] {
            if extra.is_finite() {
                c = c.max(extra);
            }
        }
        let osc = spec.v_max() - spec.v_min();
        StructuralConstants {
            c_struct: c,
            gamma,
            c_corr: 1.0f64.max((osc / c1).powf(1.0 / gamma)),
            ..StructuralConstants::default()
        }
    }
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Common interface of the power-type Hamiltonians handled by the HJB
/// solver: `H(p,x) = kinetic(x)·|p|^γ − offset(x)`, diffusion `A(x)`.
pub trait HjbProblem: Send + Sync {
    fn dimension(&self) -> usize;
    fn gamma(&self) -> f64;
    fn kinetic(&self, x: &[f64]) -> f64;
    fn offset(&self, x: &[f64]) -> f64;
    fn diffusion(&self, x: &[f64]) -> Sym2;
    /// Constant C with C⁻¹|p|^γ − C ≤ H ≤ C|p|^γ + C.
    fn coercivity_constant(&self) -> f64;

    fn hamiltonian(&self, p: &[f64], x: &[f64]) -> f64 {
        self.kinetic(x) * norm(p).powf(self.gamma()) - self.offset(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub env: EnvironmentSample,
    pub c1: f64,
    pub gamma: f64,
    pub constants: StructuralConstants,
}

impl HamiltonianSpec {
    pub fn new(
        env: EnvironmentSample,
        c1: f64,
        gamma: f64,
        constants: StructuralConstants,
    ) -> Result<Self> {
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::InvalidModel(format!("c1 = {c1} must be positive")));
        }
        if !(gamma > 1.0 && gamma <= 2.0) {
            return Err(Error::InvalidModel(format!(
                "gamma = {gamma} outside (1, 2]"
            )));
        }
        constants.validate()?;
        if (constants.gamma - gamma).abs() > 0.0 {
            return Err(Error::InvalidModel(format!(
                "constants declare gamma {} but the Hamiltonian uses {gamma}",
                constants.gamma
            )));
        }
        Ok(HamiltonianSpec {
            env,
            c1,
            gamma,
            constants,
        })
    }

    /// Builds the spec with [`StructuralConstants::for_power_family`].
    pub fn with_default_constants(env: EnvironmentSample, c1: f64, gamma: f64) -> Result<Self> {
        let constants = StructuralConstants::for_power_family(&env, c1, gamma);
        HamiltonianSpec::new(env, c1, gamma, constants)
    }
}

impl HjbProblem for HamiltonianSpec {
    fn dimension(&self) -> usize {
        self.env.dimension()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn kinetic(&self, _x: &[f64]) -> f64 {
        self.c1
    }

    fn offset(&self, x: &[f64]) -> f64 {
        self.env.potential(x)
    }

    fn diffusion(&self, x: &[f64]) -> Sym2 {
        self.env.diffusion(x)
    }

    fn coercivity_constant(&self) -> f64 {
        self.constants.c_struct
    }
}

pub fn eval_h(spec: &HamiltonianSpec, p: &[f64], x: &[f64]) -> f64 {
    spec.hamiltonian(p, x)
}

pub fn eval_a(spec: &HamiltonianSpec, x: &[f64]) -> Sym2 {
    spec.diffusion(x)
}

/// Scalar coefficient as a function of the medium value v = V(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefMap {
    /// offset + slope·v
    Affine { offset: f64, slope: f64 },
    /// 1 / (offset + slope·v)
    Reciprocal { offset: f64, slope: f64 },
}

impl CoefMap {
    pub const ZERO: CoefMap = CoefMap::Affine {
        offset: 0.0,
        slope: 0.0,
    };

    pub fn constant(c: f64) -> Self {
        CoefMap::Affine {
            offset: c,
            slope: 0.0,
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            CoefMap::Affine { offset, slope } => offset + slope * v,
            CoefMap::Reciprocal { offset, slope } => 1.0 / (offset + slope * v),
        }
    }

    /// Sup of |d/dv| over [lo, hi].
    fn slope_bound(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            CoefMap::Affine { slope, .. } => slope.abs(),
            CoefMap::Reciprocal { offset, slope } => {
                let m = (offset + slope * lo).abs().min((offset + slope * hi).abs());
                slope.abs() / (m * m)
            }
        }
    }
}

impl Default for CoefMap {
    fn default() -> Self {
        CoefMap::ZERO
    }
}

/// One control of a Bellman operator: contributes −tr(A X) − f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub a: Sym2,
    pub f: f64,
}

impl Control {
    pub fn value(&self, x: &Sym2, dim: usize) -> f64 {
        -self.a.trace_product(x, dim) - self.f
    }
}

pub type Controls = SmallVec<[Control; 8]>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMap {
    pub a11: CoefMap,
    #[serde(default)]
    pub a22: CoefMap,
    #[serde(default)]
    pub a12: CoefMap,
    pub f: CoefMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipticFamily {
    /// F(X, x) = −a(x)·tr X + f(x)
    Linear { a: CoefMap, f: CoefMap },
    /// F(X, x) = max_α (−tr(A_α(x) X) − f_α(x))
    Bellman { controls: Vec<ControlMap> },
}

pub const MAX_CONTROLS: usize = 8;

/// Interface of the uniformly elliptic operators handled by the elliptic
/// solver, written in Bellman form at each point.
pub trait EllipticProblem: Send + Sync {
    fn dimension(&self) -> usize;
    fn controls(&self, x: &[f64]) -> Controls;
    /// (λ̄, Λ̄)
    fn ellipticity(&self) -> (f64, f64);

    fn eval(&self, hessian: &Sym2, x: &[f64]) -> f64 {
        let d = self.dimension();
        self.controls(x)
            .iter()
            .map(|c| c.value(hessian, d))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticSpec {
    pub env: EnvironmentSample,
    pub family: EllipticFamily,
    pub constants: StructuralConstants,
}

impl EllipticSpec {
    /// Validates the family against the declared constants over the whole
    /// value range of the medium (coefficients depend on x only through V).
    pub fn new(
        env: EnvironmentSample,
        family: EllipticFamily,
        constants: StructuralConstants,
    ) -> Result<Self> {
        constants.validate()?;
        if let EllipticFamily::Bellman { controls } = &family {
            if controls.is_empty() || controls.len() > MAX_CONTROLS {
                return Err(Error::InvalidModel(format!(
                    "Bellman operator needs 1..={MAX_CONTROLS} controls, got {}",
                    controls.len()
                )));
            }
        }
        let spec = EllipticSpec {
            env,
            family,
            constants,
        };
        let d = spec.dimension();
        let (lo, hi) = (spec.env.spec.v_min(), spec.env.spec.v_max());
        let tol = 1e-12;
        for i in 0..=1000 {
            let v = lo + (hi - lo) * i as f64 / 1000.0;
            for c in spec.controls_for_value(v) {
                if !c.a.is_finite() || !c.f.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "non-finite coefficient at V = {v}"
                    )));
                }
                let (emin, emax) = c.a.eigenvalues(d);
                if emin < constants.lambda_bar - tol || emax > constants.big_lambda_bar + tol {
                    return Err(Error::InvalidModel(format!(
                        "eigenvalues [{emin}, {emax}] at V = {v} outside [{}, {}]",
                        constants.lambda_bar, constants.big_lambda_bar
                    )));
                }
                if d == 2 && (c.a.xx < c.a.xy.abs() || c.a.yy < c.a.xy.abs()) {
                    return Err(Error::InvalidModel(format!(
                        "coefficient matrix {:?} at V = {v} is not diagonally dominant",
                        c.a
                    )));
                }
                if c.f.abs() > constants.c_bar + tol {
                    return Err(Error::InvalidModel(format!(
                        "|f| = {} at V = {v} exceeds C_bar = {}",
                        c.f.abs(),
                        constants.c_bar
                    )));
                }
            }
        }
        Ok(spec)
    }

    pub fn controls_for_value(&self, v: f64) -> Controls {
        let d = self.dimension();
        match &self.family {
            EllipticFamily::Linear { a, f } => {
                let mut out = Controls::new();
                out.push(Control {
                    a: Sym2::scalar(a.eval(v), d),
                    f: -f.eval(v),
                });
                out
            }
            EllipticFamily::Bellman { controls } => controls
                .iter()
                .map(|m| Control {
                    a: if d == 1 {
                        Sym2::new(m.a11.eval(v), 0.0, 0.0)
                    } else {
                        Sym2::new(m.a11.eval(v), m.a22.eval(v), m.a12.eval(v))
                    },
                    f: m.f.eval(v),
                })
                .collect(),
        }
    }

    /// Lipschitz constant in x of the coefficients (for the ρ(r) = Cr check).
    pub fn coefficient_lipschitz(&self) -> f64 {
        let (lo, hi) = (self.env.spec.v_min(), self.env.spec.v_max());
        let lip_v = self.env.lipschitz_bound();
        let maps: Vec<CoefMap> = match &self.family {
            EllipticFamily::Linear { a, f } => vec![*a, *f],
            EllipticFamily::Bellman { controls } => controls
                .iter()
                .flat_map(|c| [c.a11, c.a22, c.a12, c.f])
                .collect(),
        };
        let s = maps
            .iter()
            .map(|m| m.slope_bound(lo, hi))
            .fold(0.0, f64::max);
        if s == 0.0 {
            0.0
        } else {
            s * lip_v
        }
    }
}

impl EllipticProblem for EllipticSpec {
    fn dimension(&self) -> usize {
        self.env.dimension()
    }

    fn controls(&self, x: &[f64]) -> Controls {
        self.controls_for_value(self.env.potential(x))
    }

    fn ellipticity(&self) -> (f64, f64) {
        (self.constants.lambda_bar, self.constants.big_lambda_bar)
    }
}

pub fn eval_f(spec: &impl EllipticProblem, hessian: &Sym2, x: &[f64]) -> f64 {
    spec.eval(hessian, x)
}

/// Outcome of one sampled assumption check: the largest observed value of
/// the monitored quantity against the declared bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub worst: f64,
    pub bound: f64,
    pub pass: bool,
}

impl AssumptionCheck {
    fn new(name: &'static str, worst: f64, bound: f64) -> Self {
        AssumptionCheck {
            name,
            worst,
            bound,
            pass: worst <= bound,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StructureReport {
    pub checks: Vec<AssumptionCheck>,
}

impl StructureReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// The model whose standing assumptions are sampled.
pub enum StructureTarget<'a> {
    Hamiltonian(&'a HamiltonianSpec),
    Elliptic(&'a EllipticSpec),
}

const VERIFY_SEED: u64 = 0x5EED_0F_C0FFEE;

fn random_point(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-half..half)).collect()
}

fn random_sym(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Sym2 {
    let e: Vec<f64> = (0..3).map(|_| rng.gen_range(-half..half)).collect();
    if d == 1 {
        Sym2::new(e[0], 0.0, 0.0)
    } else {
        Sym2::new(e[0], e[1], e[2])
    }
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Sym2 {
    // B Bᵀ for a random B.
    let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-half..half)).collect();
    if d == 1 {
        Sym2::new(b[0] * b[0], 0.0, 0.0)
    } else {
        Sym2::new(
            b[0] * b[0] + b[1] * b[1],
            b[2] * b[2] + b[3] * b[3],
            b[0] * b[2] + b[1] * b[3],
        )
    }
}

/// Samples the standing assumptions of the model at `samples` random points
/// in the box [−box, box]^d (for x, p and matrix entries). Purely empirical.
pub fn verify_structure(
    target: StructureTarget<'_>,
    samples: usize,
    box_half: f64,
) -> StructureReport {
    let samples = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
    match target {
        StructureTarget::Hamiltonian(spec) => verify_hamiltonian(spec, samples, box_half, &mut rng),
        StructureTarget::Elliptic(spec) => verify_elliptic(spec, samples, box_half, &mut rng),
    }
}

fn verify_hamiltonian(
    spec: &HamiltonianSpec,
    samples: usize,
    half: f64,
    rng: &mut ChaCha8Rng,
) -> StructureReport {
    let d = spec.dimension();
    let c = spec.constants.c_struct;
    let g = spec.gamma;
    let (mut coer, mut conv, mut hx, mut hp, mut sx) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let x = random_point(rng, d, half);
        let p = random_point(rng, d, half);
        let q = random_point(rng, d, half);
        let h = spec.hamiltonian(&p, &x);
        let np = norm(&p).powf(g);
        coer = coer.max((np / c - c - h).max(h - c * np - c));

        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let avg = 0.5 * (h + spec.hamiltonian(&q, &x));
        conv = conv.max((spec.hamiltonian(&mid, &x) - avg) / (1.0 + avg.abs()));

        let step = random_point(rng, d, 0.05);
        let y: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let dxy = norm(&step);
        if dxy > 0.0 {
            let diff = (h - spec.hamiltonian(&p, &y)).abs();
            hx = hx.max(diff / ((np + 1.0) * dxy));
            let ds = spec.env.sigma(&x).sub(&spec.env.sigma(&y)).norm(d);
            sx = sx.max(ds / dxy);
        }
        let dpq: f64 = p
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if dpq > 0.0 {
            let diff = (h - spec.hamiltonian(&q, &x)).abs();
            let w = norm(&p).powf(g - 1.0) + norm(&q).powf(g - 1.0) + 1.0;
            hp = hp.max(diff / (w * dpq));
        }
    }
    StructureReport {
        checks: vec![
            AssumptionCheck::new("coercivite", coer, 0.0),
            AssumptionCheck::new("convex", conv, 1e-12),
            AssumptionCheck::new("Hx-Hy", hx, c),
            AssumptionCheck::new("Hp-Hq", hp, c),
            AssumptionCheck::new("Sx-Sy", sx, c),
        ],
    }
}

fn verify_elliptic(
    spec: &EllipticSpec,
    samples: usize,
    half: f64,
    rng: &mut ChaCha8Rng,
) -> StructureReport {
    let d = spec.dimension();
    let k = &spec.constants;
    let (mut upper, mut lower, mut bounded, mut cont) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let x = random_point(rng, d, half);
        let xm = random_sym(rng, d, half);
        let ym = random_psd(rng, d, half.sqrt().max(1.0));
        let ny = ym.norm(d);
        let fx = spec.eval(&xm, &x);
        if ny > 0.0 {
            let diff = spec.eval(&xm.add(&ym), &x) - fx;
            upper = upper.max(diff / ny);
            lower = lower.max(-diff / ny);
        }
        bounded = bounded.max(spec.eval(&Sym2::ZERO, &x).abs());
        let step = random_point(rng, d, 0.05);
        let y: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let dxy = norm(&step);
        if dxy > 0.0 {
            let diff = (fx - spec.eval(&xm, &y)).abs();
            cont = cont.max(diff / ((1.0 + xm.norm(d)) * dxy));
        }
    }
    StructureReport {
        checks: vec![
            // F(X+Y) − F(X) ≤ −λ̄‖Y‖
            AssumptionCheck::new("Felliptic-upper", upper, -k.lambda_bar),
            // −Λ̄‖Y‖ ≤ F(X+Y) − F(X)
            AssumptionCheck::new("Felliptic-lower", lower, k.big_lambda_bar),
            AssumptionCheck::new("Fbounded", bounded, k.c_bar),
            AssumptionCheck::new("Fcontinuous", cont, k.rho_slope),
        ],
    }
}
