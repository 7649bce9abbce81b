//! Seeded stationary random media.
//!
//! A medium is a scalar potential `V(x, ω)` together with a diffusion factor
//! `Σ(x, ω) = s(V(x, ω))·I`. Randomness comes from a per-cell hash of
//! `(seed, cell index)` through the splitmix64 finalizer, so a realization is
//! a pure function of `(spec, seed, lattice_offset, x)` and shifting by a
//! lattice vector is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Sym2;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const POISSON_SALT: u64 = 0x5AD7_6A0F_3C51_92E1;
const PHASE_SALT: u64 = 0xC0FF_EE15_1DEA_F00D;

/// One splitmix64 step: add the golden gamma, then the avalanche finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Top 53 bits as a uniform draw in [0, 1).
pub fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Injective encoding of a cell index with |k_i| < 2^31.
/// 1D: the two's-complement bits of k; 2D: high word k0, low word k1.
pub fn encode_cell(k: &[i64]) -> u64 {
    match k.len() {
        1 => k[0] as u64,
        _ => ((k[0] as i32 as u32 as u64) << 32) | (k[1] as i32 as u32 as u64),
    }
}

/// Uniform draw attached to a lattice cell.
pub fn cell_uniform(seed: u64, k: &[i64]) -> f64 {
    unit_from_bits(splitmix64(seed ^ encode_cell(k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Constant,
    Checkerboard,
    PoissonBump,
    /// Deterministic periodic cosine with a seeded (or fixed) phase.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpParams {
    pub amplitude: f64,
    pub radius: f64,
    /// Mean number of points per unit volume.
    pub intensity: f64,
    /// Truncation of the per-cell point count.
    #[serde(default = "default_max_points")]
    pub max_points: u32,
}

fn default_max_points() -> u32 {
    4
}

/// Affine map `s(v) = offset + slope·v` giving `Σ = s(V)·I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams {
    pub slope: f64,
    pub offset: f64,
    #[serde(default)]
    pub lipschitz_cap: Option<f64>,
}

impl SigmaParams {
    pub const ZERO: SigmaParams = SigmaParams {
        slope: 0.0,
        offset: 0.0,
        lipschitz_cap: None,
    };

    pub fn is_zero(&self) -> bool {
        self.slope == 0.0 && self.offset == 0.0
    }
}

impl Default for SigmaParams {
    fn default() -> Self {
        SigmaParams::ZERO
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub dimension: usize,
    pub value_range: [f64; 2],
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default)]
    pub mollify_radius: f64,
    #[serde(default)]
    pub bump: Option<BumpParams>,
    #[serde(default)]
    pub sigma: SigmaParams,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Cosine only: fixed phase (in cells). `None` draws it from the seed.
    #[serde(default)]
    pub phase: Option<f64>,
}

fn default_cell_size() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn constant(dimension: usize, value: f64) -> Self {
        EnvSpec {
            kind: EnvKind::Constant,
            dimension,
            value_range: [value, value],
            cell_size: 1.0,
            mollify_radius: 0.0,
            bump: None,
            sigma: SigmaParams::ZERO,
            seed: None,
            phase: None,
        }
    }

    pub fn checkerboard(dimension: usize, v_min: f64, v_max: f64, mollify_radius: f64) -> Self {
        EnvSpec {
            kind: EnvKind::Checkerboard,
            mollify_radius,
            value_range: [v_min, v_max],
            ..EnvSpec::constant(dimension, v_min)
        }
    }

    pub fn poisson_bump(dimension: usize, v_min: f64, v_max: f64, bump: BumpParams) -> Self {
        EnvSpec {
            kind: EnvKind::PoissonBump,
            value_range: [v_min, v_max],
            bump: Some(bump),
            ..EnvSpec::constant(dimension, v_min)
        }
    }

    /// `V(x) = mid + half·mean_i cos(2π(x_i/cell + phase))`.
    pub fn cosine(dimension: usize, v_min: f64, v_max: f64, phase: Option<f64>) -> Self {
        EnvSpec {
            kind: EnvKind::Cosine,
            value_range: [v_min, v_max],
            phase,
            ..EnvSpec::constant(dimension, v_min)
        }
    }

    pub fn with_sigma(mut self, sigma: SigmaParams) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_cell_size(mut self, cell_size: f64) -> Self {
        self.cell_size = cell_size;
        self
    }

    pub fn v_min(&self) -> f64 {
        self.value_range[0]
    }

    pub fn v_max(&self) -> f64 {
        self.value_range[1]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEnv(m));
        if !(self.dimension == 1 || self.dimension == 2) {
            return bad(format!("dimension must be 1 or 2, got {}", self.dimension));
        }
        let [lo, hi] = self.value_range;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return bad(format!("empty or non-finite value range [{lo}, {hi}]"));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return bad(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            ));
        }
        if !(self.mollify_radius >= 0.0) || self.mollify_radius >= 0.5 * self.cell_size {
            return bad(format!(
                "mollify_radius {} must lie in [0, cell_size/2)",
                self.mollify_radius
            ));
        }
        if self.kind == EnvKind::PoissonBump {
            let Some(b) = self.bump else {
                return bad("poisson_bump requires bump parameters".into());
            };
            if !(b.amplitude >= 0.0 && b.radius > 0.0 && b.intensity >= 0.0) {
                return bad(format!("invalid bump parameters {b:?}"));
            }
        }
        if let Some(cap) = self.sigma.lipschitz_cap {
            let implied = self.sigma_lipschitz();
            if implied > cap {
                return bad(format!(
                    "sigma Lipschitz constant {implied} exceeds declared cap {cap}"
                ));
            }
        }
        Ok(())
    }

    /// Sup of the normalized (1-s²)³ kernel times the range, per axis.
    pub fn lipschitz_bound(&self) -> f64 {
        let range = self.v_max() - self.v_min();
        let root_d = (self.dimension as f64).sqrt();
        match self.kind {
            EnvKind::Constant => 0.0,
            EnvKind::Checkerboard => {
                if self.mollify_radius > 0.0 {
                    range * KERNEL_PEAK / self.mollify_radius * root_d
                } else {
                    f64::INFINITY
                }
            }
            EnvKind::PoissonBump => {
                let b = self.bump.expect("validated");
                let per_axis = (2.0 * b.radius / self.cell_size).ceil() + 1.0;
                let overlap = per_axis.powi(self.dimension as i32) * b.max_points as f64;
                b.amplitude * BUMP_SLOPE / b.radius * overlap
            }
            EnvKind::Cosine => 0.5 * range * std::f64::consts::TAU / self.cell_size,
        }
    }

    fn sigma_lipschitz(&self) -> f64 {
        let lip = self.lipschitz_bound();
        if self.sigma.slope == 0.0 {
            0.0
        } else {
            self.sigma.slope.abs() * lip * (self.dimension as f64).sqrt()
        }
    }
}

/// Peak of the unit-radius kernel (35/32)(1-s²)³.
pub const KERNEL_PEAK: f64 = 35.0 / 32.0;
/// max_s |d/ds (1-s²)³| = 96/(25√5).
pub const BUMP_SLOPE: f64 = 1.717_300_846_119_468_6;

const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

fn kernel(t: f64, rho: f64) -> f64 {
    let s = t / rho;
    if s.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - s * s;
        KERNEL_PEAK / rho * w * w * w
    }
}

/// ∫_{a}^{b} K(t - y) dy by five-point Gauss (exact up to rounding: the
/// kernel is a degree-6 polynomial on its support).
fn kernel_mass(t: f64, a: f64, b: f64, rho: f64) -> f64 {
    let lo = a.max(t - rho);
    let hi = b.min(t + rho);
    if hi <= lo {
        return 0.0;
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut s = 0.0;
    for (n, w) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS) {
        s += w * kernel(t - (mid + half * n), rho);
    }
    s * half
}

fn bump_profile(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let w = 1.0 - s * s;
        w * w * w
    }
}

/// A realization of the medium. Cheap to clone; evaluation is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSample {
    pub spec: EnvSpec,
    pub seed: u64,
    pub lattice_offset: Vec<i64>,
}

pub fn sample_env(spec: &EnvSpec, seed: u64) -> Result<EnvironmentSample> {
    spec.validate()?;
    Ok(EnvironmentSample {
        spec: spec.clone(),
        seed,
        lattice_offset: vec![0; spec.dimension],
    })
}

impl EnvironmentSample {
    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    /// Splits `x` into its cell index (including the lattice offset) and
    /// the local coordinate in [0, cell_size).
    fn locate(&self, x: &[f64], axis: usize) -> (i64, f64) {
        let c = self.spec.cell_size;
        let k = (x[axis] / c).floor();
        let mut local = x[axis] - k * c;
        let mut k = k as i64;
        if local >= c {
            local -= c;
            k += 1;
        } else if local < 0.0 {
            local += c;
            k -= 1;
        }
        (k + self.lattice_offset[axis], local)
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        let spec = &self.spec;
        let v = match spec.kind {
            EnvKind::Constant => return spec.v_min(),
            EnvKind::Checkerboard => self.checkerboard(x),
            EnvKind::PoissonBump => self.poisson(x),
            EnvKind::Cosine => self.cosine(x),
        };
        v.clamp(spec.v_min(), spec.v_max())
    }

    fn draw(&self, k: &[i64]) -> f64 {
        let [lo, hi] = self.spec.value_range;
        lo + (hi - lo) * cell_uniform(self.seed, k)
    }

    fn checkerboard(&self, x: &[f64]) -> f64 {
        let d = self.dimension();
        let c = self.spec.cell_size;
        let rho = self.spec.mollify_radius;
        let mut cells = [[0i64; 3]; 2];
        let mut weights = [[0.0f64; 3]; 2];
        let mut counts = [1usize; 2];
        for axis in 0..d {
            let (k, t) = self.locate(x, axis);
            if rho == 0.0 || (t - rho >= 0.0 && t + rho <= c) {
                cells[axis][0] = k;
                weights[axis][0] = 1.0;
                counts[axis] = 1;
            } else if t - rho < 0.0 {
                let w = kernel_mass(t, -c, 0.0, rho);
                cells[axis][..2].copy_from_slice(&[k - 1, k]);
                weights[axis][..2].copy_from_slice(&[w, 1.0 - w]);
                counts[axis] = 2;
            } else {
                let w = kernel_mass(t, c, 2.0 * c, rho);
                cells[axis][..2].copy_from_slice(&[k, k + 1]);
                weights[axis][..2].copy_from_slice(&[1.0 - w, w]);
                counts[axis] = 2;
            }
        }
        let mut v = 0.0;
        if d == 1 {
            for i in 0..counts[0] {
                v += weights[0][i] * self.draw(&[cells[0][i]]);
            }
        } else {
            for i in 0..counts[0] {
                for j in 0..counts[1] {
                    v += weights[0][i] * weights[1][j] * self.draw(&[cells[0][i], cells[1][j]]);
                }
            }
        }
        v
    }

    /// Points of the Poisson field in lattice block `k`, in local block
    /// coordinates.
    fn block_points(&self, k: &[i64]) -> Vec<[f64; 2]> {
        let b = self.spec.bump.expect("validated");
        let d = self.dimension();
        let c = self.spec.cell_size;
        let base = splitmix64(self.seed ^ encode_cell(k) ^ POISSON_SALT);
        let mut j = 0u64;
        let mut next = || {
            j += 1;
            unit_from_bits(splitmix64(base.wrapping_add(j.wrapping_mul(GOLDEN_GAMMA))))
        };
        // Inverse-CDF Poisson draw, truncated at max_points.
        let mean = b.intensity * c.powi(d as i32);
        let u = next();
        let mut count = 0u32;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && count < b.max_points {
            count += 1;
            p *= mean / count as f64;
            cdf += p;
        }
        (0..count)
            .map(|_| {
                let mut pt = [0.0; 2];
                for slot in pt.iter_mut().take(d) {
                    *slot = next() * c;
                }
                pt
            })
            .collect()
    }

    fn poisson(&self, x: &[f64]) -> f64 {
        let b = self.spec.bump.expect("validated");
        let d = self.dimension();
        let c = self.spec.cell_size;
        let mut local = [0.0; 2];
        let mut home = [0i64; 2];
        for axis in 0..d {
            let (k, t) = self.locate(x, axis);
            home[axis] = k;
            local[axis] = t;
        }
        let reach = (b.radius / c).ceil() as i64;
        let mut sum = 0.0;
        let mut visit = |dk: [i64; 2]| {
            let k: Vec<i64> = (0..d).map(|a| home[a] + dk[a]).collect();
            for pt in self.block_points(&k) {
                let mut r2 = 0.0;
                for a in 0..d {
                    let diff = local[a] - (dk[a] as f64 * c + pt[a]);
                    r2 += diff * diff;
                }
                sum += b.amplitude * bump_profile(r2.sqrt() / b.radius);
            }
        };
        if d == 1 {
            for i in -reach..=reach {
                visit([i, 0]);
            }
        } else {
            for i in -reach..=reach {
                for j in -reach..=reach {
                    visit([i, j]);
                }
            }
        }
        let range = self.spec.v_max() - self.spec.v_min();
        self.spec.v_min() + sum.min(range)
    }

    fn phase(&self, axis: usize) -> f64 {
        match self.spec.phase {
            Some(p) => p,
            None => unit_from_bits(splitmix64(self.seed ^ PHASE_SALT ^ axis as u64)),
        }
    }

    fn cosine(&self, x: &[f64]) -> f64 {
        let d = self.dimension();
        let [lo, hi] = self.spec.value_range;
        let mut acc = 0.0;
        for axis in 0..d {
            let (_, t) = self.locate(x, axis);
            acc += (std::f64::consts::TAU * (t / self.spec.cell_size + self.phase(axis))).cos();
        }
        0.5 * (lo + hi) + 0.5 * (hi - lo) * acc / d as f64
    }

    /// Diffusion factor Σ(x) = s(V(x))·I (a d×d matrix, stored symmetric).
    pub fn sigma(&self, x: &[f64]) -> Sym2 {
        let s = &self.spec.sigma;
        if s.is_zero() {
            return Sym2::ZERO;
        }
        let value = s.offset + s.slope * self.potential(x);
        Sym2::scalar(value, self.dimension())
    }

    /// A = ΣΣᵀ.
    pub fn diffusion(&self, x: &[f64]) -> Sym2 {
        let sig = self.sigma(x);
        Sym2::new(
            sig.xx * sig.xx + sig.xy * sig.xy,
            sig.xy * sig.xy + sig.yy * sig.yy,
            sig.xx * sig.xy + sig.xy * sig.yy,
        )
    }

    pub fn dependence_range(&self) -> f64 {
        match self.spec.kind {
            EnvKind::Constant => 0.0,
            EnvKind::Checkerboard => self.spec.cell_size + 2.0 * self.spec.mollify_radius,
            EnvKind::PoissonBump => 2.0 * self.spec.bump.expect("validated").radius,
            EnvKind::Cosine => f64::INFINITY,
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.spec.lipschitz_bound()
    }
}

pub fn eval_potential(env: &EnvironmentSample, x: &[f64]) -> f64 {
    env.potential(x)
}

pub fn eval_sigma(env: &EnvironmentSample, x: &[f64]) -> Sym2 {
    env.sigma(x)
}

pub fn dependence_range(env: &EnvironmentSample) -> f64 {
    env.dependence_range()
}

/// τ_z: `shift_env(env, z)` evaluated at `x` equals `env` at `x + z·cell`.
pub fn shift_env(env: &EnvironmentSample, z: &[i64]) -> Result<EnvironmentSample> {
    if z.len() != env.dimension() {
        return Err(Error::InvalidEnv(format!(
            "shift has dimension {}, sample has {}",
            z.len(),
            env.dimension()
        )));
    }
    let mut out = env.clone();
    for (o, dz) in out.lattice_offset.iter_mut().zip(z) {
        *o += dz;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the canonical splitmix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(GOLDEN_GAMMA), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn constant_is_constant() {
        let env = sample_env(&EnvSpec::constant(2, 2.0), 7).unwrap();
        for x in [[0.0, 0.0], [3.7, -1.2], [1e6, 5.5]] {
            assert_eq!(env.potential(&x), 2.0);
        }
        assert_eq!(env.dependence_range(), 0.0);
    }

    #[test]
    fn checkerboard_cell_center_is_hash_draw() {
        let spec = EnvSpec::checkerboard(1, 0.0, 3.0, 0.0);
        let seed = 0x1234_5678_9ABC_DEF0u64;
        let env = sample_env(&spec, seed).unwrap();
        for k in [-3i64, 0, 5] {
            // Hand computation of the cell hash.
            let mut z = (seed ^ (k as u64)).wrapping_add(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let u = (z >> 11) as f64 / 9_007_199_254_740_992.0;
            assert_eq!(env.potential(&[k as f64 + 0.5]), 3.0 * u);
        }
    }

    #[test]
    fn mollified_midpoint_is_average() {
        let spec = EnvSpec::checkerboard(1, 0.0, 3.0, 0.25);
        let env = sample_env(&spec, 99).unwrap();
        let a = env.potential(&[0.5]);
        let b = env.potential(&[1.5]);
        assert!((env.potential(&[1.0]) - 0.5 * (a + b)).abs() < 1e-14);
        // Plateau away from the seams keeps the raw draw.
        assert_eq!(env.potential(&[0.3]), a);
    }

    #[test]
    fn kernel_is_normalized() {
        for t in [0.0, 0.1, 0.37] {
            let total = kernel_mass(t, -10.0, 10.0, 0.25);
            assert!((total - 1.0).abs() < 1e-14, "{total}");
        }
    }

    #[test]
    fn dependence_ranges() {
        let cb = sample_env(&EnvSpec::checkerboard(1, 0.0, 1.0, 0.25), 1).unwrap();
        assert_eq!(cb.dependence_range(), 1.5);
        let pb = EnvSpec::poisson_bump(
            1,
            0.0,
            1.0,
            BumpParams {
                amplitude: 1.0,
                radius: 0.5,
                intensity: 1.0,
                max_points: 4,
            },
        );
        assert_eq!(sample_env(&pb, 1).unwrap().dependence_range(), 1.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(sample_env(&EnvSpec::checkerboard(1, 0.0, 1.0, 0.5), 0).is_err());
        assert!(sample_env(&EnvSpec::checkerboard(1, 2.0, 1.0, 0.0), 0).is_err());
        assert!(sample_env(&EnvSpec::checkerboard(3, 0.0, 1.0, 0.0), 0).is_err());
        let capped = EnvSpec::checkerboard(1, 0.0, 1.0, 0.25).with_sigma(SigmaParams {
            slope: 1.0,
            offset: 0.0,
            lipschitz_cap: Some(0.1),
        });
        assert!(sample_env(&capped, 0).is_err());
    }

    #[test]
    fn sigma_cases() {
        let env = sample_env(&EnvSpec::checkerboard(2, 0.0, 1.0, 0.1), 3).unwrap();
        assert_eq!(env.sigma(&[0.2, 0.3]), Sym2::ZERO);
        let c = EnvSpec::constant(2, 1.5).with_sigma(SigmaParams {
            slope: 1.0,
            offset: 0.0,
            lipschitz_cap: None,
        });
        let env = sample_env(&c, 3).unwrap();
        assert_eq!(env.sigma(&[0.2, 0.3]), Sym2::scalar(1.5, 2));
        assert_eq!(env.diffusion(&[0.2, 0.3]), Sym2::scalar(2.25, 2));
    }

    #[test]
    fn shift_by_one_cell_1d() {
        let env = sample_env(&EnvSpec::checkerboard(1, 0.0, 3.0, 0.25), 11).unwrap();
        let shifted = shift_env(&env, &[1]).unwrap();
        assert_eq!(shifted.potential(&[0.3]), env.potential(&[1.3]));
        let back = shift_env(&shifted, &[-1]).unwrap();
        assert_eq!(back, env);
    }
}
