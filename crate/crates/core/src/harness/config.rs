use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::hjb_solver::SolverParams;
use crate::linalg::Sym2;
use crate::model::{EllipticFamily, StructuralConstants};
use crate::periodize::{eta_schedule_elliptic, eta_schedule_hjb, EtaChoice, F0Choice, ETA_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    /// H = c1|p|^γ − V with the environment's diffusion.
    Hjb {
        c1: f64,
        gamma: f64,
        /// Derived from each sample when absent.
        #[serde(default)]
        constants: Option<StructuralConstants>,
    },
    Elliptic {
        family: EllipticFamily,
        constants: StructuralConstants,
        #[serde(default)]
        f0: F0Choice,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EtaMode {
    Fixed {
        eta: f64,
    },
    /// η = L^{−ā/(4(ā+1))}
    HjbSchedule {
        a_bar: f64,
    },
    /// η = λ^{d/(2d+1)} with λ = L^{−ā}
    EllipticSchedule {
        a_bar: f64,
    },
}

impl EtaMode {
    pub fn eta_for(&self, l: f64, dim: usize) -> EtaChoice {
        match *self {
            EtaMode::Fixed { eta } => EtaChoice {
                eta,
                clamped: false,
            },
            EtaMode::HjbSchedule { a_bar } => eta_schedule_hjb(l, a_bar),
            EtaMode::EllipticSchedule { a_bar } => eta_schedule_elliptic(l.powf(-a_bar), dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ReferenceMethod {
    /// Closed-form or quadrature oracle; needs a 1-periodic 1D medium.
    Oracle {
        #[serde(default = "default_quad_n")]
        quad_n: usize,
    },
    /// Discounted problems on a large box, extrapolated in δ.
    DeltaExtrapolation {
        deltas: Vec<f64>,
        box_len: f64,
        nodes: usize,
        #[serde(default = "default_box_multiplier")]
        box_multiplier: f64,
    },
}

fn default_quad_n() -> usize {
    4096
}

fn default_box_multiplier() -> f64 {
    0.1
}

fn default_nodes_per_unit() -> usize {
    32
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub env: EnvSpec,
    pub model: ModelConfig,
    /// Gradients p (length d) or Hessians P (row-major d×d).
    pub points: Vec<Vec<f64>>,
    pub l_list: Vec<f64>,
    pub seeds: Vec<u64>,
    pub eta: EtaMode,
    #[serde(default)]
    pub solver: SolverParams,
    pub reference: ReferenceMethod,
    /// Grid nodes per unit length on Q_L.
    #[serde(default = "default_nodes_per_unit")]
    pub nodes_per_unit: usize,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub outputs: Outputs,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn dimension(&self) -> usize {
        self.env.dimension
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.env.validate()?;
        self.solver.validate()?;
        let d = self.dimension();
        if self.points.is_empty() || self.l_list.is_empty() || self.seeds.is_empty() {
            return bad("points, l_list and seeds must be nonempty".into());
        }
        if self.l_list.windows(2).any(|w| !(w[1] > w[0])) || self.l_list[0] < 1.0 {
            return bad(format!(
                "l_list {:?} must be strictly increasing and ≥ 1",
                self.l_list
            ));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        let want = match self.model {
            ModelConfig::Hjb { .. } => d,
            ModelConfig::Elliptic { .. } => d * d,
        };
        if let Some(p) = self
            .points
            .iter()
            .find(|p| p.len() != want || p.iter().any(|v| !v.is_finite()))
        {
            return bad(format!("point {p:?} needs {want} finite entries"));
        }
        if let ModelConfig::Elliptic { .. } = self.model {
            for p in &self.points {
                Sym2::from_row_major(p, d)?;
            }
        }
        match self.eta {
            EtaMode::Fixed { eta } if !(eta > 0.0 && eta <= ETA_MAX) => {
                return bad(format!("fixed eta = {eta} outside (0, {ETA_MAX}]"));
            }
            EtaMode::HjbSchedule { a_bar } | EtaMode::EllipticSchedule { a_bar }
                if !(a_bar > 0.0) =>
            {
                return bad(format!("a_bar = {a_bar} must be positive"));
            }
            _ => {}
        }
        if self.nodes_per_unit < 2 {
            return bad(format!("nodes_per_unit = {}", self.nodes_per_unit));
        }
        match &self.reference {
            ReferenceMethod::Oracle { quad_n } => {
                if *quad_n < 256 {
                    return bad(format!("oracle quad_n = {quad_n} < 256"));
                }
                if d != 1 {
                    return bad("oracle reference is one-dimensional".into());
                }
                let periodic = matches!(self.env.kind, EnvKind::Constant | EnvKind::Cosine)
                    && self.env.cell_size == 1.0;
                if !periodic {
                    return bad("oracle reference needs a 1-periodic medium".into());
                }
                if matches!(self.model, ModelConfig::Hjb { .. }) && !self.env.sigma.is_zero() {
                    return bad("HJB oracle needs zero diffusion".into());
                }
            }
            ReferenceMethod::DeltaExtrapolation {
                deltas,
                box_len,
                nodes,
                box_multiplier,
            } => {
                if deltas.len() < 2
                    || deltas.windows(2).any(|w| !(w[1] < w[0]))
                    || deltas.iter().any(|x| !(*x > 0.0))
                {
                    return bad(format!("deltas {deltas:?} must be positive and decreasing"));
                }
                if !(*box_len > 0.0) || *nodes < 8 || !(*box_multiplier > 0.0) {
                    return bad("reference box, nodes and multiplier must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Row key text of a point: entries joined by ';'.
pub fn point_label(point: &[f64]) -> String {
    point
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_point(label: &str) -> Result<Vec<f64>> {
    label
        .split(';')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("point entry {t:?}: {e}")))
        })
        .collect()
}
