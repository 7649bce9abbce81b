use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{point_label, ModelConfig, ReferenceMethod, StudyConfig};
use crate::elliptic_solver::{
    ergodic_constant_1d_exact, ergodic_constant_periodic_elliptic_unchecked,
    estimate_fbar_reference,
};
use crate::environment::sample_env;
use crate::error::Result;
use crate::grid::TorusGrid;
use crate::hjb_solver::{
    ergodic_constant_periodic_unchecked, estimate_hbar_reference, ErgodicEstimate,
};
use crate::linalg::Sym2;
use crate::model::{EllipticSpec, HamiltonianSpec, StructuralConstants};
use crate::oracle::hbar_1d_first_order;
use crate::periodize::{periodize_elliptic, periodize_hjb, F0Choice};

/// One (seed, L, p) measurement. Failed solves keep their row with the
/// missing numbers left empty and `converged = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub seed: u64,
    #[serde(rename = "L")]
    pub l: f64,
    pub eta_used: f64,
    pub p: String,
    #[serde(rename = "constant_L")]
    pub constant_l: Option<f64>,
    pub constant_ref: Option<f64>,
    pub abs_err: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: usize,
    pub lipschitz_estimate: Option<f64>,
    pub wall_time: f64,
    pub converged: bool,
}

impl StudyRow {
    pub fn key(&self) -> (u64, u64, &str) {
        (self.seed, self.l.to_bits(), self.p.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn rows_at(&self, l: f64) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.l == l)
    }
}

enum Model {
    Hjb(HamiltonianSpec),
    Elliptic(EllipticSpec, F0Choice),
}

fn build_model(cfg: &StudyConfig, seed: u64) -> Result<Model> {
    let env = sample_env(&cfg.env, seed)?;
    Ok(match &cfg.model {
        ModelConfig::Hjb {
            c1,
            gamma,
            constants,
        } => {
            let k = match constants {
                Some(k) => *k,
                None => StructuralConstants::for_power_family(&env, *c1, *gamma),
            };
            Model::Hjb(HamiltonianSpec::new(env, *c1, *gamma, k)?)
        }
        ModelConfig::Elliptic {
            family,
            constants,
            f0,
        } => Model::Elliptic(
            EllipticSpec::new(env, family.clone(), *constants)?,
            f0.clone(),
        ),
    })
}

/// Reference constant with its uncertainty; oracles are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub spread: f64,
    pub converged: bool,
}

fn reference(cfg: &StudyConfig, model: &Model, point: &[f64]) -> Result<Reference> {
    let d = cfg.dimension();
    let exact = |value| Reference {
        value,
        spread: 0.0,
        converged: true,
    };
    let accept = cfg.solver.tol.max(1e-6);
    match (model, &cfg.reference) {
        (Model::Hjb(spec), ReferenceMethod::Oracle { quad_n }) => Ok(exact(hbar_1d_first_order(
            &|x| spec.env.potential(&[x]),
            spec.c1,
            spec.gamma,
            point[0],
            *quad_n,
        ))),
        (
            Model::Hjb(spec),
            ReferenceMethod::DeltaExtrapolation {
                deltas,
                box_len,
                nodes,
                box_multiplier,
            },
        ) => {
            let r = estimate_hbar_reference(
                spec,
                point,
                deltas,
                *box_len,
                *nodes,
                *box_multiplier,
                &cfg.solver,
            )?;
            Ok(Reference {
                value: r.estimate.value,
                spread: r.estimate.residual,
                converged: r.estimate.converged,
            })
        }
        (Model::Elliptic(spec, _), ReferenceMethod::Oracle { quad_n }) => {
            Ok(exact(ergodic_constant_1d_exact(spec, point[0], *quad_n)?))
        }
        (
            Model::Elliptic(spec, _),
            ReferenceMethod::DeltaExtrapolation {
                deltas,
                box_len,
                nodes,
                ..
            },
        ) => {
            let p = Sym2::from_row_major(point, d)?;
            let (value, spread) =
                estimate_fbar_reference(spec, &p, deltas, *box_len, *nodes, &cfg.solver)?;
            Ok(Reference {
                value,
                spread,
                converged: spread <= accept,
            })
        }
    }
}

/// Reference constant for one seed and point of the config.
pub fn reference_constant(config: &StudyConfig, seed: u64, point: &[f64]) -> Result<Reference> {
    config.validate()?;
    reference(config, &build_model(config, seed)?, point)
}

/// Periodized constant for one seed, L and point of the config.
pub fn periodized_constant(
    config: &StudyConfig,
    seed: u64,
    l: f64,
    point: &[f64],
) -> Result<ErgodicEstimate> {
    config.validate()?;
    let eta = config.eta.eta_for(l, config.dimension()).eta;
    periodized(config, &build_model(config, seed)?, l, eta, point)
}

fn periodized(
    cfg: &StudyConfig,
    model: &Model,
    l: f64,
    eta: f64,
    point: &[f64],
) -> Result<ErgodicEstimate> {
    let d = cfg.dimension();
    let n = (l * cfg.nodes_per_unit as f64).round() as usize;
    let grid = TorusGrid::new(d, n, l)?;
    match model {
        Model::Hjb(spec) => {
            let per = periodize_hjb(spec, l, eta)?;
            ergodic_constant_periodic_unchecked(&per, point, &grid, &cfg.solver)
        }
        Model::Elliptic(spec, f0) => {
            let per = periodize_elliptic(spec, l, eta, f0.clone())?;
            let p = Sym2::from_row_major(point, d)?;
            ergodic_constant_periodic_elliptic_unchecked(&per, &p, &grid, &cfg.solver)
        }
    }
}

/// Runs every (seed, L, p) row of the study in parallel.
pub fn run_convergence_study(config: &StudyConfig) -> Result<StudyResult> {
    resume_convergence_study(config, Vec::new())
}

/// Like [`run_convergence_study`] but keeps rows already present in
/// `existing` (matched by seed, L and p) and computes only the rest.
pub fn resume_convergence_study(
    config: &StudyConfig,
    existing: Vec<StudyRow>,
) -> Result<StudyResult> {
    config.validate()?;
    let labels: Vec<String> = config.points.iter().map(|p| point_label(p)).collect();
    let done: HashSet<(u64, u64, String)> = existing
        .iter()
        .map(|r| (r.seed, r.l.to_bits(), r.p.clone()))
        .collect();
    let mut tasks = Vec::new();
    for &seed in &config.seeds {
        for &l in &config.l_list {
            for (pi, label) in labels.iter().enumerate() {
                if !done.contains(&(seed, l.to_bits(), label.clone())) {
                    tasks.push((seed, l, pi));
                }
            }
        }
    }

    let models: HashMap<u64, Model> = config
        .seeds
        .iter()
        .map(|&s| build_model(config, s).map(|m| (s, m)))
        .collect::<Result<_>>()?;

    let mut ref_keys: Vec<(u64, usize)> = tasks.iter().map(|&(s, _, pi)| (s, pi)).collect();
    ref_keys.sort_unstable();
    ref_keys.dedup();
    let refs: HashMap<(u64, usize), Option<f64>> = ref_keys
        .par_iter()
        .map(|&(s, pi)| {
            let r = reference(config, &models[&s], &config.points[pi]);
            match &r {
                Err(e) => log::warn!("reference failed for seed {s}, p = {}: {e}", labels[pi]),
                Ok(r) if !r.converged => {
                    log::warn!(
                        "reference for seed {s}, p = {} has spread {}",
                        labels[pi],
                        r.spread
                    )
                }
                _ => {}
            }
            ((s, pi), r.ok().map(|r| r.value))
        })
        .collect();

    let d = config.dimension();
    let mut rows: Vec<StudyRow> = tasks
        .par_iter()
        .map(|&(seed, l, pi)| {
            let eta = config.eta.eta_for(l, d).eta;
            let start = Instant::now();
            let est = periodized(config, &models[&seed], l, eta, &config.points[pi]);
            let wall_time = if config.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            let constant_ref = refs[&(seed, pi)];
            let mut row = StudyRow {
                seed,
                l,
                eta_used: eta,
                p: labels[pi].clone(),
                constant_l: None,
                constant_ref,
                abs_err: None,
                residual: None,
                iterations: 0,
                lipschitz_estimate: None,
                wall_time,
                converged: false,
            };
            match est {
                Ok(e) => {
                    if !e.converged {
                        log::warn!(
                            "seed {seed}, L = {l}, p = {}: residual {} after {} steps",
                            row.p,
                            e.residual,
                            e.iterations
                        );
                    }
                    row.constant_l = Some(e.value);
                    row.abs_err = constant_ref.map(|r| (e.value - r).abs());
                    row.residual = Some(e.residual);
                    row.iterations = e.iterations;
                    row.lipschitz_estimate = Some(e.lipschitz_estimate);
                    row.converged = e.converged && constant_ref.is_some();
                }
                Err(e) => log::warn!("seed {seed}, L = {l}, p = {}: {e}", row.p),
            }
            row
        })
        .collect();

    rows.extend(existing);
    let order: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    rows.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.l.total_cmp(&b.l))
            .then(order.get(a.p.as_str()).cmp(&order.get(b.p.as_str())))
            .then(a.p.cmp(&b.p))
    });
    Ok(StudyResult {
        config: config.clone(),
        rows,
    })
}
