use serde::{Deserialize, Serialize};

use super::config::parse_point;
use super::study::StudyResult;
use crate::error::{Error, Result};
use crate::model::StructuralConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Pairs dropped for a non-positive error.
    pub dropped: usize,
}

/// Least squares fit of log err = intercept + slope·log L.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(l, e)| *e > 0.0 && e.is_finite() && *l > 0.0)
        .map(|&(l, e)| (l.ln(), e.ln()))
        .collect();
    let dropped = pairs.len() - kept.len();
    if dropped > 0 {
        log::warn!("fit_rate: dropped {dropped} pairs with non-positive error");
    }
    if kept.len() < 3 {
        return Err(Error::RateFit(format!(
            "{} usable pairs, need at least 3",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &kept {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::RateFit("all L values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        dropped,
    })
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// (L, median abs_err over converged rows) for each L of the study.
pub fn median_error_by_l(result: &StudyResult) -> Vec<(f64, f64)> {
    result
        .config
        .l_list
        .iter()
        .filter_map(|&l| {
            let mut errs: Vec<f64> = result
                .rows_at(l)
                .filter(|r| r.converged)
                .filter_map(|r| r.abs_err)
                .collect();
            median(&mut errs).map(|m| (l, m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRates {
    pub l: f64,
    pub rows: usize,
    pub upper_pass: usize,
    pub lower_pass: usize,
    pub seeds: usize,
    /// Seeds whose rows all pass the branch.
    pub upper_seed_pass: usize,
    pub lower_seed_pass: usize,
}

impl BranchRates {
    pub fn upper_seed_rate(&self) -> f64 {
        self.upper_seed_pass as f64 / self.seeds.max(1) as f64
    }

    pub fn lower_seed_rate(&self) -> f64 {
        self.lower_seed_pass as f64 / self.seeds.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// Smallest C with constant_ref ≤ constant_L + C(|p|^γ + 1)η + margin
    /// on every usable row.
    pub c_report: f64,
    pub per_l: Vec<BranchRates>,
    /// Rows without both constants; they count as failures in both branches.
    pub unusable: usize,
}

impl SandwichReport {
    pub fn at(&self, l: f64) -> Option<&BranchRates> {
        self.per_l.iter().find(|b| b.l == l)
    }
}

/// Upper branch constant_L ≤ constant_ref + margin, lower branch with the
/// fitted constant. Only `constants.gamma` is used.
pub fn check_sandwich(
    result: &StudyResult,
    constants: &StructuralConstants,
    tol_margin: f64,
) -> Result<SandwichReport> {
    let gamma = constants.gamma;
    let weight = |label: &str| -> Result<f64> {
        let p = parse_point(label)?;
        Ok(p.iter().map(|v| v * v).sum::<f64>().sqrt().powf(gamma) + 1.0)
    };
    let mut c_report = 0.0f64;
    let mut unusable = 0;
    for r in &result.rows {
        match (r.constant_l, r.constant_ref) {
            (Some(cl), Some(cr)) if r.converged => {
                let need = (cr - cl - tol_margin) / (weight(&r.p)? * r.eta_used);
                c_report = c_report.max(need);
            }
            _ => unusable += 1,
        }
    }
    c_report *= 1.0 + 4.0 * f64::EPSILON;
    let mut per_l = Vec::new();
    for &l in &result.config.l_list {
        let mut b = BranchRates {
            l,
            rows: 0,
            upper_pass: 0,
            lower_pass: 0,
            seeds: 0,
            upper_seed_pass: 0,
            lower_seed_pass: 0,
        };
        for &seed in &result.config.seeds {
            let (mut up_all, mut lo_all, mut any) = (true, true, false);
            for r in result.rows_at(l).filter(|r| r.seed == seed) {
                any = true;
                b.rows += 1;
                let (up, lo) = match (r.constant_l, r.constant_ref) {
                    (Some(cl), Some(cr)) if r.converged => (
                        cl <= cr + tol_margin,
                        cr <= cl + c_report * weight(&r.p)? * r.eta_used + tol_margin,
                    ),
                    _ => (false, false),
                };
                b.upper_pass += up as usize;
                b.lower_pass += lo as usize;
                up_all &= up;
                lo_all &= lo;
            }
            if any {
                b.seeds += 1;
                b.upper_seed_pass += up_all as usize;
                b.lower_seed_pass += lo_all as usize;
            }
        }
        per_l.push(b);
    }
    Ok(SandwichReport {
        c_report,
        per_l,
        unusable,
    })
}
