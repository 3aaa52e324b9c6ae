use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{d_return_map, return_map, AnnulusPoint, ReturnMapModel};
use crate::error::{Error, Result};
use crate::stats::{block_mean_se, fourier_fit, weighted_birkhoff};

/// Forward orbit with lifted angles; `out[0] = pt0`.
pub fn model_orbit(model: &ReturnMapModel, pt0: AnnulusPoint, n: usize) -> Result<Vec<AnnulusPoint>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut p = pt0;
    out.push(p);
    for _ in 0..n {
        p = return_map(model, &p, true)?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Exponents per iterate, sorted descending.
    pub exponents: [f64; 2],
    pub std_err: [f64; 2],
}

/// Lyapunov exponents of the return map per iterate, by QR on the tangent map.
pub fn model_lyapunov(model: &ReturnMapModel, pt0: AnnulusPoint, n_iter: usize, n_transient: usize) -> Result<LyapunovEstimate> {
    let mut p = pt0;
    for _ in 0..n_transient {
        p = return_map(model, &p, false)?;
    }
    let mut q1 = [1.0, 0.0];
    let mut q2 = [0.0, 1.0];
    let mut l1 = Vec::with_capacity(n_iter);
    let mut l2 = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let j = d_return_map(model, &p)?;
        let v1 = [j[(0, 0)] * q1[0] + j[(0, 1)] * q1[1], j[(1, 0)] * q1[0] + j[(1, 1)] * q1[1]];
        let v2 = [j[(0, 0)] * q2[0] + j[(0, 1)] * q2[1], j[(1, 0)] * q2[0] + j[(1, 1)] * q2[1]];
        let r11 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
        q1 = [v1[0] / r11, v1[1] / r11];
        let d = q1[0] * v2[0] + q1[1] * v2[1];
        let w = [v2[0] - d * q1[0], v2[1] - d * q1[1]];
        let r22 = (w[0] * w[0] + w[1] * w[1]).sqrt();
        q2 = [w[0] / r22, w[1] / r22];
        l1.push(r11.ln());
        l2.push(r22.ln());
        p = return_map(model, &p, false)?;
    }
    let (m1, s1) = block_mean_se(&l1, 20);
    let (m2, s2) = block_mean_se(&l2, 20);
    if m1 >= m2 {
        Ok(LyapunovEstimate { exponents: [m1, m2], std_err: [s1, s2] })
    } else {
        Ok(LyapunovEstimate { exponents: [m2, m1], std_err: [s2, s1] })
    }
}

/// Mean angular advance per iterate in turns, reduced to `[0, 1)`.
pub fn model_rotation_number(model: &ReturnMapModel, pt0: AnnulusPoint, n_iter: usize, n_transient: usize) -> Result<f64> {
    let mut p = pt0;
    for _ in 0..n_transient {
        p = return_map(model, &p, false)?;
    }
    let orbit = model_orbit(model, p, n_iter)?;
    let inc: Vec<f64> = orbit.windows(2).map(|w| (w[1].phi - w[0].phi) / TAU).collect();
    let rho = weighted_birkhoff(&inc).rem_euclid(1.0);
    Ok(if rho >= 1.0 { 0.0 } else { rho })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    Fixed,
    Periodic(usize),
    InvariantCircle,
    Chaotic,
    Escaped,
    Unresolved,
}

impl std::fmt::Display for ModelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelClass::Fixed => write!(f, "fixed"),
            ModelClass::Periodic(q) => write!(f, "periodic({q})"),
            ModelClass::InvariantCircle => write!(f, "quasiperiodic_torus"),
            ModelClass::Chaotic => write!(f, "chaotic"),
            ModelClass::Escaped => write!(f, "escaped"),
            ModelClass::Unresolved => write!(f, "unresolved"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOrbitSummary {
    pub lyapunov: [f64; 2],
    pub lyapunov_se: [f64; 2],
    pub rotation_number: Option<f64>,
    pub class: ModelClass,
    pub transient_discarded: usize,
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Whether the orbit's reduced angles are cyclically ordered like an orbit
/// of an orientation-preserving circle homeomorphism.
pub fn lift_is_monotone(angles: &[f64], increments: &[f64]) -> bool {
    let n = increments.len();
    if n < 3 {
        return false;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
    let lifted: Vec<f64> = idx.iter().map(|&k| angles[k] + increments[k]).collect();
    let tol = 1e-9;
    for w in lifted.windows(2) {
        if w[1] < w[0] - tol {
            return false;
        }
    }
    lifted[0] + TAU >= lifted[n - 1] - tol
}

/// Classifies the attractor reached from `pt0`.
pub fn classify_model_orbit(model: &ReturnMapModel, pt0: AnnulusPoint, n_iter: usize, n_transient: usize) -> ModelOrbitSummary {
    let escaped = |_: Error| ModelOrbitSummary {
        lyapunov: [f64::NAN; 2],
        lyapunov_se: [f64::NAN; 2],
        rotation_number: None,
        class: ModelClass::Escaped,
        transient_discarded: n_transient,
    };
    let mut p = pt0;
    for _ in 0..n_transient {
        p = match return_map(model, &p, false) {
            Ok(q) => q,
            Err(e) => return escaped(e),
        };
    }
    let lyap = match model_lyapunov(model, p, n_iter, 0) {
        Ok(l) => l,
        Err(e) => return escaped(e),
    };
    let orbit = match model_orbit(model, p, n_iter) {
        Ok(o) => o,
        Err(e) => return escaped(e),
    };
    let inc: Vec<f64> = orbit.windows(2).map(|w| w[1].phi - w[0].phi).collect();
    let rho = weighted_birkhoff(&inc.iter().map(|d| d / TAU).collect::<Vec<_>>()).rem_euclid(1.0);
    let angles: Vec<f64> = orbit[..n_iter].iter().map(|q| q.phi.rem_euclid(TAU)).collect();
    let (top, se) = (lyap.exponents[0], lyap.std_err[0]);
    let class = if top > 3.0 * se && top > 1e-3 {
        ModelClass::Chaotic
    } else if let Some(q) = detect_period(&orbit, 64) {
        if q == 1 {
            ModelClass::Fixed
        } else {
            ModelClass::Periodic(q)
        }
    } else if lift_is_monotone(&angles, &inc) && graph_residual(&orbit[..n_iter]) < 1e-6 {
        ModelClass::InvariantCircle
    } else {
        ModelClass::Unresolved
    };
    let rotation_number = match class {
        ModelClass::Chaotic | ModelClass::Escaped | ModelClass::Unresolved => None,
        _ => Some(rho),
    };
    ModelOrbitSummary {
        lyapunov: lyap.exponents,
        lyapunov_se: lyap.std_err,
        rotation_number,
        class,
        transient_discarded: n_transient,
    }
}

fn detect_period(orbit: &[AnnulusPoint], q_max: usize) -> Option<usize> {
    let n = orbit.len();
    let tail = 50usize;
    for q in 1..=q_max {
        if n < tail + q {
            break;
        }
        let ok = (n - tail - q..n - q)
            .all(|k| angle_gap(orbit[k].phi, orbit[k + q].phi) < 1e-9 && (orbit[k].r - orbit[k + q].r).abs() < 1e-9);
        if ok {
            return Some(q);
        }
    }
    None
}

fn graph_residual(points: &[AnnulusPoint]) -> f64 {
    let angles: Vec<f64> = points.iter().map(|p| p.phi.rem_euclid(TAU)).collect();
    let radii: Vec<f64> = points.iter().map(|p| p.r).collect();
    let modes = 16.min(points.len().saturating_sub(1) / 4);
    match fourier_fit(&angles, &radii, modes) {
        Some(f) => points
            .iter()
            .zip(angles.iter())
            .map(|(p, a)| (p.r - f.eval(*a)).abs())
            .fold(0.0, f64::max),
        None => f64::INFINITY,
    }
}
