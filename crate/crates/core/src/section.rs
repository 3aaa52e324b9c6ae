//! Stroboscopic map on the global section `θ = θ*`, periodic orbits,
//! Lyapunov spectra, rotation numbers, invariant circles and attractor
//! classification.

use std::f64::consts::TAU;

use nalgebra::{Complex, Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{dopri5, flow, flow_variational, IntegratorConfig};
use crate::stats::{block_mean_se, fourier_fit, weighted_birkhoff, FourierSeries};
use crate::system::{field, spatial_distance, State4, SystemParams};

fn escaped(e: Error) -> Error {
    match e {
        Error::Divergence { t, norm } => Error::Escaped(format!("|x| = {norm:e} at t = {t}")),
        other => other,
    }
}

/// `q`-fold stroboscopic map: the flow over `qπ/ω`, landing on the same section.
pub fn strobe_map(p: &SystemParams, s: &State4, q: usize, cfg: &IntegratorConfig) -> Result<State4> {
    if q == 0 {
        return Err(Error::Invalid("q must be >= 1".into()));
    }
    let out = flow(p, s, cfg, q as f64 * p.strobe_period())?;
    Ok(out.with_theta(s.theta()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionMapSample {
    pub input: State4,
    pub output: State4,
    pub flight_time: f64,
}

pub fn sample_section_map(p: &SystemParams, s: &State4, cfg: &IntegratorConfig) -> Result<SectionMapSample> {
    let output = strobe_map(p, s, 1, cfg)?;
    Ok(SectionMapSample { input: *s, output, flight_time: p.strobe_period() })
}

/// Successive strobe iterates `s, P(s), …, P^n(s)`.
pub fn strobe_orbit(p: &SystemParams, s: &State4, n: usize, cfg: &IntegratorConfig) -> Result<Vec<State4>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut x = *s;
    out.push(x);
    for _ in 0..n {
        x = strobe_map(p, &x, 1, cfg).map_err(escaped)?;
        out.push(x);
    }
    Ok(out)
}

/// Proxy for the distance to the unforced network: distance to the unit
/// sphere plus the distance to the great circles `x1 = 0` and `x2 = 0`.
pub fn network_distance(x: &[f64; 3]) -> f64 {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    (r - 1.0).abs() + x[0].abs().min(x[1].abs()) / r.max(1e-300)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitStability {
    Attracting,
    Saddle,
    Repelling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbitRecord {
    pub point_on_section: State4,
    /// Period in time units.
    pub period: f64,
    /// Number of strobe periods for orbits of the forced map; `None` for
    /// limit cycles of the autonomous field.
    pub period_multiple: Option<usize>,
    /// Eigenvalues of the monodromy matrix, sorted by decreasing modulus.
    /// For autonomous limit cycles the trivial multiplier near 1 is included.
    pub floquet_multipliers: Vec<Complex<f64>>,
    pub stability: OrbitStability,
    pub residual: f64,
}

fn multipliers(m: &Matrix3<f64>) -> Vec<Complex<f64>> {
    let mut v: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    v
}

fn stability_of(mults: &[Complex<f64>]) -> OrbitStability {
    if mults.iter().all(|m| m.norm() < 1.0) {
        OrbitStability::Attracting
    } else if mults.iter().all(|m| m.norm() > 1.0) {
        OrbitStability::Repelling
    } else {
        OrbitStability::Saddle
    }
}

pub const PERIODIC_TOL: f64 = 1e-10;

/// Newton on `P^q(x) − x` with the monodromy from the variational equations.
pub fn find_periodic_orbit(p: &SystemParams, seed: &State4, q: usize, cfg: &IntegratorConfig) -> Result<PeriodicOrbitRecord> {
    if q == 0 {
        return Err(Error::Invalid("q must be >= 1".into()));
    }
    let t = q as f64 * p.strobe_period();
    let theta = seed.theta();
    let eval = |x: &Vector3<f64>| -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let s = State4::from_spatial((*x).into(), theta);
        let (out, m) = flow_variational(p, &s, &Matrix3::identity(), cfg, t)?;
        Ok((Vector3::from(out.x) - x, m))
    };
    let mut x = Vector3::from(seed.x);
    let (mut g, mut m) = eval(&x)?;
    for _ in 0..60 {
        if g.norm() < 0.1 * PERIODIC_TOL {
            break;
        }
        let dx = (m - Matrix3::identity())
            .lu()
            .solve(&(-g))
            .ok_or_else(|| Error::NonConvergence { seeds: 1, detail: "singular Newton matrix".into() })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = x + dx * lambda;
            if let Ok((g_t, m_t)) = eval(&trial) {
                if g_t.norm() < g.norm() || g.norm() < PERIODIC_TOL {
                    x = trial;
                    g = g_t;
                    m = m_t;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = g.norm();
    if !(residual < PERIODIC_TOL) {
        return Err(Error::NonConvergence { seeds: 1, detail: format!("residual {residual:e}") });
    }
    let mults = multipliers(&m);
    Ok(PeriodicOrbitRecord {
        point_on_section: State4::from_spatial(x.into(), theta),
        period: t,
        period_multiple: Some(q),
        stability: stability_of(&mults),
        floquet_multipliers: mults,
        residual,
    })
}

/// Attracting periodic solution of the autonomous field (`μ = 0`) reached
/// from `seed`; period and phase are solved by Newton with the phase
/// condition `F(x0)·(x − x0) = 0`.
pub fn find_limit_cycle(p: &SystemParams, seed: &[f64; 3], transient: f64, cfg: &IntegratorConfig) -> Result<PeriodicOrbitRecord> {
    if p.mu != 0.0 {
        return Err(Error::Invalid("limit cycles are searched for mu = 0 only".into()));
    }
    let rhs = |_: f64, x: &[f64; 3]| field(p, x, 0.0);
    let x_start = dopri5(cfg, rhs, 0.0, *seed, transient, |_| {})?;
    let f0 = Vector3::from(field(p, &x_start, 0.0));
    let x0 = Vector3::from(x_start);
    if f0.norm() < 1e-9 {
        return Err(Error::NonConvergence { seeds: 1, detail: "transient ended at an equilibrium".into() });
    }
    // First return to the plane through x0 normal to the flow.
    let mut crossings = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    dopri5(cfg, rhs, 0.0, x_start, transient.max(200.0), |seg| {
        if !crossings.is_empty() {
            return;
        }
        let m = 8;
        for k in 0..=m {
            let t = seg.t + seg.h * k as f64 / m as f64;
            let y = Vector3::from(seg.eval(t));
            let g = f0.dot(&(y - x0));
            if let Some((tp, gp)) = prev {
                if gp < 0.0 && g >= 0.0 && t > 1e-3 {
                    crossings.push(tp + (t - tp) * (-gp) / (g - gp));
                    break;
                }
            }
            prev = Some((t, g));
        }
    })?;
    let mut period = *crossings
        .first()
        .ok_or_else(|| Error::NonConvergence { seeds: 1, detail: "no return to the phase plane".into() })?;
    let mut x = x0;
    let mut residual = f64::INFINITY;
    let mut mono = Matrix3::identity();
    for _ in 0..40 {
        let s = State4::from_spatial(x.into(), 0.0);
        let (end, m) = flow_variational(&with_zero_forcing(p), &s, &Matrix3::identity(), cfg, period)?;
        let g = Vector3::from(end.x) - x;
        let phase = f0.dot(&(x - x0));
        residual = (g.norm_squared() + phase * phase).sqrt();
        mono = m;
        if residual < 0.1 * PERIODIC_TOL {
            break;
        }
        let fe = Vector3::from(field(p, &end.x, 0.0));
        let mut jac = Matrix4::zeros();
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(m - Matrix3::identity()));
        jac.fixed_view_mut::<3, 1>(0, 3).copy_from(&fe);
        jac.fixed_view_mut::<1, 3>(3, 0).copy_from(&f0.transpose());
        let rhs_v = Vector4::new(-g[0], -g[1], -g[2], -phase);
        let d = jac
            .lu()
            .solve(&rhs_v)
            .ok_or_else(|| Error::NonConvergence { seeds: 1, detail: "singular cycle Newton matrix".into() })?;
        x += d.fixed_rows::<3>(0);
        period += d[3];
        if !(period > 0.0) {
            return Err(Error::NonConvergence { seeds: 1, detail: "period became non-positive".into() });
        }
    }
    if !(residual < PERIODIC_TOL) {
        return Err(Error::NonConvergence { seeds: 1, detail: format!("cycle residual {residual:e}") });
    }
    let mults = multipliers(&mono);
    let nontrivial: Vec<Complex<f64>> = {
        let mut v = mults.clone();
        let k = (0..v.len())
            .min_by(|&a, &b| (v[a] - 1.0).norm().total_cmp(&(v[b] - 1.0).norm()))
            .unwrap_or(0);
        v.remove(k);
        v
    };
    Ok(PeriodicOrbitRecord {
        point_on_section: State4::from_spatial(x.into(), 0.0),
        period,
        period_multiple: None,
        stability: stability_of(&nontrivial),
        floquet_multipliers: mults,
        residual,
    })
}

fn with_zero_forcing(p: &SystemParams) -> SystemParams {
    let mut q = p.clone();
    q.mu = 0.0;
    q
}

impl PeriodicOrbitRecord {
    /// Multipliers with the one closest to 1 removed.
    pub fn nontrivial_multipliers(&self) -> Vec<Complex<f64>> {
        let mut v = self.floquet_multipliers.clone();
        if self.period_multiple.is_none() && !v.is_empty() {
            let k = (0..v.len())
                .min_by(|&a, &b| (v[a] - 1.0).norm().total_cmp(&(v[b] - 1.0).norm()))
                .unwrap_or(0);
            v.remove(k);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Exponents per unit time, descending.
    pub exponents: [f64; 3],
    pub std_err: [f64; 3],
}

pub const LYAPUNOV_BLOCKS: usize = 20;

fn lyapunov_run(
    p: &SystemParams,
    s0: &State4,
    n_iter: usize,
    n_transient: usize,
    cfg: &IntegratorConfig,
) -> Result<(LyapunovSpectrum, Vec<State4>)> {
    let mut x = *s0;
    for _ in 0..n_transient {
        x = strobe_map(p, &x, 1, cfg).map_err(escaped)?;
    }
    let t = p.strobe_period();
    let mut q = Matrix3::identity();
    let mut logs: [Vec<f64>; 3] = [Vec::with_capacity(n_iter), Vec::with_capacity(n_iter), Vec::with_capacity(n_iter)];
    let mut points = Vec::with_capacity(n_iter + 1);
    points.push(x);
    for _ in 0..n_iter {
        let (next, phi) = flow_variational(p, &x, &q, cfg, t).map_err(escaped)?;
        let qr = phi.qr();
        let r = qr.r();
        let mut qq = qr.q();
        for i in 0..3 {
            let d = r[(i, i)];
            logs[i].push(d.abs().ln() / t);
            if d < 0.0 {
                qq.column_mut(i).neg_mut();
            }
        }
        q = qq;
        x = next.with_theta(s0.theta());
        points.push(x);
    }
    let mut est: Vec<(f64, f64)> = logs.iter().map(|l| block_mean_se(l, LYAPUNOV_BLOCKS)).collect();
    est.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((
        LyapunovSpectrum { exponents: [est[0].0, est[1].0, est[2].0], std_err: [est[0].1, est[1].1, est[2].1] },
        points,
    ))
}

/// Lyapunov spectrum of the spatial dynamics, with QR re-orthonormalization
/// every strobe period and block-averaged standard errors.
pub fn lyapunov_spectrum(p: &SystemParams, s0: &State4, n_iter: usize, n_transient: usize, cfg: &IntegratorConfig) -> Result<LyapunovSpectrum> {
    if n_iter < 1000 {
        return Err(Error::Invalid(format!("n_iter = {n_iter} must be at least 1000")));
    }
    lyapunov_run(p, s0, n_iter, n_transient, cfg).map(|(l, _)| l)
}

/// Planar chart `(c, e1, e2)` around which section points wind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chart {
    pub center: [f64; 3],
    pub e1: [f64; 3],
    pub e2: [f64; 3],
}

impl Chart {
    /// Fits the plane of least variance through `points`.
    pub fn from_points(points: &[[f64; 3]]) -> Option<Chart> {
        let n = points.len();
        if n < 3 {
            return None;
        }
        let mut c = Vector3::zeros();
        for x in points {
            c += Vector3::from(*x);
        }
        c /= n as f64;
        let mut cov = Matrix3::zeros();
        for x in points {
            let d = Vector3::from(*x) - c;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        if eig.eigenvalues[idx[1]] <= 1e-30 {
            return None;
        }
        let e1 = eig.eigenvectors.column(idx[0]).into_owned();
        let n_vec = eig.eigenvectors.column(idx[2]).into_owned();
        let e2 = n_vec.cross(&e1);
        Some(Chart { center: c.into(), e1: e1.into(), e2: e2.into() })
    }

    pub fn angle(&self, x: &[f64; 3]) -> f64 {
        let d = Vector3::from(*x) - Vector3::from(self.center);
        let a = d.dot(&Vector3::from(self.e2)).atan2(d.dot(&Vector3::from(self.e1)));
        a.rem_euclid(TAU)
    }

    pub fn flipped(&self) -> Chart {
        Chart { center: self.center, e1: self.e1, e2: (-Vector3::from(self.e2)).into() }
    }

    /// Orients the chart so that the flow of `p` turns counter-clockwise.
    pub fn oriented_by_flow(self, p: &SystemParams, samples: &[State4]) -> Chart {
        let n = Vector3::from(self.e1).cross(&Vector3::from(self.e2));
        let c = Vector3::from(self.center);
        let mut s = 0.0;
        for st in samples {
            let x = Vector3::from(st.x);
            let v = Vector3::from(field(p, &st.x, st.theta()));
            s += n.dot(&(x - c).cross(&v));
        }
        if s < 0.0 {
            self.flipped()
        } else {
            self
        }
    }
}

/// Increments `a_{k+1} − a_k` reduced to `[0, 2π)` and then lifted with the
/// branch cut placed in the widest gap of their distribution.
pub fn lifted_increments(angles: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = angles.windows(2).map(|w| (w[1] - w[0]).rem_euclid(TAU)).collect();
    if raw.is_empty() {
        return raw;
    }
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let mut best_gap = sorted[0] + TAU - sorted[sorted.len() - 1];
    let mut cut = (sorted[sorted.len() - 1] + sorted[0] + TAU) / 2.0;
    for w in sorted.windows(2) {
        if w[1] - w[0] > best_gap {
            best_gap = w[1] - w[0];
            cut = 0.5 * (w[0] + w[1]);
        }
    }
    let cut = cut.rem_euclid(TAU);
    raw.into_iter().map(|d| if d >= cut { d - TAU } else { d }).collect()
}

fn rotation_from_angles(angles: &[f64]) -> Result<f64> {
    if angles.len() < 3 {
        return Err(Error::Undefined("too few iterates".into()));
    }
    let inc = lifted_increments(angles);
    if !crate::model::lift_is_monotone(&angles[..inc.len()], &inc) {
        return Err(Error::Undefined("iterates do not preserve cyclic order".into()));
    }
    let rho = (weighted_birkhoff(&inc) / TAU).rem_euclid(1.0);
    Ok(if rho >= 1.0 - 1e-15 { 0.0 } else { rho })
}

/// Chart from dense samples of the trajectory over `periods` strobe periods from `s`.
pub fn trajectory_chart(p: &SystemParams, s: &State4, periods: usize, cfg: &IntegratorConfig) -> Result<Chart> {
    let traj = crate::integrator::integrate(p, s, cfg, periods.max(1) as f64 * p.strobe_period())?;
    let n = 64 * periods.max(1);
    let samples: Vec<State4> = (0..n)
        .filter_map(|k| traj.state_at(traj.t_end() * k as f64 / n as f64))
        .collect();
    let pts: Vec<[f64; 3]> = samples.iter().map(|s| s.x).collect();
    let chart = Chart::from_points(&pts).ok_or_else(|| Error::Undefined("degenerate trajectory".into()))?;
    Ok(chart.oriented_by_flow(p, &samples))
}

/// Average angular advance per strobe iterate in turns.
pub fn rotation_number(p: &SystemParams, s0: &State4, n_iter: usize, n_transient: usize, cfg: &IntegratorConfig) -> Result<f64> {
    let mut x = *s0;
    for _ in 0..n_transient {
        x = strobe_map(p, &x, 1, cfg).map_err(escaped)?;
    }
    let orbit = strobe_orbit(p, &x, n_iter, cfg)?;
    rotation_of_orbit(p, &orbit, cfg)
}

fn rotation_of_orbit(p: &SystemParams, orbit: &[State4], cfg: &IntegratorConfig) -> Result<f64> {
    let first = orbit.first().ok_or_else(|| Error::Undefined("empty orbit".into()))?;
    let spread = orbit.iter().map(|s| s.distance(first)).fold(0.0, f64::max);
    if spread < 1e-8 {
        return Ok(0.0);
    }
    let chart = trajectory_chart(p, first, 8, cfg)?;
    let angles: Vec<f64> = orbit.iter().map(|s| chart.angle(&s.x)).collect();
    rotation_from_angles(&angles)
}

/// Closed curve fitted to section points as a Fourier graph over the chart angle.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleFit {
    pub chart: Chart,
    pub coords: [FourierSeries; 3],
    pub residual: f64,
    pub modes: usize,
}

impl CircleFit {
    pub fn eval(&self, angle: f64) -> [f64; 3] {
        [self.coords[0].eval(angle), self.coords[1].eval(angle), self.coords[2].eval(angle)]
    }

    pub fn dense(&self, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|k| self.eval(TAU * k as f64 / n as f64)).collect()
    }

    /// Distance from the curve to `x`, by dense sampling.
    pub fn distance_to(&self, x: &[f64; 3]) -> f64 {
        self.dense(8192).iter().map(|y| spatial_distance(x, y)).fold(f64::INFINITY, f64::min)
    }

    /// Largest distance from the given points to the curve's dense samples.
    pub fn max_deviation(&self, points: &[[f64; 3]]) -> f64 {
        let dense = self.dense(8192);
        points
            .iter()
            .map(|x| dense.iter().map(|y| spatial_distance(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }
}

pub const CIRCLE_MODES: usize = 32;

/// Fits an invariant circle to consecutive section iterates.
pub fn invariant_circle_fit(samples: &[State4], modes: usize) -> Result<CircleFit> {
    if samples.len() < 100 {
        return Err(Error::Invalid(format!("need at least 100 samples, got {}", samples.len())));
    }
    let pts: Vec<[f64; 3]> = samples.iter().map(|s| s.x).collect();
    let chart = Chart::from_points(&pts).ok_or_else(|| Error::FitFailed("samples are degenerate".into()))?;
    let angles: Vec<f64> = pts.iter().map(|x| chart.angle(x)).collect();
    let inc = lifted_increments(&angles);
    if !crate::model::lift_is_monotone(&angles[..inc.len()], &inc) {
        return Err(Error::FitFailed("samples do not order monotonically by angle".into()));
    }
    let mut sorted = angles.clone();
    sorted.sort_by(f64::total_cmp);
    let mut gap = sorted[0] + TAU - sorted[sorted.len() - 1];
    for w in sorted.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    if gap > std::f64::consts::FRAC_PI_2 {
        return Err(Error::FitFailed(format!("samples leave an angular gap of {gap:.3} rad")));
    }
    let fit = |j: usize| {
        let vals: Vec<f64> = pts.iter().map(|x| x[j]).collect();
        fourier_fit(&angles, &vals, modes).ok_or_else(|| Error::FitFailed("least squares failed".into()))
    };
    let coords = [fit(0)?, fit(1)?, fit(2)?];
    let mut out = CircleFit { chart, coords, residual: 0.0, modes };
    out.residual = pts
        .iter()
        .zip(angles.iter())
        .map(|(x, a)| spatial_distance(x, &out.eval(*a)))
        .fold(0.0, f64::max);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitClass {
    Fixed,
    Periodic(usize),
    QuasiperiodicTorus,
    Chaotic,
    Escaped,
    /// `ν = μ = 0`: orbits accumulate on the heteroclinic network.
    Network,
    Unresolved,
}

impl std::fmt::Display for OrbitClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrbitClass::Fixed => write!(f, "fixed"),
            OrbitClass::Periodic(q) => write!(f, "periodic({q})"),
            OrbitClass::QuasiperiodicTorus => write!(f, "quasiperiodic_torus"),
            OrbitClass::Chaotic => write!(f, "chaotic"),
            OrbitClass::Escaped => write!(f, "escaped"),
            OrbitClass::Network => write!(f, "network"),
            OrbitClass::Unresolved => write!(f, "unresolved"),
        }
    }
}

impl std::str::FromStr for OrbitClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("unknown orbit class {s:?}"));
        Ok(match s {
            "fixed" => OrbitClass::Fixed,
            "quasiperiodic_torus" => OrbitClass::QuasiperiodicTorus,
            "chaotic" => OrbitClass::Chaotic,
            "escaped" => OrbitClass::Escaped,
            "network" => OrbitClass::Network,
            "unresolved" => OrbitClass::Unresolved,
            _ => {
                let q = s.strip_prefix("periodic(").and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
                let q: usize = q.parse().map_err(|_| bad())?;
                if q < 2 {
                    return Err(bad());
                }
                OrbitClass::Periodic(q)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSummary {
    pub lyapunov: [f64; 3],
    pub lyapunov_se: [f64; 3],
    pub rotation_number: Option<f64>,
    pub classification: OrbitClass,
    pub transient_discarded: usize,
    pub circle_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    pub n_iter: usize,
    pub n_transient: usize,
    pub circle_modes: usize,
    pub circle_tol: f64,
    pub integrator: IntegratorConfig,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            n_iter: 2000,
            n_transient: 1000,
            circle_modes: CIRCLE_MODES,
            circle_tol: 1e-4,
            integrator: IntegratorConfig::default(),
        }
    }
}

fn detect_strobe_period(orbit: &[State4], q_max: usize) -> Option<usize> {
    let n = orbit.len();
    let tail = 40usize;
    (1..=q_max).find(|&q| n >= tail + q && (n - tail - q..n - q).all(|k| orbit[k].distance(&orbit[k + q]) < 1e-8))
}

/// Full verdict for the attractor reached from `s0`.
pub fn classify_attractor(p: &SystemParams, s0: &State4, opts: &ClassifyOptions) -> OrbitSummary {
    let nan = [f64::NAN; 3];
    let bail = |class: OrbitClass| OrbitSummary {
        lyapunov: nan,
        lyapunov_se: nan,
        rotation_number: None,
        classification: class,
        transient_discarded: opts.n_transient,
        circle_residual: None,
    };
    if p.nu == 0.0 && p.mu == 0.0 {
        return bail(OrbitClass::Network);
    }
    let cfg = &opts.integrator;
    let (lyap, orbit) = match lyapunov_run(p, s0, opts.n_iter, opts.n_transient, cfg) {
        Ok(v) => v,
        Err(_) => return bail(OrbitClass::Escaped),
    };
    let (top, se) = (lyap.exponents[0], lyap.std_err[0]);
    let mut circle_residual = None;
    let classification = if top > 3.0 * se && top > 1e-3 {
        OrbitClass::Chaotic
    } else if let Some(q) = detect_strobe_period(&orbit, 64) {
        if q == 1 {
            OrbitClass::Fixed
        } else {
            OrbitClass::Periodic(q)
        }
    } else {
        match invariant_circle_fit(&orbit, opts.circle_modes) {
            Ok(fit) => {
                circle_residual = Some(fit.residual);
                if fit.residual < opts.circle_tol {
                    OrbitClass::QuasiperiodicTorus
                } else {
                    OrbitClass::Unresolved
                }
            }
            Err(_) => OrbitClass::Unresolved,
        }
    };
    let rotation_number = match classification {
        OrbitClass::Fixed => Some(0.0),
        OrbitClass::Periodic(_) | OrbitClass::QuasiperiodicTorus => rotation_of_orbit(p, &orbit, cfg).ok(),
        _ => None,
    };
    OrbitSummary {
        lyapunov: lyap.exponents,
        lyapunov_se: lyap.std_err,
        rotation_number,
        classification,
        transient_discarded: opts.n_transient,
        circle_residual,
    }
}

/// Initial condition on the unit sphere in the half-space `x2 > 0`, drawn
/// from a seeded generator.
pub fn seeded_initial_state(seed: u64, theta: f64) -> State4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 && (v[0] / n).abs() > 0.05 && (v[2] / n).abs() < 0.95 {
            return State4::new(v[0] / n, v[1] / n, v[2] / n, theta);
        }
    }
}

impl OrbitSummary {
    /// CSV row `nu,mu,omega,seed,lambda1,lambda2,lambda3,rho,class`.
    pub fn csv_row(&self, p: &SystemParams, seed: u64) -> String {
        let rho = self.rotation_number.map(|r| format!("{r:.12e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.12e},{:.12e},{:.12e},{},{}",
            p.nu, p.mu, p.omega, seed, self.lyapunov[0], self.lyapunov[1], self.lyapunov[2], rho, self.classification
        )
    }
}

pub const ORBIT_CSV_HEADER: &str = "nu,mu,omega,seed,lambda1,lambda2,lambda3,rho,class";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_roundtrip() {
        for c in [
            OrbitClass::Fixed,
            OrbitClass::Periodic(3),
            OrbitClass::QuasiperiodicTorus,
            OrbitClass::Chaotic,
            OrbitClass::Escaped,
            OrbitClass::Network,
            OrbitClass::Unresolved,
        ] {
            assert_eq!(c.to_string().parse::<OrbitClass>().unwrap(), c);
        }
        assert!("periodic(1)".parse::<OrbitClass>().is_err());
        assert!("periodic(x)".parse::<OrbitClass>().is_err());
    }

    #[test]
    fn lifted_increments_rotation() {
        let rho = 0.9;
        let angles: Vec<f64> = (0..50).map(|k| (TAU * rho * k as f64).rem_euclid(TAU)).collect();
        let inc = lifted_increments(&angles);
        let mean = inc.iter().sum::<f64>() / inc.len() as f64 / TAU;
        assert!((mean.rem_euclid(1.0) - rho).abs() < 1e-12);
    }

    #[test]
    fn seeded_states_are_reproducible() {
        let a = seeded_initial_state(7, 0.0);
        let b = seeded_initial_state(7, 0.0);
        assert_eq!(a, b);
        assert!(a.x[1] > 0.0 && (a.norm() - 1.0).abs() < 1e-12);
    }
}
