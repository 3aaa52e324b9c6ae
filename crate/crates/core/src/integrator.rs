//! Dormand–Prince 5(4) integration with dense output and event location.
//!
//! The spatial components are integrated numerically; the phase is advanced
//! analytically as `θ(t) = θ0 + 2ωt`.

use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{field, spatial_jacobian, wrap_angle, State4, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_time: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { rel_tol: 1e-10, abs_tol: 1e-12, max_step: 1.0, max_time: 1e7 }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        IntegratorConfig { rel_tol, abs_tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_step > 0.0
            && self.max_time > 0.0
            && [self.rel_tol, self.abs_tol, self.max_time].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad integrator config {self:?}")))
        }
    }
}

pub const MIN_STEP: f64 = 1e-14;
pub const DIVERGENCE_NORM: f64 = 1e6;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseSegment<const N: usize> {
    pub t: f64,
    pub h: f64,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseSegment<N> {
    /// Fourth-order interpolant at `t + s·h`, `s ∈ [0, 1]`.
    pub fn eval_fraction(&self, s: f64) -> [f64; N] {
        let s1 = 1.0 - s;
        let r = &self.rcont;
        std::array::from_fn(|i| r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i]))))
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        self.eval_fraction((t - self.t) / self.h)
    }

    pub fn end_time(&self) -> f64 {
        self.t + self.h
    }
}

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

fn err_norm<const N: usize>(e: &[f64; N], y0: &[f64; N], y1: &[f64; N], cfg: &IntegratorConfig) -> f64 {
    let s: f64 = (0..N)
        .map(|i| {
            let sc = cfg.abs_tol + cfg.rel_tol * y0[i].abs().max(y1[i].abs());
            (e[i] / sc).powi(2)
        })
        .sum();
    (s / N as f64).sqrt()
}

fn spatial_norm<const N: usize>(y: &[f64; N]) -> f64 {
    y.iter().take(3).map(|v| v * v).sum::<f64>().sqrt()
}

fn initial_step<const N: usize, F>(f: &mut F, t0: f64, y0: &[f64; N], f0: &[f64; N], dir: f64, cfg: &IntegratorConfig) -> f64
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let sc: [f64; N] = std::array::from_fn(|i| cfg.abs_tol + cfg.rel_tol * y0[i].abs());
    let norm = |v: &[f64; N]| ((0..N).map(|i| (v[i] / sc[i]).powi(2)).sum::<f64>() / N as f64).sqrt();
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step);
    let y1 = axpy(y0, &[(dir * h0, f0)]);
    let f1 = f(t0 + dir * h0, &y1);
    let df: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = norm(&df) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
    (100.0 * h0).min(h1).min(cfg.max_step)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction), calling
/// `observe` on every accepted step.
pub fn dopri5<const N: usize, F, O>(
    cfg: &IntegratorConfig,
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    mut observe: O,
) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(&DenseSegment<N>),
{
    cfg.validate()?;
    if !t1.is_finite() || !t0.is_finite() {
        return Err(Error::Invalid("integration bounds must be finite".into()));
    }
    if (t1 - t0).abs() > cfg.max_time {
        return Err(Error::Invalid(format!(
            "integration span {} exceeds max_time {}",
            (t1 - t0).abs(),
            cfg.max_time
        )));
    }
    if t1 == t0 {
        return Ok(y0);
    }
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = initial_step(&mut f, t, &y, &k1, dir, cfg);
    let mut last_rejected = false;
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let mut last = false;
        if h >= 0.999 * remaining {
            h = remaining;
            last = true;
        }
        if h < MIN_STEP {
            return Err(Error::StepUnderflow { t, h });
        }
        let hs = dir * h;
        let k2 = f(t + C2 * hs, &axpy(&y, &[(hs * A21, &k1)]));
        let k3 = f(t + C3 * hs, &axpy(&y, &[(hs * A31, &k1), (hs * A32, &k2)]));
        let k4 = f(t + C4 * hs, &axpy(&y, &[(hs * A41, &k1), (hs * A42, &k2), (hs * A43, &k3)]));
        let k5 = f(
            t + C5 * hs,
            &axpy(&y, &[(hs * A51, &k1), (hs * A52, &k2), (hs * A53, &k3), (hs * A54, &k4)]),
        );
        let k6 = f(
            t + hs,
            &axpy(&y, &[(hs * A61, &k1), (hs * A62, &k2), (hs * A63, &k3), (hs * A64, &k4), (hs * A65, &k5)]),
        );
        let y_new = axpy(&y, &[(hs * A71, &k1), (hs * A73, &k3), (hs * A74, &k4), (hs * A75, &k5), (hs * A76, &k6)]);
        let t_new = if last { t1 } else { t + hs };
        let k7 = f(t_new, &y_new);
        let e: [f64; N] = std::array::from_fn(|i| {
            hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        });
        let err = err_norm(&e, &y, &y_new, cfg);
        if !err.is_finite() {
            let norm = spatial_norm(&y_new);
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                return Err(Error::Divergence { t, norm });
            }
            h *= 0.2;
            last_rejected = true;
            continue;
        }
        if err <= 1.0 {
            let norm = spatial_norm(&y_new);
            if norm > DIVERGENCE_NORM {
                return Err(Error::Divergence { t: t_new, norm });
            }
            let r0 = y;
            let r1: [f64; N] = std::array::from_fn(|i| y_new[i] - y[i]);
            let r2: [f64; N] = std::array::from_fn(|i| hs * k1[i] - r1[i]);
            let r3: [f64; N] = std::array::from_fn(|i| r1[i] - hs * k7[i] - r2[i]);
            let r4: [f64; N] = std::array::from_fn(|i| {
                hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
            });
            observe(&DenseSegment { t, h: t_new - t, rcont: [r0, r1, r2, r3, r4] });
            t = t_new;
            y = y_new;
            k1 = k7;
            let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h = (h * fac).min(cfg.max_step);
            if last {
                break;
            }
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            last_rejected = true;
        }
    }
    Ok(y)
}

/// A forward trajectory with its dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    theta0: f64,
    omega: f64,
    pub samples: Vec<(f64, State4)>,
    pub segments: Vec<DenseSegment<3>>,
}

impl Trajectory {
    pub fn theta_at(&self, t: f64) -> f64 {
        wrap_angle(self.theta0 + 2.0 * self.omega * t)
    }

    pub fn t_start(&self) -> f64 {
        self.samples.first().map(|s| s.0).unwrap_or(0.0)
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map(|s| s.0).unwrap_or(0.0)
    }

    pub fn final_state(&self) -> State4 {
        self.samples.last().expect("trajectory has at least one sample").1
    }

    /// Interpolated state, `None` outside the covered interval.
    pub fn state_at(&self, t: f64) -> Option<State4> {
        if t < self.t_start() || t > self.t_end() {
            return None;
        }
        if self.segments.is_empty() {
            return Some(self.samples[0].1);
        }
        let idx = self.segments.partition_point(|s| s.end_time() < t).min(self.segments.len() - 1);
        let x = self.segments[idx].eval(t);
        Some(State4::from_spatial(x, self.theta_at(t)))
    }
}

/// Integrates from `t = 0` to `t_end > 0`.
pub fn integrate(p: &SystemParams, s0: &State4, cfg: &IntegratorConfig, t_end: f64) -> Result<Trajectory> {
    p.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::Invalid(format!("t_end must be > 0, got {t_end}")));
    }
    let theta0 = s0.theta();
    let omega = p.omega;
    let mut samples = vec![(0.0, *s0)];
    let mut segments = Vec::new();
    dopri5(cfg, |t, x: &[f64; 3]| field(p, x, theta0 + 2.0 * omega * t), 0.0, s0.x, t_end, |seg| {
        segments.push(*seg);
        let t1 = seg.end_time();
        let x1 = seg.eval_fraction(1.0);
        samples.push((t1, State4::from_spatial(x1, theta0 + 2.0 * omega * t1)));
    })?;
    Ok(Trajectory { theta0, omega, samples, segments })
}

/// State after time `t` (negative values integrate backward).
pub fn flow(p: &SystemParams, s0: &State4, cfg: &IntegratorConfig, t: f64) -> Result<State4> {
    let theta0 = s0.theta();
    let omega = p.omega;
    let x = dopri5(cfg, |tt, x: &[f64; 3]| field(p, x, theta0 + 2.0 * omega * tt), 0.0, s0.x, t, |_| {})?;
    Ok(State4::from_spatial(x, theta0 + 2.0 * omega * t))
}

/// State and spatial fundamental matrix after time `t`, starting from `phi0`.
pub fn flow_variational(
    p: &SystemParams,
    s0: &State4,
    phi0: &Matrix3<f64>,
    cfg: &IntegratorConfig,
    t: f64,
) -> Result<(State4, Matrix3<f64>)> {
    let theta0 = s0.theta();
    let omega = p.omega;
    let mut y0 = [0.0; 12];
    y0[..3].copy_from_slice(&s0.x);
    y0[3..].copy_from_slice(phi0.as_slice());
    let rhs = |tt: f64, y: &[f64; 12]| {
        let x = [y[0], y[1], y[2]];
        let th = theta0 + 2.0 * omega * tt;
        let v = field(p, &x, th);
        let j = spatial_jacobian(p, &x, th);
        let m = Matrix3::from_column_slice(&y[3..]);
        let dm = j * m;
        let mut out = [0.0; 12];
        out[..3].copy_from_slice(&v);
        out[3..].copy_from_slice(dm.as_slice());
        out
    };
    let y = dopri5(cfg, rhs, 0.0, y0, t, |_| {})?;
    Ok((
        State4::from_spatial([y[0], y[1], y[2]], theta0 + 2.0 * omega * t),
        Matrix3::from_column_slice(&y[3..]),
    ))
}

fn brent_like<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64) -> f64 {
    // Illinois variant of regula falsi, falling back to bisection.
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let gc = g(c);
        if gc == 0.0 {
            return c;
        }
        if (gc < 0.0) == (ga < 0.0) {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    if ga.abs() < gb.abs() {
        a
    } else {
        b
    }
}

/// Upward zero crossings of `g(t, state)` along the trajectory, polished on
/// the dense output. Each step is subdivided so that the phase advances by
/// at most a quarter turn per sub-interval.
pub fn locate_events<G>(traj: &Trajectory, g: G) -> Vec<(f64, State4)>
where
    G: Fn(f64, &State4) -> f64,
{
    let mut out = Vec::new();
    let at = |seg: &DenseSegment<3>, t: f64| State4::from_spatial(seg.eval(t), traj.theta_at(t));
    if let Some((t0, s0)) = traj.samples.first() {
        if g(*t0, s0) == 0.0 {
            out.push((*t0, *s0));
        }
    }
    for seg in &traj.segments {
        let quarter = std::f64::consts::FRAC_PI_2 / (2.0 * traj.omega);
        let m = ((seg.h / quarter).ceil() as usize).max(1) * 2;
        let mut ta = seg.t;
        let mut ga = g(ta, &at(seg, ta));
        for k in 1..=m {
            let tb = if k == m { seg.end_time() } else { seg.t + seg.h * k as f64 / m as f64 };
            let gb = g(tb, &at(seg, tb));
            if ga < 0.0 && gb >= 0.0 {
                let root = if gb == 0.0 { tb } else { brent_like(&|t| g(t, &at(seg, t)), ta, tb, ga, gb) };
                out.push((root, at(seg, root)));
            }
            ta = tb;
            ga = gb;
        }
    }
    out
}

/// Crossings of the section `θ = θ*`.
pub fn cross_section_events(traj: &Trajectory, theta_star: f64) -> Vec<(f64, State4)> {
    let ts = wrap_angle(theta_star);
    locate_events(traj, |_, s| {
        let d = s.theta() - ts;
        if d.cos() > 0.0 {
            d.sin()
        } else {
            -1.0
        }
    })
}

/// Writes `t,x1,x2,x3,theta` rows with 17 significant digits.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "t,x1,x2,x3,theta")?;
    for (t, s) in &traj.samples {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", t, s.x[0], s.x[1], s.x[2], s.theta())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_order() {
        let cfg = IntegratorConfig::with_tolerances(1e-12, 1e-14);
        let y = dopri5(&cfg, |_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 3.0, |_| {}).unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-12);
        let yb = dopri5(&cfg, |_, y: &[f64; 1]| [-y[0]], 3.0, y, 0.0, |_| {}).unwrap();
        assert!((yb[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn dense_output_interpolates() {
        let cfg = IntegratorConfig { max_step: 0.3, ..IntegratorConfig::with_tolerances(1e-12, 1e-14) };
        let mut segs = Vec::new();
        dopri5(&cfg, |_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 6.0, |s| segs.push(*s)).unwrap();
        for seg in &segs {
            for k in 0..=4 {
                let t = seg.t + seg.h * k as f64 / 4.0;
                let y = seg.eval(t);
                assert!((y[0] - t.sin()).abs() < 1e-9, "t = {t}");
            }
        }
    }

    #[test]
    fn divergence_reported() {
        let cfg = IntegratorConfig::default();
        let r = dopri5(&cfg, |_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], 2.0, |_| {});
        assert!(matches!(r, Err(Error::Divergence { .. }) | Err(Error::StepUnderflow { .. })));
    }
}
