//! Conley–Moser verification for the annulus return map: decreasing window,
//! vertical and horizontal strips, derivative bounds, and shadow points for
//! finite itineraries over two symbols.

use std::f64::consts::TAU;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_decreasing, d_return_map, omega0, return_map, AnnulusPoint, ReturnMapModel};
use crate::real::{Mp, Real};

/// Samples per strip boundary curve.
pub const STRIP_SAMPLES: usize = 512;
/// Grid points per axis for the derivative bounds.
pub const DERIVATIVE_GRID: usize = 256;
/// Grid points per axis when mapping a vertical strip.
pub const IMAGE_GRID: usize = 64;
/// Fraction of the critical-point gap trimmed from each end of the window.
pub const WINDOW_MARGIN: f64 = 0.05;
/// `ξ_L` is capped at this fraction of `ε_w − ε_v`.
pub const LANDING_FRACTION: f64 = 0.9;
pub const MAX_WORD_LEN: usize = 64;

/// Rectangle `D = [φ_L, φ_R] × [1, 1 + ε_v]` over a decreasing window of ξ,
/// with the two symbol windows `I₁`, `I₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub phi_l: f64,
    pub phi_r: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub windows: [(f64, f64); 2],
}

impl Domain {
    pub fn window(&self) -> (f64, f64) {
        (self.phi_l, self.phi_r)
    }

    pub fn width(&self) -> f64 {
        self.phi_r - self.phi_l
    }
}

/// Finds the decreasing arc of ξ with the largest drop and trims it.
pub fn build_domain(model: &ReturnMapModel) -> Result<Domain> {
    let xi = &model.xi;
    if xi.is_constant() {
        return Err(Error::NoWindow("xi is constant".into()));
    }
    let cps = xi.critical_points();
    if cps.len() < 2 {
        return Err(Error::NoWindow("xi has fewer than two critical points".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for (i, &(phi, is_max)) in cps.iter().enumerate() {
        if !is_max {
            continue;
        }
        let (next, next_is_max) = cps[(i + 1) % cps.len()];
        if next_is_max {
            return Err(Error::NoWindow("critical points do not alternate".into()));
        }
        let next = if next <= phi { next + TAU } else { next };
        let drop = xi.value(phi) - xi.value(next);
        if best.is_none_or(|b| drop > b.2) {
            best = Some((phi, next, drop));
        }
    }
    let (p1, p2, _) = best.ok_or_else(|| Error::NoWindow("no maximum found".into()))?;
    let m = WINDOW_MARGIN * (p2 - p1);
    let mut phi_l = p1 + m;
    let phi_r = p2 - m;
    let cap = LANDING_FRACTION * (model.eps_w - model.eps_v);
    if xi.value(phi_l) > cap {
        if xi.value(phi_r) >= cap {
            return Err(Error::NoWindow(format!("xi exceeds {cap} on the whole decreasing arc")));
        }
        let (mut lo, mut hi) = (phi_l, phi_r);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if xi.value(mid) > cap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        phi_l = hi;
    }
    check_decreasing(xi, (phi_l, phi_r)).map_err(|e| Error::NoWindow(e.to_string()))?;
    let third = (phi_r - phi_l) / 3.0;
    Ok(Domain {
        phi_l,
        phi_r,
        r_min: 1.0,
        r_max: 1.0 + model.eps_v,
        windows: [(phi_l, phi_l + third), (phi_r - third, phi_r)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripKind {
    /// `{u₁(r) ≤ φ ≤ u₂(r)}`, abscissa `r`.
    Vertical,
    /// `{u₁(φ) ≤ r ≤ u₂(φ)}`, abscissa `φ`.
    Horizontal,
}

impl fmt::Display for StripKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StripKind::Vertical => "vertical",
            StripKind::Horizontal => "horizontal",
        })
    }
}

/// Strip bounded by two sampled graphs with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSpec {
    pub kind: StripKind,
    pub abscissa: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Twice the largest divided difference of either boundary.
    pub lipschitz: f64,
    /// Largest gap `u₂ − u₁`.
    pub width: f64,
}

fn max_divided_difference(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| ((b[1] - b[0]) / (a[1] - a[0])).abs())
        .fold(0.0, f64::max)
}

fn max_second_difference(y: &[f64]) -> f64 {
    y.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).fold(0.0, f64::max)
}

fn interp(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let k = x.partition_point(|v| *v <= t).min(n - 1).max(1);
    let f = (t - x[k - 1]) / (x[k] - x[k - 1]);
    y[k - 1] + f * (y[k] - y[k - 1])
}

impl StripSpec {
    pub fn from_samples(kind: StripKind, abscissa: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<StripSpec> {
        let n = abscissa.len();
        if n < 2 || lower.len() != n || upper.len() != n {
            return Err(Error::Invalid("strip needs at least two samples per curve".into()));
        }
        if abscissa.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("strip abscissa must increase".into()));
        }
        if let Some(k) = (0..n).find(|&k| !(lower[k] < upper[k])) {
            return Err(Error::VerificationFailed {
                condition: format!("{kind} strip boundaries ordered"),
                witness: format!("at {} lower {} >= upper {}", abscissa[k], lower[k], upper[k]),
            });
        }
        let lipschitz = 2.0 * max_divided_difference(&abscissa, &lower).max(max_divided_difference(&abscissa, &upper));
        let width = (0..n).map(|k| upper[k] - lower[k]).fold(0.0, f64::max);
        Ok(StripSpec { kind, abscissa, lower, upper, lipschitz, width })
    }

    pub fn lower_at(&self, t: f64) -> f64 {
        interp(&self.abscissa, &self.lower, t)
    }

    pub fn upper_at(&self, t: f64) -> f64 {
        interp(&self.abscissa, &self.upper, t)
    }

    /// Largest divided difference of the boundaries, without the safety factor.
    pub fn sampled_lipschitz(&self) -> f64 {
        max_divided_difference(&self.abscissa, &self.lower).max(max_divided_difference(&self.abscissa, &self.upper))
    }

    /// Bound on the linear-interpolation error of the boundaries.
    pub fn interpolation_slack(&self) -> f64 {
        max_second_difference(&self.lower).max(max_second_difference(&self.upper)) / 8.0
    }

    /// Membership in graph coordinates `(abscissa, ordinate)`.
    pub fn contains(&self, t: f64, v: f64, slack: f64) -> bool {
        t >= self.abscissa[0] - slack
            && t <= self.abscissa[self.abscissa.len() - 1] + slack
            && v >= self.lower_at(t) - slack
            && v <= self.upper_at(t) + slack
    }

    /// Rows `label,kind,abscissa,lower,upper`.
    pub fn write_csv_rows<W: Write>(&self, label: &str, w: &mut W) -> Result<()> {
        for k in 0..self.abscissa.len() {
            writeln!(w, "{label},{},{:.16e},{:.16e},{:.16e}", self.kind, self.abscissa[k], self.lower[k], self.upper[k])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub ok: bool,
    pub detail: String,
    /// First offending point `(φ, r)`, if any.
    pub witness: Option<(f64, f64)>,
}

impl ConditionCheck {
    fn pass(detail: String) -> Self {
        ConditionCheck { ok: true, detail, witness: None }
    }
    fn fail(detail: String, witness: Option<(f64, f64)>) -> Self {
        ConditionCheck { ok: false, detail, witness }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSizes {
    pub strip_samples: usize,
    pub derivative_grid: usize,
    pub image_grid: usize,
}

impl Default for GridSizes {
    fn default() -> Self {
        GridSizes { strip_samples: STRIP_SAMPLES, derivative_grid: DERIVATIVE_GRID, image_grid: IMAGE_GRID }
    }
}

impl GridSizes {
    pub fn doubled(&self) -> Self {
        GridSizes {
            strip_samples: 2 * self.strip_samples,
            derivative_grid: 2 * self.derivative_grid,
            image_grid: 2 * self.image_grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConleyMoserReport {
    pub omega: f64,
    pub omega0: f64,
    pub domain: Domain,
    /// Angular winding `M_i` attached to each symbol: the image of `V_i`
    /// lands in `D + (2π M_i, 0)`.
    pub windings: Option<[i64; 2]>,
    /// Smallest slack of the crossing inequalities, in radians.
    pub crossing_margin: f64,
    /// Radial band `[r_lo, r_hi]` containing both horizontal strips.
    pub band: (f64, f64),
    pub vertical: Vec<StripSpec>,
    pub horizontal: Vec<StripSpec>,
    pub mu_v: f64,
    pub mu_h: f64,
    pub inf_dr1_dphi: f64,
    pub sup_dr2_dr: f64,
    pub lambda_v: f64,
    pub lambda_h: f64,
    pub p1: ConditionCheck,
    pub p2: ConditionCheck,
    pub p3: ConditionCheck,
    pub grid: GridSizes,
    pub refinement_stable: bool,
}

impl ConleyMoserReport {
    pub fn passed(&self) -> bool {
        self.p1.ok && self.p2.ok && self.p3.ok && self.refinement_stable && self.lambda_v < 1.0 && self.lambda_h < 1.0
    }

    pub fn symbols(&self) -> usize {
        self.vertical.len()
    }

    fn first_failure(&self) -> Option<(&'static str, &ConditionCheck)> {
        [("P1", &self.p1), ("P2", &self.p2), ("P3", &self.p3)].into_iter().find(|(_, c)| !c.ok)
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "omega = {}", self.omega);
        let _ = writeln!(s, "omega0 = {}", self.omega0);
        let _ = writeln!(s, "window = [{}, {}]", self.domain.phi_l, self.domain.phi_r);
        let _ = writeln!(s, "I1 = [{}, {}]", self.domain.windows[0].0, self.domain.windows[0].1);
        let _ = writeln!(s, "I2 = [{}, {}]", self.domain.windows[1].0, self.domain.windows[1].1);
        match self.windings {
            Some([a, b]) => {
                let _ = writeln!(s, "windings = [{a}, {b}]");
            }
            None => {
                let _ = writeln!(s, "windings = none");
            }
        }
        let _ = writeln!(s, "crossing_margin = {}", self.crossing_margin);
        let _ = writeln!(s, "band = [{}, {}]", self.band.0, self.band.1);
        let _ = writeln!(s, "mu_v = {}", self.mu_v);
        let _ = writeln!(s, "mu_h = {}", self.mu_h);
        let _ = writeln!(s, "inf_dR1_dphi = {}", self.inf_dr1_dphi);
        let _ = writeln!(s, "sup_dR2_dr = {}", self.sup_dr2_dr);
        let _ = writeln!(s, "lambda_v = {}", self.lambda_v);
        let _ = writeln!(s, "lambda_h = {}", self.lambda_h);
        for (name, c) in [("P1", &self.p1), ("P2", &self.p2), ("P3", &self.p3)] {
            let _ = writeln!(s, "{name} = {} ({})", if c.ok { "pass" } else { "fail" }, c.detail);
            if let Some((phi, r)) = c.witness {
                let _ = writeln!(s, "{name}_witness = ({phi}, {r})");
            }
        }
        let _ = writeln!(s, "refinement_stable = {}", self.refinement_stable);
        let _ = writeln!(s, "passed = {}", self.passed());
        s
    }

    /// The first violated condition as an error, `None` when the report passed.
    pub fn failure(&self) -> Option<Error> {
        if self.passed() {
            return None;
        }
        let (condition, witness) = match self.first_failure() {
            Some((name, c)) => (
                format!("{name}: {}", c.detail),
                c.witness.map(|(p, r)| format!("(phi, r) = ({p}, {r})")).unwrap_or_else(|| "none".into()),
            ),
            None => ("grid refinement".into(), format!("conditions changed on grid {:?}", self.grid.doubled())),
        };
        Some(Error::VerificationFailed { condition, witness })
    }

    /// Strip boundaries as CSV with header `strip,kind,abscissa,lower,upper`.
    pub fn write_strips_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "strip,kind,abscissa,lower,upper")?;
        for (i, v) in self.vertical.iter().enumerate() {
            v.write_csv_rows(&format!("V{}", i + 1), &mut w)?;
        }
        for (i, h) in self.horizontal.iter().enumerate() {
            h.write_csv_rows(&format!("H{}", i + 1), &mut w)?;
        }
        Ok(())
    }
}

/// Deskewed return map `T_j = R − (2π M_j, 0)` on `f64`, lifted.
fn t_map(model: &ReturnMapModel, phi: f64, r: f64, m: i64) -> Result<(f64, f64)> {
    let p = return_map(model, &AnnulusPoint::new(phi, r), true)?;
    Ok((p.phi - TAU * m as f64, p.r))
}

/// Root of an increasing function on `[lo, hi]` by bisection.
fn increasing_root<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a)?, f(b)?);
    if fa > 0.0 || fb < 0.0 {
        return Err(Error::NotFound(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m)? < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

fn s_bounds(model: &ReturnMapModel, domain: &Domain, j: usize, m: i64) -> (f64, f64) {
    let wk = model.omega * model.big_k();
    let wke = model.omega * model.k_eps();
    let (a, b) = domain.windows[j];
    let lo = ((a - wke - domain.phi_r - TAU * m as f64) / wk).exp();
    let hi = ((b - wke - domain.phi_l - TAU * m as f64) / wk).exp();
    (lo, hi)
}

/// Radial range of `H_j` implied by the angular constraints on `V_j`.
fn h_range(model: &ReturnMapModel, domain: &Domain, j: usize, m: i64) -> (f64, f64) {
    let (lo, hi) = s_bounds(model, domain, j, m);
    let c = model.gain();
    let d = model.delta();
    (1.0 + c * lo.powf(d), 1.0 + c * hi.powf(d))
}

fn crossing_slack(model: &ReturnMapModel, domain: &Domain, ms: [i64; 2], band: (f64, f64)) -> Result<f64> {
    let mut slack = f64::INFINITY;
    for (&(a, b), &m) in domain.windows.iter().zip(&ms) {
        let left = t_map(model, a, band.0, m)?.0;
        let right = t_map(model, b, band.1, m)?.0;
        slack = slack.min(domain.phi_l - left).min(right - domain.phi_r);
    }
    Ok(slack)
}

fn winding_candidates(model: &ReturnMapModel, domain: &Domain, j: usize) -> Vec<i64> {
    let (a, b) = domain.windows[j];
    let range = [(a, domain.r_min), (a, domain.r_max), (b, domain.r_min), (b, domain.r_max)]
        .iter()
        .filter_map(|&(phi, r)| return_map(model, &AnnulusPoint::new(phi, r), true).ok().map(|p| p.phi))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !range.0.is_finite() {
        return Vec::new();
    }
    let first = ((range.0 - domain.phi_r) / TAU).floor() as i64 - 1;
    let last = ((range.1 - domain.phi_l) / TAU).ceil() as i64 + 1;
    (first..=last)
        .filter(|&m| {
            let (lo, hi) = h_range(model, domain, j, m);
            lo >= domain.r_min && hi <= domain.r_max
        })
        .collect()
}

/// Winding pair with the largest crossing slack, the slack and the band.
fn choose_windings(model: &ReturnMapModel, domain: &Domain) -> Option<([i64; 2], f64, (f64, f64))> {
    let c1 = winding_candidates(model, domain, 0);
    let c2 = winding_candidates(model, domain, 1);
    let mut best: Option<([i64; 2], f64, (f64, f64))> = None;
    for &m1 in &c1 {
        for &m2 in &c2 {
            let h1 = h_range(model, domain, 0, m1);
            let h2 = h_range(model, domain, 1, m2);
            let band = (h1.0.min(h2.0), h1.1.max(h2.1));
            if let Ok(slack) = crossing_slack(model, domain, [m1, m2], band) {
                if best.as_ref().is_none_or(|b| slack > b.1) {
                    best = Some(([m1, m2], slack, band));
                }
            }
        }
    }
    best
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

fn vertical_strip(model: &ReturnMapModel, domain: &Domain, j: usize, m: i64, band: (f64, f64), n: usize) -> Result<StripSpec> {
    let (a, b) = domain.windows[j];
    let rs = linspace(band.0, band.1, n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for &r in &rs {
        lower.push(increasing_root(|phi| Ok(t_map(model, phi, r, m)?.0 - domain.phi_l), a, b)?);
        upper.push(increasing_root(|phi| Ok(t_map(model, phi, r, m)?.0 - domain.phi_r), a, b)?);
    }
    StripSpec::from_samples(StripKind::Vertical, rs, lower, upper)
}

fn horizontal_strip(model: &ReturnMapModel, domain: &Domain, j: usize, m: i64, band: (f64, f64), n: usize) -> Result<StripSpec> {
    let (a, b) = domain.windows[j];
    let phis = linspace(domain.phi_l, domain.phi_r, n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for &psi in &phis {
        let p = increasing_root(|phi| Ok(t_map(model, phi, band.0, m)?.0 - psi), a, b)?;
        lower.push(t_map(model, p, band.0, m)?.1);
        let q = increasing_root(|phi| Ok(t_map(model, phi, band.1, m)?.0 - psi), a, b)?;
        upper.push(t_map(model, q, band.1, m)?.1);
    }
    StripSpec::from_samples(StripKind::Horizontal, phis, lower, upper)
}

struct Bounds {
    inf_dr1: f64,
    sup_dr2: f64,
    margin_dr1: f64,
    margin_dr2: f64,
    argmin: (f64, f64),
    argmax: (f64, f64),
}

/// Grid extremes of `∂R₁/∂φ` and `∂R₂/∂r` on a rectangle, with a Lipschitz
/// margin covering the gaps between grid points.
fn derivative_bounds(model: &ReturnMapModel, phi: (f64, f64), r: (f64, f64), n: usize) -> Result<Bounds> {
    let phis = linspace(phi.0, phi.1, n);
    let rs = linspace(r.0, r.1, n);
    let mut d1 = vec![0.0; n * n];
    let mut d2 = vec![0.0; n * n];
    for (i, &p) in phis.iter().enumerate() {
        for (k, &q) in rs.iter().enumerate() {
            let j = d_return_map(model, &AnnulusPoint::new(p, q))?;
            d1[i * n + k] = j[(0, 0)];
            d2[i * n + k] = j[(1, 1)];
        }
    }
    let margin = |f: &[f64]| {
        let mut dphi: f64 = 0.0;
        let mut dr: f64 = 0.0;
        for i in 0..n {
            for k in 0..n {
                if i + 1 < n {
                    dphi = dphi.max((f[(i + 1) * n + k] - f[i * n + k]).abs());
                }
                if k + 1 < n {
                    dr = dr.max((f[i * n + k + 1] - f[i * n + k]).abs());
                }
            }
        }
        // 2x safety factor on the divided differences, half a cell per axis.
        dphi + dr
    };
    let argext = |f: &[f64], max: bool| {
        let mut best = 0;
        for (idx, v) in f.iter().enumerate() {
            if (max && *v > f[best]) || (!max && *v < f[best]) {
                best = idx;
            }
        }
        (phis[best / n], rs[best % n])
    };
    Ok(Bounds {
        inf_dr1: d1.iter().copied().fold(f64::INFINITY, f64::min),
        sup_dr2: d2.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        margin_dr1: margin(&d1),
        margin_dr2: margin(&d2),
        argmin: argext(&d1, false),
        argmax: argext(&d2, true),
    })
}

struct CoreCheck {
    windings: Option<[i64; 2]>,
    crossing_margin: f64,
    band: (f64, f64),
    vertical: Vec<StripSpec>,
    horizontal: Vec<StripSpec>,
    mu_v: f64,
    mu_h: f64,
    inf_dr1: f64,
    sup_dr2: f64,
    lambda_v: f64,
    lambda_h: f64,
    p1: ConditionCheck,
    p2: ConditionCheck,
    p3: ConditionCheck,
}

fn p1_check(
    model: &ReturnMapModel,
    domain: &Domain,
    ms: [i64; 2],
    band: (f64, f64),
    vertical: &[StripSpec],
    horizontal: &[StripSpec],
    grid: usize,
) -> Result<ConditionCheck> {
    for j in 0..2 {
        let (a, b) = domain.windows[j];
        let v = &vertical[j];
        if let Some(k) = (0..v.abscissa.len()).find(|&k| v.lower[k] < a || v.upper[k] > b) {
            return Ok(ConditionCheck::fail(
                format!("V{} leaves I{}", j + 1, j + 1),
                Some((v.lower[k], v.abscissa[k])),
            ));
        }
        let h = &horizontal[j];
        let lo = h.lower.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = h.upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo < band.0 - 1e-12 || hi > band.1 + 1e-12 {
            return Ok(ConditionCheck::fail(format!("H{} leaves the band", j + 1), None));
        }
        // Map a grid of V_j and confirm the image lies in H_j.
        let slack = h.interpolation_slack() + 1e-12;
        for ia in 0..grid {
            let r = band.0 + (band.1 - band.0) * ia as f64 / (grid - 1) as f64;
            let u1 = increasing_root(|phi| Ok(t_map(model, phi, r, ms[j])?.0 - domain.phi_l), a, b)?;
            let u2 = increasing_root(|phi| Ok(t_map(model, phi, r, ms[j])?.0 - domain.phi_r), a, b)?;
            for ib in 0..grid {
                let phi = u1 + (u2 - u1) * ib as f64 / (grid - 1) as f64;
                let (psi, rho) = t_map(model, phi, r, ms[j])?;
                let slack_phi = 1e-9 * (1.0 + psi.abs());
                if psi < domain.phi_l - slack_phi || psi > domain.phi_r + slack_phi || !h.contains(psi, rho, slack) {
                    return Ok(ConditionCheck::fail(
                        format!(
                            "image ({psi}, {rho}) of V{} leaves H{} (r in [{}, {}])",
                            j + 1,
                            j + 1,
                            h.lower_at(psi),
                            h.upper_at(psi)
                        ),
                        Some((phi, r)),
                    ));
                }
            }
        }
    }
    let (h1, h2) = (&horizontal[0], &horizontal[1]);
    let disjoint = {
        let below = (0..h1.abscissa.len()).all(|k| h1.upper[k] < h2.lower[k]);
        let above = (0..h1.abscissa.len()).all(|k| h2.upper[k] < h1.lower[k]);
        below || above
    };
    if !disjoint {
        return Ok(ConditionCheck::fail("H1 and H2 intersect".into(), None));
    }
    let mu_v = vertical.iter().map(|s| s.lipschitz).fold(0.0, f64::max);
    let mu_h = horizontal.iter().map(|s| s.lipschitz).fold(0.0, f64::max);
    if !(mu_v * mu_h < 1.0) {
        return Ok(ConditionCheck::fail(format!("mu_v * mu_h = {} >= 1", mu_v * mu_h), None));
    }
    Ok(ConditionCheck::pass(format!(
        "V1, V2 map onto disjoint horizontal strips H1, H2 crossing D; mu_v * mu_h = {:.3e}",
        mu_v * mu_h
    )))
}

fn core_check(model: &ReturnMapModel, domain: &Domain, grid: &GridSizes) -> Result<CoreCheck> {
    let empty = |detail: String| CoreCheck {
        windings: None,
        crossing_margin: f64::NEG_INFINITY,
        band: (domain.r_min, domain.r_max),
        vertical: Vec::new(),
        horizontal: Vec::new(),
        mu_v: f64::NAN,
        mu_h: f64::NAN,
        inf_dr1: f64::NAN,
        sup_dr2: f64::NAN,
        lambda_v: f64::INFINITY,
        lambda_h: f64::INFINITY,
        p1: ConditionCheck::fail(detail, None),
        p2: ConditionCheck::fail("not evaluated".into(), None),
        p3: ConditionCheck::fail("not evaluated".into(), None),
    };
    let Some((ms, slack, band)) = choose_windings(model, domain) else {
        return Ok(empty("no winding pair keeps both images inside D".into()));
    };
    if !(slack > 0.0) {
        let mut out = empty(format!("images of V1, V2 do not cross D (best slack {slack:.4} rad)"));
        out.windings = Some(ms);
        out.crossing_margin = slack;
        out.band = band;
        return Ok(out);
    }
    let n = grid.strip_samples;
    let vertical = vec![
        vertical_strip(model, domain, 0, ms[0], band, n)?,
        vertical_strip(model, domain, 1, ms[1], band, n)?,
    ];
    let horizontal = vec![
        horizontal_strip(model, domain, 0, ms[0], band, n)?,
        horizontal_strip(model, domain, 1, ms[1], band, n)?,
    ];
    let p1 = p1_check(model, domain, ms, band, &vertical, &horizontal, grid.image_grid)?;
    let b = derivative_bounds(model, (domain.phi_l, domain.phi_r), band, grid.derivative_grid)?;
    let expansion = b.inf_dr1 - b.margin_dr1;
    let lambda_v = if expansion > 0.0 { 1.0 / expansion } else { f64::INFINITY };
    let lambda_h = b.sup_dr2 + b.margin_dr2;
    let p2 = if lambda_h < 1.0 {
        ConditionCheck::pass(format!("sup dR2/dr = {:.6} + margin {:.2e} < 1", b.sup_dr2, b.margin_dr2))
    } else {
        ConditionCheck::fail(format!("lambda_h = {lambda_h} >= 1"), Some(b.argmax))
    };
    let p3 = if lambda_v < 1.0 {
        ConditionCheck::pass(format!("inf dR1/dphi = {:.6} - margin {:.2e} > 1", b.inf_dr1, b.margin_dr1))
    } else {
        ConditionCheck::fail(format!("lambda_v = {lambda_v} >= 1"), Some(b.argmin))
    };
    Ok(CoreCheck {
        windings: Some(ms),
        crossing_margin: slack,
        band,
        mu_v: vertical.iter().map(|s| s.lipschitz).fold(0.0, f64::max),
        mu_h: horizontal.iter().map(|s| s.lipschitz).fold(0.0, f64::max),
        vertical,
        horizontal,
        inf_dr1: b.inf_dr1,
        sup_dr2: b.sup_dr2,
        lambda_v,
        lambda_h,
        p1,
        p2,
        p3,
    })
}

/// Evaluates conditions P1 to P3 at `omega` and again on doubled grids.
pub fn conley_moser_report(model: &ReturnMapModel, domain: &Domain, omega: f64, grid: GridSizes) -> Result<ConleyMoserReport> {
    let model = model.with_omega(omega)?;
    let w0 = omega0(&model, domain.window())?;
    let c = core_check(&model, domain, &grid)?;
    let fine = core_check(&model, domain, &grid.doubled())?;
    let refinement_stable = c.p1.ok == fine.p1.ok && c.p2.ok == fine.p2.ok && c.p3.ok == fine.p3.ok;
    Ok(ConleyMoserReport {
        omega,
        omega0: w0,
        domain: *domain,
        windings: c.windings,
        crossing_margin: c.crossing_margin,
        band: c.band,
        vertical: c.vertical,
        horizontal: c.horizontal,
        mu_v: c.mu_v,
        mu_h: c.mu_h,
        inf_dr1_dphi: c.inf_dr1,
        sup_dr2_dr: c.sup_dr2,
        lambda_v: c.lambda_v,
        lambda_h: c.lambda_h,
        p1: c.p1,
        p2: c.p2,
        p3: c.p3,
        grid,
        refinement_stable,
    })
}

/// Like [`conley_moser_report`] but fails with the first violated condition.
pub fn verify_conley_moser(model: &ReturnMapModel, domain: &Domain, omega: f64) -> Result<ConleyMoserReport> {
    let report = conley_moser_report(model, domain, omega, GridSizes::default())?;
    match report.failure() {
        None => Ok(report),
        Some(e) => Err(e),
    }
}

/// `log m` for a verified report with `m` strips, else 0.
pub fn entropy_lower_bound(report: &ConleyMoserReport) -> f64 {
    let m = report.symbols();
    if report.passed() && m >= 1 {
        (m as f64).ln()
    } else {
        0.0
    }
}

/// Finite word over the symbols `1`, `2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn new(symbols: Vec<u8>) -> Result<Word> {
        if symbols.is_empty() || symbols.len() > MAX_WORD_LEN {
            return Err(Error::Invalid(format!("word length must be in 1..={MAX_WORD_LEN}")));
        }
        if symbols.iter().any(|s| *s != 1 && *s != 2) {
            return Err(Error::Invalid("symbols must be 1 or 2".into()));
        }
        Ok(Word(symbols))
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn extended(&self, tail: &Word) -> Result<Word> {
        Word::new(self.0.iter().chain(tail.0.iter()).copied().collect())
    }

    /// All `2^n` words of length `n` in lexicographic order.
    pub fn all(n: usize) -> Result<Vec<Word>> {
        if n == 0 || n > 24 {
            return Err(Error::Invalid("enumeration length must be in 1..=24".into()));
        }
        Ok((0..1u64 << n)
            .map(|bits| Word((0..n).map(|k| 1 + ((bits >> (n - 1 - k)) & 1) as u8).collect()))
            .collect())
    }
}

impl FromStr for Word {
    type Err = Error;
    fn from_str(s: &str) -> Result<Word> {
        let t = s.trim();
        let symbols = t
            .chars()
            .map(|c| match c {
                '1' => Ok(1u8),
                '2' => Ok(2u8),
                _ => Err(Error::Invalid(format!("invalid symbol {c:?} in word"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Word::new(symbols)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItineraryResult {
    pub word: Word,
    /// Initial angle of the shadow point at `r0`, in multiprecision.
    pub phi0: Mp,
    pub r0: f64,
    /// Width of the set of initial angles realizing the word.
    pub interval_width: f64,
    /// Deskewed iterates `p_0, …, p_n`.
    pub iterates: Vec<AnnulusPoint>,
    /// Realized winding of each step.
    pub windings: Vec<i64>,
}

impl ItineraryResult {
    pub fn shadow(&self) -> AnnulusPoint {
        AnnulusPoint::new(self.phi0.to_f64(), self.r0)
    }
}

/// Data shared by all shadow computations of a verified report.
#[derive(Debug, Clone)]
pub struct ShadowContext {
    model: ReturnMapModel,
    windows: [(f64, f64); 2],
    window: (f64, f64),
    windings: [i64; 2],
    band: (f64, f64),
    pub r0: f64,
}

impl ShadowContext {
    pub fn new(model: &ReturnMapModel, report: &ConleyMoserReport) -> Result<ShadowContext> {
        if !report.passed() {
            return Err(Error::Invalid("shadow points need a verified report".into()));
        }
        let windings = report.windings.ok_or_else(|| Error::Invalid("report has no windings".into()))?;
        let model = model.with_omega(report.omega)?;
        let h1 = h_range(&model, &report.domain, 0, windings[0]);
        Ok(ShadowContext {
            model,
            windows: report.domain.windows,
            window: report.domain.window(),
            windings,
            band: report.band,
            r0: 0.5 * (h1.0 + h1.1),
        })
    }

    pub fn windings(&self) -> [i64; 2] {
        self.windings
    }

    /// Angle of `p_n` and its derivative in `φ₀` along `r = r0`.
    fn orbit_angle(&self, phi0: &Mp, prefix: &[u8]) -> Result<(Mp, Mp)> {
        let m = &self.model;
        let one = Mp::from_f64(1.0);
        let wk = Mp::from_f64(m.omega * m.big_k());
        let wke = Mp::from_f64(m.omega * m.k_eps());
        let c = Mp::from_f64(m.gain());
        let d = Mp::from_f64(m.delta());
        let tau = Mp::tau();
        let mut phi = phi0.clone();
        let mut r = Mp::from_f64(self.r0);
        let (mut dphi, mut dr) = (one.clone(), Mp::from_f64(0.0));
        for &sym in prefix {
            let (xi, dxi) = m.xi.eval(&phi);
            let s = r.clone() - one.clone() + xi;
            if !s.is_positive() || s.to_f64() > m.eps_w {
                return Err(Error::NotFound("orbit left the block".into()));
            }
            let ls = s.ln();
            let sd = (d.clone() * ls.clone()).exp();
            let g = d.clone() * c.clone() * sd.clone() / s.clone();
            let shift = tau.clone() * Mp::from_f64(self.windings[(sym - 1) as usize] as f64);
            let new_phi = phi - wk.clone() * ls - wke.clone() - shift;
            let new_r = one.clone() + c.clone() * sd;
            let ds = dxi.clone() * dphi.clone() + dr.clone();
            let new_dphi = dphi - wk.clone() * ds.clone() / s;
            let new_dr = g * ds;
            phi = new_phi;
            r = new_r;
            dphi = new_dphi;
            dr = new_dr;
        }
        Ok((phi, dphi))
    }

    /// `φ₀ ∈ [lo, hi]` with `angle(p_n) = target`, by safeguarded Newton.
    fn solve(&self, prefix: &[u8], target: f64, lo: &Mp, hi: &Mp, g_lo: &Mp, g_hi: &Mp) -> Result<Mp> {
        let t = Mp::from_f64(target);
        let (f_lo, f_hi) = (g_lo.clone() - t.clone(), g_hi.clone() - t.clone());
        if f_lo.is_positive() || (-f_hi.clone()).is_positive() {
            return Err(Error::NotFound(format!("angle {target} is not crossed")));
        }
        let (mut a, mut b) = (lo.clone(), hi.clone());
        let width = hi.clone() - lo.clone();
        let tol = width.clone() * Mp::from_f64(1e-20);
        let mut x = lo.clone() + width * ((-f_lo.clone()) / (f_hi - f_lo));
        for _ in 0..200 {
            let (g, dg) = match self.orbit_angle(&x, prefix) {
                Ok(v) => v,
                Err(_) => {
                    x = (a.clone() + b.clone()) * Mp::from_f64(0.5);
                    continue;
                }
            };
            let f = g - t.clone();
            if f.is_positive() {
                b = x.clone();
            } else {
                a = x.clone();
            }
            let mut next = x.clone() - f / dg;
            if !(next > a && next < b) {
                next = (a.clone() + b.clone()) * Mp::from_f64(0.5);
            }
            let step = (next.clone() - x.clone()).abs();
            x = next;
            if step <= tol || (b.clone() - a.clone()) <= tol {
                return Ok(x);
            }
        }
        Err(Error::NotFound(format!("root for angle {target} did not converge")))
    }

    /// Sub-interval of `[lo, hi]` on which `angle(p_n)` lies in `[a, b]`.
    fn refine(&self, prefix: &[u8], lo: &Mp, hi: &Mp, target: (f64, f64)) -> Result<(Mp, Mp)> {
        let (g_lo, _) = self.orbit_angle(lo, prefix)?;
        let (g_hi, _) = self.orbit_angle(hi, prefix)?;
        let a = self.solve(prefix, target.0, lo, hi, &g_lo, &g_hi)?;
        let b = self.solve(prefix, target.1, lo, hi, &g_lo, &g_hi)?;
        if !(b > a) {
            return Err(Error::NotFound("nested interval is empty".into()));
        }
        Ok((a, b))
    }

    /// Initial angles on `r = r0` whose first `|prefix|` deskewed iterates lie
    /// in the windows of the given symbols.
    fn prefix_interval(&self, prefix: &[u8]) -> Result<(Mp, Mp)> {
        let w0 = self.windows[(prefix[0] - 1) as usize];
        let mut lo = Mp::from_f64(w0.0);
        let mut hi = Mp::from_f64(w0.1);
        for n in 1..prefix.len() {
            let w = self.windows[(prefix[n] - 1) as usize];
            (lo, hi) = self.refine(&prefix[..n], &lo, &hi, w)?;
        }
        Ok((lo, hi))
    }

    fn finish(&self, word: &Word, lo: &Mp, hi: &Mp) -> Result<ItineraryResult> {
        let (a, b) = self.refine(word.symbols(), lo, hi, self.window)?;
        let phi0 = (a.clone() + b.clone()) * Mp::from_f64(0.5);
        let (iterates, windings) = self.verify(word, &phi0)?;
        Ok(ItineraryResult {
            word: word.clone(),
            phi0,
            r0: self.r0,
            interval_width: (b - a).to_f64(),
            iterates,
            windings,
        })
    }

    /// Direct iteration of the return map from `(φ₀, r0)`.
    pub fn verify(&self, word: &Word, phi0: &Mp) -> Result<(Vec<AnnulusPoint>, Vec<i64>)> {
        let tau = Mp::tau();
        let mut p = AnnulusPoint::new(phi0.clone(), Mp::from_f64(self.r0));
        let mut iterates = vec![p.to_f64()];
        let mut windings = Vec::with_capacity(word.len());
        for (k, &sym) in word.symbols().iter().enumerate() {
            let w = self.windows[(sym - 1) as usize];
            let phi = p.phi.to_f64();
            let r = p.r.to_f64();
            if !(phi >= w.0 && phi <= w.1) || !(r >= self.band.0 - 1e-12 && r <= self.band.1 + 1e-12) {
                return Err(Error::NotFound(format!("iterate {k} of {word} at ({phi}, {r}) is outside V{sym}")));
            }
            let img = return_map(&self.model, &p, true)?;
            let wind = ((img.phi.to_f64() - self.window.0) / TAU).floor() as i64;
            let shifted = img.phi - tau.clone() * Mp::from_f64(wind as f64);
            let psi = shifted.to_f64();
            if !(psi >= self.window.0 && psi <= self.window.1) {
                return Err(Error::NotFound(format!("iterate {} of {word} misses the window", k + 1)));
            }
            windings.push(wind);
            p = AnnulusPoint::new(shifted, img.r);
            iterates.push(p.to_f64());
        }
        Ok((iterates, windings))
    }

    /// Shadow point realizing `word`.
    pub fn shadow(&self, word: &Word) -> Result<ItineraryResult> {
        let (lo, hi) = self.prefix_interval(word.symbols())?;
        self.finish(word, &lo, &hi)
    }

    fn subtree(&self, prefix: Vec<u8>, lo: Mp, hi: Mp, depth: usize, counts: &mut [usize]) -> Result<Vec<ItineraryResult>> {
        counts[prefix.len() - 1] += 1;
        if prefix.len() == depth {
            let word = Word::new(prefix)?;
            return Ok(vec![self.finish(&word, &lo, &hi)?]);
        }
        let child = |sym: u8, counts: &mut Vec<usize>| -> Result<Vec<ItineraryResult>> {
            let w = self.windows[(sym - 1) as usize];
            let (a, b) = self.refine(&prefix, &lo, &hi, w)?;
            let mut next = prefix.clone();
            next.push(sym);
            self.subtree(next, a, b, depth, counts)
        };
        let mut c1 = vec![0; counts.len()];
        let mut c2 = vec![0; counts.len()];
        let (r1, r2) = rayon::join(|| child(1, &mut c1), || child(2, &mut c2));
        for k in 0..counts.len() {
            counts[k] += c1[k] + c2[k];
        }
        let mut out = r1?;
        out.extend(r2?);
        Ok(out)
    }

    /// Shadows of all `2^depth` words, lexicographic, with the number of
    /// realized prefixes at every length.
    pub fn enumerate(&self, depth: usize) -> Result<ShadowCensus> {
        if depth == 0 || depth > 24 {
            return Err(Error::Invalid("depth must be in 1..=24".into()));
        }
        let mut counts = vec![0usize; depth];
        let mut c2 = vec![0usize; depth];
        let root = |sym: u8, counts: &mut Vec<usize>| {
            let w = self.windows[(sym - 1) as usize];
            self.subtree(vec![sym], Mp::from_f64(w.0), Mp::from_f64(w.1), depth, counts)
        };
        let (a, b) = rayon::join(|| root(1, &mut counts), || root(2, &mut c2));
        for k in 0..depth {
            counts[k] += c2[k];
        }
        let mut results = a?;
        results.extend(b?);
        Ok(ShadowCensus { results, counts })
    }
}

/// Result of a full enumeration.
#[derive(Debug, Clone)]
pub struct ShadowCensus {
    pub results: Vec<ItineraryResult>,
    /// `counts[n-1]` realized words of length `n`.
    pub counts: Vec<usize>,
}

impl ShadowCensus {
    /// Least-squares slope of `ln N_n` against `n`.
    pub fn growth_rate(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(k, c)| ((k + 1) as f64, (*c as f64).ln()))
            .collect();
        let n = pts.len() as f64;
        if pts.len() < 2 {
            return f64::NAN;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// Shadow point for a single word.
pub fn itinerary_shadow(model: &ReturnMapModel, report: &ConleyMoserReport, word: &Word) -> Result<ItineraryResult> {
    ShadowContext::new(model, report)?.shadow(word)
}

/// Fixed point of `T_1` by Newton in `f64`, starting from the center of `V_1`.
pub fn symbol_fixed_point(model: &ReturnMapModel, report: &ConleyMoserReport, symbol: u8) -> Result<AnnulusPoint> {
    let ms = report.windings.ok_or_else(|| Error::Invalid("report has no windings".into()))?;
    let j = match symbol {
        1 => 0,
        2 => 1,
        _ => return Err(Error::Invalid("symbol must be 1 or 2".into())),
    };
    let model = model.with_omega(report.omega)?;
    let v = report.vertical.get(j).ok_or_else(|| Error::Invalid("report has no strips".into()))?;
    let r_mid = 0.5 * (report.band.0 + report.band.1);
    let mut p = [0.5 * (v.lower_at(r_mid) + v.upper_at(r_mid)), r_mid];
    for _ in 0..100 {
        let (a, b) = t_map(&model, p[0], p[1], ms[j])?;
        let f = nalgebra::Vector2::new(a - p[0], b - p[1]);
        if f.norm() < 1e-13 {
            return Ok(AnnulusPoint::new(p[0], p[1]));
        }
        let jac = d_return_map(&model, &AnnulusPoint::new(p[0], p[1]))? - nalgebra::Matrix2::identity();
        let dx = jac.lu().solve(&(-f)).ok_or_else(|| Error::NotFound("singular fixed-point Newton".into()))?;
        p[0] += dx[0];
        p[1] += dx[1];
    }
    Err(Error::NotFound("fixed point did not converge".into()))
}
