use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svg::Canvas;
use super::sweep::seeded_annulus_point;
use crate::error::{Error, Result};
use crate::model::{classify_model_orbit, d_return_map, return_map, AnnulusPoint, ModelClass, ReturnMapModel, XiProfile};
use crate::system::NodeRates;

/// Parameters of a route reconstruction on the annulus model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouteSpec {
    pub nu: f64,
    pub mu: f64,
    /// Explicit speeds; when empty, `count` log-spaced values in `[omega_min, omega_max]`.
    pub omegas: Vec<f64>,
    pub omega_min: f64,
    pub omega_max: f64,
    pub count: usize,
    pub eps_v: f64,
    pub eps_w: f64,
    pub seed: u64,
    pub n_iter: usize,
    pub n_transient: usize,
    /// Samples of the reference curve.
    pub grid: usize,
    /// Relative width of the bracket around the first folding speed.
    pub bracket_tol: f64,
}

impl Default for RouteSpec {
    fn default() -> Self {
        RouteSpec {
            nu: 0.05,
            mu: 0.5,
            omegas: Vec::new(),
            omega_min: 0.05,
            omega_max: 20.0,
            count: 12,
            eps_v: crate::model::DEFAULT_EPS_V,
            eps_w: crate::model::DEFAULT_EPS_W,
            seed: 0,
            n_iter: 2000,
            n_transient: 1000,
            grid: 4096,
            bracket_tol: 0.01,
        }
    }
}

impl RouteSpec {
    pub fn omega_list(&self) -> Vec<f64> {
        if !self.omegas.is_empty() {
            let mut v = self.omegas.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            return v;
        }
        let n = self.count;
        (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                (self.omega_min.ln() + t * (self.omega_max.ln() - self.omega_min.ln())).exp()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.mu > 0.0) {
            return Err(Error::Invalid("the route needs nu > 0 and mu > 0".into()));
        }
        if self.omegas.is_empty() {
            if !(self.omega_min > 0.0 && self.omega_min < self.omega_max && self.omega_max.is_finite()) {
                return Err(Error::Invalid("need 0 < omega_min < omega_max".into()));
            }
            if self.count < 2 || self.count > 10_000 {
                return Err(Error::Invalid("count must be in 2..=10000".into()));
            }
        } else if self.omegas.len() < 2 || self.omegas.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Invalid("omegas must hold at least two positive speeds".into()));
        }
        if self.grid < 64 || self.grid > 1 << 20 {
            return Err(Error::Invalid("grid must be in 64..=2^20".into()));
        }
        if self.n_iter < 1000 {
            return Err(Error::Invalid("n_iter must be at least 1000".into()));
        }
        if !(self.bracket_tol > 0.0 && self.bracket_tol < 1.0) {
            return Err(Error::Invalid("bracket_tol must be in (0, 1)".into()));
        }
        self.model(self.omega_list()[0]).map(|_| ())
    }

    pub fn model(&self, omega: f64) -> Result<ReturnMapModel> {
        let rates = NodeRates { c_v: 1.1, e_v: 0.9, c_w: 1.1, e_w: 0.9 };
        ReturnMapModel::new(rates, self.eps_v, self.eps_w, omega, XiProfile::cosine(self.nu, self.mu))
    }
}

/// Closed curve `r = c(φ)` sampled on a uniform angular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphCurve {
    pub r: Vec<f64>,
}

impl GraphCurve {
    pub fn phi(&self, i: usize) -> f64 {
        TAU * i as f64 / self.r.len() as f64
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let n = self.r.len();
        let x = phi.rem_euclid(TAU) / TAU * n as f64;
        let k = (x.floor() as usize).min(n - 1);
        let f = x - k as f64;
        self.r[k] + f * (self.r[(k + 1) % n] - self.r[k])
    }

    /// Central-difference slope at grid point `i`.
    pub fn slope(&self, i: usize) -> f64 {
        let n = self.r.len();
        let h = TAU / n as f64;
        (self.r[(i + 1) % n] - self.r[(i + n - 1) % n]) / (2.0 * h)
    }
}

/// Lifted image angles of the curve, or `None` when the image is not a graph.
fn image_graph(model: &ReturnMapModel, c: &GraphCurve) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let n = c.r.len();
    let mut psi = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        let p = return_map(model, &AnnulusPoint::new(c.phi(i), c.r[i]), true)?;
        psi.push(p.phi);
        rho.push(p.r);
    }
    if psi.windows(2).any(|w| !(w[1] > w[0])) {
        return Ok(None);
    }
    let first = return_map(model, &AnnulusPoint::new(TAU, c.r[0]), true)?.phi;
    if !(first > psi[n - 1]) || ((first - psi[0]) - TAU).abs() > 1e-9 {
        return Ok(None);
    }
    Ok(Some((psi, rho)))
}

/// Invariant circle by iterating the graph transform; `None` when the image
/// stops being a graph or the iteration does not settle.
pub fn invariant_graph(model: &ReturnMapModel, n: usize, start: Option<&GraphCurve>) -> Result<Option<GraphCurve>> {
    let width = model.invariant_annulus_width().unwrap_or(0.5 * model.eps_v);
    let mut c = start.cloned().unwrap_or(GraphCurve { r: vec![1.0 + 0.5 * width; n] });
    for _ in 0..500 {
        let Some((psi, rho)) = image_graph(model, &c)? else {
            return Ok(None);
        };
        // Resample the image over the reduced angle.
        let shift = (psi[0] / TAU).floor() * TAU;
        let mut pts: Vec<(f64, f64)> = psi.iter().zip(rho.iter()).map(|(a, b)| ((a - shift).rem_euclid(TAU), *b)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let m = pts.len();
        let mut next = Vec::with_capacity(n);
        let mut k = 0;
        for i in 0..n {
            let phi = c.phi(i);
            while k < m && pts[k].0 <= phi {
                k += 1;
            }
            let (a, b) = if k == 0 {
                ((pts[m - 1].0 - TAU, pts[m - 1].1), pts[0])
            } else if k == m {
                (pts[m - 1], (pts[0].0 + TAU, pts[0].1))
            } else {
                (pts[k - 1], pts[k])
            };
            let f = (phi - a.0) / (b.0 - a.0);
            next.push(a.1 + f * (b.1 - a.1));
        }
        let change = next.iter().zip(c.r.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        c = GraphCurve { r: next };
        if change < 1e-13 {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

/// Number of sign changes of the angular derivative of `R(C)` around the curve.
pub fn fold_count(model: &ReturnMapModel, c: &GraphCurve) -> Result<usize> {
    let n = c.r.len();
    let mut signs = Vec::with_capacity(n);
    for i in 0..n {
        let j = d_return_map(model, &AnnulusPoint::new(c.phi(i), c.r[i]))?;
        let d = j[(0, 0)] + j[(0, 1)] * c.slope(i);
        signs.push(d > 0.0);
    }
    Ok((0..n).filter(|&i| signs[i] != signs[(i + 1) % n]).count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub point: AnnulusPoint,
    pub saddle: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteRow {
    pub omega: f64,
    pub folds: usize,
    pub class: ModelClass,
    pub lambda1: f64,
    pub lambda1_se: f64,
    pub rho: Option<f64>,
    pub curve: Option<GraphCurve>,
    pub markers: Vec<Marker>,
    pub image: Vec<AnnulusPoint>,
    pub attractor: Vec<AnnulusPoint>,
}

#[derive(Debug, Clone)]
pub struct RouteReport {
    pub spec: RouteSpec,
    pub reference: GraphCurve,
    pub rows: Vec<RouteRow>,
    /// `(lo, hi)` with zero folds at `lo`, folds at `hi`, `hi/lo − 1 ≤ tol`.
    pub bracket: Option<(f64, f64)>,
    pub files: Vec<PathBuf>,
}

pub const ROUTE_CSV_HEADER: &str = "omega,folds,class,lambda1,lambda1_se,rho,invariant_curve";

impl RouteReport {
    pub fn summary_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(ROUTE_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.12e},{:.12e},{},{}",
                r.omega,
                r.folds,
                r.class,
                r.lambda1,
                r.lambda1_se,
                r.rho.map(|v| format!("{v:.12e}")).unwrap_or_default(),
                if r.curve.is_some() { "yes" } else { "no" }
            );
        }
        s
    }
}

fn lifted_orbit_points(model: &ReturnMapModel, start: AnnulusPoint, transient: usize, n: usize) -> Result<Vec<AnnulusPoint>> {
    let mut p = start;
    for _ in 0..transient {
        p = return_map(model, &p, false)?;
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        p = return_map(model, &p, true)?;
        out.push(p);
    }
    Ok(out)
}

/// Periodic points of a locked map: Newton on `R^q(x) − x − (2πP, 0)` from
/// seeds along a curve.
fn periodic_markers(model: &ReturnMapModel, q: usize, winding: i64, seeds: &GraphCurve) -> Vec<Marker> {
    let mut found: Vec<Marker> = Vec::new();
    let n_seeds = 32;
    for s in 0..n_seeds {
        let phi = TAU * s as f64 / n_seeds as f64;
        let mut x = [phi, seeds.eval(phi)];
        for _ in 0..50 {
            let mut p = AnnulusPoint::new(x[0], x[1]);
            let mut jac = Matrix2::identity();
            let mut ok = true;
            for _ in 0..q {
                match (d_return_map(model, &p), return_map(model, &p, true)) {
                    (Ok(j), Ok(next)) => {
                        jac = j * jac;
                        p = next;
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                break;
            }
            let f = nalgebra::Vector2::new(p.phi - x[0] - TAU * winding as f64, p.r - x[1]);
            if f.norm() < 1e-12 {
                let eig = jac.complex_eigenvalues();
                let saddle = eig.iter().any(|e| e.norm() > 1.0) && eig.iter().any(|e| e.norm() < 1.0);
                let pt = AnnulusPoint::new(x[0].rem_euclid(TAU), x[1]);
                let dup = found.iter().any(|m| {
                    let d = (m.point.phi - pt.phi).rem_euclid(TAU);
                    d.min(TAU - d) < 1e-7 && (m.point.r - pt.r).abs() < 1e-7
                });
                if !dup {
                    found.push(Marker { point: pt, saddle });
                }
                break;
            }
            match (jac - Matrix2::identity()).lu().solve(&(-f)) {
                Some(dx) => {
                    x[0] += dx[0];
                    x[1] = (x[1] + dx[1]).clamp(1.0, 1.0 + model.eps_v);
                }
                None => break,
            }
        }
    }
    found.sort_by(|a, b| a.point.phi.total_cmp(&b.point.phi));
    found
}

fn evaluate_omega(spec: &RouteSpec, reference: &GraphCurve, omega: f64) -> Result<RouteRow> {
    let model = spec.model(omega)?;
    let folds = fold_count(&model, reference)?;
    let start = seeded_annulus_point(&model, spec.seed);
    let summary = classify_model_orbit(&model, start, spec.n_iter, spec.n_transient);
    let curve = invariant_graph(&model, spec.grid, Some(reference))?;
    let attractor = lifted_orbit_points(&model, start, spec.n_transient, 400).unwrap_or_default();
    let markers = match summary.class {
        ModelClass::Fixed | ModelClass::Periodic(_) => {
            let q = match summary.class {
                ModelClass::Periodic(q) => q,
                _ => 1,
            };
            let tail = &attractor;
            let winding = if tail.len() > q {
                ((tail[q].phi - tail[0].phi) / TAU).round() as i64
            } else {
                0
            };
            periodic_markers(&model, q, winding, curve.as_ref().unwrap_or(reference))
        }
        _ => Vec::new(),
    };
    let mut image = Vec::with_capacity(reference.r.len());
    for i in 0..reference.r.len() {
        image.push(return_map(&model, &AnnulusPoint::new(reference.phi(i), reference.r[i]), false)?);
    }
    Ok(RouteRow {
        omega,
        folds,
        class: summary.class,
        lambda1: summary.lyapunov[0],
        lambda1_se: summary.lyapunov_se[0],
        rho: summary.rotation_number,
        curve,
        markers,
        image,
        attractor: attractor.iter().map(|p| AnnulusPoint::new(p.phi.rem_euclid(TAU), p.r)).collect(),
    })
}

fn panel(spec: &RouteSpec, reference: &GraphCurve, row: &RouteRow) -> String {
    let r_hi = 1.0 + spec.eps_v;
    let title = format!("omega = {}, folds = {}, {}", row.omega, row.folds, row.class);
    let mut c = Canvas::new(&title, "phi", "r", (0.0, TAU), (1.0, r_hi));
    let path = |pts: &[(f64, f64)], c: &mut Canvas, color: &str, w: f64| {
        // Split at wraps of the reduced angle.
        let mut seg: Vec<(f64, f64)> = Vec::new();
        for &p in pts {
            if let Some(last) = seg.last() {
                if (p.0 - last.0).abs() > std::f64::consts::PI {
                    c.polyline(&seg, color, w);
                    seg.clear();
                }
            }
            seg.push(p);
        }
        c.polyline(&seg, color, w);
    };
    let stride = (reference.r.len() / 1024).max(1);
    let refpts: Vec<(f64, f64)> = (0..reference.r.len()).step_by(stride).map(|i| (reference.phi(i), reference.r[i])).collect();
    path(&refpts, &mut c, "#888888", 1.5);
    let img: Vec<(f64, f64)> = row.image.iter().step_by(stride).map(|p| (p.phi, p.r)).collect();
    path(&img, &mut c, "#1f77b4", 1.0);
    for p in row.attractor.iter() {
        c.point(p.phi, p.r, "#2ca02c", 1.2);
    }
    for m in &row.markers {
        if m.saddle {
            c.cross(m.point.phi, m.point.r, "#d62728");
        } else {
            c.point(m.point.phi, m.point.r, "#000000", 4.0);
        }
    }
    if row.curve.is_none() {
        c.note("no invariant curve");
    }
    c.legend(&[
        ("curve C".into(), "#888888".into()),
        ("image R(C)".into(), "#1f77b4".into()),
        ("attractor".into(), "#2ca02c".into()),
        ("sink".into(), "#000000".into()),
        ("saddle".into(), "#d62728".into()),
    ]);
    c.finish()
}

/// Invariant curve at the smallest speed, its images and fold counts across
/// the speed list, the first folding speed bracketed by bisection, and one
/// SVG panel per speed. Files are written only when `out_dir` is given.
pub fn route_report(spec: &RouteSpec, out_dir: Option<&Path>) -> Result<RouteReport> {
    spec.validate()?;
    let omegas = spec.omega_list();
    let base = spec.model(omegas[0])?;
    let reference = invariant_graph(&base, spec.grid, None)?.ok_or_else(|| Error::NonConvergence {
        seeds: 1,
        detail: format!("no invariant curve at the smallest speed {}", omegas[0]),
    })?;
    let rows: Vec<RouteRow> = omegas
        .par_iter()
        .map(|&w| evaluate_omega(spec, &reference, w))
        .collect::<Result<Vec<_>>>()?;
    let mut bracket = None;
    if let Some(i) = (1..rows.len()).find(|&i| rows[i].folds > 0 && rows[i - 1].folds == 0) {
        let (mut lo, mut hi) = (rows[i - 1].omega, rows[i].omega);
        while hi / lo - 1.0 > spec.bracket_tol {
            let mid = (lo * hi).sqrt();
            if fold_count(&spec.model(mid)?, &reference)? > 0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        bracket = Some((lo, hi));
    }
    let mut report = RouteReport { spec: spec.clone(), reference, rows, bracket, files: Vec::new() };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let csv = dir.join("route_summary.csv");
        fs::write(&csv, report.summary_csv())?;
        report.files.push(csv);
        for (k, row) in report.rows.iter().enumerate() {
            let path = dir.join(format!("route_panel_{k:03}.svg"));
            fs::write(&path, panel(spec, &report.reference, row))?;
            report.files.push(path);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_speed_has_graph_image() {
        let spec = RouteSpec { grid: 512, ..Default::default() };
        let m = spec.model(0.05).unwrap();
        let c = invariant_graph(&m, 512, None).unwrap().unwrap();
        assert_eq!(fold_count(&m, &c).unwrap(), 0);
        let big = spec.model(20.0).unwrap();
        let folds = fold_count(&big, &c).unwrap();
        assert!(folds >= 2 && folds.is_multiple_of(2));
    }
}
