use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::horseshoe::{build_domain, conley_moser_report, GridSizes};
use crate::integrator::IntegratorConfig;
use crate::model::{classify_model_orbit, model_lyapunov, model_rotation_number, AnnulusPoint, ReturnMapModel, XiProfile};
use crate::section::{classify_attractor, lyapunov_spectrum, rotation_number, seeded_initial_state, ClassifyOptions, ORBIT_CSV_HEADER};
use crate::system::{NodeRates, SystemParams};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "HETFORCE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Ode,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTask {
    #[default]
    Classify,
    Lyapunov,
    Rotation,
    Horseshoe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Nu,
    Mu,
    Omega,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub param: Param,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                match self.scale {
                    Scale::Linear => self.min + (self.max - self.min) * t,
                    Scale::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

/// Parameter grid, per-point task and seed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub task: SweepTask,
    pub axes: Vec<AxisSpec>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "minus_tenth")]
    pub beta: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "eps_v")]
    pub eps_v: f64,
    #[serde(default = "eps_w")]
    pub eps_w: f64,
    /// First seed; point `i`, replica `k` uses `seed + i·seeds_per_point + k`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub seeds_per_point: usize,
    #[serde(default = "n_iter")]
    pub n_iter: usize,
    #[serde(default = "n_transient")]
    pub n_transient: usize,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

fn one() -> f64 {
    1.0
}
fn minus_tenth() -> f64 {
    -0.1
}
fn eps_v() -> f64 {
    crate::model::DEFAULT_EPS_V
}
fn eps_w() -> f64 {
    crate::model::DEFAULT_EPS_W
}
fn one_usize() -> usize {
    1
}
fn n_iter() -> usize {
    2000
}
fn n_transient() -> usize {
    1000
}

/// One grid point with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub nu: f64,
    pub mu: f64,
    pub omega: f64,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<SweepSpec> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 3 {
            return Err(Error::Invalid("a sweep needs one to three axes".into()));
        }
        let mut seen = Vec::new();
        for a in &self.axes {
            if seen.contains(&a.param) {
                return Err(Error::Invalid(format!("axis {:?} appears twice", a.param)));
            }
            seen.push(a.param);
            if a.count < 2 {
                return Err(Error::Invalid(format!("axis {:?} needs at least 2 points", a.param)));
            }
            if a.count > 1_000_000 {
                return Err(Error::Invalid(format!("axis {:?} has too many points", a.param)));
            }
            if !(a.min.is_finite() && a.max.is_finite()) || !(a.min < a.max) {
                return Err(Error::Invalid(format!("axis {:?} range [{}, {}] is empty", a.param, a.min, a.max)));
            }
            if a.scale == Scale::Log && a.min <= 0.0 {
                return Err(Error::Invalid(format!("log axis {:?} needs a positive minimum", a.param)));
            }
        }
        if self.grid_size() > 10_000_000 {
            return Err(Error::Invalid("sweep grid is too large".into()));
        }
        if self.seeds_per_point == 0 || self.seeds_per_point > 1000 {
            return Err(Error::Invalid("seeds_per_point must be in 1..=1000".into()));
        }
        if self.n_iter < 1000 && self.task != SweepTask::Horseshoe {
            return Err(Error::Invalid("n_iter must be at least 1000".into()));
        }
        self.integrator.validate()?;
        if self.task == SweepTask::Horseshoe && self.backend != Backend::Model {
            return Err(Error::Invalid("the horseshoe task needs the model backend".into()));
        }
        // Corners of the grid must be admissible.
        let lo = self.corner(|a| a.min);
        let hi = self.corner(|a| a.max);
        for (nu, mu, omega) in [lo, hi] {
            match self.backend {
                Backend::Ode => {
                    SystemParams::new(self.alpha, self.beta, nu, mu, omega)?;
                }
                Backend::Model => {
                    self.model_at(nu, mu, omega)?;
                }
            }
        }
        Ok(())
    }

    fn corner(&self, pick: impl Fn(&AxisSpec) -> f64) -> (f64, f64, f64) {
        let mut v = (self.nu, self.mu, self.omega);
        for a in &self.axes {
            match a.param {
                Param::Nu => v.0 = pick(a),
                Param::Mu => v.1 = pick(a),
                Param::Omega => v.2 = pick(a),
            }
        }
        v
    }

    pub fn grid_size(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn rows_expected(&self) -> usize {
        self.grid_size() * self.seeds_per_point
    }

    /// Grid points in row-major order, first axis slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(|a| a.values()).collect();
        (0..self.grid_size())
            .map(|index| {
                let mut rem = index;
                let mut p = GridPoint { index, nu: self.nu, mu: self.mu, omega: self.omega };
                for (a, vals) in self.axes.iter().zip(values.iter()).rev() {
                    let v = vals[rem % a.count];
                    rem /= a.count;
                    match a.param {
                        Param::Nu => p.nu = v,
                        Param::Mu => p.mu = v,
                        Param::Omega => p.omega = v,
                    }
                }
                p
            })
            .collect()
    }

    pub fn seed_for(&self, index: usize, replica: usize) -> u64 {
        self.seed.wrapping_add((index * self.seeds_per_point + replica) as u64)
    }

    pub fn model_at(&self, nu: f64, mu: f64, omega: f64) -> Result<ReturnMapModel> {
        let alpha_rates = SystemParams::new(self.alpha, self.beta, 0.0, 0.0, 1.0)?;
        let rates: NodeRates = crate::system::node_data(&alpha_rates)?;
        ReturnMapModel::new(rates, self.eps_v, self.eps_w, omega, XiProfile::cosine(nu, mu))
    }
}

/// Seeded initial point of the annulus model inside its invariant band.
pub fn seeded_annulus_point(model: &ReturnMapModel, seed: u64) -> AnnulusPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.invariant_annulus_width().unwrap_or(0.5 * model.eps_v);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = 1.0 + width * rng.gen_range(0.05..0.95);
    AnnulusPoint::new(phi, r)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.12e}"),
        _ => String::new(),
    }
}

fn row(p: &GridPoint, seed: u64, l: [Option<f64>; 3], rho: Option<f64>, class: &str) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        p.nu,
        p.mu,
        p.omega,
        seed,
        fmt_opt(l[0]),
        fmt_opt(l[1]),
        fmt_opt(l[2]),
        fmt_opt(rho),
        class
    )
}

/// Computes one CSV row; errors are reported in the class column.
fn evaluate(spec: &SweepSpec, p: &GridPoint, seed: u64) -> (String, Option<String>) {
    let fail = |e: Error| {
        let class = match e {
            Error::Escaped(_) | Error::Divergence { .. } | Error::BlockOverflow { .. } | Error::OnStableManifold { .. } => {
                "escaped"
            }
            _ => "failed",
        };
        (row(p, seed, [None; 3], None, class), Some(format!("point {} seed {seed}: {e}", p.index)))
    };
    match spec.backend {
        Backend::Ode => {
            let params = match SystemParams::new(spec.alpha, spec.beta, p.nu, p.mu, p.omega) {
                Ok(v) => v,
                Err(e) => return fail(e),
            };
            let s0 = seeded_initial_state(seed, 0.0);
            let cfg = &spec.integrator;
            match spec.task {
                SweepTask::Classify => {
                    let opts = ClassifyOptions {
                        n_iter: spec.n_iter,
                        n_transient: spec.n_transient,
                        integrator: *cfg,
                        ..Default::default()
                    };
                    let s = classify_attractor(&params, &s0, &opts);
                    (s.csv_row(&params, seed), None)
                }
                SweepTask::Lyapunov => match lyapunov_spectrum(&params, &s0, spec.n_iter, spec.n_transient, cfg) {
                    Ok(l) => (row(p, seed, l.exponents.map(Some), None, ""), None),
                    Err(e) => fail(e),
                },
                SweepTask::Rotation => match rotation_number(&params, &s0, spec.n_iter, spec.n_transient, cfg) {
                    Ok(rho) => (row(p, seed, [None; 3], Some(rho), ""), None),
                    Err(Error::Undefined(_)) => (row(p, seed, [None; 3], None, "undefined"), None),
                    Err(e) => fail(e),
                },
                SweepTask::Horseshoe => fail(Error::Invalid("horseshoe task needs the model backend".into())),
            }
        }
        Backend::Model => {
            let model = match spec.model_at(p.nu, p.mu, p.omega) {
                Ok(m) => m,
                Err(e) => return fail(e),
            };
            let pt = seeded_annulus_point(&model, seed);
            match spec.task {
                SweepTask::Classify => {
                    let s = classify_model_orbit(&model, pt, spec.n_iter, spec.n_transient);
                    let l = [Some(s.lyapunov[0]), Some(s.lyapunov[1]), None];
                    (row(p, seed, l, s.rotation_number, &s.class.to_string()), None)
                }
                SweepTask::Lyapunov => match model_lyapunov(&model, pt, spec.n_iter, spec.n_transient) {
                    Ok(l) => (row(p, seed, [Some(l.exponents[0]), Some(l.exponents[1]), None], None, ""), None),
                    Err(e) => fail(e),
                },
                SweepTask::Rotation => match model_rotation_number(&model, pt, spec.n_iter, spec.n_transient) {
                    Ok(rho) => (row(p, seed, [None; 3], Some(rho), ""), None),
                    Err(e) => fail(e),
                },
                SweepTask::Horseshoe => {
                    let verdict = build_domain(&model)
                        .and_then(|d| conley_moser_report(&model, &d, p.omega, GridSizes::default()));
                    match verdict {
                        Ok(r) => {
                            let class = if r.passed() { "horseshoe" } else { "no_horseshoe" };
                            (row(p, seed, [None; 3], None, class), None)
                        }
                        Err(Error::NoWindow(_)) => (row(p, seed, [None; 3], None, "no_horseshoe"), None),
                        Err(e) => fail(e),
                    }
                }
            }
        }
    }
}

/// One parsed data row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub nu: f64,
    pub mu: f64,
    pub omega: f64,
    pub seed: u64,
    pub lambda: [Option<f64>; 3],
    pub rho: Option<f64>,
    pub class: String,
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Invalid(format!("column {name}: {field:?} is not a number")))
}

impl SweepRow {
    pub fn parse(line: &str) -> Result<SweepRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Invalid(format!("expected 9 columns, found {}", f.len())));
        }
        let req = |i: usize, name: &str| -> Result<f64> {
            parse_opt(f[i], name)?.ok_or_else(|| Error::Invalid(format!("column {name} is empty")))
        };
        let seed = f[3].parse::<u64>().map_err(|_| Error::Invalid(format!("seed {:?} is not an integer", f[3])))?;
        let class = f[8].to_string();
        if class.chars().any(|c| !(c.is_ascii_alphanumeric() || "_()".contains(c))) {
            return Err(Error::Invalid(format!("bad class {class:?}")));
        }
        Ok(SweepRow {
            nu: req(0, "nu")?,
            mu: req(1, "mu")?,
            omega: req(2, "omega")?,
            seed,
            lambda: [parse_opt(f[4], "lambda1")?, parse_opt(f[5], "lambda2")?, parse_opt(f[6], "lambda3")?],
            rho: parse_opt(f[7], "rho")?,
            class,
        })
    }
}

/// Parses a sweep CSV. Returns data lines verbatim with their parsed rows;
/// a trailing partial line (no final newline) is dropped.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<(String, SweepRow)>> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or_else(|| Error::Invalid("empty sweep file".into()))?;
    if header.trim_end_matches(['\n', '\r']) != ORBIT_CSV_HEADER {
        return Err(Error::Invalid(format!("unexpected header {:?}", header.trim_end())));
    }
    let mut out = Vec::new();
    for l in lines {
        if !l.ends_with('\n') {
            break;
        }
        let l = l.trim_end_matches(['\n', '\r']);
        if l.is_empty() {
            continue;
        }
        out.push((l.to_string(), SweepRow::parse(l)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Data rows in grid order.
    pub rows: Vec<String>,
    pub failures: Vec<String>,
    /// Rows taken over from an earlier partial run.
    pub resumed: usize,
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("{WORKERS_ENV} = {v:?} is not a positive integer")))?;
        if n == 0 {
            return Err(Error::Invalid(format!("{WORKERS_ENV} must be positive")));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Invalid(e.to_string()))
}

fn jobs(spec: &SweepSpec) -> Vec<(GridPoint, u64)> {
    spec.points()
        .into_iter()
        .flat_map(|p| (0..spec.seeds_per_point).map(move |k| (p, k)))
        .map(|(p, k)| (p, spec.seed_for(p.index, k)))
        .collect()
}

/// Runs the sweep in memory.
pub fn sweep_rows(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let pool = worker_pool()?;
    let results: Vec<(String, Option<String>)> =
        pool.install(|| jobs(spec).par_iter().map(|(p, seed)| evaluate(spec, p, *seed)).collect());
    let failures = results.iter().filter_map(|r| r.1.clone()).collect();
    Ok(SweepOutcome { rows: results.into_iter().map(|r| r.0).collect(), failures, resumed: 0 })
}

/// Runs the sweep into `csv_path`. Rows are appended as they complete so an
/// interrupted run keeps its progress; with `resume`, rows already present
/// are kept and their seeds skipped. The file is rewritten in grid order at
/// the end.
pub fn run_sweep(spec: &SweepSpec, csv_path: &Path, resume: bool) -> Result<SweepOutcome> {
    spec.validate()?;
    let all = jobs(spec);
    let wanted: BTreeMap<u64, usize> = all.iter().enumerate().map(|(i, (_, s))| (*s, i)).collect();
    let mut done: BTreeMap<usize, String> = BTreeMap::new();
    if resume && csv_path.exists() {
        let text = fs::read_to_string(csv_path)?;
        for (line, row) in parse_sweep_csv(&text)? {
            let Some(&slot) = wanted.get(&row.seed) else {
                return Err(Error::Invalid(format!("row with seed {} does not belong to this sweep", row.seed)));
            };
            let (p, _) = all[slot];
            if row.nu != p.nu || row.mu != p.mu || row.omega != p.omega {
                return Err(Error::Invalid(format!("row with seed {} has different parameters", row.seed)));
            }
            done.entry(slot).or_insert(line);
        }
    }
    let resumed = done.len();
    {
        let mut f = fs::File::create(csv_path)?;
        writeln!(f, "{ORBIT_CSV_HEADER}")?;
        for line in done.values() {
            writeln!(f, "{line}")?;
        }
    }
    let file = Mutex::new(OpenOptions::new().append(true).open(csv_path)?);
    let todo: Vec<usize> = (0..all.len()).filter(|i| !done.contains_key(i)).collect();
    let pool = worker_pool()?;
    let results: Vec<(usize, String, Option<String>)> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let (p, seed) = all[i];
                let (line, failure) = evaluate(spec, &p, seed);
                if let Some(msg) = &failure {
                    eprintln!("sweep: {msg}");
                }
                if let Ok(mut f) = file.lock() {
                    let _ = writeln!(f, "{line}");
                    let _ = f.flush();
                }
                (i, line, failure)
            })
            .collect()
    });
    drop(file);
    let mut failures = Vec::new();
    for (i, line, failure) in results {
        done.insert(i, line);
        failures.extend(failure);
    }
    let rows: Vec<String> = done.into_values().collect();
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(ORBIT_CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(r);
        text.push('\n');
    }
    let tmp = csv_path.with_extension("csv.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, csv_path)?;
    Ok(SweepOutcome { rows, failures, resumed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SweepSpec {
        SweepSpec::parse(
            r#"
backend = "model"
task = "classify"
nu = 0.05
mu = 0.5
[[axes]]
param = "omega"
min = 0.1
max = 1.0
count = 3
"#,
        )
        .unwrap()
    }

    #[test]
    fn grid_order() {
        let mut s = spec();
        s.axes.push(AxisSpec { param: Param::Nu, min: 0.01, max: 0.02, count: 2, scale: Scale::Linear });
        let pts = s.points();
        assert_eq!(pts.len(), 6);
        assert_eq!((pts[0].omega, pts[0].nu), (0.1, 0.01));
        assert_eq!((pts[1].omega, pts[1].nu), (0.1, 0.02));
        assert_eq!(pts[5].omega, 1.0);
    }

    #[test]
    fn empty_range_rejected() {
        let text = "[[axes]]\nparam = \"nu\"\nmin = 0.1\nmax = 0.1\ncount = 4\n";
        assert!(matches!(SweepSpec::parse(text), Err(Error::Invalid(_))));
        let text = "[[axes]]\nparam = \"nu\"\nmin = 0.0\nmax = 0.1\ncount = 1\n";
        assert!(SweepSpec::parse(text).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let out = sweep_rows(&spec()).unwrap();
        let mut text = format!("{ORBIT_CSV_HEADER}\n");
        for r in &out.rows {
            text.push_str(r);
            text.push('\n');
        }
        let parsed = parse_sweep_csv(&text).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[2].1.omega, 1.0);
    }
}
