//! The forced vector field on R^3 x S^1, its symmetry, equilibria and saddle rates.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use nalgebra::{Complex, Matrix2, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Shape of the 2π-periodic forcing profile `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ForcingProfile {
    /// `f(θ) = cos θ`.
    #[default]
    Cosine,
    /// `f(θ) = a0 + Σ_k cos[k-1]·cos(kθ) + sin[k-1]·sin(kθ)`.
    Fourier {
        #[serde(default)]
        a0: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}


impl ForcingProfile {
    /// Value and first derivative at `theta`.
    pub fn eval(&self, theta: f64) -> (f64, f64) {
        match self {
            ForcingProfile::Cosine => (theta.cos(), -theta.sin()),
            ForcingProfile::Fourier { a0, cos, sin } => {
                let mut f = *a0;
                let mut df = 0.0;
                let n = cos.len().max(sin.len());
                for k in 1..=n {
                    let kf = k as f64;
                    let (s, c) = (kf * theta).sin_cos();
                    let a = cos.get(k - 1).copied().unwrap_or(0.0);
                    let b = sin.get(k - 1).copied().unwrap_or(0.0);
                    f += a * c + b * s;
                    df += kf * (b * c - a * s);
                }
                (f, df)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ForcingProfile::Fourier { a0, cos, sin } = self {
            let all = std::iter::once(a0).chain(cos.iter()).chain(sin.iter());
            if all.clone().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("forcing coefficients must be finite".into()));
            }
            if cos.iter().chain(sin.iter()).all(|v| *v == 0.0) {
                return Err(Error::Invalid("forcing profile must be non-constant".into()));
            }
        }
        Ok(())
    }
}

/// Parameters `(α, β, ν, μ, ω)` and the forcing profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct SystemParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub mu: f64,
    /// Half the forcing frequency: `θ̇ = 2ω`.
    pub omega: f64,
    pub forcing: ForcingProfile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_beta")]
    beta: f64,
    #[serde(default)]
    nu: f64,
    #[serde(default)]
    mu: f64,
    #[serde(default = "default_omega")]
    omega: f64,
    #[serde(default)]
    forcing: ForcingProfile,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    -0.1
}
fn default_omega() -> f64 {
    1.0
}

impl TryFrom<RawParams> for SystemParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        let p = SystemParams {
            alpha: r.alpha,
            beta: r.beta,
            nu: r.nu,
            mu: r.mu,
            omega: r.omega,
            forcing: r.forcing,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            alpha: 1.0,
            beta: -0.1,
            nu: 0.0,
            mu: 0.0,
            omega: 1.0,
            forcing: ForcingProfile::Cosine,
        }
    }
}

impl SystemParams {
    pub fn new(alpha: f64, beta: f64, nu: f64, mu: f64, omega: f64) -> Result<Self> {
        let p = SystemParams { alpha, beta, nu, mu, omega, forcing: ForcingProfile::Cosine };
        p.validate()?;
        Ok(p)
    }

    /// Default coupling `α = 1, β = −0.1` with the given `ν, μ, ω`.
    pub fn standard(nu: f64, mu: f64, omega: f64) -> Result<Self> {
        Self::new(1.0, -0.1, nu, mu, omega)
    }

    pub fn with_forcing(mut self, forcing: ForcingProfile) -> Result<Self> {
        self.forcing = forcing;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.alpha, self.beta, self.nu, self.mu, self.omega];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("parameters must be finite".into()));
        }
        if !(self.beta < 0.0 && 0.0 < self.alpha && self.beta.abs() < self.alpha) {
            return Err(Error::Invalid(format!(
                "need beta < 0 < alpha and |beta| < alpha, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if self.mu < 0.0 {
            return Err(Error::Invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.omega <= 0.0 {
            return Err(Error::Invalid(format!("omega must be > 0, got {}", self.omega)));
        }
        self.forcing.validate()
    }

    /// Stroboscopic period `π/ω`.
    pub fn strobe_period(&self) -> f64 {
        std::f64::consts::PI / self.omega
    }

    /// Forcing term `μ[f(θ)−1]+ν` and its θ-derivative.
    fn forcing_term(&self, theta: f64) -> (f64, f64) {
        let (f, df) = self.forcing.eval(theta);
        (self.mu * (f - 1.0) + self.nu, self.mu * df)
    }
}

/// A point `(x1, x2, x3, θ)`; the angle is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State4 {
    pub x: [f64; 3],
    theta: f64,
}

impl State4 {
    pub fn new(x1: f64, x2: f64, x3: f64, theta: f64) -> Self {
        State4 { x: [x1, x2, x3], theta: wrap_angle(theta) }
    }

    pub fn from_spatial(x: [f64; 3], theta: f64) -> Self {
        State4 { x, theta: wrap_angle(theta) }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = wrap_angle(theta);
        self
    }

    pub fn r2(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.r2().sqrt()
    }

    pub fn distance(&self, other: &State4) -> f64 {
        spatial_distance(&self.x, &other.x)
    }
}

pub fn spatial_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Spatial components of the vector field at `(x, θ)`.
pub fn field(p: &SystemParams, x: &[f64; 3], theta: f64) -> [f64; 3] {
    let [x1, x2, x3] = *x;
    let (a, b) = (p.alpha, p.beta);
    let g = 1.0 - (x1 * x1 + x2 * x2 + x3 * x3);
    let (forcing, _) = p.forcing_term(theta);
    [
        x1 * g - a * x1 * x3 + b * x1 * x3 * x3 + (1.0 - x1) * forcing,
        x2 * g + a * x2 * x3 + b * x2 * x3 * x3,
        x3 * g - a * (x2 * x2 - x1 * x1) - b * x3 * (x1 * x1 + x2 * x2),
    ]
}

/// Jacobian of [`field`] with respect to `x`.
pub fn spatial_jacobian(p: &SystemParams, x: &[f64; 3], theta: f64) -> Matrix3<f64> {
    let [x1, x2, x3] = *x;
    let (a, b) = (p.alpha, p.beta);
    let g = 1.0 - (x1 * x1 + x2 * x2 + x3 * x3);
    let (forcing, _) = p.forcing_term(theta);
    Matrix3::new(
        g - 2.0 * x1 * x1 - a * x3 + b * x3 * x3 - forcing,
        -2.0 * x1 * x2,
        -2.0 * x1 * x3 - a * x1 + 2.0 * b * x1 * x3,
        -2.0 * x1 * x2,
        g - 2.0 * x2 * x2 + a * x3 + b * x3 * x3,
        -2.0 * x2 * x3 + a * x2 + 2.0 * b * x2 * x3,
        -2.0 * x1 * x3 + 2.0 * a * x1 - 2.0 * b * x1 * x3,
        -2.0 * x2 * x3 - 2.0 * a * x2 - 2.0 * b * x2 * x3,
        g - 2.0 * x3 * x3 - b * (x1 * x1 + x2 * x2),
    )
}

/// Full velocity `(ẋ1, ẋ2, ẋ3, θ̇)`.
pub fn eval_rhs(p: &SystemParams, s: &State4) -> [f64; 4] {
    let v = field(p, &s.x, s.theta);
    [v[0], v[1], v[2], 2.0 * p.omega]
}

/// Jacobian of [`eval_rhs`] in the order `(x1, x2, x3, θ)`.
pub fn eval_jacobian(p: &SystemParams, s: &State4) -> Matrix4<f64> {
    let js = spatial_jacobian(p, &s.x, s.theta);
    let (_, dforcing) = p.forcing_term(s.theta);
    let mut j = Matrix4::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&js);
    j[(0, 3)] = (1.0 - s.x[0]) * dforcing;
    j
}

/// The reflection `κ(x, y, z) = (x, −y, z)`, acting trivially on θ.
pub fn kappa(s: &State4) -> State4 {
    State4 { x: [s.x[0], -s.x[1], s.x[2]], theta: s.theta }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub max_residual: f64,
    pub worst_point: Option<State4>,
    pub samples: usize,
    pub passed: bool,
}

/// Measures `max ‖F(κs) − κF(s)‖` over the samples; passes below `1e-12`.
pub fn check_kappa_equivariance(p: &SystemParams, samples: &[State4]) -> EquivarianceReport {
    let mut max_residual = 0.0f64;
    let mut worst_point = None;
    for s in samples {
        let lhs = eval_rhs(p, &kappa(s));
        let f = eval_rhs(p, s);
        let rhs = [f[0], -f[1], f[2], f[3]];
        let res = lhs.iter().zip(rhs.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if worst_point.is_none() || res > max_residual {
            max_residual = res;
            worst_point = Some(*s);
        }
    }
    EquivarianceReport { max_residual, worst_point, samples: samples.len(), passed: max_residual < 1e-12 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Saddle,
    Source,
    Sink,
    Focus,
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StabilityClass::Saddle => "saddle",
            StabilityClass::Source => "source",
            StabilityClass::Sink => "sink",
            StabilityClass::Focus => "focus",
        };
        f.write_str(s)
    }
}

/// Role of an equilibrium in the unforced network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Origin,
    V,
    W,
    Focus,
    Other,
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EquilibriumKind::Origin => "O",
            EquilibriumKind::V => "v",
            EquilibriumKind::W => "w",
            EquilibriumKind::Focus => "focus",
            EquilibriumKind::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub location: State4,
    /// Eigenvalues of the spatial Jacobian, sorted by decreasing real part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub stability_class: StabilityClass,
    /// Class of the linearization restricted to the invariant plane `x2 = 0`,
    /// for equilibria lying in it.
    pub in_plane_class: Option<StabilityClass>,
    /// Eigenvalue along the plane direction most tangent to the unit sphere
    /// and the eigenvalue along `x2`, for equilibria in the plane.
    pub tangential: Option<(f64, f64)>,
    pub residual: f64,
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

fn newton_root(p: &SystemParams, seed: [f64; 3]) -> Option<([f64; 3], f64)> {
    let mut x = Vector3::from(seed);
    for _ in 0..NEWTON_MAX_ITER {
        let f = Vector3::from(field(p, &x.into(), 0.0));
        let res = f.norm();
        if !res.is_finite() || x.norm() > 1e3 {
            return None;
        }
        let j = spatial_jacobian(p, &x.into(), 0.0);
        let dx = j.lu().solve(&(-f))?;
        x += dx;
        if dx.norm() < 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    let res = Vector3::from(field(p, &x.into(), 0.0)).norm();
    (res < NEWTON_TOL).then(|| (x.into(), res))
}

fn classify(eigs: &[Complex<f64>]) -> StabilityClass {
    let scale = eigs.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if eigs.iter().any(|z| z.im.abs() > 1e-12 * scale) {
        StabilityClass::Focus
    } else if eigs.iter().all(|z| z.re > 0.0) {
        StabilityClass::Source
    } else if eigs.iter().all(|z| z.re < 0.0) {
        StabilityClass::Sink
    } else {
        StabilityClass::Saddle
    }
}

fn eig2(m: &Matrix2<f64>) -> [Complex<f64>; 2] {
    let tr = m.trace();
    let det = m.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [Complex::new(tr / 2.0 + s, 0.0), Complex::new(tr / 2.0 - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex::new(tr / 2.0, s), Complex::new(tr / 2.0, -s)]
    }
}

fn describe(p: &SystemParams, x: [f64; 3], residual: f64) -> Equilibrium {
    let j = spatial_jacobian(p, &x, 0.0);
    let mut eigenvalues: Vec<Complex<f64>> = j.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let stability_class = classify(&eigenvalues);
    let norm = Vector3::from(x).norm();
    let in_plane = x[1].abs() < 1e-9 * (1.0 + norm);
    let (in_plane_class, tangential) = if in_plane {
        let block = Matrix2::new(j[(0, 0)], j[(0, 2)], j[(2, 0)], j[(2, 2)]);
        let ev = eig2(&block);
        let tangential = if ev[0].im == 0.0 && norm > 1e-6 {
            let along = |lam: f64| {
                let u = if (j[(0, 2)]).abs() + (lam - j[(0, 0)]).abs() > 1e-14 {
                    [j[(0, 2)], lam - j[(0, 0)]]
                } else {
                    [lam - j[(2, 2)], j[(2, 0)]]
                };
                let un = (u[0] * u[0] + u[1] * u[1]).sqrt();
                ((u[0] * x[0] + u[1] * x[2]) / (un * norm)).abs()
            };
            let lam = if along(ev[0].re) <= along(ev[1].re) { ev[0].re } else { ev[1].re };
            Some((lam, j[(1, 1)]))
        } else {
            None
        };
        (Some(classify(&ev)), tangential)
    } else {
        (None, None)
    };
    let kind = if norm < 0.5 {
        EquilibriumKind::Origin
    } else if stability_class == StabilityClass::Focus {
        EquilibriumKind::Focus
    } else {
        match tangential {
            Some((t, e2)) if t < 0.0 && e2 > 0.0 => EquilibriumKind::V,
            Some((t, e2)) if t > 0.0 && e2 < 0.0 => EquilibriumKind::W,
            _ => EquilibriumKind::Other,
        }
    };
    Equilibrium {
        kind,
        location: State4::from_spatial(x, 0.0),
        eigenvalues,
        stability_class,
        in_plane_class,
        tangential,
        residual,
    }
}

fn seeds() -> Vec<[f64; 3]> {
    let h = FRAC_1_SQRT_2;
    let mut s = vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 0.0, 0.0]];
    for (a, b) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
        s.push([a, b, 0.0]);
    }
    for i in 0..9 {
        for k in 0..9 {
            s.push([-1.2 + 0.3 * i as f64, 0.0, -1.2 + 0.3 * k as f64]);
        }
    }
    s
}

/// Equilibria of the autonomous field (`μ = 0`), found by Newton from a fixed seed set.
pub fn find_equilibria(p: &SystemParams) -> Result<Vec<Equilibrium>> {
    p.validate()?;
    if p.mu != 0.0 {
        return Err(Error::Invalid("equilibria are only defined for mu = 0".into()));
    }
    let seeds = seeds();
    let mut roots: Vec<([f64; 3], f64)> = Vec::new();
    for seed in &seeds {
        if let Some((x, res)) = newton_root(p, *seed) {
            if !roots.iter().any(|(y, _)| spatial_distance(&x, y) < 1e-8) {
                roots.push((x, res));
            }
        }
    }
    if roots.is_empty() {
        return Err(Error::NonConvergence { seeds: seeds.len(), detail: "no root found".into() });
    }
    let mut eqs: Vec<Equilibrium> = roots.into_iter().map(|(x, r)| describe(p, x, r)).collect();
    eqs.sort_by(|a, b| {
        let key = |e: &Equilibrium| e.kind as u8;
        key(a).cmp(&key(b)).then_with(|| {
            a.location.x.partial_cmp(&b.location.x).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(eqs)
}

/// Positive contraction and expansion rates at the two saddles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRates {
    pub c_v: f64,
    pub e_v: f64,
    pub c_w: f64,
    pub e_w: f64,
}

impl NodeRates {
    pub fn delta_v(&self) -> f64 {
        self.c_v / self.e_v
    }
    pub fn delta_w(&self) -> f64 {
        self.c_w / self.e_w
    }
}

/// Saddle rates tangent to the attracting sphere, read off the equilibria `v` and `w`.
pub fn node_data(p: &SystemParams) -> Result<NodeRates> {
    let eqs = find_equilibria(p)?;
    let pick = |kind: EquilibriumKind, near: [f64; 3]| {
        eqs.iter()
            .filter(|e| e.kind == kind)
            .min_by(|a, b| {
                spatial_distance(&a.location.x, &near).total_cmp(&spatial_distance(&b.location.x, &near))
            })
            .cloned()
    };
    let v = pick(EquilibriumKind::V, [0.0, 0.0, 1.0])
        .ok_or_else(|| Error::NotASaddle("no saddle with the signature of v".into()))?;
    let w = pick(EquilibriumKind::W, [0.0, 0.0, -1.0])
        .ok_or_else(|| Error::NotASaddle("no saddle with the signature of w".into()))?;
    let (tv, xv) = v.tangential.ok_or_else(|| Error::NotASaddle("v is off the plane".into()))?;
    let (tw, xw) = w.tangential.ok_or_else(|| Error::NotASaddle("w is off the plane".into()))?;
    let rates = NodeRates { c_v: -tv, e_v: xv, c_w: -xw, e_w: tw };
    if [rates.c_v, rates.e_v, rates.c_w, rates.e_w].iter().any(|r| *r <= 0.0) {
        return Err(Error::NotASaddle(format!("rates have wrong signs: {rates:?}")));
    }
    Ok(rates)
}

impl Equilibrium {
    pub fn spatial(&self) -> [f64; 3] {
        self.location.x
    }
}
