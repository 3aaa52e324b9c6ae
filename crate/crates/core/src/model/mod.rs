//! Closed-form annulus model: local maps near the saddle orbits, transition
//! maps along the connections, and the composed first-return map.

mod orbit;
mod xi;

pub use orbit::{
    classify_model_orbit, lift_is_monotone, model_lyapunov, model_orbit, model_rotation_number, ModelClass, ModelOrbitSummary,
};
pub use xi::{XiProfile, XI_SAMPLES};

use std::f64::consts::TAU;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::system::{node_data, NodeRates, SystemParams};

/// A point on a cross-section annulus. On `Out` walls `r ≥ 1`; on `In`
/// walls `r ∈ [0, ε]`. The angle lives in the universal cover unless reduced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusPoint<T = f64> {
    pub phi: T,
    pub r: T,
}

impl<T> AnnulusPoint<T> {
    pub fn new(phi: T, r: T) -> Self {
        AnnulusPoint { phi, r }
    }
}

impl<T: Real> AnnulusPoint<T> {
    pub fn to_f64(&self) -> AnnulusPoint<f64> {
        AnnulusPoint { phi: self.phi.to_f64(), r: self.r.to_f64() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saddle {
    V,
    W,
}

/// Which pair of constants `(k, C)` the closed form uses.
///
/// `Printed` takes `k = −2K ln ε_w` and `C = ε_v/ε_w^{δ_w}`. `Composed` takes
/// the values produced by composing the four factor maps literally,
/// `k = −K ln ε_w + (2/e_v) ln(ε_w/ε_v)` and `C = ε_v^{1−δ_v} ε_w^{δ_v(1−δ_w)}`.
/// The two agree in `K` and `δ`, hence in every stretching and contraction
/// exponent, and differ only in the angular offset and radial gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapConstants {
    #[default]
    Printed,
    Composed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ReturnMapModel {
    pub c_v: f64,
    pub e_v: f64,
    pub c_w: f64,
    pub e_w: f64,
    pub eps_v: f64,
    pub eps_w: f64,
    pub omega: f64,
    pub xi: XiProfile,
    pub constants: MapConstants,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(default = "r_c")]
    c_v: f64,
    #[serde(default = "r_e")]
    e_v: f64,
    #[serde(default = "r_c")]
    c_w: f64,
    #[serde(default = "r_e")]
    e_w: f64,
    #[serde(default = "d_eps_v")]
    eps_v: f64,
    #[serde(default = "d_eps_w")]
    eps_w: f64,
    omega: f64,
    xi: XiProfile,
    #[serde(default)]
    constants: MapConstants,
}

fn r_c() -> f64 {
    1.1
}
fn r_e() -> f64 {
    0.9
}
fn d_eps_v() -> f64 {
    DEFAULT_EPS_V
}
fn d_eps_w() -> f64 {
    DEFAULT_EPS_W
}

impl TryFrom<RawModel> for ReturnMapModel {
    type Error = Error;
    fn try_from(m: RawModel) -> Result<Self> {
        let model = ReturnMapModel {
            c_v: m.c_v,
            e_v: m.e_v,
            c_w: m.c_w,
            e_w: m.e_w,
            eps_v: m.eps_v,
            eps_w: m.eps_w,
            omega: m.omega,
            xi: m.xi,
            constants: m.constants,
        };
        model.validate()?;
        Ok(model)
    }
}

pub const DEFAULT_EPS_W: f64 = 0.1;
pub const DEFAULT_EPS_V: f64 = 0.04;

impl ReturnMapModel {
    pub fn new(rates: NodeRates, eps_v: f64, eps_w: f64, omega: f64, xi: XiProfile) -> Result<Self> {
        let m = ReturnMapModel {
            c_v: rates.c_v,
            e_v: rates.e_v,
            c_w: rates.c_w,
            e_w: rates.e_w,
            eps_v,
            eps_w,
            omega,
            xi,
            constants: MapConstants::Printed,
        };
        m.validate()?;
        Ok(m)
    }

    /// Rates 1.1/0.9 at both saddles, `ε_w = 0.1`, `ε_v = 0.04`, `ν = 0.05`, `μ = 0.5`.
    pub fn flagship(omega: f64) -> Self {
        let rates = NodeRates { c_v: 1.1, e_v: 0.9, c_w: 1.1, e_w: 0.9 };
        Self::new(rates, DEFAULT_EPS_V, DEFAULT_EPS_W, omega, XiProfile::cosine(0.05, 0.5))
            .expect("flagship model is admissible")
    }

    /// Model whose saddle rates are read off the autonomous field.
    pub fn from_system(p: &SystemParams, eps_v: f64, eps_w: f64, xi: XiProfile) -> Result<Self> {
        let mut q = p.clone();
        q.mu = 0.0;
        q.nu = 0.0;
        let rates = node_data(&q)?;
        Self::new(rates, eps_v, eps_w, p.omega, xi)
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        let mut m = self.clone();
        m.omega = omega;
        m.validate()?;
        Ok(m)
    }

    pub fn with_constants(mut self, constants: MapConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn rates(&self) -> NodeRates {
        NodeRates { c_v: self.c_v, e_v: self.e_v, c_w: self.c_w, e_w: self.e_w }
    }

    pub fn delta_v(&self) -> f64 {
        self.c_v / self.e_v
    }
    pub fn delta_w(&self) -> f64 {
        self.c_w / self.e_w
    }
    pub fn delta(&self) -> f64 {
        self.delta_v() * self.delta_w()
    }
    /// `K = 2(e_v + c_w)/(e_v e_w)`.
    pub fn big_k(&self) -> f64 {
        2.0 * (self.e_v + self.c_w) / (self.e_v * self.e_w)
    }
    /// Angular offset `k` of the closed form.
    pub fn k_eps(&self) -> f64 {
        match self.constants {
            MapConstants::Printed => -2.0 * self.big_k() * self.eps_w.ln(),
            MapConstants::Composed => {
                -self.big_k() * self.eps_w.ln() + (2.0 / self.e_v) * (self.eps_w / self.eps_v).ln()
            }
        }
    }
    /// Radial gain `C` of the closed form.
    pub fn gain(&self) -> f64 {
        match self.constants {
            MapConstants::Printed => self.eps_v / self.eps_w.powf(self.delta_w()),
            MapConstants::Composed => {
                self.eps_v.powf(1.0 - self.delta_v()) * self.eps_w.powf(self.delta_v() * (1.0 - self.delta_w()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.c_v, self.e_v, self.c_w, self.e_w, self.eps_v, self.eps_w, self.omega];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("model values must be finite".into()));
        }
        if [self.c_v, self.e_v, self.c_w, self.e_w].iter().any(|v| *v <= 0.0) {
            return Err(Error::Invalid("saddle rates must be positive".into()));
        }
        if !(0.0 < self.eps_v && self.eps_v < self.eps_w && self.eps_w < 1.0) {
            return Err(Error::Invalid(format!(
                "need 0 < eps_v < eps_w < 1, got eps_v = {}, eps_w = {}",
                self.eps_v, self.eps_w
            )));
        }
        if self.omega <= 0.0 {
            return Err(Error::Invalid("omega must be positive".into()));
        }
        if self.delta() <= 1.0 {
            return Err(Error::Invalid(format!("delta = {} must exceed 1", self.delta())));
        }
        if self.big_k() <= 0.0 || self.k_eps() <= 0.0 {
            return Err(Error::Invalid("K and k_eps must be positive".into()));
        }
        self.xi.validate()?;
        let (_, hi) = self.xi.range();
        if hi > self.eps_w {
            return Err(Error::Invalid(format!("max xi = {hi} exceeds eps_w = {}", self.eps_w)));
        }
        Ok(())
    }

    /// Whether `ε_v + max ξ ≤ ε_w`, i.e. every point of `Out(P_v)` lands in `In(P_w)`.
    pub fn globally_well_defined(&self) -> bool {
        self.eps_v + self.xi.range().1 <= self.eps_w
    }

    /// Width `t` of an annulus `1 ≤ r ≤ 1 + t` that the map sends into itself,
    /// when one exists with `t ≤ ε_v` and `t + max ξ ≤ ε_w`.
    pub fn invariant_annulus_width(&self) -> Option<f64> {
        let hi = self.xi.range().1;
        let t = self.eps_v.min(self.eps_w - hi);
        (t > 0.0 && self.gain() * (t + hi).powf(self.delta()) <= t).then_some(t)
    }

    fn eps(&self, a: Saddle) -> f64 {
        match a {
            Saddle::V => self.eps_v,
            Saddle::W => self.eps_w,
        }
    }
}

fn reduce<R: Real>(phi: R) -> R {
    let tau = R::tau();
    let turns = (phi.to_f64() / TAU).floor();
    let mut out = phi - R::from_f64(turns) * tau.clone();
    let zero = R::from_f64(0.0);
    if out < zero {
        out = out + tau.clone();
    }
    if out >= tau {
        out = out - tau;
    }
    out
}

/// Angle reduced to `[0, 2π)` in the scalar's own precision.
pub fn reduce_angle<R: Real>(phi: R) -> R {
    reduce(phi)
}

/// Local map `Φ_a: In(P_a) → Out(P_a)`,
/// `(φ, r) ↦ (φ − (2ω/e_a) ln(r/ε_a), 1 + ε_a (r/ε_a)^{δ_a})`.
pub fn local_map<R: Real>(model: &ReturnMapModel, a: Saddle, pt: &AnnulusPoint<R>, lift: bool) -> Result<AnnulusPoint<R>> {
    let (e, delta_a) = match a {
        Saddle::V => (model.e_v, model.delta_v()),
        Saddle::W => (model.e_w, model.delta_w()),
    };
    let eps = model.eps(a);
    if !pt.r.is_positive() {
        return Err(Error::OnStableManifold { phi: pt.phi.to_f64(), r: pt.r.to_f64() });
    }
    if pt.r.to_f64() > eps * (1.0 + 1e-12) {
        return Err(Error::BlockOverflow { phi: pt.phi.to_f64(), r: pt.r.to_f64(), value: pt.r.to_f64(), limit: eps });
    }
    let ratio = pt.r.clone() / R::from_f64(eps);
    let phi = pt.phi.clone() - R::from_f64(2.0 * model.omega / e) * ratio.ln();
    let r = R::from_f64(1.0) + R::from_f64(eps) * ratio.powr(&R::from_f64(delta_a));
    Ok(AnnulusPoint { phi: if lift { phi } else { reduce(phi) }, r })
}

/// `Ψ_{v→w}(φ, r) = (φ, (r − 1) + ξ(φ))`.
pub fn transition_vw<R: Real>(model: &ReturnMapModel, pt: &AnnulusPoint<R>) -> Result<AnnulusPoint<R>> {
    let r = pt.r.to_f64();
    if r < 1.0 - 1e-12 || r > 1.0 + model.eps_v * (1.0 + 1e-12) {
        return Err(Error::Invalid(format!("r = {r} is outside Out(P_v) = [1, 1 + {}]", model.eps_v)));
    }
    let (xi, _) = model.xi.eval(&pt.phi);
    let out = pt.r.clone() - R::from_f64(1.0) + xi;
    if out.to_f64() > model.eps_w {
        return Err(Error::BlockOverflow { phi: pt.phi.to_f64(), r, value: out.to_f64(), limit: model.eps_w });
    }
    Ok(AnnulusPoint { phi: pt.phi.clone(), r: out })
}

/// `Ψ_{w→v}(φ, r) = (φ, r − 1)`.
pub fn transition_wv<R: Real>(model: &ReturnMapModel, pt: &AnnulusPoint<R>) -> Result<AnnulusPoint<R>> {
    let r = pt.r.to_f64();
    if r < 1.0 - 1e-12 || r > 1.0 + model.eps_w * (1.0 + 1e-12) {
        return Err(Error::Invalid(format!("r = {r} is outside Out(P_w) = [1, 1 + {}]", model.eps_w)));
    }
    let out = pt.r.clone() - R::from_f64(1.0);
    if out.to_f64() > model.eps_v * (1.0 + 1e-12) {
        return Err(Error::BlockOverflow { phi: pt.phi.to_f64(), r, value: out.to_f64(), limit: model.eps_v });
    }
    Ok(AnnulusPoint { phi: pt.phi.clone(), r: out })
}

/// The four factor maps applied in sequence.
pub fn composed_return_map<R: Real>(model: &ReturnMapModel, pt: &AnnulusPoint<R>, lift: bool) -> Result<AnnulusPoint<R>> {
    let a = transition_vw(model, pt)?;
    let b = local_map(model, Saddle::W, &a, true)?;
    let c = transition_wv(model, &b)?;
    local_map(model, Saddle::V, &c, lift)
}

/// `(r − 1) + ξ(φ)` with the well-definedness checks of the return map.
fn landing<R: Real>(model: &ReturnMapModel, pt: &AnnulusPoint<R>) -> Result<(R, R)> {
    let r = pt.r.to_f64();
    if !(r >= 1.0 - 1e-12) || r > 1.0 + model.eps_v * (1.0 + 1e-9) {
        return Err(Error::Invalid(format!("r = {r} is outside Out(P_v) = [1, 1 + {}]", model.eps_v)));
    }
    let (xi, dxi) = model.xi.eval(&pt.phi);
    let s = pt.r.clone() - R::from_f64(1.0) + xi;
    if !s.is_positive() {
        return Err(Error::OnStableManifold { phi: pt.phi.to_f64(), r });
    }
    if s.to_f64() > model.eps_w {
        return Err(Error::BlockOverflow { phi: pt.phi.to_f64(), r, value: s.to_f64(), limit: model.eps_w });
    }
    Ok((s, dxi))
}

/// Closed-form return map
/// `R(φ, r) = (φ − ωK ln s − ωk, 1 + C s^δ)`, `s = (r − 1) + ξ(φ)`.
pub fn return_map<R: Real>(model: &ReturnMapModel, pt: &AnnulusPoint<R>, lift: bool) -> Result<AnnulusPoint<R>> {
    let (s, _) = landing(model, pt)?;
    let wk = R::from_f64(model.omega * model.big_k());
    let phi = pt.phi.clone() - wk * s.ln() - R::from_f64(model.omega * model.k_eps());
    let r = R::from_f64(1.0) + R::from_f64(model.gain()) * s.powr(&R::from_f64(model.delta()));
    Ok(AnnulusPoint { phi: if lift { phi } else { reduce(phi) }, r })
}

/// Analytic Jacobian of [`return_map`] with rows `(R1, R2)` and columns `(φ, r)`.
pub fn d_return_map(model: &ReturnMapModel, pt: &AnnulusPoint) -> Result<Matrix2<f64>> {
    let (s, dxi) = landing(model, pt)?;
    let wk = model.omega * model.big_k();
    let g = model.delta() * model.gain() * s.powf(model.delta() - 1.0);
    Ok(Matrix2::new(1.0 - wk * dxi / s, -wk / s, g * dxi, g))
}

/// Samples `ξ` on `[φ_L, φ_R]` and checks it decreases strictly with `ξ' ≤ 0`.
pub fn check_decreasing(xi: &XiProfile, window: (f64, f64)) -> Result<()> {
    let (l, r) = window;
    if !(l < r) {
        return Err(Error::Invalid(format!("window [{l}, {r}] is empty")));
    }
    let n = XI_SAMPLES;
    let mut prev = xi.value(l);
    for k in 0..=n {
        let phi = l + (r - l) * k as f64 / n as f64;
        let (v, d) = xi.eval(&phi);
        let interior = k > 0 && k < n;
        if (interior && d >= 0.0) || (k > 0 && v >= prev) {
            return Err(Error::NotMonotone { phi });
        }
        prev = v;
    }
    Ok(())
}

/// Speed threshold `ω₀ = 2π / (K ln(1 + (ξ_L − ξ_R)/(1 + ξ_R)))` for a
/// window on which `ξ` decreases.
pub fn omega0(model: &ReturnMapModel, window: (f64, f64)) -> Result<f64> {
    check_decreasing(&model.xi, window)?;
    let xl = model.xi.value(window.0);
    let xr = model.xi.value(window.1);
    omega0_from_values(model.big_k(), xl, xr)
}

/// The threshold formula on raw values.
pub fn omega0_from_values(big_k: f64, xi_l: f64, xi_r: f64) -> Result<f64> {
    if !(xi_l > xi_r) {
        return Err(Error::NotMonotone { phi: f64::NAN });
    }
    let w = TAU / (big_k * (1.0 + (xi_l - xi_r) / (1.0 + xi_r)).ln());
    if w.is_finite() && w > 0.0 {
        Ok(w)
    } else {
        Err(Error::Invalid(format!("omega0 is not finite for xi_L = {xi_l}, xi_R = {xi_r}")))
    }
}

/// Lifted angular spread of the image of the segment `r = r*` over the window:
/// `Δ = (φ_R − φ_L) + ωK ln((r* − 1 + ξ_L)/(r* − 1 + ξ_R))`.
pub fn stretch_measure(model: &ReturnMapModel, r_star: f64, window: (f64, f64), omega: f64) -> Result<f64> {
    if !(r_star > 1.0 && r_star <= 1.0 + model.eps_v) {
        return Err(Error::Invalid(format!("r* = {r_star} is outside (1, 1 + eps_v]")));
    }
    let m = model.with_omega(omega)?;
    landing(&m, &AnnulusPoint::new(window.0, r_star))?;
    landing(&m, &AnnulusPoint::new(window.1, r_star))?;
    let t = r_star - 1.0;
    let xl = m.xi.value(window.0);
    let xr = m.xi.value(window.1);
    Ok((window.1 - window.0) + omega * m.big_k() * ((t + xl) / (t + xr)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flagship_constants() {
        let m = ReturnMapModel::flagship(1.0);
        assert!((m.big_k() - 2.0 * 2.0 / 0.81).abs() < 1e-14);
        assert!((m.delta() - (11.0f64 / 9.0).powi(2)).abs() < 1e-14);
        assert!(!m.globally_well_defined());
        assert!(m.invariant_annulus_width().is_some());
    }

    #[test]
    fn local_map_boundary_is_fixed() {
        let m = ReturnMapModel::flagship(1.0);
        let out = local_map(&m, Saddle::W, &AnnulusPoint::new(0.3, m.eps_w), true).unwrap();
        assert!((out.phi - 0.3).abs() < 1e-15);
        assert!((out.r - (1.0 + m.eps_w)).abs() < 1e-15);
    }

    #[test]
    fn transition_examples() {
        let m = ReturnMapModel::flagship(1.0);
        let p = transition_wv(&m, &AnnulusPoint::new(1.0, 1.03)).unwrap();
        assert!((p.r - 0.03).abs() < 1e-15 && p.phi == 1.0);
        let q = transition_wv(&m, &AnnulusPoint::new(2.0, 1.0)).unwrap();
        assert_eq!(q.r, 0.0);
        assert!(matches!(transition_wv(&m, &AnnulusPoint::new(0.0, 1.09)), Err(Error::BlockOverflow { .. })));
    }
}
