use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Trace of the unstable manifold of `P_v` on `In(P_w)`:
/// `ξ(φ) = ν·(1 + (μ/(1+μ))·g(φ))` with `g(φ) = Σ cos[k-1]·cos(kφ) + sin[k-1]·sin(kφ)`.
///
/// The default shape `g = cos` gives `ν(1 + (μ/(1+μ)) cos φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiProfile {
    pub nu: f64,
    pub mu: f64,
    #[serde(default = "default_cos")]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

fn default_cos() -> Vec<f64> {
    vec![1.0]
}

pub const XI_SAMPLES: usize = 10_000;

impl XiProfile {
    pub fn cosine(nu: f64, mu: f64) -> Self {
        XiProfile { nu, mu, cos: vec![1.0], sin: Vec::new() }
    }

    fn amplitude(&self) -> f64 {
        self.nu * self.mu / (1.0 + self.mu)
    }

    /// `ξ(φ)` and `ξ'(φ)`.
    pub fn eval<R: Real>(&self, phi: &R) -> (R, R) {
        let amp = self.amplitude();
        let mut g = R::from_f64(0.0);
        let mut dg = R::from_f64(0.0);
        let n = self.cos.len().max(self.sin.len());
        for k in 1..=n {
            let a = self.cos.get(k - 1).copied().unwrap_or(0.0);
            let b = self.sin.get(k - 1).copied().unwrap_or(0.0);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let arg = if k == 1 { phi.clone() } else { R::from_f64(kf) * phi.clone() };
            let (c, s) = (arg.cos(), arg.sin());
            g = g + R::from_f64(a) * c.clone() + R::from_f64(b) * s.clone();
            dg = dg + R::from_f64(kf * b) * c - R::from_f64(kf * a) * s;
        }
        (
            R::from_f64(self.nu) + R::from_f64(amp) * g,
            R::from_f64(amp) * dg,
        )
    }

    pub fn value(&self, phi: f64) -> f64 {
        self.eval(&phi).0
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        self.eval(&phi).1
    }

    fn samples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..XI_SAMPLES).map(move |k| {
            let phi = TAU * k as f64 / XI_SAMPLES as f64;
            let (v, d) = self.eval(&phi);
            (phi, v, d)
        })
    }

    /// Sampled maximum and minimum over one period.
    pub fn range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, v, _) in self.samples() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn is_constant(&self) -> bool {
        self.amplitude() == 0.0 || self.cos.iter().chain(self.sin.iter()).all(|c| *c == 0.0)
    }

    /// Critical points located from sign changes of `ξ'` on a fine grid and
    /// refined by bisection. Each entry is `(φ, is_max)`.
    pub fn critical_points(&self) -> Vec<(f64, bool)> {
        if self.is_constant() {
            return Vec::new();
        }
        let n = XI_SAMPLES;
        let d = |phi: f64| self.derivative(phi);
        let mut out = Vec::new();
        for k in 0..n {
            let a = TAU * k as f64 / n as f64;
            let b = TAU * (k + 1) as f64 / n as f64;
            let (da, db) = (d(a), d(b));
            if da == 0.0 {
                let is_max = d(a - 1e-6) > 0.0;
                out.push((a, is_max));
                continue;
            }
            if (da > 0.0) != (db > 0.0) && db != 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..60 {
                    let m = 0.5 * (lo + hi);
                    if (d(m) > 0.0) == (da > 0.0) {
                        lo = m;
                    } else {
                        hi = m;
                    }
                }
                out.push((0.5 * (lo + hi), da > 0.0));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = self.cos.iter().chain(self.sin.iter());
        if !self.nu.is_finite() || !self.mu.is_finite() || coeffs.clone().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("xi profile values must be finite".into()));
        }
        if self.nu < 0.0 || self.mu < 0.0 {
            return Err(Error::Invalid("xi profile needs nu >= 0 and mu >= 0".into()));
        }
        if self.nu > 0.0 && self.mu > 0.0 {
            let (lo, _) = self.range();
            if lo <= 0.0 {
                return Err(Error::Invalid(format!("xi must be positive for nu, mu > 0 (min {lo})")));
            }
        }
        Ok(())
    }

    /// True when one period has exactly one maximum and one minimum.
    pub fn is_simple_morse(&self) -> bool {
        let cps = self.critical_points();
        cps.len() == 2 && cps[0].1 != cps[1].1
    }
}
