//! TOML run configuration. Every field is optional; values are resolved as
//! command line over file over built-in default via [`Overlay`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{RouteSpec, SweepSpec};
use crate::horseshoe::GridSizes;
use crate::integrator::IntegratorConfig;
use crate::model::{MapConstants, ReturnMapModel, XiProfile, DEFAULT_EPS_V, DEFAULT_EPS_W};
use crate::section::ClassifyOptions;
use crate::system::{ForcingProfile, NodeRates, SystemParams};

/// Field-wise `Option::or`: values set in `top` win.
pub trait Overlay {
    fn overlay(&self, top: &Self) -> Self;
}

macro_rules! overlay_struct {
    ($name:ident { $($field:ident),* $(,)? }) => {
        impl Overlay for $name {
            fn overlay(&self, top: &Self) -> Self {
                $name { $($field: top.$field.clone().or_else(|| self.$field.clone())),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub nu: Option<f64>,
    pub mu: Option<f64>,
    pub omega: Option<f64>,
    pub forcing: Option<ForcingProfile>,
}
overlay_struct!(SystemSection { alpha, beta, nu, mu, omega, forcing });

impl SystemSection {
    pub fn resolve(&self) -> Result<SystemParams> {
        let mut p = SystemParams::new(
            self.alpha.unwrap_or(1.0),
            self.beta.unwrap_or(-0.1),
            self.nu.unwrap_or(0.0),
            self.mu.unwrap_or(0.0),
            self.omega.unwrap_or(1.0),
        )?;
        if let Some(f) = &self.forcing {
            p.forcing = f.clone();
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub max_time: Option<f64>,
}
overlay_struct!(IntegratorSection { rel_tol, abs_tol, max_step, max_time });

impl IntegratorSection {
    pub fn resolve(&self) -> Result<IntegratorConfig> {
        let d = IntegratorConfig::default();
        let c = IntegratorConfig {
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            max_step: self.max_step.unwrap_or(d.max_step),
            max_time: self.max_time.unwrap_or(d.max_time),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub n_iter: Option<usize>,
    pub n_transient: Option<usize>,
    pub circle_modes: Option<usize>,
    pub circle_tol: Option<f64>,
}
overlay_struct!(ClassifySection { n_iter, n_transient, circle_modes, circle_tol });

impl ClassifySection {
    pub fn resolve(&self, integrator: IntegratorConfig) -> Result<ClassifyOptions> {
        let d = ClassifyOptions::default();
        let o = ClassifyOptions {
            n_iter: self.n_iter.unwrap_or(d.n_iter),
            n_transient: self.n_transient.unwrap_or(d.n_transient),
            circle_modes: self.circle_modes.unwrap_or(d.circle_modes),
            circle_tol: self.circle_tol.unwrap_or(d.circle_tol),
            integrator,
        };
        if o.n_iter < 1000 {
            return Err(Error::Invalid(format!("n_iter = {} must be at least 1000", o.n_iter)));
        }
        if o.circle_modes == 0 || !(o.circle_tol > 0.0) {
            return Err(Error::Invalid("circle_modes must be >= 1 and circle_tol > 0".into()));
        }
        Ok(o)
    }
}

/// Initial condition and run length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub x0: Option<[f64; 3]>,
    pub theta: Option<f64>,
    pub t_end: Option<f64>,
    pub iterations: Option<usize>,
    /// Period, in strobe steps, of a sought periodic orbit.
    pub q: Option<usize>,
}
overlay_struct!(RunSection { seed, x0, theta, t_end, iterations, q });

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub c_v: Option<f64>,
    pub e_v: Option<f64>,
    pub c_w: Option<f64>,
    pub e_w: Option<f64>,
    pub eps_v: Option<f64>,
    pub eps_w: Option<f64>,
    pub omega: Option<f64>,
    pub nu: Option<f64>,
    pub mu: Option<f64>,
    pub cos: Option<Vec<f64>>,
    pub sin: Option<Vec<f64>>,
    pub constants: Option<MapConstants>,
}
overlay_struct!(ModelSection { c_v, e_v, c_w, e_w, eps_v, eps_w, omega, nu, mu, cos, sin, constants });

impl ModelSection {
    /// Unset fields fall back to the flagship model at `ω = 65`.
    pub fn resolve(&self) -> Result<ReturnMapModel> {
        let rates = NodeRates {
            c_v: self.c_v.unwrap_or(1.1),
            e_v: self.e_v.unwrap_or(0.9),
            c_w: self.c_w.unwrap_or(1.1),
            e_w: self.e_w.unwrap_or(0.9),
        };
        let mut xi = XiProfile::cosine(self.nu.unwrap_or(0.05), self.mu.unwrap_or(0.5));
        if let Some(c) = &self.cos {
            xi.cos = c.clone();
        }
        if let Some(s) = &self.sin {
            xi.sin = s.clone();
        }
        let m = ReturnMapModel::new(
            rates,
            self.eps_v.unwrap_or(DEFAULT_EPS_V),
            self.eps_w.unwrap_or(DEFAULT_EPS_W),
            self.omega.unwrap_or(65.0),
            xi,
        )?;
        Ok(m.with_constants(self.constants.unwrap_or_default()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorseshoeSection {
    pub strip_samples: Option<usize>,
    pub derivative_grid: Option<usize>,
    pub image_grid: Option<usize>,
    /// Itinerary to shadow, digits `1` and `2`.
    pub word: Option<String>,
    /// Length of words in the shadow census.
    pub depth: Option<usize>,
}
overlay_struct!(HorseshoeSection { strip_samples, derivative_grid, image_grid, word, depth });

impl HorseshoeSection {
    pub fn grid(&self) -> Result<GridSizes> {
        let d = GridSizes::default();
        let g = GridSizes {
            strip_samples: self.strip_samples.unwrap_or(d.strip_samples),
            derivative_grid: self.derivative_grid.unwrap_or(d.derivative_grid),
            image_grid: self.image_grid.unwrap_or(d.image_grid),
        };
        let ok = |n: usize| (8..=1 << 16).contains(&n);
        if !(ok(g.strip_samples) && ok(g.derivative_grid) && ok(g.image_grid)) {
            return Err(Error::Invalid("horseshoe grid sizes must be in 8..=65536".into()));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    pub integrator: IntegratorSection,
    pub classify: ClassifySection,
    pub run: RunSection,
    pub model: ModelSection,
    pub horseshoe: HorseshoeSection,
    pub sweep: Option<SweepSpec>,
    pub route: Option<RouteSpec>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `top` wins field by field; whole-table sections are replaced.
    pub fn overlay(&self, top: &Config) -> Config {
        Config {
            system: self.system.overlay(&top.system),
            integrator: self.integrator.overlay(&top.integrator),
            classify: self.classify.overlay(&top.classify),
            run: self.run.overlay(&top.run),
            model: self.model.overlay(&top.model),
            horseshoe: self.horseshoe.overlay(&top.horseshoe),
            sweep: top.sweep.clone().or_else(|| self.sweep.clone()),
            route: top.route.clone().or_else(|| self.route.clone()),
        }
    }
}
