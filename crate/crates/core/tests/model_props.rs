use std::f64::consts::TAU;

use proptest::prelude::*;

use hetforce::horseshoe::build_domain;
use hetforce::model::{
    check_decreasing, composed_return_map, d_return_map, model_orbit, omega0, return_map, stretch_measure, AnnulusPoint, MapConstants,
    ReturnMapModel, XiProfile,
};
use hetforce::real::{Mp, Real};
use hetforce::system::NodeRates;
use hetforce::Error;

const FLAGSHIP_RATES: NodeRates = NodeRates { c_v: 1.1, e_v: 0.9, c_w: 1.1, e_w: 0.9 };

/// Width of the flagship's invariant annulus, where the map is defined for every angle.
fn annulus() -> f64 {
    ReturnMapModel::flagship(1.0).invariant_annulus_width().unwrap()
}

fn window() -> (f64, f64) {
    build_domain(&ReturnMapModel::flagship(65.0)).unwrap().window()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composition_matches_closed_form(omega in 0.5f64..80.0, phi in 0.0f64..TAU, u in 1e-6f64..1.0) {
        let m = ReturnMapModel::flagship(omega).with_constants(MapConstants::Composed);
        // Landing values s whose image under the W passage stays inside the V block.
        let s_max = m.eps_w * (m.eps_v / m.eps_w).powf(1.0 / m.delta_w());
        let (lo, hi) = (m.xi.value(phi), s_max.min(m.xi.value(phi) + m.eps_v));
        prop_assume!(hi > lo);
        let pt = AnnulusPoint::new(phi, 1.0 + (hi - lo) * u);
        let b = composed_return_map(&m, &pt, true).unwrap();
        let a = return_map(&m, &pt, true).unwrap();
        prop_assert!((a.phi - b.phi).abs() <= 1e-12 * a.phi.abs().max(1.0));
        prop_assert!((a.r - b.r).abs() <= 1e-12 * a.r);
    }

    #[test]
    fn constant_choice_only_shifts_angle_and_gain(omega in 0.5f64..80.0, phi in 0.0f64..TAU, t in 1e-9f64..1.0) {
        let p = ReturnMapModel::flagship(omega);
        let c = p.clone().with_constants(MapConstants::Composed);
        let pt = AnnulusPoint::new(phi, 1.0 + annulus() * t);
        let (a, b) = (return_map(&p, &pt, true).unwrap(), return_map(&c, &pt, true).unwrap());
        let shift = omega * (c.k_eps() - p.k_eps());
        prop_assert!(((a.phi - b.phi) - shift).abs() < 1e-9 * shift.abs().max(1.0));
        prop_assert!((((a.r - 1.0) / (b.r - 1.0)) - p.gain() / c.gain()).abs() < 1e-9);
    }

    #[test]
    fn multiprecision_agrees_with_f64(omega in 0.5f64..80.0, phi in 0.0f64..TAU, t in 1e-6f64..1.0) {
        let m = ReturnMapModel::flagship(omega);
        let r = 1.0 + annulus() * t;
        let a = return_map(&m, &AnnulusPoint::new(phi, r), true).unwrap();
        let b = return_map(&m, &AnnulusPoint::new(Mp::from_f64(phi), Mp::from_f64(r)), true).unwrap();
        prop_assert!((a.phi - b.phi.to_f64()).abs() < 1e-10 * a.phi.abs().max(1.0));
        prop_assert!((a.r - b.r.to_f64()).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_differences(omega in 0.5f64..80.0, phi in 0.1f64..6.1, t in 0.05f64..0.95) {
        let m = ReturnMapModel::flagship(omega);
        let r = 1.0 + annulus() * t;
        let j = d_return_map(&m, &AnnulusPoint::new(phi, r)).unwrap();
        let f = |p: f64, q: f64| return_map(&m, &AnnulusPoint::new(p, q), true).unwrap();
        let (h, hr) = (1e-6, 1e-8);
        let num = [
            (f(phi + h, r).phi - f(phi - h, r).phi) / (2.0 * h),
            (f(phi, r + hr).phi - f(phi, r - hr).phi) / (2.0 * hr),
            (f(phi + h, r).r - f(phi - h, r).r) / (2.0 * h),
            (f(phi, r + hr).r - f(phi, r - hr).r) / (2.0 * hr),
        ];
        let ana = [j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]];
        let scale = ana.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..4 {
            prop_assert!((num[k] - ana[k]).abs() < 1e-5 * scale, "entry {}: {} vs {}", k, num[k], ana[k]);
        }
    }

    #[test]
    fn angular_stretching_on_the_window(omega in 65.0f64..200.0, u in 0.0f64..1.0, t in 0.0f64..1.0) {
        let m = ReturnMapModel::flagship(omega);
        let w = window();
        let pt = AnnulusPoint::new(w.0 + u * (w.1 - w.0), 1.0 + m.eps_v * t);
        let j = d_return_map(&m, &pt).unwrap();
        prop_assert!(j[(0, 0)] > 1.0);
        prop_assert!(j[(1, 1)] > 0.0 && j[(1, 1)] < 1.0);
    }

    #[test]
    fn stretch_exceeds_a_full_turn_above_threshold(factor in 1.0f64..4.0, t in 0.01f64..1.0) {
        let m = ReturnMapModel::flagship(65.0);
        let w = window();
        let w0 = omega0(&m, w).unwrap();
        let d = stretch_measure(&m, 1.0 + m.eps_v * t, w, factor * w0).unwrap();
        prop_assert!(d >= TAU + (w.1 - w.0) - 1e-9);
    }

    #[test]
    fn xi_stays_in_its_range(nu in 0.001f64..0.06, mu in 0.0f64..1.0, phi in 0.0f64..TAU) {
        let xi = XiProfile::cosine(nu, mu);
        let v = xi.value(phi);
        prop_assert!(v >= nu * (1.0 - mu / (1.0 + mu)) - 1e-15);
        prop_assert!(v <= nu * (1.0 + mu / (1.0 + mu)) + 1e-15);
    }

    #[test]
    fn invariant_annulus_is_mapped_into_itself(omega in 1.0f64..80.0, phi in 0.0f64..TAU, u in 0.0f64..=1.0) {
        let m = ReturnMapModel::flagship(omega);
        let t = m.invariant_annulus_width().unwrap();
        let img = return_map(&m, &AnnulusPoint::new(phi, 1.0 + t * u), false).unwrap();
        prop_assert!(img.r >= 1.0 && img.r <= 1.0 + t);
        prop_assert!((0.0..TAU).contains(&img.phi));
    }
}

#[test]
fn admissibility_is_enforced() {
    let xi = XiProfile::cosine(0.05, 0.5);
    let weak = NodeRates { c_v: 0.9, e_v: 1.1, c_w: 0.9, e_w: 1.1 };
    assert!(matches!(ReturnMapModel::new(weak, 0.04, 0.1, 1.0, xi.clone()), Err(Error::Invalid(_))));
    assert!(ReturnMapModel::new(FLAGSHIP_RATES, 0.2, 0.1, 1.0, xi.clone()).is_err());
    assert!(ReturnMapModel::new(FLAGSHIP_RATES, 0.04, 0.1, -1.0, xi.clone()).is_err());
    assert!(ReturnMapModel::new(FLAGSHIP_RATES, 0.04, 0.1, 1.0, XiProfile::cosine(0.2, 0.5)).is_err());
    assert!(ReturnMapModel::flagship(1.0).with_omega(f64::NAN).is_err());
}

#[test]
fn well_definedness() {
    let m = ReturnMapModel::flagship(65.0);
    assert!(!m.globally_well_defined());
    let t = m.invariant_annulus_width().unwrap();
    assert!((t - (m.eps_w - m.xi.range().1)).abs() < 1e-12);
    let small = ReturnMapModel::new(FLAGSHIP_RATES, 0.04, 0.1, 65.0, XiProfile::cosine(0.02, 0.5)).unwrap();
    assert!(small.globally_well_defined());
    assert_eq!(small.invariant_annulus_width(), Some(small.eps_v));
}

#[test]
fn out_of_range_radii_are_rejected() {
    let m = ReturnMapModel::flagship(10.0);
    assert!(return_map(&m, &AnnulusPoint::new(0.0, 1.0 + 2.0 * m.eps_v), true).is_err());
    assert!(return_map(&m, &AnnulusPoint::new(0.0, 0.9), true).is_err());
    assert!(stretch_measure(&m, 1.0, window(), 65.0).is_err());
}

#[test]
fn threshold_needs_a_decreasing_window() {
    let m = ReturnMapModel::flagship(65.0);
    let w = window();
    assert!(check_decreasing(&m.xi, w).is_ok());
    assert!(matches!(omega0(&m, (w.1, w.1 + 1.0)), Err(Error::NotMonotone { .. })));
    let w0 = omega0(&m, w).unwrap();
    // The threshold increases as the window shrinks.
    let mid = 0.5 * (w.0 + w.1);
    assert!(omega0(&m, (w.0, mid)).unwrap() > w0);
}

#[test]
fn stretch_decreases_with_radius() {
    let m = ReturnMapModel::flagship(65.0);
    let w = window();
    let w0 = omega0(&m, w).unwrap();
    let (xl, xr) = (m.xi.value(w.0), m.xi.value(w.1));
    assert!((w0 * m.big_k() * ((1.0 + xl) / (1.0 + xr)).ln() - TAU).abs() < 1e-12);
    let d: Vec<f64> = (1..=20).map(|k| stretch_measure(&m, 1.0 + m.eps_v * k as f64 / 20.0, w, w0).unwrap()).collect();
    assert!(d.windows(2).all(|p| p[1] < p[0]));
    assert!(d[19] > TAU + (w.1 - w.0));
}

#[test]
fn constant_profile_has_no_window() {
    let m = ReturnMapModel::new(FLAGSHIP_RATES, 0.04, 0.1, 65.0, XiProfile::cosine(0.05, 0.0)).unwrap();
    assert!(matches!(build_domain(&m), Err(Error::NoWindow(_))));
}

#[test]
fn cosine_profile_is_simple_morse() {
    let xi = XiProfile::cosine(0.05, 0.5);
    assert!(xi.is_simple_morse());
    let cps = xi.critical_points();
    assert!(cps.iter().any(|(p, max)| *max && p.abs() < 1e-9));
    assert!(cps.iter().any(|(p, max)| !*max && (p - std::f64::consts::PI).abs() < 1e-9));
}

#[test]
fn orbit_length_and_range() {
    let m = ReturnMapModel::flagship(3.0);
    let orbit = model_orbit(&m, AnnulusPoint::new(1.0, 1.02), 200).unwrap();
    assert_eq!(orbit.len(), 201);
    let t = m.invariant_annulus_width().unwrap();
    assert!(orbit[1..].iter().all(|p| p.r >= 1.0 && p.r <= 1.0 + t));
    // Lifted angles decrease at every step.
    assert!(orbit.windows(2).all(|w| w[1].phi < w[0].phi));
}

#[test]
fn model_roundtrips_through_toml() {
    let m = ReturnMapModel::flagship(12.0).with_constants(MapConstants::Composed);
    let text = toml::to_string(&m).unwrap();
    let back: ReturnMapModel = toml::from_str(&text).unwrap();
    assert_eq!(back, m);
    let bad = text.replace("eps_v = 0.04", "eps_v = 0.5");
    assert!(toml::from_str::<ReturnMapModel>(&bad).is_err());
}
