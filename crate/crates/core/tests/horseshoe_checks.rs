use std::sync::OnceLock;

use proptest::prelude::*;

use hetforce::horseshoe::{
    build_domain, conley_moser_report, entropy_lower_bound, symbol_fixed_point, verify_conley_moser, ConleyMoserReport, GridSizes,
    ShadowContext, StripKind, StripSpec, Word, MAX_WORD_LEN,
};
use hetforce::model::{return_map, AnnulusPoint, ReturnMapModel};
use hetforce::real::Real;
use hetforce::{Error, ErrorClass};

fn flagship() -> &'static (ReturnMapModel, ConleyMoserReport) {
    static CELL: OnceLock<(ReturnMapModel, ConleyMoserReport)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = ReturnMapModel::flagship(65.0);
        let d = build_domain(&m).unwrap();
        let r = conley_moser_report(&m, &d, 65.0, GridSizes::default()).unwrap();
        (m, r)
    })
}

fn ctx() -> &'static ShadowContext {
    static CELL: OnceLock<ShadowContext> = OnceLock::new();
    CELL.get_or_init(|| {
        let (m, r) = flagship();
        ShadowContext::new(m, r).unwrap()
    })
}

#[test]
fn flagship_report_passes() {
    let (_, r) = flagship();
    assert!(r.passed(), "{}", r.to_text());
    assert!(r.refinement_stable);
    assert!(r.omega >= r.omega0);
    assert_eq!(r.symbols(), 2);
    assert_eq!(r.horizontal.len(), 2);
    assert!(r.windings.is_some());
    assert!(r.lambda_v < 1.0 && r.lambda_h < 1.0);
    assert!(r.mu_v * r.mu_h < 1.0);
    assert!(r.crossing_margin > 0.0);
    assert!((entropy_lower_bound(r) - 2f64.ln()).abs() < 1e-15);
    assert!(r.failure().is_none());
    assert!(r.to_text().contains("passed = true"));
}

#[test]
fn contraction_rate_tracks_the_radial_derivative() {
    let (_, r) = flagship();
    assert!((r.lambda_h - r.sup_dr2_dr).abs() <= 0.05 * r.sup_dr2_dr);
    assert!(r.inf_dr1_dphi > 1.0 && r.sup_dr2_dr < 1.0);
}

#[test]
fn refinement_keeps_the_verdict() {
    let (m, r) = flagship();
    let fine = conley_moser_report(m, &r.domain, r.omega, r.grid.doubled()).unwrap();
    assert_eq!(fine.passed(), r.passed());
    assert_eq!(fine.windings, r.windings);
    assert!((fine.lambda_h - r.lambda_h).abs() < 0.01 * r.lambda_h);
    assert!((fine.inf_dr1_dphi - r.inf_dr1_dphi).abs() < 0.05 * r.inf_dr1_dphi);
}

#[test]
fn strip_geometry() {
    let (_, r) = flagship();
    for (j, v) in r.vertical.iter().enumerate() {
        assert_eq!(v.kind, StripKind::Vertical);
        let (a, b) = r.domain.windows[j];
        for k in 0..v.abscissa.len() {
            assert!(v.lower[k] < v.upper[k]);
            assert!(v.lower[k] >= a - 1e-12 && v.upper[k] <= b + 1e-12);
            assert!(v.abscissa[k] >= r.band.0 - 1e-12 && v.abscissa[k] <= r.band.1 + 1e-12);
        }
        assert!(v.sampled_lipschitz() * 2.0 <= v.lipschitz * (1.0 + 1e-12));
        assert!(v.lipschitz * r.mu_h < 1.0);
    }
    for h in &r.horizontal {
        assert_eq!(h.kind, StripKind::Horizontal);
        assert!(h.lower.iter().zip(&h.upper).all(|(l, u)| l < u));
        assert!(h.lower.iter().all(|v| *v >= r.band.0 - 1e-12) && h.upper.iter().all(|v| *v <= r.band.1 + 1e-12));
        assert!(h.abscissa[0] <= r.domain.phi_l + 1e-12 && *h.abscissa.last().unwrap() >= r.domain.phi_r - 1e-12);
    }
    // Disjoint horizontal strips.
    let (h1, h2) = (&r.horizontal[0], &r.horizontal[1]);
    let apart = |phi: f64| h1.upper_at(phi) < h2.lower_at(phi) || h2.upper_at(phi) < h1.lower_at(phi);
    assert!((0..=64).all(|k| apart(r.domain.phi_l + (r.domain.phi_r - r.domain.phi_l) * k as f64 / 64.0)));
}

#[test]
fn strips_csv_layout() {
    let (_, r) = flagship();
    let mut buf = Vec::new();
    r.write_strips_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("strip,kind,abscissa,lower,upper"));
    let rows: usize = r.vertical.iter().chain(&r.horizontal).map(|s| s.abscissa.len()).sum();
    assert_eq!(lines.count(), rows);
}

#[test]
fn strip_constructor_rejects_bad_samples() {
    let x = vec![0.0, 1.0, 2.0];
    assert!(StripSpec::from_samples(StripKind::Vertical, x.clone(), vec![0.0; 3], vec![1.0; 2]).is_err());
    assert!(StripSpec::from_samples(StripKind::Vertical, vec![0.0, 0.0, 1.0], vec![0.0; 3], vec![1.0; 3]).is_err());
    let crossed = StripSpec::from_samples(StripKind::Horizontal, x.clone(), vec![0.0, 0.5, 0.0], vec![1.0, 0.4, 1.0]);
    assert!(matches!(crossed, Err(Error::VerificationFailed { .. })));
    let s = StripSpec::from_samples(StripKind::Horizontal, x, vec![0.0, 0.5, 1.0], vec![1.0, 1.5, 2.0]).unwrap();
    assert!((s.lower_at(0.5) - 0.25).abs() < 1e-15 && (s.upper_at(5.0) - 2.0).abs() < 1e-15);
    assert!(s.contains(1.0, 1.0, 0.0) && !s.contains(1.0, 1.6, 0.0));
    assert_eq!(s.interpolation_slack(), 0.0);
}

#[test]
fn fails_well_below_threshold() {
    let (m, r) = flagship();
    let low = r.omega0 / 10.0;
    let rep = conley_moser_report(m, &r.domain, low, GridSizes::default()).unwrap();
    assert!(!rep.passed());
    assert_eq!(entropy_lower_bound(&rep), 0.0);
    let err = verify_conley_moser(m, &r.domain, low).unwrap_err();
    assert!(matches!(err, Error::VerificationFailed { .. }));
    assert_eq!(err.class(), ErrorClass::Verification);
    assert!(ShadowContext::new(m, &rep).is_err());
}

#[test]
fn shadow_replays_its_itinerary() {
    let c = ctx();
    let ms = c.windings();
    for text in ["1", "2", "12", "2211", "1212121", "2112221121"] {
        let w: Word = text.parse().unwrap();
        let res = c.shadow(&w).unwrap();
        assert_eq!(res.iterates.len(), w.len() + 1);
        assert!(res.interval_width > 0.0);
        let expect: Vec<i64> = w.symbols().iter().map(|s| ms[(*s - 1) as usize]).collect();
        assert_eq!(res.windings, expect);
        let (iterates, windings) = c.verify(&w, &res.phi0).unwrap();
        assert_eq!(windings, expect);
        assert_eq!(iterates, res.iterates);
    }
}

#[test]
fn longer_words_refine_the_shadow() {
    let c = ctx();
    let tail: Word = "21121".parse().unwrap();
    for text in ["1211", "22121112"] {
        let w: Word = text.parse().unwrap();
        let a = c.shadow(&w).unwrap();
        let b = c.shadow(&w.extended(&tail).unwrap()).unwrap();
        let gap = (a.phi0.clone() - b.phi0.clone()).abs().to_f64();
        assert!(gap <= a.interval_width, "{text}: {gap} > {}", a.interval_width);
        assert!(b.interval_width < a.interval_width);
        if w.len() >= 8 {
            assert!(gap < 1e-8);
        }
    }
}

#[test]
fn census_counts_double() {
    let census = ctx().enumerate(6).unwrap();
    assert_eq!(census.counts, vec![2, 4, 8, 16, 32, 64]);
    assert_eq!(census.results.len(), 64);
    assert!((census.growth_rate() - 2f64.ln()).abs() < 1e-12);
    let words: Vec<Word> = census.results.iter().map(|r| r.word.clone()).collect();
    assert_eq!(words, Word::all(6).unwrap());
    assert!(ctx().enumerate(0).is_err() && ctx().enumerate(25).is_err());
}

#[test]
fn symbol_fixed_points() {
    let (m, r) = flagship();
    let model = m.with_omega(r.omega).unwrap();
    let ms = r.windings.unwrap();
    for (j, sym) in [1u8, 2].into_iter().enumerate() {
        let p = symbol_fixed_point(m, r, sym).unwrap();
        let (a, b) = r.domain.windows[j];
        assert!(p.phi >= a && p.phi <= b);
        let img = return_map(&model, &AnnulusPoint::new(p.phi, p.r), true).unwrap();
        assert!((img.phi - std::f64::consts::TAU * ms[j] as f64 - p.phi).abs() < 1e-9);
        assert!((img.r - p.r).abs() < 1e-12);
    }
    assert!(symbol_fixed_point(m, r, 3).is_err());
}

#[test]
fn word_validation() {
    assert!("".parse::<Word>().is_err());
    assert!("123".parse::<Word>().is_err());
    assert!("1".repeat(MAX_WORD_LEN + 1).parse::<Word>().is_err());
    assert!(Word::new(vec![0]).is_err());
    assert_eq!(" 12 ".parse::<Word>().unwrap().to_string(), "12");
    assert_eq!(Word::all(3).unwrap().len(), 8);
}

proptest! {
    #[test]
    fn word_text_roundtrip(sym in proptest::collection::vec(1u8..=2, 1..=MAX_WORD_LEN)) {
        let w = Word::new(sym.clone()).unwrap();
        let back: Word = w.to_string().parse().unwrap();
        prop_assert_eq!(back.symbols(), &sym[..]);
    }
}
