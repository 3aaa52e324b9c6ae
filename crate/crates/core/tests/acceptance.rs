//! One line per acceptance criterion; exits non-zero if any fails.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hetforce::experiments::{route_report, RouteSpec};
use hetforce::horseshoe::{build_domain, conley_moser_report, entropy_lower_bound, GridSizes, ShadowContext, Word};
use hetforce::integrator::IntegratorConfig;
use hetforce::model::{
    composed_return_map, d_return_map, omega0, return_map, stretch_measure, AnnulusPoint, MapConstants, ReturnMapModel, XiProfile,
};
use hetforce::section::{
    classify_attractor, invariant_circle_fit, seeded_initial_state, strobe_map, strobe_orbit, ClassifyOptions, OrbitClass, CIRCLE_MODES,
};
use hetforce::system::{
    check_kappa_equivariance, eval_rhs, find_equilibria, kappa, node_data, spatial_distance, EquilibriumKind, NodeRates, StabilityClass,
};
use hetforce::{State4, SystemParams};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn random_states(n: usize, seed: u64) -> Vec<State4> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            State4::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(0.0..TAU))
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let pts = random_states(1000, 1);
    let mut worst = 0.0f64;
    for nu in [0.0, 0.1, 0.5] {
        for mu in [0.0, 0.1, 0.5] {
            let p = SystemParams::standard(nu, mu, 1.0).unwrap();
            worst = worst.max(check_kappa_equivariance(&p, &pts).max_residual);
        }
    }
    let mut plane_exact = true;
    for nu in [0.0, 0.1, 0.5] {
        for mu in [0.0, 0.1, 0.5] {
            let p = SystemParams::standard(nu, mu, 1.0).unwrap();
            for s in &pts {
                let on_plane = State4::new(s.x[0], 0.0, s.x[2], s.theta());
                plane_exact &= eval_rhs(&p, &on_plane)[1] == 0.0;
            }
        }
    }
    let p0 = SystemParams::standard(0.0, 0.0, 1.0).unwrap();
    let mut sphere = 0.0f64;
    for s in &pts {
        let f = eval_rhs(&p0, s);
        let r2 = s.r2();
        let lhs = 2.0 * (s.x[0] * f[0] + s.x[1] * f[1] + s.x[2] * f[2]);
        let rhs = 2.0 * r2 * (1.0 - r2);
        sphere = sphere.max((lhs - rhs).abs() / rhs.abs().max(1.0));
    }
    outcome(
        worst < 1e-12 && plane_exact && sphere < 1e-12,
        format!("kappa residual {worst:.1e}, plane exact {plane_exact}, sphere identity {sphere:.1e}"),
    )
}

fn criterion_2() -> Outcome {
    let p = SystemParams::new(1.0, -0.1, 0.0, 0.0, 1.0).unwrap();
    let eqs = match find_equilibria(&p) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("solver failed: {e}")),
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut expected: Vec<([f64; 3], EquilibriumKind)> =
        vec![([0.0, 0.0, 0.0], EquilibriumKind::Origin), ([0.0, 0.0, 1.0], EquilibriumKind::V), ([0.0, 0.0, -1.0], EquilibriumKind::W)];
    for a in [-h, h] {
        for b in [-h, h] {
            expected.push(([a, b, 0.0], EquilibriumKind::Focus));
        }
    }
    let mut all_found = eqs.len() == expected.len();
    let mut worst_res = 0.0f64;
    let mut foci_ok = true;
    for (x, kind) in &expected {
        match eqs.iter().find(|e| spatial_distance(&e.location.x, x) < 1e-9) {
            Some(e) => {
                all_found &= e.kind == *kind;
                let f = eval_rhs(&p, &e.location);
                worst_res = worst_res.max((f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt());
                if *kind == EquilibriumKind::Focus {
                    foci_ok &= e.stability_class == StabilityClass::Focus
                        && e.eigenvalues.iter().filter(|z| z.im.abs() > 1e-9 && z.re > 0.0).count() == 2;
                }
                if *kind == EquilibriumKind::Origin {
                    foci_ok &= e.stability_class == StabilityClass::Source;
                }
            }
            None => all_found = false,
        }
    }
    let rates = node_data(&p).unwrap_or(NodeRates { c_v: f64::NAN, e_v: f64::NAN, c_w: f64::NAN, e_w: f64::NAN });
    let rate_err = [(rates.c_v, 1.1), (rates.e_v, 0.9), (rates.c_w, 1.1), (rates.e_w, 0.9)]
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        all_found && worst_res < 1e-12 && foci_ok && rate_err < 1e-10,
        format!(
            "{} equilibria, all expected found {all_found}, max residual {worst_res:.1e}, classes ok {foci_ok}, rate error {rate_err:.1e}",
            eqs.len()
        ),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut printed_gap = 0.0f64;
    let mut n = 0;
    let mut rejected = 0;
    for (omega, count) in [(1.0, 3334), (20.0, 3333), (65.0, 3333)] {
        let composed = ReturnMapModel::flagship(omega).with_constants(MapConstants::Composed);
        let printed = ReturnMapModel::flagship(omega);
        let mut done = 0;
        while done < count {
            let pt = AnnulusPoint::new(rng.gen_range(0.0..TAU), 1.0 + composed.eps_v * rng.gen_range(1e-9..1.0));
            // Valid: every factor map is defined along the way.
            let Ok(b) = composed_return_map(&composed, &pt, true) else {
                rejected += 1;
                continue;
            };
            let a = return_map(&composed, &pt, true).unwrap();
            done += 1;
            worst = worst.max(rel(a.phi, b.phi)).max(rel(a.r, b.r));
            let c = return_map(&printed, &pt, true).unwrap();
            printed_gap = printed_gap.max((c.phi - b.phi).abs());
            n += 1;
        }
    }
    outcome(
        n == 10_000 && worst < 1e-12,
        format!("{n} valid points ({rejected} outside the factor domains), max relative error {worst:.1e} (printed offset constants differ by up to {printed_gap:.3} rad)"),
    )
}

/// `sup ∂R₂/∂r`, `inf ∂R₁/∂φ` over window × radial range, plus the worst
/// Jacobian mismatch against central differences.
fn derivative_extrema(model: &ReturnMapModel, window: (f64, f64), r_range: (f64, f64), n: usize) -> (f64, f64, f64) {
    let (mut inf1, mut sup2, mut fd) = (f64::INFINITY, 0.0f64, 0.0f64);
    for i in 0..=n {
        for j in 0..=n {
            let phi = window.0 + (window.1 - window.0) * i as f64 / n as f64;
            let r = r_range.0 + (r_range.1 - r_range.0) * j as f64 / n as f64;
            let pt = AnnulusPoint::new(phi, r);
            let jac = d_return_map(model, &pt).unwrap();
            inf1 = inf1.min(jac[(0, 0)]);
            sup2 = sup2.max(jac[(1, 1)]);
            if i % 8 == 0 && j % 8 == 0 && i > 0 && i < n && j > 0 && j < n {
                let h = 1e-6;
                let m = |p: AnnulusPoint| return_map(model, &p, true).unwrap();
                let dphi = (m(AnnulusPoint::new(phi + h, r)), m(AnnulusPoint::new(phi - h, r)));
                let hr = h * (r - 1.0).max(1e-3);
                let dr = (m(AnnulusPoint::new(phi, r + hr)), m(AnnulusPoint::new(phi, r - hr)));
                let num = [
                    (dphi.0.phi - dphi.1.phi) / (2.0 * h),
                    (dr.0.phi - dr.1.phi) / (2.0 * hr),
                    (dphi.0.r - dphi.1.r) / (2.0 * h),
                    (dr.0.r - dr.1.r) / (2.0 * hr),
                ];
                let ana = [jac[(0, 0)], jac[(0, 1)], jac[(1, 0)], jac[(1, 1)]];
                let scale = ana.iter().map(|v| v.abs()).fold(0.0, f64::max);
                for k in 0..4 {
                    fd = fd.max((num[k] - ana[k]).abs() / scale);
                }
            }
        }
    }
    (inf1, sup2, fd)
}

fn radial_contraction_bound(model: &ReturnMapModel, xi_l: f64) -> f64 {
    model.delta() * model.eps_v / model.eps_w.powf(model.delta_w()) * (model.eps_w + xi_l).powf(model.delta() - 1.0)
}

fn criterion_4() -> Outcome {
    let flag = ReturnMapModel::flagship(65.0);
    let dom = build_domain(&flag).unwrap();
    let (inf1, sup2, fd) = derivative_extrema(&flag, dom.window(), (1.0, 1.0 + flag.eps_v), 256);
    let bound = radial_contraction_bound(&flag, flag.xi.value(dom.phi_l));
    // Contraction factor near the boundary of admissibility, where the bound is attained.
    let rates = NodeRates { c_v: 1.1, e_v: 0.9, c_w: 1.1, e_w: 0.9 };
    let edge = ReturnMapModel::new(rates, 0.0945, 0.1, 65.0, XiProfile::cosine(0.005, 0.5)).unwrap();
    let edom = build_domain(&edge).unwrap();
    let (inf1e, sup2e, fde) = derivative_extrema(&edge, edom.window(), (1.0, 1.0 + edge.eps_v), 256);
    let ebound = radial_contraction_bound(&edge, edge.xi.value(edom.phi_l));
    let gap = (sup2e - ebound).abs() / ebound;
    let ok = inf1 > 1.0 && sup2 < 1.0 && sup2 <= bound && inf1e > 1.0 && sup2e < 1.0 && gap < 0.05 && fd.max(fde) < 1e-6;
    outcome(
        ok,
        format!(
            "flagship: inf dR1/dphi {inf1:.3}, sup dR2/dr {sup2:.4} <= bound {bound:.4}; boundary model: sup {sup2e:.4} vs bound {ebound:.4} ({:.1}%); FD mismatch {:.1e}",
            100.0 * gap,
            fd.max(fde)
        ),
    )
}

fn criterion_5() -> Outcome {
    let model = ReturnMapModel::flagship(65.0);
    let dom = build_domain(&model).unwrap();
    let w = dom.window();
    let w0 = omega0(&model, w).unwrap();
    let at = model.with_omega(w0).unwrap();
    let need = TAU + (w.1 - w.0);
    let (mut slack, mut agree) = (f64::INFINITY, 0.0f64);
    for k in 1..=100 {
        let r = 1.0 + model.eps_v * k as f64 / 100.0;
        let d = stretch_measure(&model, r, w, w0).unwrap();
        slack = slack.min(d - need);
        let a = return_map(&at, &AnnulusPoint::new(w.0, r), true).unwrap();
        let b = return_map(&at, &AnnulusPoint::new(w.1, r), true).unwrap();
        agree = agree.max(((b.phi - a.phi) - d).abs());
    }
    outcome(slack >= 0.0 && agree < 1e-10, format!("omega0 {w0:.6}, min(Delta - 2pi - width) {slack:.4}, formula vs images {agree:.1e}"))
}

/// Horseshoe verification, full census at depth 10 and the strip and census CSVs.
fn horseshoe_run() -> Result<(Outcome, String), String> {
    let model = ReturnMapModel::flagship(65.0);
    let dom = build_domain(&model).map_err(|e| e.to_string())?;
    let w0 = omega0(&model, dom.window()).map_err(|e| e.to_string())?;
    let report = conley_moser_report(&model, &dom, 65.0, GridSizes::default()).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    report.write_strips_csv(&mut csv).map_err(|e| e.to_string())?;
    let mut csv = String::from_utf8(csv).unwrap();
    if !report.passed() {
        return Ok((outcome(false, format!("omega {} >= omega0 {w0:.4} but report failed:\n{}", 65.0, report.to_text())), csv));
    }
    let ctx = ShadowContext::new(&model, &report).map_err(|e| e.to_string())?;
    let census = ctx.enumerate(10).map_err(|e| e.to_string())?;
    let ms = ctx.windings();
    let all = Word::all(10).map_err(|e| e.to_string())?;
    let mut realized = 0;
    csv.push_str("word,phi0,r0,width\n");
    for (res, w) in census.results.iter().zip(all.iter()) {
        let winding_ok = res.windings.iter().zip(w.symbols()).all(|(m, s)| *m == ms[(*s - 1) as usize]);
        let replay = ctx.verify(&res.word, &res.phi0).is_ok();
        if res.word == *w && winding_ok && replay {
            realized += 1;
        }
        let _ = writeln!(csv, "{},{},{:.17e},{:.6e}", res.word, res.phi0, res.r0, res.interval_width);
    }
    let h = entropy_lower_bound(&report);
    let ok = report.refinement_stable && realized == 1024 && census.results.len() == 1024 && (h - 2f64.ln()).abs() < 1e-15;
    Ok((
        outcome(
            ok,
            format!(
                "omega 65 >= omega0 {w0:.4}, P1-P3 pass, refinement stable {}, {realized}/1024 words shadowed, entropy >= {h:.6}",
                report.refinement_stable
            ),
        ),
        csv,
    ))
}

fn ode_circle(p: &SystemParams, s0: &State4, cfg: &IntegratorConfig) -> Result<(hetforce::section::CircleFit, Vec<State4>), String> {
    let s = strobe_map(p, s0, 1000, cfg).map_err(|e| e.to_string())?;
    let orbit = strobe_orbit(p, &s, 2000, cfg).map_err(|e| e.to_string())?;
    let fit = invariant_circle_fit(&orbit, CIRCLE_MODES).map_err(|e| e.to_string())?;
    Ok((fit, orbit))
}

fn tori_run() -> Result<(Outcome, String), String> {
    let opts = ClassifyOptions::default();
    let cfg = opts.integrator;
    let mut csv = String::from("nu,mu,omega,seed,lambda1,lambda2,lambda3,rho,class,residual,saddle_distance\n");
    let seed = 1;
    let s_plus = seeded_initial_state(seed, 0.0);
    let s_minus = kappa(&s_plus);
    let mut fails = Vec::new();
    let mut distances = Vec::new();
    let mut headline = String::new();
    for nu in [0.1, 0.05, 0.02, 0.01] {
        let p = SystemParams::standard(nu, 0.0, 1.0).map_err(|e| e.to_string())?;
        let eqs = find_equilibria(&p).map_err(|e| e.to_string())?;
        let saddles: Vec<[f64; 3]> =
            eqs.iter().filter(|e| matches!(e.kind, EquilibriumKind::V | EquilibriumKind::W)).map(|e| e.location.x).collect();
        if saddles.len() != 2 {
            return Err(format!("nu = {nu}: expected two saddles, found {}", saddles.len()));
        }
        let mut d_nu = [0.0; 2];
        for (k, s0) in [s_plus, s_minus].iter().enumerate() {
            let sum = classify_attractor(&p, s0, &opts);
            let (fit, orbit) = ode_circle(&p, s0, &cfg)?;
            let d = saddles.iter().map(|v| fit.distance_to(v)).fold(f64::INFINITY, f64::min);
            d_nu[k] = d;
            let _ = writeln!(csv, "{},{:.6e},{:.12e}", sum.csv_row(&p, seed), fit.residual, d);
            let locked = matches!(sum.classification, OrbitClass::Fixed | OrbitClass::Periodic(_));
            let circle = sum.classification == OrbitClass::QuasiperiodicTorus || locked;
            let lyap_ok = sum.lyapunov[0].abs() <= 3.0 * sum.lyapunov_se[0] || sum.lyapunov[0] < 0.0;
            let side = if k == 0 { 1.0 } else { -1.0 };
            let hemisphere = orbit.iter().all(|s| side * s.x[1] > 0.0);
            if nu == 0.1 && !(circle && fit.residual < 1e-4 && lyap_ok && hemisphere) {
                fails.push(format!(
                    "nu 0.1 side {side}: class {}, residual {:.1e}, lambda {:.1e} +- {:.1e}, hemisphere {hemisphere}",
                    sum.classification, fit.residual, sum.lyapunov[0], sum.lyapunov_se[0]
                ));
            }
            if nu == 0.1 && k == 0 {
                headline = format!("class {}, residual {:.1e}, lambda1 {:.1e} +- {:.1e}", sum.classification, fit.residual, sum.lyapunov[0], sum.lyapunov_se[0]);
            }
        }
        if nu == 0.1 {
            let (a, _) = ode_circle(&p, &s_plus, &cfg)?;
            let (b, _) = ode_circle(&p, &s_minus, &cfg)?;
            let mirrored: Vec<[f64; 3]> = a.dense(512).iter().map(|x| [x[0], -x[1], x[2]]).collect();
            let dev = b.max_deviation(&mirrored);
            if dev >= 1e-4 {
                fails.push(format!("kappa image deviates from the mirror circle by {dev:.1e}"));
            }
            headline.push_str(&format!(", kappa mirror deviation {dev:.1e}"));
        }
        distances.push(d_nu);
    }
    for side in 0..2 {
        if !distances.windows(2).all(|w| w[1][side] < w[0][side]) {
            fails.push(format!("saddle distances not decreasing on side {side}: {:?}", distances.iter().map(|d| d[side]).collect::<Vec<_>>()));
        }
    }
    let ds: Vec<String> = distances.iter().map(|d| format!("{:.4}", d[0])).collect();
    let detail = if fails.is_empty() {
        format!("{headline}; saddle distance over nu: [{}]", ds.join(", "))
    } else {
        fails.join("; ")
    };
    Ok((outcome(fails.is_empty(), detail), csv))
}

fn route_run() -> Result<(Outcome, String), String> {
    let spec = RouteSpec::default();
    let report = route_report(&spec, None).map_err(|e| e.to_string())?;
    let rows = &report.rows;
    let first = rows.first().unwrap();
    let last = rows.last().unwrap();
    let bracket_ok = report.bracket.map(|(lo, hi)| lo < hi && hi / lo - 1.0 <= 0.01).unwrap_or(false);
    let chaotic: Vec<_> = rows.iter().filter(|r| r.class == hetforce::model::ModelClass::Chaotic).collect();
    let chaos_ok = !chaotic.is_empty()
        && last.class == hetforce::model::ModelClass::Chaotic
        && chaotic.iter().all(|r| r.lambda1 > 3.0 * r.lambda1_se && r.lambda1 > 1e-3);
    let ok = first.folds == 0 && last.folds >= 2 && bracket_ok && chaos_ok;
    let (lo, hi) = report.bracket.unwrap_or((f64::NAN, f64::NAN));
    Ok((
        outcome(
            ok,
            format!(
                "folds {} at omega {} and {} at omega {}, first fold in [{lo:.5}, {hi:.5}], {} chaotic speeds, top lambda {:.3} +- {:.3}",
                first.folds,
                first.omega,
                last.folds,
                last.omega,
                chaotic.len(),
                last.lambda1,
                last.lambda1_se
            ),
        ),
        report.summary_csv(),
    ))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome, Duration, Duration)> = Vec::new();
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed())
    };
    type Simple = (usize, &'static str, fn() -> Outcome, u64);
    let simple: [Simple; 5] = [
        (1, "symmetry and invariance", criterion_1, 1),
        (2, "equilibria", criterion_2, 1),
        (3, "closed form equals composition", criterion_3, 1),
        (4, "stretching and contraction bounds", criterion_4, 5),
        (5, "speed threshold", criterion_5, 1),
    ];
    for (id, name, f, limit) in simple {
        let (o, dt) = timed(&f);
        results.push((id, name, o, dt, Duration::from_secs(limit)));
    }
    let mut csvs: Vec<Option<String>> = Vec::new();
    type Run = fn() -> Result<(Outcome, String), String>;
    let heavy: [(usize, &str, Run, u64); 3] = [
        (6, "horseshoe certification", horseshoe_run, 120),
        (7, "symmetric invariant tori", tori_run, 300),
        (8, "torus breakdown route", route_run, 900),
    ];
    for (id, name, f, limit) in heavy {
        let t = Instant::now();
        let (o, csv) = match f() {
            Ok((o, csv)) => (o, Some(csv)),
            Err(e) => (outcome(false, format!("error: {e}")), None),
        };
        results.push((id, name, o, t.elapsed(), Duration::from_secs(limit)));
        csvs.push(csv);
    }
    let t = Instant::now();
    let mut same = Vec::new();
    for ((_, name, f, _), first) in heavy.iter().zip(csvs.iter()) {
        let again = f().ok().map(|(_, c)| c);
        same.push(match (first, again) {
            (Some(a), Some(b)) => (name, a.len(), a == &b),
            _ => (name, 0, false),
        });
    }
    let det_ok = same.iter().all(|s| s.2);
    let detail = same.iter().map(|(n, len, eq)| format!("{n}: {len} bytes {}", if *eq { "identical" } else { "differ" })).collect::<Vec<_>>().join(", ");
    results.push((9, "determinism", outcome(det_ok, detail), t.elapsed(), Duration::from_secs(1035)));

    let mut all_ok = true;
    for (id, name, o, dt, limit) in &results {
        let ok = o.ok && dt <= limit;
        all_ok &= ok;
        let budget = if dt <= limit { String::new() } else { format!(" [over budget {}s]", limit.as_secs()) };
        println!("criterion {id} ({name}): {} in {:.2}s{budget} - {}", if ok { "PASS" } else { "FAIL" }, dt.as_secs_f64(), o.detail);
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
