//! Acceptance gate for the solver. Each numbered test pins one guarantee
//! at a fixed tolerance and runtime budget; the set is the release
//! contract for this crate. Run with `--nocapture` to see the one-line
//! summaries.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use hrtmdg::analysis::{
    broken_l2_error_div_sigma, broken_l2_error_sigma, broken_l2_error_u, conservation_residuals,
    consistency_probe, edge_trace_error, energy_identity_probe, lift_flux, lifting_probe,
    project_solution, projected_error_ratio, stability_probe,
};
use hrtmdg::global::{relative_diff, solve, solve_monolithic, FieldSolution, GlobalOpts};
use hrtmdg::mesh::{generate_structured, Mesh};
use hrtmdg::mms::{self, compute_rate, run_convergence};
use hrtmdg::refelem::quad::quadrature_triangle;
use hrtmdg::refelem::{build_reference_element, ReferenceElement};
use hrtmdg::{c64, C64};

fn setup(n: usize, k: usize) -> (Arc<Mesh>, Arc<ReferenceElement>) {
    (
        Arc::new(generate_structured(n).unwrap()),
        Arc::new(build_reference_element(k).unwrap()),
    )
}

fn flat(blocks: &[DVector<C64>]) -> Vec<C64> {
    blocks.iter().flat_map(|v| v.iter().copied()).collect()
}

/// Prints the per-check summary line and enforces the runtime budget.
fn conclude(name: &str, t0: Instant, budget_s: f64, detail: String) {
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        dt < budget_s,
        "{name}: exceeded the {budget_s} s budget ({dt:.1} s)"
    );
    println!("acceptance {name}: pass in {dt:.2} s ({detail})");
}

#[test]
fn c01_condensed_solve_matches_uncondensed_system() {
    let t0 = Instant::now();
    let opts = GlobalOpts::default();
    let mut worst = 0.0f64;
    for &n in &[1usize, 2, 4, 8] {
        for k in 0..=1usize {
            let (mesh, re) = setup(n, k);
            for &kappa in &[1.0, 5.0] {
                let cases = [
                    mms::plane_wave(kappa, 0.3).unwrap(),
                    mms::sine_product(kappa).unwrap(),
                ];
                for case in &cases {
                    let (a, _) = solve(&mesh, &re, kappa, case, &opts).unwrap();
                    let (b, _) = solve_monolithic(&mesh, &re, kappa, case, &opts).unwrap();
                    for (field, da, db) in [
                        ("sigma", &a.sigma, &b.sigma),
                        ("u", &a.u, &b.u),
                        ("lambda", &a.lambda, &b.lambda),
                    ] {
                        let d = relative_diff(&flat(da), &flat(db));
                        worst = worst.max(d);
                        assert!(
                            d <= 1e-10,
                            "{} n {n} k {k} kappa {kappa}: {field} differs by {d:.3e}",
                            case.name
                        );
                    }
                }
            }
        }
    }
    conclude(
        "condensed vs uncondensed",
        t0,
        30.0,
        format!("worst relative field diff {worst:.3e}"),
    );
}

#[test]
fn c02_polynomial_solutions_are_reproduced_exactly() {
    let t0 = Instant::now();
    let kappa = 5.0;
    let opts = GlobalOpts::default();
    let mut worst = 0.0f64;

    // (case, degrees that must reproduce it exactly)
    let combos: Vec<(mms::ManufacturedCase, Vec<usize>)> = vec![
        (
            mms::custom(
                "constant",
                kappa,
                |_| c64(1.0, 0.0),
                |_| [c64(0.0, 0.0), c64(0.0, 0.0)],
                move |_| c64(kappa * kappa, 0.0),
            )
            .unwrap(),
            vec![0, 1, 2],
        ),
        (
            mms::custom(
                "linear",
                kappa,
                |p| c64(p[0], 0.0),
                |_| [c64(1.0, 0.0), c64(0.0, 0.0)],
                move |p| c64(kappa * kappa * p[0], 0.0),
            )
            .unwrap(),
            vec![1, 2],
        ),
    ];

    for (case, ks) in &combos {
        case.self_check().unwrap();
        for &k in ks {
            let (mesh, re) = setup(4, k);
            let (sol, _) = solve(&mesh, &re, kappa, case, &opts).unwrap();
            let degree = 2 * k + 8;
            let eu = broken_l2_error_u(&sol, &|x| case.u(x), degree);
            let es = broken_l2_error_sigma(&sol, &|x| case.sigma(x), degree);
            let el = edge_trace_error(&sol, &|x| case.u(x), degree);
            for (what, e) in [("u", eu), ("sigma", es), ("lambda", el)] {
                worst = worst.max(e);
                assert!(e <= 1e-10, "{} k {k}: {what} error {e:.3e}", case.name);
            }
        }
    }
    conclude(
        "polynomial reproduction",
        t0,
        5.0,
        format!("worst field error {worst:.3e}"),
    );
}

#[test]
fn c03_per_element_conservation_holds_at_data_scale() {
    let t0 = Instant::now();
    let kappa = 5.0;
    let case = mms::sine_product(kappa).unwrap();
    let mut detail = String::new();
    for k in 0..=1usize {
        let (mesh, re) = setup(16, k);
        let (sol, _) = solve(&mesh, &re, kappa, &case, &GlobalOpts::default()).unwrap();
        let (max_abs, _total, scale) = conservation_residuals(&sol, &case);
        assert!(
            max_abs <= 1e-10 * scale,
            "k {k}: residual {max_abs:.3e} vs scale {scale:.3e}"
        );
        detail.push_str(&format!("k{k} max {max_abs:.2e} / scale {scale:.2e}  "));
    }
    conclude("element conservation", t0, 10.0, detail.trim().into());
}

#[test]
fn c04_energy_identity_on_random_triples() {
    let t0 = Instant::now();
    let (mesh, re) = setup(4, 1);
    let report = energy_identity_probe(&mesh, &re, 5.0, 100, 42);
    let rel = report.residuals["max_relative_error"];
    assert!(rel <= 1e-12, "identity residual {rel:.3e}");
    assert!(report.pass, "probe residuals: {:?}", report.residuals);
    conclude(
        "energy identity",
        t0,
        5.0,
        format!("max relative residual {rel:.3e} over 100 triples"),
    );
}

#[test]
fn c05_error_equation_slots_reduce_to_flux_projection() {
    let t0 = Instant::now();
    let case = mms::plane_wave(5.0, 0.3).unwrap();
    let mut detail = String::new();
    for k in 0..=1usize {
        let (mesh, re) = setup(8, k);
        let report = consistency_probe(&case, &mesh, &re).unwrap();
        let scale = report.estimates["data_scale"];
        for key in ["v_slot_max", "mu_slot_max", "tau_slot_identity_max"] {
            let r = report.residuals[key];
            assert!(
                r <= 1e-10 * scale,
                "k {k} {key}: {r:.3e} vs tolerance {:.3e}",
                1e-10 * scale
            );
        }
        detail.push_str(&format!(
            "k{k} tau {:.2e}  ",
            report.residuals["tau_slot_identity_max"]
        ));
    }
    conclude("error-equation slots", t0, 20.0, detail.trim().into());
}

/// Worst per-cell ratio of the lifted flux norm to the lifting data norm,
/// with the data taken from an actual discrete solution. Must stay below
/// the extremal constant reported by the probe.
fn max_lifted_ratio(sol: &FieldSolution) -> f64 {
    let mesh = &sol.mesh;
    let re = &sol.re;
    let degree = 2 * re.k + 6;
    let rule = quadrature_triangle(degree);
    let h = mesh.mesh_size();
    let mut worst = 0.0f64;
    for cell in 0..mesh.n_cells() {
        let mu_fn = |edge_id: usize, t: f64| -> C64 {
            match mesh.interior_index(edge_id) {
                Some(ord) => sol.eval_lambda(ord, mesh.edge(edge_id).length, t),
                None => c64(0.0, 0.0),
            }
        };
        let tau = lift_flux(mesh, cell, re, &sol.u[cell], &mu_fn, degree).unwrap();
        let geo = mesh.cell_geometry(cell);
        let mut num = 0.0;
        let mut den = 0.0;
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let mut vx = c64(0.0, 0.0);
            let mut vy = c64(0.0, 0.0);
            for (phi, &c) in re.rt.iter().zip(tau.iter()) {
                let val = geo.piola(phi.eval(p[0], p[1]));
                vx += c * val[0];
                vy += c * val[1];
            }
            num += w * geo.det_b * (vx.norm_sqr() + vy.norm_sqr());
            let g = sol.eval_grad_u(cell, p);
            den += w * geo.det_b * (g[0].norm_sqr() + g[1].norm_sqr());
        }
        for ce in mesh.cell_edges(cell) {
            if let Some(ord) = mesh.interior_index(ce.edge) {
                den += h * sol.lambda[ord].iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        if den > 1e-24 {
            worst = worst.max((num / den).sqrt());
        }
    }
    worst
}

#[test]
fn c06_flux_lifting_moments_and_stable_constant() {
    let t0 = Instant::now();
    let (m16, re) = setup(16, 1);
    let (m32, _) = setup(32, 1);

    // the constant estimate is an extremal eigenvalue of a wavenumber-free
    // moment system, so runs labeled by different kappa samples differ only
    // in their random draw streams
    let r16_k1 = lifting_probe(&m16, &re, 42 + 1, 2).unwrap();
    let r16_k10 = lifting_probe(&m16, &re, 42 + 10, 2).unwrap();
    let r32 = lifting_probe(&m32, &re, 43, 2).unwrap();
    for r in [&r16_k1, &r16_k10, &r32] {
        let m = r.residuals["max_moment_residual"];
        assert!(m <= 1e-11, "moment residual {m:.3e}");
        assert!(r.pass, "probe residuals: {:?}", r.residuals);
    }
    let c16 = r16_k1.estimates["c_I"];
    let c16b = r16_k10.estimates["c_I"];
    let c32 = r32.estimates["c_I"];
    assert!(
        (c16 - c32).abs() / c16 < 0.10,
        "mesh drift: {c16:.6} vs {c32:.6}"
    );
    assert!(
        (c16 - c16b).abs() / c16 < 0.10,
        "kappa-sample drift: {c16:.6} vs {c16b:.6}"
    );

    // the bound must also hold for lifting data taken from solves at
    // well-separated wavenumbers
    let opts = GlobalOpts::default();
    let mut attained = Vec::new();
    for &kappa in &[1.0, 10.0] {
        let case = mms::plane_wave(kappa, 0.3).unwrap();
        let (sol, _) = solve(&m16, &re, kappa, &case, &opts).unwrap();
        let r = max_lifted_ratio(&sol);
        assert!(
            r <= c16 * (1.0 + 1e-8),
            "kappa {kappa}: attained ratio {r:.6} exceeds the constant {c16:.6}"
        );
        attained.push(r);
    }
    conclude(
        "flux lifting",
        t0,
        20.0,
        format!(
            "c_I {c16:.4} (n=32: {c32:.4}), attained {:.4}/{:.4} at kappa 1/10",
            attained[0], attained[1]
        ),
    );
}

#[test]
fn c07_interpolation_error_rates() {
    let t0 = Instant::now();
    let case = mms::plane_wave(5.0, 0.3).unwrap();
    let mut detail = String::new();
    for k in 0..=1usize {
        let re = Arc::new(build_reference_element(k).unwrap());
        let degree = 2 * k + 8;
        let (mut eu, mut es, mut ed, mut hs) = (vec![], vec![], vec![], vec![]);
        for &n in &[8usize, 16, 32, 64] {
            let mesh = Arc::new(generate_structured(n).unwrap());
            let proj = project_solution(&case, &mesh, &re, degree).unwrap();
            eu.push(broken_l2_error_u(&proj, &|x| case.u(x), degree));
            es.push(broken_l2_error_sigma(&proj, &|x| case.sigma(x), degree));
            // the flux divergence of this case is -i kappa u
            ed.push(broken_l2_error_div_sigma(
                &proj,
                &|x| c64(0.0, -case.kappa) * case.u(x),
                degree,
            ));
            hs.push(mesh.mesh_size());
        }
        let target = k as f64 + 1.0;
        let last = |errs: &[f64]| -> f64 {
            compute_rate(errs, &hs).unwrap().last().copied().unwrap().unwrap()
        };
        let (ru, rs, rd) = (last(&eu), last(&es), last(&ed));
        assert!((ru - target).abs() <= 0.15, "k {k}: scalar rate {ru:.3}");
        assert!((rs - target).abs() <= 0.15, "k {k}: flux rate {rs:.3}");
        assert!((rd - target).abs() <= 0.2, "k {k}: divergence rate {rd:.3}");
        detail.push_str(&format!("k{k}: u {ru:.2} sigma {rs:.2} div {rd:.2}  "));
    }
    conclude("interpolation rates", t0, 30.0, detail.trim().into());
}

#[test]
fn c08_solution_convergence_rates() {
    let t0 = Instant::now();
    let opts = GlobalOpts::default();
    let mut detail = String::new();
    for case_name in ["sine_product", "plane_wave"] {
        for k in 0..=1usize {
            let (table, err) = run_convergence(case_name, k, &[5.0], &[8, 16, 32, 64], &opts);
            assert!(err.is_none(), "{case_name} k {k}: {err:?}");
            let last = table.rows.last().unwrap();
            let ru = last.rate_u.expect("finest rate");
            let rs = last.rate_sigma.expect("finest rate");
            let target = k as f64 + 1.0;
            assert!(
                (ru - target).abs() <= 0.2,
                "{case_name} k {k}: scalar rate {ru:.3}"
            );
            assert!(
                (rs - target).abs() <= 0.2,
                "{case_name} k {k}: flux rate {rs:.3}"
            );
            detail.push_str(&format!("{case_name} k{k}: {ru:.2}/{rs:.2}  "));
        }
    }
    conclude("solution rates", t0, 180.0, detail.trim().into());
}

#[test]
fn c09_flux_error_constant_is_wavenumber_robust() {
    let t0 = Instant::now();
    let opts = GlobalOpts::default();
    let mut finest = Vec::new();
    let mut scaled: Vec<Vec<f64>> = Vec::new();
    for &kappa in &[5.0f64, 10.0, 20.0] {
        let base = (kappa as usize).max(8);
        let levels = [base, 2 * base, 4 * base];
        let (table, err) = run_convergence("plane_wave", 1, &[kappa], &levels, &opts);
        assert!(err.is_none(), "kappa {kappa}: {err:?}");
        let consts: Vec<f64> = table.rows.iter().map(|r| r.const_norm).collect();
        finest.push(*consts.last().unwrap());
        if kappa > 5.0 {
            scaled.push(consts);
        }
    }
    // n tracks the wavenumber for the two larger kappas, so each level pair
    // sits at identical kappa*h; the normalized constant must match there
    for lvl in 0..3 {
        let (a, b) = (scaled[0][lvl], scaled[1][lvl]);
        let ratio = (a / b).max(b / a);
        assert!(
            ratio < 3.0,
            "matched kappa*h level {lvl}: constants {a:.3e} vs {b:.3e}"
        );
    }
    let hi = finest.iter().cloned().fold(f64::MIN, f64::max);
    let lo = finest.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        hi / lo < 3.0,
        "finest-level constant spread {:.2} ({lo:.3e}..{hi:.3e})",
        hi / lo
    );
    let shown: Vec<String> = finest.iter().map(|c| format!("{c:.3e}")).collect();
    conclude(
        "wavenumber robustness",
        t0,
        300.0,
        format!("finest constants [{}], spread {:.2}", shown.join(", "), hi / lo),
    );
}

#[test]
fn c10_projected_error_energy_ratio_is_bounded() {
    let t0 = Instant::now();
    let opts = GlobalOpts::default();
    // the bound's constant is the reciprocal stability constant, which the
    // estimate only controls in the resolved regime; the variation check
    // therefore follows the same resolution rule (kappa*h <= 1) as the
    // convergence studies, while unresolved combinations are still run and
    // reported
    let mut resolved = Vec::new();
    let mut unresolved = Vec::new();
    for k in 0..=1usize {
        for &kappa in &[5.0, 10.0] {
            let case = mms::plane_wave(kappa, 0.3).unwrap();
            for &n in &[4usize, 8, 16] {
                let (mesh, re) = setup(n, k);
                let (sol, _) = solve(&mesh, &re, kappa, &case, &opts).unwrap();
                let r = projected_error_ratio(&case, &sol)
                    .unwrap()
                    .expect("errors above roundoff");
                assert!(r.is_finite() && r > 0.0, "k {k} kappa {kappa} n {n}: {r}");
                if kappa * mesh.mesh_size() <= 1.0 {
                    resolved.push(r);
                } else {
                    unresolved.push(r);
                }
            }
        }
    }
    let hi = resolved.iter().cloned().fold(f64::MIN, f64::max);
    let lo = resolved.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        resolved.len() >= 6,
        "too few resolved combinations: {}",
        resolved.len()
    );
    assert!(
        hi / lo < 2.0,
        "resolved-regime ratio spread {:.3} over {lo:.3e}..{hi:.3e}",
        hi / lo
    );
    let worst_unresolved = unresolved.iter().cloned().fold(0.0f64, f64::max);
    conclude(
        "projected-error ratio",
        t0,
        60.0,
        format!(
            "resolved range {lo:.3}..{hi:.3} (spread {:.2}), worst unresolved {worst_unresolved:.2}",
            hi / lo
        ),
    );
}

#[test]
fn c11_stability_constant_positive_and_archived() {
    let t0 = Instant::now();
    let re = Arc::new(build_reference_element(0).unwrap());
    let mut lowest = f64::MAX;
    for &n in &[2usize, 4] {
        let mesh = Arc::new(generate_structured(n).unwrap());
        for &kappa in &[1.0, 5.0, 10.0] {
            let r = stability_probe(&mesh, &re, kappa, 42, 4000).unwrap();
            assert!(
                r.c_a_estimate > 0.0,
                "n {n} kappa {kappa}: c_A {:.3e}",
                r.c_a_estimate
            );
            assert!(
                r.schur.singular_min > 0.0,
                "n {n} kappa {kappa}: singular Schur complement"
            );
            lowest = lowest.min(r.c_a_estimate);
        }
    }

    // the verify command archives the same sweep in its report
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hrtmdg"))
        .args(["--command", "verify", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "verify run failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("verify.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let entries = report["stability"].as_array().unwrap();
    assert_eq!(entries.len(), 6, "stability sweep entries");
    for e in entries {
        let c = e["result"]["c_a_estimate"].as_f64().unwrap();
        assert!(c > 0.0, "archived entry {e}: c_A {c:.3e}");
        assert!(e["result"]["schur"]["singular_min"].as_f64().is_some());
    }
    conclude(
        "stability witness",
        t0,
        60.0,
        format!("smallest c_A {lowest:.4e}, sweep archived"),
    );
}
