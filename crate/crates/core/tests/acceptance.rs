//! Acceptance suite: runs the bundled scenarios once and checks every
//! exit criterion at its stated tolerance, printing one line per
//! criterion (visible with `cargo test --test acceptance -- --nocapture`).

use std::path::{Path, PathBuf};
use std::time::Instant;

use mvcl::flux::Flux;
use mvcl::measure::{smooth_initial, Piece};
use mvcl::scenario::{run_suite, SuiteReport, Verdict};
use mvcl::singular::Bracket;
use mvcl::viscous::{solve_viscous_cl, solve_viscous_hj};

fn scenarios_dir(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(sub)
}

fn verdict<'a>(report: &'a SuiteReport, name: &str) -> &'a Verdict {
    report
        .results
        .iter()
        .find(|v| v.name == name)
        .unwrap_or_else(|| panic!("scenario {name} missing from the suite"))
}

fn detail<'a>(v: &'a Verdict, check: &str) -> &'a serde_json::Value {
    &v.checks
        .iter()
        .find(|c| c.name == check)
        .unwrap_or_else(|| panic!("{}: check {check} missing", v.name))
        .detail
}

fn check_pass(v: &Verdict, check: &str) -> bool {
    v.checks
        .iter()
        .find(|c| c.name == check)
        .map(|c| c.pass)
        .unwrap_or(false)
}

fn num(value: &serde_json::Value, key: &str) -> f64 {
    value[key].as_f64().unwrap_or(f64::NAN)
}

struct Criteria {
    rows: Vec<(usize, String, bool, String)>,
}

impl Criteria {
    fn record(&mut self, idx: usize, desc: &str, pass: bool, detail: String) {
        println!(
            "criterion {idx:2} [{}] {desc}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.rows.push((idx, desc.to_string(), pass, detail));
    }
}

#[test]
fn acceptance() {
    let out_root = std::env::temp_dir().join("mvcl_acceptance");
    let _ = std::fs::remove_dir_all(&out_root);

    let t0 = Instant::now();
    let standard = run_suite(
        &scenarios_dir("standard"),
        &out_root.join("standard"),
        2,
        None,
    )
    .expect("standard suite must run");
    let elapsed = t0.elapsed().as_secs_f64();

    let mut cr = Criteria { rows: Vec::new() };

    // 1. Pinch test: the measured extinction bracket contains 1/2 (the
    //    coinciding lower and upper estimates for the sine flux) with
    //    width at most 0.02 at 4000 cells, within the runtime target.
    {
        let v = verdict(&standard, "sin_delta_pinch");
        let (pass, det) = match v.atoms[0].bracket {
            Bracket::Extinguished {
                t_lo,
                crossing,
                t_hi,
            } => {
                let width = t_hi - t_lo;
                (
                    t_lo <= 0.5 && 0.5 <= t_hi && width <= 0.02 && elapsed < 120.0,
                    format!(
                        "bracket [{t_lo:.4}, {t_hi:.4}] width {width:.4}, crossing {crossing:.5}, suite {elapsed:.1}s"
                    ),
                )
            }
            other => (false, format!("unexpected bracket {other:?}")),
        };
        cr.record(
            1,
            "pinch bracket contains 0.5 with width <= 0.02",
            pass,
            det,
        );
    }

    // 2. Correspondence: jump tracks the mass ledger within 2 tol_mass and
    //    the distributional residual drops with slope >= 0.8 under one
    //    grid refinement, on the pinch and the smooth scenario.
    {
        let mut pass = true;
        let mut det = String::new();
        for name in ["sin_delta_pinch", "smooth_gaussian"] {
            let v = verdict(&standard, name);
            let d = detail(v, "correspondence");
            let worst = num(d, "jump_vs_mass_worst");
            let slope = num(d, "refinement_slope");
            let tol = v.atoms.first().map(|a| 2.0 * a.tol_mass).unwrap_or(1e-9);
            let ok = check_pass(v, "correspondence")
                && (v.atoms.is_empty() || worst <= tol)
                && slope >= 0.8;
            pass &= ok;
            det.push_str(&format!("{name}: |J-C| {worst:.2e}, slope {slope:.2}; "));
        }
        cr.record(2, "jump/mass agreement and residual slope", pass, det);
    }

    // 3. Monotonicity: in every bundled scenario the masses decay
    //    monotonically with constant sign until extinction.
    {
        let mut pass = true;
        let mut names = Vec::new();
        for v in &standard.results {
            if v.checks.iter().any(|c| c.name == "monotonicity") {
                names.push(v.name.clone());
                pass &= check_pass(v, "monotonicity");
            }
        }
        cr.record(
            3,
            "mass monotone, sign constant until extinction",
            pass,
            names.join(", "),
        );
    }

    // 4. Survival estimate |c| / (2 sup |H|) holds in every scenario.
    {
        let mut pass = true;
        let mut det = String::new();
        for v in &standard.results {
            if let Some(c) = v.checks.iter().find(|c| c.name == "bounds") {
                for a in c.detail["atoms"].as_array().unwrap() {
                    let ok = a["lower_ok"].as_bool().unwrap_or(false);
                    pass &= ok;
                    det.push_str(&format!(
                        "{}: lower {:.3} ok={ok}; ",
                        v.name,
                        num(a, "lower_bound")
                    ));
                }
            }
        }
        cr.record(4, "survival lower bound everywhere", pass, det);
    }

    // 5. Conservation of density plus masses to 1e-3 relative.
    {
        let mut pass = true;
        let mut worst: f64 = 0.0;
        for v in &standard.results {
            if v.checks.iter().any(|c| c.name == "conservation") {
                pass &= check_pass(v, "conservation");
                worst = worst.max(num(detail(v, "conservation"), "relative_drift"));
            }
        }
        cr.record(
            5,
            "total mass conserved to 1e-3 relative",
            pass,
            format!("worst relative drift {worst:.2e}"),
        );
    }

    // 6. The three comparison fixtures preserve the order cellwise.
    {
        let mut pass = true;
        let mut det = String::new();
        for name in ["comparison_equal", "comparison_ordered", "comparison_signs"] {
            let v = verdict(&standard, name);
            pass &= v.pass;
            det.push_str(&format!("{name}: {}; ", v.pass));
        }
        cr.record(6, "comparison principle fixtures", pass, det);
    }

    // 7. Transport oracle under the frozen regression constant.
    {
        let v = verdict(&standard, "transport_band");
        let d = detail(v, "transport_oracle");
        cr.record(
            7,
            "linear-band transport L1 regression",
            check_pass(v, "transport_oracle"),
            format!("L1 {:.2e} <= {:.2e}", num(d, "l1_error"), num(d, "budget")),
        );
    }

    // 8. Finiteness predictions: the pinch-constant and one-sided-tail
    //    regimes extinguish before their horizons; the constant flux does
    //    not extinguish.
    {
        let exp = verdict(&standard, "exp_sin_delta");
        let arc = verdict(&standard, "arctan_delta");
        let con = verdict(&standard, "const_delta");
        let exp_atom = &detail(exp, "bounds")["atoms"][0];
        let exp_ok = matches!(exp.atoms[0].bracket, Bracket::Extinguished { .. })
            && exp_atom["horizon_ok"].as_bool().unwrap_or(false)
            && exp_atom["regime"] == "H5";
        let arc_ok = matches!(arc.atoms[0].bracket, Bracket::Extinguished { .. })
            && detail(arc, "bounds")["atoms"][0]["regime"] == "H6";
        let con_ok = matches!(con.atoms[0].bracket, Bracket::NotByHorizon { .. });
        let det = format!(
            "exp_sin {:?} horizon {:.2}; arctan {:?}; const {:?}",
            exp.atoms[0].bracket.crossing(),
            exp_atom["h5_horizon"].as_f64().unwrap_or(f64::NAN),
            arc.atoms[0].bracket.crossing(),
            con.atoms[0].bracket
        );
        cr.record(
            8,
            "finiteness by tail regime",
            exp_ok && arc_ok && con_ok,
            det,
        );
    }

    // 9. Viscous pairing at fixed eps = 0.05: the quadrature-built U has
    //    gradient u within 5 dx sup|u_x| and time derivative within
    //    sup|H_eps| + eps sup|u_x| + tolerance.
    {
        let eps = 0.05;
        let flux = Flux::from_registry("sin").unwrap().mollify(eps).unwrap();
        let piece = Piece::sample(-2.0, 2.0, 2049, |x: f64| 0.21 * (1.0 + (x / 0.3).tanh()));
        let data = smooth_initial(&piece, 0.1, -0.1, 1e-4).unwrap();
        let run = solve_viscous_cl(&flux, &data, eps, 0.4, 400).unwrap();
        let hj = solve_viscous_hj(&run, &data);
        let grid = hj.grid;
        let sup_ux = run.field.sup_ux();
        let mut grad_worst = 0.0f64;
        for (k, row) in hj.values.iter().enumerate() {
            for i in 1..grid.n - 1 {
                let dxu = (row[i + 1] - row[i - 1]) / (2.0 * grid.dx);
                grad_worst = grad_worst.max((dxu - run.field.values[k][i]).abs());
            }
        }
        let grad_cap = 5.0 * grid.dx * sup_ux;
        let mut dt_worst = 0.0f64;
        for k in 1..hj.times.len() {
            let dt = hj.times[k] - hj.times[k - 1];
            for i in 0..grid.n {
                dt_worst = dt_worst.max((hj.values[k][i] - hj.values[k - 1][i]).abs() / dt);
            }
        }
        let dt_cap = flux.sup_norm + eps * sup_ux + 0.05;
        let pass = grad_worst <= grad_cap && dt_worst <= dt_cap;
        cr.record(
            9,
            "viscous pairing at eps = 0.05",
            pass,
            format!(
                "|dU/dx - u| {grad_worst:.2e} <= {grad_cap:.2e}; |dU/dt| {dt_worst:.3} <= {dt_cap:.3}"
            ),
        );
    }

    // 10. Negative control: the reversed-shock field trips both the
    //     entropy and one-sided diagnostics and the suite exits nonzero.
    {
        let adv = run_suite(
            &scenarios_dir("adversarial"),
            &out_root.join("adversarial"),
            1,
            None,
        )
        .expect("adversarial suite must run");
        let v = verdict(&adv, "reversed_shock");
        let entropy_flagged = !check_pass(v, "entropy");
        let compat_flagged = !check_pass(v, "compatibility");
        let pass = entropy_flagged && compat_flagged && !adv.all_pass;
        cr.record(
            10,
            "adversarial field rejected, suite exits nonzero",
            pass,
            format!(
                "entropy violation {:.3}, one-sided violation {:.3}",
                num(detail(v, "entropy"), "worst_violation"),
                num(detail(v, "compatibility"), "worst_violation")
            ),
        );
    }

    let failed: Vec<String> = cr
        .rows
        .iter()
        .filter(|(_, _, pass, _)| !pass)
        .map(|(i, d, _, det)| format!("criterion {i} ({d}): {det}"))
        .collect();
    assert!(
        standard.all_pass,
        "standard suite has failing scenarios: {:?}",
        standard
            .results
            .iter()
            .filter(|v| !v.pass)
            .map(|v| &v.name)
            .collect::<Vec<_>>()
    );
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
