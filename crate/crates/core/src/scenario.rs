//! Config-driven scenario runner.
//!
//! One TOML file describes one experiment: flux, initial measure,
//! schedules, checks, output directory. Running it executes the full
//! pipeline (measure solve, reconstruction, verification), writes a
//! machine-readable verdict plus CSV series, and a manifest echoing every
//! tolerance and schedule used, so every reported number is reproducible
//! from the config alone. Identical configs produce byte-identical
//! verdicts: nothing time- or machine-dependent is written.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::{default_k_grid, Flux, FluxError};
use crate::grid::Series;
use crate::hj;
use crate::measure::{primitive_function, Atom, Measure, MeasureError};
use crate::singular::{
    compatibility_violation, entropy_residual, solve_measure_cauchy, synthetic_shock_field,
    Bracket, MeasureSolution, RefineOpts, Side, SingularError,
};
use crate::verify::{self, VerifyError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("flux: {0}")]
    Flux(#[from] FluxError),
    #[error("measure: {0}")]
    Measure(#[from] MeasureError),
    #[error("solver: {0}")]
    Singular(#[from] SingularError),
    #[error("verify: {0}")]
    Verify(#[from] VerifyError),
    #[error("reconstruction: {0}")]
    Hj(#[from] hj::HjError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Measure-valued initial data on a window.
    Cauchy,
    /// Two ordered measures; checks the comparison principle.
    Comparison,
    /// Synthetic non-entropy field; the diagnostics must reject it.
    Adversarial,
}

fn default_kind() -> ScenarioKind {
    ScenarioKind::Cauchy
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSpec {
    pub spec: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    Table {
        x: Vec<f64>,
        v: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub window: [f64; 2],
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    /// Cells of the stored initial-density grid.
    #[serde(default = "default_density_cells")]
    pub density_cells: usize,
}

fn default_density_cells() -> usize {
    512
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub t_max: f64,
    #[serde(default = "default_n_cells")]
    pub n_cells: Vec<usize>,
    #[serde(default = "default_multipliers")]
    pub surrogate_multipliers: Vec<f64>,
    #[serde(default = "default_tol_conv")]
    pub tol_conv: f64,
    #[serde(default = "default_bracket_tol")]
    pub bracket_tol_rel: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_trace_windows")]
    pub trace_windows: Vec<usize>,
    /// Stop this far (fraction of the last extinction time) after all
    /// masses are gone, instead of running to t_max.
    #[serde(default = "default_stop_margin")]
    pub stop_after_extinction_margin: Option<f64>,
}

fn default_n_cells() -> Vec<usize> {
    vec![1000, 2000, 4000]
}
fn default_multipliers() -> Vec<f64> {
    vec![20.0, 40.0, 80.0, 160.0]
}
fn default_tol_conv() -> f64 {
    0.05
}
fn default_bracket_tol() -> f64 {
    0.01
}
fn default_snapshots() -> usize {
    48
}
fn default_trace_windows() -> Vec<usize> {
    vec![16, 8, 4]
}
fn default_stop_margin() -> Option<f64> {
    Some(0.15)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub bounds: bool,
    pub monotonicity: bool,
    pub conservation: bool,
    pub conservation_tol_rel: f64,
    pub correspondence: bool,
    pub correspondence_slope_min: f64,
    pub jump_decay: bool,
    pub jump_decay_slack: f64,
    pub entropy: bool,
    pub entropy_tol: f64,
    pub compatibility: bool,
    pub compatibility_tol: f64,
    /// Frozen regression constant for the linear-band transport oracle:
    /// L1 error against shifted data must stay below c * (dx + eps).
    pub transport_oracle_c: Option<f64>,
}

impl Default for ChecksSpec {
    fn default() -> Self {
        ChecksSpec {
            bounds: true,
            monotonicity: true,
            conservation: true,
            conservation_tol_rel: 1e-3,
            correspondence: true,
            correspondence_slope_min: 0.8,
            jump_decay: true,
            jump_decay_slack: 0.05,
            entropy: true,
            entropy_tol: 0.02,
            compatibility: true,
            compatibility_tol: 0.05,
            transport_oracle_c: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<String>,
    pub write_fields: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: ScenarioKind,
    pub flux: FluxSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub initial_upper: Option<InitialSpec>,
    pub run: RunSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub kind: ScenarioKind,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub atoms: Vec<AtomSummary>,
    /// Simulated horizon (may stop early after the last extinction).
    pub t_simulated: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomSummary {
    pub x: f64,
    pub mass: f64,
    pub bracket: Bracket,
    pub tol_mass: f64,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub verdict: Verdict,
    pub out_dir: PathBuf,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario =
            toml::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(ScenarioError::Config(
                "name must be nonempty alphanumeric/underscore".into(),
            ));
        }
        if self.initial.window[1] <= self.initial.window[0]
            || !self.initial.window.iter().all(|w| w.is_finite())
        {
            return Err(ScenarioError::Config("window must be increasing".into()));
        }
        if self.run.t_max <= 0.0 || !self.run.t_max.is_finite() {
            return Err(ScenarioError::Config("t_max must be positive".into()));
        }
        if self.kind == ScenarioKind::Comparison && self.initial_upper.is_none() {
            return Err(ScenarioError::Config(
                "comparison scenarios need [initial_upper]".into(),
            ));
        }
        Ok(())
    }

    fn refine_opts(&self) -> RefineOpts {
        RefineOpts {
            n_cells: self.run.n_cells.clone(),
            tol_conv: self.run.tol_conv,
            surrogate_multipliers: self.run.surrogate_multipliers.clone(),
            bracket_tol_rel: self.run.bracket_tol_rel,
            snapshots: self.run.snapshots,
            trace_windows: self.run.trace_windows.clone(),
            stop_after_extinction_margin: self.run.stop_after_extinction_margin,
            ..RefineOpts::default()
        }
    }
}

fn build_measure(spec: &InitialSpec) -> Result<Measure, MeasureError> {
    let window = (spec.window[0], spec.window[1]);
    let atoms = spec.atoms.clone();
    match &spec.density {
        DensitySpec::Zero => Measure::from_density_fn(window, spec.density_cells, |_| 0.0, atoms),
        DensitySpec::Constant { value } => {
            let v = *value;
            Measure::from_density_fn(window, spec.density_cells, move |_| v, atoms)
        }
        DensitySpec::Gaussian {
            center,
            width,
            amplitude,
        } => {
            let (c, w, a) = (*center, *width, *amplitude);
            Measure::from_density_fn(
                window,
                spec.density_cells,
                move |x| a * (-((x - c) / w).powi(2)).exp(),
                atoms,
            )
        }
        DensitySpec::Table { x, v } => {
            let pts: Vec<(f64, f64)> = x.iter().copied().zip(v.iter().copied()).collect();
            Measure::from_density_fn(
                window,
                spec.density_cells,
                move |q| {
                    if pts.is_empty() {
                        return 0.0;
                    }
                    if q <= pts[0].0 {
                        return pts[0].1;
                    }
                    if q >= pts[pts.len() - 1].0 {
                        return pts[pts.len() - 1].1;
                    }
                    let i = pts.partition_point(|p| p.0 <= q) - 1;
                    let (x0, y0) = pts[i];
                    let (x1, y1) = pts[i + 1];
                    y0 + (y1 - y0) * (q - x0) / (x1 - x0)
                },
                atoms,
            )
        }
    }
}

/// Largest horizon the window supports: features must stay away from the
/// edges by the propagation speed.
fn window_horizon(u0: &Measure, lip: f64, t_max: f64) -> f64 {
    if lip < 1e-12 {
        return t_max;
    }
    let (lo, hi) = u0.window();
    let mut feat_lo = f64::INFINITY;
    let mut feat_hi = f64::NEG_INFINITY;
    for a in &u0.atoms {
        feat_lo = feat_lo.min(a.x);
        feat_hi = feat_hi.max(a.x);
    }
    for (i, v) in u0.density.iter().enumerate() {
        if v.abs() > 1e-12 {
            let x = u0.grid.center(i);
            feat_lo = feat_lo.min(x);
            feat_hi = feat_hi.max(x);
        }
    }
    if feat_lo > feat_hi {
        return t_max;
    }
    let margin = (feat_lo - lo).min(hi - feat_hi);
    (0.9 * margin / lip).min(t_max)
}

fn check(name: &str, pass: bool, detail: serde_json::Value) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn ks_for(flux: &Flux, sol: &MeasureSolution) -> Vec<f64> {
    let scale = sol
        .fine
        .interior_sup
        .v
        .iter()
        .fold(1.0f64, |m, v| m.max(*v))
        + flux.sup_norm
        + 1.0;
    let n = 17;
    (0..=n)
        .map(|i| -scale + 2.0 * scale * i as f64 / n as f64)
        .collect()
}

fn run_cauchy(sc: &Scenario, out: &Path) -> Result<Verdict, ScenarioError> {
    let flux = Flux::from_registry(&sc.flux.spec)?;
    let u0 = build_measure(&sc.initial)?;
    let classification = flux.classify(&default_k_grid())?;
    let opts = sc.refine_opts();
    let t_sim = window_horizon(&u0, flux.lip_norm, sc.run.t_max);

    let sol = solve_measure_cauchy(&flux, &u0, t_sim, &opts)?;
    let anchor = pick_anchor(&u0);
    let prim = primitive_function(&u0, anchor)?;
    let hjs = hj::reconstruct(&sol.fine, &prim)?;

    let mut checks = Vec::new();

    if sc.checks.bounds {
        let wt = verify::check_bounds(&sol, &flux, &classification, &u0);
        checks.push(check(
            "bounds",
            wt.all_pass,
            serde_json::to_value(&wt).unwrap(),
        ));
    }

    if sc.checks.monotonicity {
        let mut worst_rise = 0.0f64;
        let mut sign_ok = true;
        for a in &sol.fine.atoms {
            let sign = a.mass0.signum();
            let cut = a.bracket.crossing().unwrap_or(f64::INFINITY);
            for i in 1..a.mass.v.len() {
                worst_rise = worst_rise.max(sign * (a.mass.v[i] - a.mass.v[i - 1]));
                if a.mass.t[i] < cut && sign * a.mass.v[i] < 0.0 {
                    sign_ok = false;
                }
            }
        }
        let tol = 1e-9;
        checks.push(check(
            "monotonicity",
            worst_rise <= tol && sign_ok,
            serde_json::json!({"worst_rise": worst_rise, "sign_constant": sign_ok}),
        ));
    }

    if sc.checks.conservation {
        let c = &sol.fine.conservation;
        let scale = u0
            .density_l1()
            .max(u0.atoms.iter().map(|a| a.mass.abs()).sum())
            .max(1e-12);
        let drift = c.v.iter().fold(0.0f64, |m, v| m.max((v - c.v[0]).abs()));
        let rel = drift / scale;
        checks.push(check(
            "conservation",
            rel <= sc.checks.conservation_tol_rel,
            serde_json::json!({"relative_drift": rel, "tol": sc.checks.conservation_tol_rel}),
        ));
    }

    if sc.checks.correspondence {
        let rep = hj::check_correspondence(&sol.fine, &hjs);
        let mut jump_ok = true;
        let mut worst_jump = 0.0f64;
        for (d, a) in rep.jump_vs_mass.iter().zip(&sol.fine.atoms) {
            worst_jump = worst_jump.max(*d);
            if *d > 2.0 * a.tol_mass {
                jump_ok = false;
            }
        }
        // Residual slope under one grid refinement, when the coarse level
        // is available and the residuals are above the noise floor.
        let (slope, slope_ok) = match &sol.coarse {
            Some(coarse) => {
                let hc = hj::reconstruct(coarse, &prim)?;
                let rc = hj::check_correspondence(coarse, &hc);
                let floor = 1e-10;
                if rep.distributional_residual < floor || rc.distributional_residual < floor {
                    (f64::INFINITY, true)
                } else {
                    let s = (rc.distributional_residual / rep.distributional_residual).log2();
                    (s, s >= sc.checks.correspondence_slope_min)
                }
            }
            None => (f64::NAN, true),
        };
        checks.push(check(
            "correspondence",
            jump_ok && slope_ok,
            serde_json::json!({
                "jump_vs_mass_worst": worst_jump,
                "distributional_residual": rep.distributional_residual,
                "refinement_slope": slope,
                "grad_l1": rep.grad_l1,
            }),
        ));
    }

    if sc.checks.jump_decay {
        let t_skip =
            2.0 * sc.run.trace_windows.iter().copied().max().unwrap_or(16) as f64 * sol.fine.dx
                / flux.lip_norm.max(1e-9);
        let reports = hj::jump_decay_check(&hjs, &flux, sc.checks.jump_decay_slack, t_skip);
        let pass = reports.iter().all(|r| r.pass);
        checks.push(check(
            "jump_decay",
            pass,
            serde_json::to_value(&reports).unwrap(),
        ));
    }

    if sc.checks.entropy {
        let ks = ks_for(&flux, &sol);
        let mut worst = 0.0f64;
        for ep in &sol.fine.epochs {
            for field in &ep.fields {
                if field.grid.n >= 16 {
                    worst = worst.max(entropy_residual(field, &flux, &ks));
                }
            }
        }
        checks.push(check(
            "entropy",
            worst <= sc.checks.entropy_tol,
            serde_json::json!({"worst_violation": worst, "tol": sc.checks.entropy_tol}),
        ));
    }

    if sc.checks.compatibility {
        let ks = ks_for(&flux, &sol);
        let mut worst = 0.0f64;
        for ep in &sol.fine.epochs {
            for (slot, &orig) in ep.live_orig.iter().enumerate() {
                let sign = sol.fine.atoms[orig].mass0.signum();
                let left = &ep.fields[slot];
                let right = &ep.fields[slot + 1];
                if left.grid.n >= 16 {
                    worst = worst.max(compatibility_violation(left, &flux, Side::Minus, sign, &ks));
                }
                if right.grid.n >= 16 {
                    worst = worst.max(compatibility_violation(right, &flux, Side::Plus, sign, &ks));
                }
            }
        }
        checks.push(check(
            "compatibility",
            worst <= sc.checks.compatibility_tol,
            serde_json::json!({"worst_violation": worst, "tol": sc.checks.compatibility_tol}),
        ));
    }

    if let Some(c_frozen) = sc.checks.transport_oracle_c {
        // Linear-band transport: compare the final density against the
        // initial data shifted by t (unit speed inside the band).
        let run = &sol.fine;
        let t_end = run.epochs.last().unwrap().t1;
        let field = &run.epochs.last().unwrap().fields[0];
        let grid = field.grid;
        let mut l1 = 0.0;
        for (i, x) in grid.centers().enumerate() {
            let exact = u0.grid.interp(&u0.density, x - t_end);
            l1 += (field.values.last().unwrap()[i] - exact).abs() * grid.dx;
        }
        let budget = c_frozen * (run.dx + run.eps);
        checks.push(check(
            "transport_oracle",
            l1 <= budget,
            serde_json::json!({"l1_error": l1, "budget": budget, "c": c_frozen}),
        ));
    }

    let verdict = Verdict {
        name: sc.name.clone(),
        kind: sc.kind,
        pass: checks.iter().all(|c| c.pass),
        checks,
        atoms: sol
            .fine
            .atoms
            .iter()
            .map(|a| AtomSummary {
                x: a.x,
                mass: a.mass0,
                bracket: a.bracket,
                tol_mass: a.tol_mass,
            })
            .collect(),
        t_simulated: sol.fine.epochs.last().unwrap().t1,
    };

    write_cauchy_artifacts(sc, out, &sol, &hjs)?;
    Ok(verdict)
}

fn pick_anchor(u0: &Measure) -> f64 {
    let (lo, _) = u0.window();
    let mut anchor = lo + 1.5 * u0.grid.dx;
    while u0.atoms.iter().any(|a| (a.x - anchor).abs() < u0.grid.dx) {
        anchor += u0.grid.dx;
    }
    anchor
}

fn run_comparison(sc: &Scenario, out: &Path) -> Result<Verdict, ScenarioError> {
    let flux = Flux::from_registry(&sc.flux.spec)?;
    let u0 = build_measure(&sc.initial)?;
    let v0 = build_measure(sc.initial_upper.as_ref().unwrap())?;
    let opts = sc.refine_opts();
    let t_sim = window_horizon(&u0, flux.lip_norm, sc.run.t_max).min(window_horizon(
        &v0,
        flux.lip_norm,
        sc.run.t_max,
    ));
    let rep = verify::check_comparison(&flux, &u0, &v0, t_sim, &opts)?;
    let verdict = Verdict {
        name: sc.name.clone(),
        kind: sc.kind,
        pass: rep.pass,
        checks: vec![check(
            "comparison",
            rep.pass,
            serde_json::to_value(&rep).unwrap(),
        )],
        atoms: Vec::new(),
        t_simulated: t_sim,
    };
    std::fs::create_dir_all(out)?;
    Ok(verdict)
}

fn run_adversarial(sc: &Scenario, out: &Path) -> Result<Verdict, ScenarioError> {
    let flux = Flux::from_registry(&sc.flux.spec)?;
    let window = (sc.initial.window[0], sc.initial.window[1]);
    // Jump 1 -> 0 placed as a sharp discontinuity at the chord speed: for
    // a flux concave on [0,1] the admissible orientation is 0 -> 1, so
    // this field is a weak solution violating the entropy inequality.
    let speed = flux.h(1.0) - flux.h(0.0);
    let bad = synthetic_shock_field(window, 256, sc.run.t_max, 33, 1.0, 0.0, speed);
    let good = synthetic_shock_field(window, 256, sc.run.t_max, 33, 0.0, 1.0, speed);
    let ks: Vec<f64> = (0..=24).map(|i| -8.0 + 16.0 * i as f64 / 24.0).collect();
    let bad_entropy = entropy_residual(&bad, &flux, &ks);
    let good_entropy = entropy_residual(&good, &flux, &ks);
    // A constant state far from the one-sided extremum, presented as the
    // field right of a positive mass.
    let wrong_state = synthetic_shock_field(window, 256, sc.run.t_max, 33, 3.0, 3.0, 0.0);
    let compat = compatibility_violation(&wrong_state, &flux, Side::Plus, 1.0, &ks);

    let checks = vec![
        check(
            "entropy",
            bad_entropy <= sc.checks.entropy_tol,
            serde_json::json!({
                "worst_violation": bad_entropy,
                "admissible_orientation_violation": good_entropy,
                "tol": sc.checks.entropy_tol,
            }),
        ),
        check(
            "compatibility",
            compat <= sc.checks.compatibility_tol,
            serde_json::json!({"worst_violation": compat, "tol": sc.checks.compatibility_tol}),
        ),
    ];
    std::fs::create_dir_all(out)?;
    Ok(Verdict {
        name: sc.name.clone(),
        kind: sc.kind,
        pass: checks.iter().all(|c| c.pass),
        checks,
        atoms: Vec::new(),
        t_simulated: sc.run.t_max,
    })
}

fn write_series_csv(path: &Path, header: &str, cols: &[&Series]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    if cols.is_empty() {
        return Ok(());
    }
    for i in 0..cols[0].t.len() {
        let mut line = format!("{:.9e}", cols[0].t[i]);
        for c in cols {
            let v = if i < c.v.len() { c.v[i] } else { f64::NAN };
            line.push_str(&format!(",{v:.9e}"));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn write_cauchy_artifacts(
    sc: &Scenario,
    out: &Path,
    sol: &MeasureSolution,
    hjs: &hj::HjSolution,
) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(out)?;
    write_json(&out.join("refinement.json"), &sol.refinement)?;

    for (i, a) in sol.fine.atoms.iter().enumerate() {
        write_series_csv(
            &out.join(format!("atom_{i}_mass.csv")),
            "t,mass",
            &[&a.mass],
        )?;
        let tr_plus = Series {
            t: a.trace_plus.t.clone(),
            v: a.trace_plus.value.clone(),
        };
        let tr_minus = Series {
            t: a.trace_minus.t.clone(),
            v: a.trace_minus.value.clone(),
        };
        write_series_csv(
            &out.join(format!("atom_{i}_traces.csv")),
            "t,trace_plus,trace_minus",
            &[&tr_plus, &tr_minus],
        )?;
        write_series_csv(
            &out.join(format!("atom_{i}_ghost_flux.csv")),
            "t,flux_plus,flux_minus",
            &[&a.flux_plus, &a.flux_minus],
        )?;
    }
    for (i, jr) in hjs.jumps.iter().enumerate() {
        write_series_csv(&out.join(format!("jump_{i}.csv")), "t,jump", &[&jr.jump])?;
    }
    write_series_csv(
        &out.join("conservation.csv"),
        "t,total",
        &[&sol.fine.conservation],
    )?;

    // Final density over the window.
    {
        let mut f = std::fs::File::create(out.join("final_density.csv"))?;
        writeln!(f, "x,u")?;
        let mut cell = 0usize;
        let ep = sol.fine.epochs.last().unwrap();
        for field in &ep.fields {
            for i in 0..field.grid.n {
                writeln!(
                    f,
                    "{:.9e},{:.9e}",
                    field.grid.center(i),
                    sol.fine.final_density[cell + i]
                )?;
            }
            cell += field.grid.n;
        }
    }

    if sc.output.write_fields {
        for (e, ep) in sol.fine.epochs.iter().enumerate() {
            for (s, field) in ep.fields.iter().enumerate() {
                let mut f = std::fs::File::create(out.join(format!("field_e{e}_s{s}.csv")))?;
                writeln!(f, "t,x,u")?;
                for (k, t) in field.times.iter().enumerate() {
                    for i in (0..field.grid.n).step_by(4) {
                        writeln!(
                            f,
                            "{t:.9e},{:.9e},{:.9e}",
                            field.grid.center(i),
                            field.values[k][i]
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    seed: Option<u64>,
    scenario: &'a Scenario,
}

/// Run one scenario file; writes artifacts under `out_root/<name>` (or the
/// config's own output dir when `out_root` is None).
pub fn run_scenario(
    path: &Path,
    out_root: Option<&Path>,
    seed: Option<u64>,
) -> Result<ScenarioOutcome, ScenarioError> {
    let sc = Scenario::load(path)?;
    run_scenario_parsed(&sc, out_root, seed)
}

/// Run an already-parsed scenario.
pub fn run_scenario_parsed(
    sc: &Scenario,
    out_root: Option<&Path>,
    seed: Option<u64>,
) -> Result<ScenarioOutcome, ScenarioError> {
    let out = match (out_root, &sc.output.dir) {
        (Some(root), _) => root.join(&sc.name),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => PathBuf::from("out").join(&sc.name),
    };

    let verdict = match sc.kind {
        ScenarioKind::Cauchy => run_cauchy(sc, &out),
        ScenarioKind::Comparison => run_comparison(sc, &out),
        ScenarioKind::Adversarial => run_adversarial(sc, &out),
    };

    // On solver failure, keep whatever partial artifacts exist and write
    // the error into the verdict file rather than discarding the run.
    let verdict = match verdict {
        Ok(v) => v,
        Err(e) => {
            if matches!(e, ScenarioError::Config(_)) {
                return Err(e);
            }
            std::fs::create_dir_all(&out)?;
            let v = Verdict {
                name: sc.name.clone(),
                kind: sc.kind,
                pass: false,
                checks: vec![check(
                    "execution",
                    false,
                    serde_json::json!({"error": e.to_string()}),
                )],
                atoms: Vec::new(),
                t_simulated: 0.0,
            };
            write_json(&out.join("verdict.json"), &v)?;
            return Ok(ScenarioOutcome {
                verdict: v,
                out_dir: out,
            });
        }
    };

    write_json(&out.join("verdict.json"), &verdict)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed,
        scenario: sc,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(ScenarioOutcome {
        verdict,
        out_dir: out,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub results: Vec<Verdict>,
    pub all_pass: bool,
    pub warning: Option<String>,
}

/// Run every `*.toml` under `dir` (sorted by name) on a small worker pool.
pub fn run_suite(
    dir: &Path,
    out_root: &Path,
    workers: usize,
    seed: Option<u64>,
) -> Result<SuiteReport, ScenarioError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "toml").unwrap_or(false))
        .collect();
    paths.sort();

    if paths.is_empty() {
        let report = SuiteReport {
            results: Vec::new(),
            all_pass: true,
            warning: Some(format!("no scenario files in {}", dir.display())),
        };
        std::fs::create_dir_all(out_root)?;
        write_json(&out_root.join("suite_report.json"), &report)?;
        return Ok(report);
    }

    let workers = workers.clamp(1, paths.len());
    let next = AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<ScenarioOutcome, ScenarioError>>>> =
        paths.iter().map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= paths.len() {
                    break;
                }
                let res = run_scenario(&paths[i], Some(out_root), seed);
                *results[i].lock().unwrap() = Some(res);
            });
        }
    });

    let mut verdicts = Vec::with_capacity(paths.len());
    for (path, slot) in paths.iter().zip(results) {
        match slot.into_inner().unwrap().unwrap() {
            Ok(outcome) => verdicts.push(outcome.verdict),
            Err(e) => {
                verdicts.push(Verdict {
                    name: path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    kind: ScenarioKind::Cauchy,
                    pass: false,
                    checks: vec![check(
                        "load",
                        false,
                        serde_json::json!({"error": e.to_string()}),
                    )],
                    atoms: Vec::new(),
                    t_simulated: 0.0,
                });
            }
        }
    }
    verdicts.sort_by(|a, b| a.name.cmp(&b.name));
    let report = SuiteReport {
        all_pass: verdicts.iter().all(|v| v.pass),
        results: verdicts,
        warning: None,
    };
    write_json(&out_root.join("suite_report.json"), &report)?;
    Ok(report)
}

/// Human-readable one-line-per-check summary.
pub fn summarize(report: &SuiteReport) -> String {
    let mut s = String::new();
    for v in &report.results {
        s.push_str(&format!(
            "{} [{}]\n",
            v.name,
            if v.pass { "PASS" } else { "FAIL" }
        ));
        for c in &v.checks {
            s.push_str(&format!(
                "  {:<16} {}\n",
                c.name,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
    }
    if let Some(w) = &report.warning {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}
