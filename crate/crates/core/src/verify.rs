//! Waiting-time bounds, comparison principles, and finiteness predictions
//! executed as falsifiable checks against measured solutions.
//!
//! Every mass |c| at a point survives at least |c| / (2 sup |H|). When the
//! flux has no tail limit on the side of the mass's sign, it dies no later
//! than |c| / (limsup - liminf). When the tail limit exists, finiteness
//! follows either from the pinch-sequence route (derivative modulus decay
//! comparable to |H(k) - H_inf|), from a sign-definite tail, or from linear
//! growth of the initial primitive; the checks below verify the measured
//! brackets against whichever machinery applies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::{Flux, FluxRegime, HypothesisReport, TailReport};
use crate::grid::Series;
use crate::hj::{self, HjSolution};
use crate::measure::{primitive_function, Measure, MeasureError};
use crate::singular::{
    solve_measure_cauchy, AtomTrajectory, Bracket, LevelRun, MeasureSolution, RefineOpts,
    SingularError,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("check requires regime {want}, flux tail is {got:?}")]
    RegimeMismatch { want: &'static str, got: FluxRegime },
    #[error("comparison hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("no tail level with H on the contradiction side of its limit")]
    NoContradictionLevel,
    #[error(transparent)]
    Singular(#[from] SingularError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Hj(#[from] hj::HjError),
}

/// Which waiting-time machinery applies to one atom, given the flux tail
/// on the side of its sign and the data class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// limsup > liminf at the relevant infinity: explicit upper bound.
    NoLimit,
    /// Flux eventually constant: the mass may persist forever.
    EventuallyConstant,
    /// Sign-definite tail approach.
    H6,
    /// Pinch-comparable derivative decay.
    H5,
    /// Tail limit only, but the primitive has linear growth, which still
    /// forces finiteness.
    H4,
    /// Tail limit only and no applicable growth bound: open question.
    Conjecture,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    /// Finite with an explicit analytic horizon.
    FiniteWithin(f64),
    /// Finite, no explicit horizon.
    Finite,
    /// May persist forever.
    MayPersist,
    /// Open problem.
    Unknown,
}

pub fn regime_for(tail: &TailReport, data_growth_bounded: bool) -> Regime {
    match tail.regime {
        FluxRegime::NoLimit => Regime::NoLimit,
        FluxRegime::EventuallyConstant => Regime::EventuallyConstant,
        FluxRegime::H6 => Regime::H6,
        FluxRegime::H5 => Regime::H5,
        FluxRegime::Conjecture => {
            if data_growth_bounded {
                Regime::H4
            } else {
                Regime::Conjecture
            }
        }
    }
}

/// Verdict for one point mass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomVerdict {
    pub x: f64,
    pub mass0: f64,
    pub bracket: Bracket,
    pub regime: Regime,
    pub prediction: Prediction,
    /// |c| / (2 sup |H|).
    pub lower_bound: f64,
    pub lower_ok: bool,
    pub lower_slack: f64,
    /// |c| / tail gap, when the gap is positive.
    pub upper_bound: Option<f64>,
    pub upper_ok: Option<bool>,
    pub upper_slack: Option<f64>,
    /// Pinch-route horizon, in the H5 regime.
    pub h5_horizon: Option<f64>,
    pub horizon_ok: Option<bool>,
    /// Worst one-sided trace envelope violation (beyond stated errors).
    pub envelope_violation: f64,
    pub envelope_ok: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaitingTimeReport {
    pub atoms: Vec<AtomVerdict>,
    pub all_pass: bool,
}

/// Extra allowance on the trace envelopes: surrogate saturation plus
/// extraction noise, relative to the flux scale.
const ENVELOPE_SLACK_REL: f64 = 0.03;

/// Check the one-sided trace envelopes for one atom over the late half of
/// its life. Returns the worst violation beyond the stated extraction
/// error and slack.
pub fn trace_envelope_violation(atom: &AtomTrajectory, flux: &Flux) -> f64 {
    let slack = ENVELOPE_SLACK_REL * flux.sup_norm.max(1e-9);
    let (plus_lo, plus_hi, minus_lo, minus_hi) = if atom.mass0 > 0.0 {
        (
            flux.asym.pos.limsup,
            flux.max_value,
            flux.min_value,
            flux.asym.pos.liminf,
        )
    } else {
        (
            flux.min_value,
            flux.asym.neg.liminf,
            flux.asym.neg.limsup,
            flux.max_value,
        )
    };
    let life_end = atom
        .bracket
        .crossing()
        .unwrap_or_else(|| *atom.trace_plus.t.last().unwrap_or(&0.0));
    let t_min = 0.5 * life_end;
    let mut worst = 0.0f64;
    // Sharp route: the reservoir ghost flux is a trace value of H by
    // construction; the only allowance needed is the finite-surrogate
    // saturation.
    for (fs, lo, hi) in [
        (&atom.flux_plus, plus_lo, plus_hi),
        (&atom.flux_minus, minus_lo, minus_hi),
    ] {
        for (t, v) in fs.t.iter().zip(&fs.v) {
            if *t > life_end {
                continue;
            }
            worst = worst.max(lo - v - slack);
            worst = worst.max(v - hi - slack);
        }
    }
    // Window route: a sample is evidence only where (a) its stated
    // extraction error is small against the flux scale and (b) it agrees
    // with the ghost-flux estimator. Where the viscous wall layer is wider
    // than the windows (flux gap small against the state jump) the window
    // reads the wall state, which reaches the limit trace only as eps
    // vanishes; the disagreement with the ghost flux flags exactly that.
    let blind = 0.15 * flux.sup_norm.max(1e-9);
    for (tr, fs, lo, hi) in [
        (&atom.trace_plus, &atom.flux_plus, plus_lo, plus_hi),
        (&atom.trace_minus, &atom.flux_minus, minus_lo, minus_hi),
    ] {
        if fs.is_empty() {
            continue;
        }
        for i in 0..tr.t.len() {
            let t = tr.t[i];
            if t < t_min || t > life_end || tr.error[i] > blind {
                continue;
            }
            let allow = tr.error[i] + slack;
            if (tr.value[i] - fs.at(t)).abs() > allow {
                continue;
            }
            worst = worst.max(lo - tr.value[i] - allow);
            worst = worst.max(tr.value[i] - hi - allow);
        }
    }
    worst.max(0.0)
}

/// Pinch-route horizon for one positive (or negative) mass.
///
/// The candidate levels are the grid points whose ratio
/// |H(k) - H_inf| / M_k comes within 10% of the estimated pinch constant
/// and whose H(k) lies on the contradiction side of the limit; each yields
/// the horizon T = 2|c| / (C0 M_k), valid once (H(k) - H_inf) T exceeds
/// |c| plus the data tail integral. The smallest valid horizon is
/// returned; the measured extinction must not exceed it.
pub fn check_finiteness_h5(
    flux: &Flux,
    report: &HypothesisReport,
    mass: f64,
    u0: &Measure,
) -> Result<f64, VerifyError> {
    let tail = if mass > 0.0 { &report.pos } else { &report.neg };
    if !tail.h5 {
        return Err(VerifyError::RegimeMismatch {
            want: "H5",
            got: tail.regime,
        });
    }
    let c0 = tail.c0.expect("h5 implies a pinch constant");
    let hlim = tail.limit.expect("h5 implies a tail limit");
    let c = mass.abs();
    let sign = mass.signum();

    let mut horizon: Option<f64> = None;
    for &(k, mk) in &tail.tail_modulus {
        if mk <= 0.0 {
            continue;
        }
        let diff = flux.h(k) - hlim;
        let ratio = diff.abs() / mk;
        if ratio < 0.9 * c0 {
            continue;
        }
        // Contradiction branch: H above the limit for positive mass,
        // below it for negative mass.
        if sign * diff <= 0.0 {
            continue;
        }
        let t_n = 2.0 * c / (c0 * mk);
        // Data tail beyond the level never helps the mass survive; for the
        // contradiction we need the gain to beat |c| plus that tail.
        let tail_integral: f64 = u0
            .density
            .iter()
            .map(|v| (sign * v - k).max(0.0))
            .sum::<f64>()
            * u0.grid.dx;
        if diff.abs() * t_n > c + tail_integral {
            horizon = Some(horizon.map_or(t_n, |h: f64| h.min(t_n)));
        }
    }
    horizon.ok_or(VerifyError::NoContradictionLevel)
}

/// Assemble the waiting-time verdicts for a solved measure problem.
pub fn check_bounds(
    sol: &MeasureSolution,
    flux: &Flux,
    report: &HypothesisReport,
    u0: &Measure,
) -> WaitingTimeReport {
    let run = &sol.fine;
    // Time-resolution slack: the step never exceeds 0.4 dx / L.
    let slack_t = run.dx;
    let mut atoms = Vec::with_capacity(run.atoms.len());
    for atom in &run.atoms {
        let tail = if atom.mass0 > 0.0 {
            &report.pos
        } else {
            &report.neg
        };
        let regime = regime_for(tail, true);
        let lower_bound = if flux.sup_norm > 0.0 {
            atom.mass0.abs() / (2.0 * flux.sup_norm)
        } else {
            f64::INFINITY
        };
        let gap = if atom.mass0 > 0.0 {
            flux.asym.pos.gap()
        } else {
            flux.asym.neg.gap()
        };
        let upper_bound = (gap > 1e-9).then(|| atom.mass0.abs() / gap);
        let h5_horizon = if regime == Regime::H5 {
            check_finiteness_h5(flux, report, atom.mass0, u0).ok()
        } else {
            None
        };

        let prediction = match regime {
            Regime::NoLimit => Prediction::FiniteWithin(upper_bound.unwrap_or(f64::INFINITY)),
            Regime::H5 => h5_horizon.map_or(Prediction::Finite, Prediction::FiniteWithin),
            Regime::H6 | Regime::H4 => Prediction::Finite,
            Regime::EventuallyConstant => Prediction::MayPersist,
            Regime::Conjecture => Prediction::Unknown,
        };

        let (lower_ok, lower_slack) = match atom.bracket {
            Bracket::Extinguished { t_hi, .. } => {
                (t_hi + slack_t >= lower_bound, t_hi + slack_t - lower_bound)
            }
            // Survival past any finite time is consistent with the lower
            // bound.
            _ => (true, f64::INFINITY),
        };
        let (upper_ok, upper_slack) = match upper_bound {
            None => (None, None),
            Some(ub) => match atom.bracket {
                Bracket::Extinguished { t_lo, .. } => {
                    (Some(t_lo - slack_t <= ub), Some(ub - (t_lo - slack_t)))
                }
                Bracket::NotByHorizon { horizon } | Bracket::Unresolved { horizon, .. } => {
                    (Some(horizon <= ub + slack_t), Some(ub - horizon))
                }
            },
        };
        let horizon_ok = h5_horizon.map(|h| match atom.bracket {
            Bracket::Extinguished { t_hi, .. } => t_hi <= h + slack_t,
            Bracket::NotByHorizon { horizon } | Bracket::Unresolved { horizon, .. } => {
                horizon <= h + slack_t
            }
        });

        let envelope_violation = trace_envelope_violation(atom, flux);
        let envelope_ok = envelope_violation == 0.0;

        let pass =
            lower_ok && upper_ok.unwrap_or(true) && horizon_ok.unwrap_or(true) && envelope_ok;
        atoms.push(AtomVerdict {
            x: atom.x,
            mass0: atom.mass0,
            bracket: atom.bracket,
            regime,
            prediction,
            lower_bound,
            lower_ok,
            lower_slack,
            upper_bound,
            upper_ok,
            upper_slack,
            h5_horizon,
            horizon_ok,
            envelope_violation,
            envelope_ok,
            pass,
        });
    }
    WaitingTimeReport {
        all_pass: atoms.iter().all(|a| a.pass),
        atoms,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Worst cellwise excess of u over v across probe times.
    pub density_excess: f64,
    pub density_tol: f64,
    pub density_ok: bool,
    /// Worst excess of a u atom mass over the matching v atom mass.
    pub atom_excess: f64,
    pub atom_ok: bool,
    /// Worst cellwise excess of U over V.
    pub hj_excess: f64,
    pub hj_ok: bool,
    pub pass: bool,
}

fn density_on_global(run: &LevelRun, t: f64) -> Vec<f64> {
    let ep = run
        .epochs
        .iter()
        .find(|e| t <= e.t1 + 1e-12)
        .unwrap_or_else(|| run.epochs.last().unwrap());
    let mut out = Vec::with_capacity(run.n);
    for field in &ep.fields {
        let k = field.nearest_time(t);
        out.extend_from_slice(&field.values[k]);
    }
    out
}

fn hj_on_global(hjs: &HjSolution, t: f64) -> Vec<f64> {
    let ep = hjs
        .epochs
        .iter()
        .find(|e| t <= e.t1 + 1e-12)
        .unwrap_or_else(|| hjs.epochs.last().unwrap());
    let mut out = Vec::new();
    for seg in &ep.segments {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, ti) in seg.times.iter().enumerate() {
            if (ti - t).abs() < dist {
                dist = (ti - t).abs();
                best = i;
            }
        }
        out.extend_from_slice(&seg.values[best]);
    }
    out
}

/// Solve both problems and assert the order is preserved: densities
/// cellwise, matching atom masses, and the reconstructed solutions.
pub fn check_comparison(
    flux: &Flux,
    u0: &Measure,
    v0: &Measure,
    t_max: f64,
    opts: &RefineOpts,
) -> Result<ComparisonReport, VerifyError> {
    if u0.grid != v0.grid {
        return Err(VerifyError::HypothesisViolated(
            "measures must share a grid".into(),
        ));
    }
    for (a, b) in u0.density.iter().zip(&v0.density) {
        if a > &(b + 1e-12) {
            return Err(VerifyError::HypothesisViolated(
                "density ordering fails".into(),
            ));
        }
    }
    // Atom-wise ordering with missing atoms treated as zero mass.
    let mut locations: Vec<f64> = u0.atoms.iter().map(|a| a.x).collect();
    for b in &v0.atoms {
        if !locations.iter().any(|x| (x - b.x).abs() < 1e-12) {
            locations.push(b.x);
        }
    }
    locations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for x in &locations {
        let cu = u0
            .atoms
            .iter()
            .find(|a| (a.x - x).abs() < 1e-12)
            .map_or(0.0, |a| a.mass);
        let cv = v0
            .atoms
            .iter()
            .find(|a| (a.x - x).abs() < 1e-12)
            .map_or(0.0, |a| a.mass);
        if cu > cv + 1e-12 {
            return Err(VerifyError::HypothesisViolated(format!(
                "atom ordering fails at x = {x}"
            )));
        }
    }

    let su = solve_measure_cauchy(flux, u0, t_max, opts)?;
    let sv = solve_measure_cauchy(flux, v0, t_max, opts)?;

    // Densities at probe times.
    let probes = [0.25 * t_max, 0.5 * t_max, 0.75 * t_max, t_max];
    let mut density_excess = 0.0f64;
    let mut density_tol = 0.0f64;
    for &t in &probes {
        let du = density_on_global(&su.fine, t);
        let dv = density_on_global(&sv.fine, t);
        // Gradient-scaled tolerance: shocks shifted by O(dx) between the
        // two runs create O(jump) pointwise differences.
        let mut grad = 0.0f64;
        for w in du.windows(2) {
            grad = grad.max((flux.h(w[1]) - flux.h(w[0])).abs() / su.fine.dx);
        }
        let tol = 5.0 * su.fine.dx * grad;
        density_tol = density_tol.max(tol);
        for (a, b) in du.iter().zip(&dv) {
            density_excess = density_excess.max(a - b - tol);
        }
    }
    let density_ok = density_excess <= 0.0;

    // Shared atoms: mass ordering over time.
    let mut atom_excess = 0.0f64;
    for au in &su.fine.atoms {
        if let Some(av) = sv
            .fine
            .atoms
            .iter()
            .find(|a| (a.snapped_x - au.snapped_x).abs() < su.fine.dx * 0.5)
        {
            let mv = Series {
                t: av.mass.t.clone(),
                v: av.mass.v.clone(),
            };
            for (t, m) in au.mass.t.iter().zip(&au.mass.v) {
                atom_excess = atom_excess.max(m - mv.at(*t));
            }
        } else {
            // Unmatched u atom must be negative; its mass stays <= 0.
            for m in &au.mass.v {
                atom_excess = atom_excess.max(*m);
            }
        }
    }
    let atom_tol = su
        .fine
        .atoms
        .iter()
        .map(|a| a.tol_mass)
        .fold(1e-9, f64::max);
    let atom_ok = atom_excess <= atom_tol;

    // Reconstructed solutions, anchored at the left edge so the pointwise
    // order follows from the measure order.
    let anchor = u0.grid.x_lo + 1.5 * u0.grid.dx;
    let pu = primitive_function(u0, anchor)?;
    let pv = primitive_function(v0, anchor)?;
    let hu = hj::reconstruct(&su.fine, &pu)?;
    let hv = hj::reconstruct(&sv.fine, &pv)?;
    let mut hj_excess = 0.0f64;
    for &t in &probes {
        let a = hj_on_global(&hu, t);
        let b = hj_on_global(&hv, t);
        for (x, y) in a.iter().zip(&b) {
            hj_excess = hj_excess.max(x - y - density_tol * 5.0 * su.fine.dx);
        }
    }
    // U differences integrate density differences; allow the same scaled
    // tolerance.
    let hj_tol = (density_tol * t_max).max(5.0 * su.fine.dx);
    let hj_ok = hj_excess <= hj_tol;

    Ok(ComparisonReport {
        density_excess,
        density_tol,
        density_ok,
        atom_excess,
        atom_ok,
        hj_excess,
        hj_ok,
        pass: density_ok && atom_ok && hj_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::default_k_grid;
    use crate::measure::Atom;

    fn delta(window: (f64, f64), n: usize, mass: f64) -> Measure {
        Measure::from_density_fn(window, n, |_| 0.0, vec![Atom { x: 0.0, mass }]).unwrap()
    }

    #[test]
    fn pinch_bounds_coincide_and_bracket_them() {
        let f = Flux::from_registry("sin").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        let u0 = delta((-1.5, 1.5), 150, 1.0);
        let sol = solve_measure_cauchy(&f, &u0, 0.7, &RefineOpts::coarse()).unwrap();
        let wt = check_bounds(&sol, &f, &rep, &u0);
        let a = &wt.atoms[0];
        assert!((a.lower_bound - 0.5).abs() < 2e-3, "{}", a.lower_bound);
        assert!((a.upper_bound.unwrap() - 0.5).abs() < 2e-3);
        assert_eq!(a.regime, Regime::NoLimit);
        assert!(a.lower_ok && a.upper_ok.unwrap());
        assert!(a.envelope_ok, "envelope violation {}", a.envelope_violation);
        assert!(wt.all_pass);
    }

    #[test]
    fn constant_flux_predicts_persistence() {
        let f = Flux::from_registry("constant(0.7)").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        let u0 = delta((-1.0, 1.0), 100, 1.0);
        let sol = solve_measure_cauchy(&f, &u0, 0.5, &RefineOpts::coarse()).unwrap();
        let wt = check_bounds(&sol, &f, &rep, &u0);
        let a = &wt.atoms[0];
        assert_eq!(a.regime, Regime::EventuallyConstant);
        assert_eq!(a.prediction, Prediction::MayPersist);
        assert!(matches!(a.bracket, Bracket::NotByHorizon { .. }));
        assert!(a.upper_bound.is_none());
        assert!(wt.all_pass);
    }

    #[test]
    fn h5_horizon_scales_linearly_in_the_mass() {
        let f = Flux::from_registry("exp_sin").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        let u0 = delta((-1.0, 1.0), 100, 1.0);
        let h1 = check_finiteness_h5(&f, &rep, 1.0, &u0).unwrap();
        let h2 = check_finiteness_h5(&f, &rep, 0.5, &u0).unwrap();
        assert!(h1 > 3.0 && h1 < 12.0, "horizon {h1}");
        assert!((h2 / h1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn h5_horizon_rejects_wrong_regimes() {
        let f = Flux::from_registry("sin").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        let u0 = delta((-1.0, 1.0), 100, 1.0);
        assert!(matches!(
            check_finiteness_h5(&f, &rep, 1.0, &u0),
            Err(VerifyError::RegimeMismatch { .. })
        ));
    }

    #[test]
    fn comparison_of_equal_measures_is_equality() {
        let f = Flux::from_registry("sin").unwrap();
        let u0 = delta((-1.5, 1.5), 150, 1.0);
        let rep = check_comparison(&f, &u0, &u0.clone(), 0.6, &RefineOpts::coarse()).unwrap();
        assert!(rep.pass);
        assert!(rep.atom_excess < 1e-12);
    }

    #[test]
    fn ordered_masses_extinguish_in_order() {
        let f = Flux::from_registry("sin").unwrap();
        let u0 = delta((-2.0, 2.0), 200, 1.0);
        let v0 = delta((-2.0, 2.0), 200, 2.0);
        let rep = check_comparison(&f, &u0, &v0, 1.2, &RefineOpts::coarse()).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn opposite_sign_atoms_preserve_order() {
        let f = Flux::from_registry("sin").unwrap();
        let u0 = delta((-2.0, 2.0), 200, -1.0);
        let v0 = delta((-2.0, 2.0), 200, 1.0);
        let rep = check_comparison(&f, &u0, &v0, 0.7, &RefineOpts::coarse()).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn violated_hypothesis_is_rejected() {
        let f = Flux::from_registry("sin").unwrap();
        let u0 = delta((-2.0, 2.0), 200, 2.0);
        let v0 = delta((-2.0, 2.0), 200, 1.0);
        assert!(matches!(
            check_comparison(&f, &u0, &v0, 0.5, &RefineOpts::coarse()),
            Err(VerifyError::HypothesisViolated(_))
        ));
    }
}
