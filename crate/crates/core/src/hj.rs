//! Reconstruction of the discontinuous Hamilton-Jacobi solution from the
//! measure-valued field.
//!
//! Away from the singular points, U(x,t) = U_0(x) - integral of H(u(x,s))
//! over (0,t); at each singular point the one-sided values follow the
//! window-extrapolated integrals of the one-sided traces, so the jump
//! J_t = U(x+,t) - U(x-,t) is an estimator of the point mass that is
//! independent of the ghost-flux mass ledger. The two are compared in
//! [`check_correspondence`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::Flux;
use crate::grid::{Grid1, Series};
use crate::measure::Piecewise;
use crate::singular::{Bracket, LevelRun};

#[derive(Debug, Error)]
pub enum HjError {
    #[error("breakpoints of the primitive do not match the atom locations")]
    BreakpointMismatch,
    #[error("trace integrals missing from the solution fields")]
    MissingIntegrals,
}

/// U on one sub-rectangle at the stored times.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HjSegment {
    pub grid: Grid1,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HjEpoch {
    pub t0: f64,
    pub t1: f64,
    pub live_orig: Vec<usize>,
    pub segments: Vec<HjSegment>,
}

/// One-sided boundary values and jump of U at a singular point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpRecord {
    pub x: f64,
    pub value_minus: Series,
    pub value_plus: Series,
    pub jump: Series,
    pub bracket: Bracket,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HjSolution {
    pub epochs: Vec<HjEpoch>,
    pub jumps: Vec<JumpRecord>,
}

/// Crossing-or-horizon bracket for a series that may carry quadrature
/// noise (no monotonicity enforcement; that is a separate check).
fn bracket_of_series(t: &[f64], v: &[f64], tol: f64) -> Bracket {
    let sign = v[0].signum();
    let horizon = *t.last().unwrap();
    for i in 1..v.len() {
        if sign * v[i] <= 0.0 {
            let slope = (v[i] - v[i - 1]) / (t[i] - t[i - 1]);
            let crossing = if v[i] == 0.0 {
                t[i]
            } else {
                t[i - 1] - v[i - 1] / slope
            };
            let half = (tol / slope.abs()).min(horizon);
            return Bracket::Extinguished {
                t_lo: (crossing - half).max(0.0),
                crossing,
                t_hi: crossing + half,
            };
        }
    }
    let min_abs = v.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if min_abs > tol {
        Bracket::NotByHorizon { horizon }
    } else {
        let t_lo = t
            .iter()
            .zip(v)
            .rev()
            .find(|(_, x)| x.abs() > tol)
            .map(|(t, _)| *t)
            .unwrap_or(0.0);
        Bracket::Unresolved { t_lo, horizon }
    }
}

/// Rebuild U from the measure solution and the initial primitive.
pub fn reconstruct(run: &LevelRun, u0: &Piecewise) -> Result<HjSolution, HjError> {
    let bps = u0.breakpoints();
    if bps.len() != run.atoms.len() {
        return Err(HjError::BreakpointMismatch);
    }
    for (bp, atom) in bps.iter().zip(&run.atoms) {
        if (bp - atom.snapped_x).abs() > run.dx {
            return Err(HjError::BreakpointMismatch);
        }
    }

    // Base values of U at cell centers, advanced epoch by epoch.
    let n = run.n;
    let mut base = vec![0.0; n];
    {
        let mut cell = 0usize;
        let first = &run.epochs[0];
        for (slot, field) in first.fields.iter().enumerate() {
            for i in 0..field.grid.n {
                base[cell + i] = u0.pieces[slot].eval(field.grid.center(i));
            }
            cell += field.grid.n;
        }
    }

    let mut epochs = Vec::with_capacity(run.epochs.len());
    for ep in &run.epochs {
        if ep.fields.iter().any(|f| f.cum_hv.len() != f.times.len()) {
            return Err(HjError::MissingIntegrals);
        }
        let mut segments = Vec::with_capacity(ep.fields.len());
        let mut cell = 0usize;
        for field in &ep.fields {
            let m = field.grid.n;
            let values: Vec<Vec<f64>> = field
                .cum_hv
                .iter()
                .map(|cum| {
                    (0..m)
                        .map(|i| base[cell + i] - cum[i])
                        .collect::<Vec<f64>>()
                })
                .collect();
            segments.push(HjSegment {
                grid: field.grid,
                times: field.times.clone(),
                values,
            });
            cell += m;
        }
        // Advance the base to the epoch end.
        let mut cell = 0usize;
        for field in &ep.fields {
            let last = field.cum_hv.last().unwrap();
            for i in 0..field.grid.n {
                base[cell + i] -= last[i];
            }
            cell += field.grid.n;
        }
        epochs.push(HjEpoch {
            t0: ep.t0,
            t1: ep.t1,
            live_orig: ep.live_orig.clone(),
            segments,
        });
    }

    // One-sided boundary values from the integrated traces.
    let mut jumps = Vec::with_capacity(run.atoms.len());
    for (j, atom) in run.atoms.iter().enumerate() {
        if atom.trace_minus.integral.is_empty() || atom.trace_plus.integral.is_empty() {
            return Err(HjError::MissingIntegrals);
        }
        let base_minus = u0.pieces[j].right_value();
        let base_plus = u0.pieces[j + 1].left_value();
        let mut value_minus = Series::default();
        let mut value_plus = Series::default();
        let mut jump = Series::default();
        for (i, &t) in atom.trace_minus.t.iter().enumerate() {
            let vm = base_minus - atom.trace_minus.integral[i];
            let vp = base_plus - atom.trace_plus.integral[i];
            value_minus.push(t, vm);
            value_plus.push(t, vp);
            jump.push(t, vp - vm);
        }
        let bracket = bracket_of_series(&jump.t, &jump.v, 2.0 * atom.tol_mass);
        jumps.push(JumpRecord {
            x: atom.snapped_x,
            value_minus,
            value_plus,
            jump,
            bracket,
        });
    }

    Ok(HjSolution { epochs, jumps })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    /// Worst distributional residual of U_x = u over the test battery.
    pub distributional_residual: f64,
    /// Per atom, max over time of |jump minus ledger mass|.
    pub jump_vs_mass: Vec<f64>,
    /// L1 distance between the centered x-derivative of U and u at the
    /// final time.
    pub grad_l1: f64,
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        q * q * q
    }
}

fn bump_d(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        -6.0 * s * q * q
    }
}

/// Check that the measure is the space derivative of U: distributional
/// pairing against a tensor battery, jump-versus-mass agreement, and an
/// interior finite-difference comparison.
pub fn check_correspondence(run: &LevelRun, hj: &HjSolution) -> CorrespondenceReport {
    let (xl, xr) = (
        run.epochs[0].fields[0].grid.x_lo,
        run.epochs[0].fields.last().unwrap().grid.x_hi(),
    );
    let width = xr - xl;
    let t_max = run.epochs.last().unwrap().t1;

    let rhos: Vec<(f64, f64)> = vec![
        (xl + 0.5 * width, 0.4 * width),
        (xl + 0.35 * width, 0.3 * width),
        (xl + 0.62 * width, 0.27 * width),
    ];
    let hs: Vec<(f64, f64)> = vec![(0.5 * t_max, 0.45 * t_max), (0.35 * t_max, 0.3 * t_max)];

    // G(t) = sum over cells of U rho' dx + <u(t), rho>; the residual is the
    // h-weighted time integral of G.
    let mut worst = 0.0f64;
    for &(rc, rw) in &rhos {
        for &(hc, hw) in &hs {
            let mut residual = 0.0;
            for (ei, ep) in hj.epochs.iter().enumerate() {
                let rep = &run.epochs[ei];
                let times = &ep.segments[0].times;
                for ti in 0..times.len() {
                    let t = times[ti];
                    let ht = bump((t - hc) / hw);
                    if ht == 0.0 {
                        continue;
                    }
                    let wt = if ti == 0 {
                        0.5 * (times[1] - times[0])
                    } else if ti == times.len() - 1 {
                        0.5 * (times[ti] - times[ti - 1])
                    } else {
                        0.5 * (times[ti + 1] - times[ti - 1])
                    };
                    if wt <= 0.0 {
                        continue;
                    }
                    let mut g = 0.0;
                    for (seg, field) in ep.segments.iter().zip(&rep.fields) {
                        for i in 0..seg.grid.n {
                            let x = seg.grid.center(i);
                            let s = (x - rc) / rw;
                            let rho_d = bump_d(s) / rw;
                            let rho = bump(s);
                            g += (seg.values[ti][i] * rho_d + field.values[ti][i] * rho)
                                * seg.grid.dx;
                        }
                    }
                    // Atom contribution to <u(t), rho>.
                    for &orig in &rep.live_orig {
                        let a = &run.atoms[orig];
                        let mass = Series {
                            t: a.mass.t.clone(),
                            v: a.mass.v.clone(),
                        };
                        g += mass.at(t) * bump((a.snapped_x - rc) / rw);
                    }
                    residual += wt * ht * g;
                }
            }
            worst = worst.max(residual.abs());
        }
    }

    // Jump vs ledger mass.
    let jump_vs_mass = hj
        .jumps
        .iter()
        .zip(&run.atoms)
        .map(|(jr, a)| {
            let mass = Series {
                t: a.mass.t.clone(),
                v: a.mass.v.clone(),
            };
            jr.jump
                .t
                .iter()
                .zip(&jr.jump.v)
                .map(|(t, j)| (j - mass.at(*t)).abs())
                .fold(0.0f64, f64::max)
        })
        .collect();

    // Interior gradient check at the final time of the last epoch.
    let last_ep = hj.epochs.last().unwrap();
    let rep = run.epochs.last().unwrap();
    let mut grad_l1 = 0.0;
    for (seg, field) in last_ep.segments.iter().zip(&rep.fields) {
        let k = seg.values.len() - 1;
        let m = seg.grid.n;
        for i in 1..m.saturating_sub(1) {
            let du = (seg.values[k][i + 1] - seg.values[k][i - 1]) / (2.0 * seg.grid.dx);
            grad_l1 += (du - field.values[k][i]).abs() * seg.grid.dx;
        }
    }

    CorrespondenceReport {
        distributional_residual: worst,
        jump_vs_mass,
        grad_l1,
    }
}

/// Decay estimate for one jump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpDecayReport {
    pub x: f64,
    /// limsup - liminf of H at the relevant infinity.
    pub gap: f64,
    /// max over sampled pairs t0 < t1 of |J(t1)| - (|J(t0)| - gap (t1-t0));
    /// nonpositive (within tolerance) when the decay estimate holds.
    pub worst_excess: f64,
    pub pass: bool,
}

/// Check |J_{t1}| <= |J_{t0}| - gap * (t1 - t0) on sampled pairs before the
/// waiting time, with the gap read from the flux tail on the side of the
/// jump's sign. Pairs earlier than `t_skip` are ignored (the window traces
/// need the boundary structures to span the extraction windows).
pub fn jump_decay_check(
    hj: &HjSolution,
    flux: &Flux,
    slack: f64,
    t_skip: f64,
) -> Vec<JumpDecayReport> {
    hj.jumps
        .iter()
        .map(|jr| {
            let sign = jr.jump.v.first().copied().unwrap_or(0.0).signum();
            let gap = if sign > 0.0 {
                flux.asym.pos.gap()
            } else {
                flux.asym.neg.gap()
            };
            let cut = jr.bracket.crossing().unwrap_or(f64::INFINITY);
            let idx: Vec<usize> = (0..jr.jump.len())
                .filter(|&i| {
                    jr.jump.t[i] < cut && jr.jump.t[i] >= t_skip && sign * jr.jump.v[i] > 0.0
                })
                .collect();
            let stride = (idx.len() / 48).max(1);
            let sampled: Vec<usize> = idx.iter().copied().step_by(stride).collect();
            let mut worst = f64::NEG_INFINITY;
            for (a, &i0) in sampled.iter().enumerate() {
                for &i1 in &sampled[a + 1..] {
                    let dt = jr.jump.t[i1] - jr.jump.t[i0];
                    let excess = jr.jump.v[i1].abs() - (jr.jump.v[i0].abs() - gap * dt);
                    worst = worst.max(excess);
                }
            }
            if worst == f64::NEG_INFINITY {
                worst = 0.0;
            }
            JumpDecayReport {
                x: jr.x,
                gap,
                worst_excess: worst,
                pass: worst <= slack,
            }
        })
        .collect()
}

/// Largest |U(x,t1) - U(x,t2)| / |t1 - t2| over stored level pairs,
/// restricted to cells where the viscous flux eps*|u_x| stays below
/// `grad_cap` at both levels (inside viscous shock and reservoir layers
/// that flux is O(1) by construction and disappears only with eps).
/// Bounded by sup |H| + grad_cap for the exact solution.
pub fn time_lipschitz(hj: &HjSolution, run: &LevelRun, grad_cap: f64) -> f64 {
    let mut worst = 0.0f64;
    for (ep, rep) in hj.epochs.iter().zip(&run.epochs) {
        for (seg, field) in ep.segments.iter().zip(&rep.fields) {
            let n = seg.grid.n;
            if n < 3 {
                continue;
            }
            let steep = |k: usize, i: usize| -> bool {
                let ux = (field.values[k][i + 1] - field.values[k][i - 1]) / (2.0 * seg.grid.dx);
                run.eps * ux.abs() > grad_cap
            };
            for k in 1..seg.times.len() {
                let dt = seg.times[k] - seg.times[k - 1];
                if dt <= 1e-14 {
                    continue;
                }
                for i in 1..n - 1 {
                    if steep(k, i) || steep(k - 1, i) {
                        continue;
                    }
                    worst = worst.max((seg.values[k][i] - seg.values[k - 1][i]).abs() / dt);
                }
            }
        }
    }
    worst
}

/// Linear growth constants (A, B) with |U_0(x)| <= A + B |x| on the window.
pub fn growth_constants(u0: &Piecewise) -> (f64, f64) {
    let b = u0.max_slope();
    let (lo, hi) = u0.window();
    let mut a = 0.0f64;
    let steps = 512;
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        a = a.max(u0.eval(x).abs() - b * x.abs());
    }
    (a, b)
}

/// Dominating plane above U on the right of a positive jump: for a slope
/// k > B with H(k) above the tail limit, the plane
/// v(x,t) = A_j + k (x - x_j) - H(k) t starts above U_0 on [x_j, inf) and
/// stays above U. Returns the worst excess U - v over the grid, or None
/// when no admissible slope exists.
pub fn plane_upper_bound(
    hj: &HjSolution,
    run: &LevelRun,
    flux: &Flux,
    u0: &Piecewise,
    jump_idx: usize,
) -> Option<f64> {
    let hplus = flux.asym.pos.limit?;
    let jr = &hj.jumps[jump_idx];
    if jr.jump.v.first().copied().unwrap_or(0.0) <= 0.0 {
        return None;
    }
    let (a0, b0) = growth_constants(u0);
    // Smallest admissible slope above B with H(k) > H_inf makes the bound
    // tightest in time.
    let mut k_best: Option<f64> = None;
    let mut margin_best = 0.0;
    let mut k = b0 + 0.25;
    while k <= b0 + 24.0 {
        let margin = flux.h(k) - hplus;
        if margin > 1e-6 && margin > margin_best {
            margin_best = margin;
            k_best = Some(k);
        }
        k += 0.05;
    }
    let k = k_best?;
    let a_j = a0 + b0 * jr.x.abs();
    let cut = jr.bracket.crossing().unwrap_or(f64::INFINITY);

    let mut worst = f64::NEG_INFINITY;
    for ep in &hj.epochs {
        // Only segments right of the jump.
        for seg in &ep.segments {
            if seg.grid.x_lo < jr.x - run.dx * 0.5 {
                continue;
            }
            for (ti, t) in seg.times.iter().enumerate() {
                if *t >= cut {
                    break;
                }
                for i in 0..seg.grid.n {
                    let x = seg.grid.center(i);
                    let v = a_j + k * (x - jr.x) - flux.h(k) * t;
                    worst = worst.max(seg.values[ti][i] - v);
                }
            }
        }
    }
    if worst == f64::NEG_INFINITY {
        None
    } else {
        Some(worst)
    }
}

/// Growth bound on the left value of a positive jump:
/// U(x_j^-, t) >= U_0(x_j^-) - H_inf t. Returns the worst deficit.
pub fn one_sided_growth(hj: &HjSolution, flux: &Flux, jump_idx: usize) -> Option<f64> {
    let hplus = flux.asym.pos.limit?;
    let jr = &hj.jumps[jump_idx];
    if jr.jump.v.first().copied().unwrap_or(0.0) <= 0.0 {
        return None;
    }
    let base = jr.value_minus.v[0];
    let cut = jr.bracket.crossing().unwrap_or(f64::INFINITY);
    let mut worst = 0.0f64;
    for (t, v) in jr.value_minus.t.iter().zip(&jr.value_minus.v) {
        if *t >= cut {
            break;
        }
        worst = worst.max((base - hplus * t) - v);
    }
    Some(worst)
}
