//! Singular limits: point masses as infinite Dirichlet reservoirs.
//!
//! The measure-valued problem is solved by decomposing the window at the
//! atom locations. Each sub-rectangle gets a reservoir boundary whose sign
//! follows the adjacent atom (+infinity next to a positive mass, -infinity
//! next to a negative one); the reservoirs are realized by a growing
//! sequence of finite surrogate levels and the viscosity/grid pair is
//! refined together. Each atom's mass decays by the difference of the
//! one-sided boundary fluxes of H(u); the flux difference is integrated
//! exactly from the scheme's ghost fluxes, so total mass (density plus
//! atoms) is conserved to rounding. When a mass first reaches zero the
//! stepper lands on the crossing, drops the atom, and restarts the
//! decomposition with one singular point fewer.
//!
//! Weak one-sided traces of H(u) are measured a second, independent way by
//! window averaging adjacent to each singular boundary with extrapolation
//! in the window width; the two routes are compared downstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::{aitken_tail, Flux};
use crate::grid::{Grid1, Series};
use crate::measure::Measure;
use crate::viscous::{cfl_dt, Bc, FluxTables, GridField, Segment, ViscousError, MAX_STEPS};

#[derive(Debug, Error)]
pub enum SingularError {
    #[error("{what} schedule exhausted before tolerance {tol:.2e}; residuals {residuals:?}")]
    NotConverged {
        what: &'static str,
        residuals: Vec<f64>,
        tol: f64,
    },
    #[error("atom {atom} mass overshot zero by {overshoot:.3e}")]
    MassOvershoot { atom: usize, overshoot: f64 },
    #[error("|mass| series increases by {rise:.3e} at t = {t}")]
    MonotonicityViolation { t: f64, rise: f64 },
    #[error("smallest extraction window has {cells} cells; need at least 4")]
    WindowTooNarrow { cells: usize },
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error("atoms collide or touch the window edge after snapping to the coarse grid")]
    AtomSnapCollision,
    #[error("operation requires an atom-free measure")]
    UnexpectedAtoms,
    #[error(transparent)]
    Viscous(#[from] ViscousError),
}

/// Refinement and tolerance knobs for the singular limits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefineOpts {
    /// Cell counts per level, increasing, each dividing the next.
    pub n_cells: Vec<usize>,
    /// eps at each level is `eps_over_dx * lip * dx`.
    pub eps_over_dx: f64,
    /// Interior L1 tolerance between consecutive grid levels.
    pub tol_conv: f64,
    /// Reservoir surrogate levels as multiples of max(1, sup |density|).
    pub surrogate_multipliers: Vec<f64>,
    /// Relative motion of the extinction data accepted between consecutive
    /// surrogates.
    pub bracket_tol_rel: f64,
    /// Snapshot budget per epoch.
    pub snapshots: usize,
    /// tol_mass = max(tol_mass_rel * |c|, tol_mass_cells * dx * interior sup).
    pub tol_mass_rel: f64,
    pub tol_mass_cells: f64,
    /// Extraction window widths in cells, decreasing.
    pub trace_windows: Vec<usize>,
    /// When set, stop this fraction of the last extinction time after all
    /// masses are gone instead of running to the horizon.
    pub stop_after_extinction_margin: Option<f64>,
}

impl Default for RefineOpts {
    fn default() -> Self {
        RefineOpts {
            n_cells: vec![1000, 2000, 4000],
            eps_over_dx: 2.0,
            tol_conv: 0.05,
            surrogate_multipliers: vec![20.0, 40.0, 80.0, 160.0],
            bracket_tol_rel: 0.01,
            snapshots: 48,
            tol_mass_rel: 1e-3,
            tol_mass_cells: 10.0,
            trace_windows: vec![32, 16, 8],
            stop_after_extinction_margin: None,
        }
    }
}

impl RefineOpts {
    /// Small preset for unit tests.
    pub fn coarse() -> Self {
        RefineOpts {
            n_cells: vec![200, 400],
            surrogate_multipliers: vec![20.0, 40.0],
            tol_conv: 0.25,
            trace_windows: vec![16, 8, 4],
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), SingularError> {
        if self.n_cells.is_empty() || self.surrogate_multipliers.is_empty() {
            return Err(SingularError::BadSchedule("empty schedule".into()));
        }
        for w in self.n_cells.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(SingularError::BadSchedule(format!(
                    "cell counts must increase by integer factors, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for w in self.surrogate_multipliers.windows(2) {
            if w[1] <= w[0] {
                return Err(SingularError::BadSchedule(
                    "surrogate multipliers must increase".into(),
                ));
            }
        }
        if self.trace_windows.len() < 2 || self.trace_windows.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SingularError::BadSchedule(
                "trace windows must be decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// Which one-sided limit a trace or diagnostic refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Limit from below (field left of the point).
    Minus,
    /// Limit from above (field right of the point).
    Plus,
}

/// Window-extrapolated one-sided weak trace of H(u) at a singular point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceSeries {
    pub x: f64,
    pub side: Side,
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    /// Per-time extrapolation error estimate.
    pub error: Vec<f64>,
    /// Window-extrapolated running integral of the trace from t[0]
    /// (extracted from the per-cell flux integrals, so it is free of the
    /// early window transient). Empty when the field carries no integrals.
    pub integral: Vec<f64>,
    pub window_cells: Vec<usize>,
}

impl TraceSeries {
    /// Trapezoid integral of the trace from its start to `t`.
    pub fn integral_to(&self, t: f64) -> f64 {
        let s = Series {
            t: self.t.clone(),
            v: self.value.clone(),
        };
        s.integral_to(t)
    }

    /// The extrapolated running integral at `t` (linear in time between
    /// stored samples).
    pub fn integral_at(&self, t: f64) -> f64 {
        let s = Series {
            t: self.t.clone(),
            v: self.integral.clone(),
        };
        s.at(t)
    }

    pub fn max_error(&self) -> f64 {
        self.error.iter().fold(0.0f64, |m, e| m.max(*e))
    }
}

/// Extinction bracket of one point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bracket {
    /// Mass crossed zero at `crossing`, resolvable to the bracket ends.
    Extinguished { t_lo: f64, crossing: f64, t_hi: f64 },
    /// Mass still above tolerance at the horizon.
    NotByHorizon { horizon: f64 },
    /// Mass dipped below tolerance without a clean crossing.
    Unresolved { t_lo: f64, horizon: f64 },
}

impl Bracket {
    pub fn crossing(&self) -> Option<f64> {
        match self {
            Bracket::Extinguished { crossing, .. } => Some(*crossing),
            _ => None,
        }
    }

    pub fn width(&self) -> Option<f64> {
        match self {
            Bracket::Extinguished { t_lo, t_hi, .. } => Some(t_hi - t_lo),
            _ => None,
        }
    }
}

/// Locate the extinction bracket of a signed mass series.
///
/// The input is the raw running mass (it may cross zero); the bracket is
/// centered on the interpolated crossing with half-width tol_mass/|slope|.
/// |mass| must be nonincreasing up to the crossing.
pub fn waiting_time(t: &[f64], mass: &[f64], tol_mass: f64) -> Result<Bracket, SingularError> {
    assert!(t.len() == mass.len() && !t.is_empty());
    let sign = mass[0].signum();
    let horizon = *t.last().unwrap();
    let slack = 1e-9 * mass[0].abs() + 1e-14;

    let mut cross_idx = None;
    for i in 1..mass.len() {
        if sign * mass[i] <= 0.0 {
            cross_idx = Some(i);
            break;
        }
        if sign * (mass[i] - mass[i - 1]) > slack {
            return Err(SingularError::MonotonicityViolation {
                t: t[i],
                rise: sign * (mass[i] - mass[i - 1]),
            });
        }
    }

    match cross_idx {
        Some(i) => {
            let (t0, t1) = (t[i - 1], t[i]);
            let (m0, m1) = (mass[i - 1], mass[i]);
            let slope = (m1 - m0) / (t1 - t0);
            let crossing = if m1 == 0.0 { t1 } else { t0 - m0 / slope };
            let half = (tol_mass / slope.abs()).min(horizon);
            Ok(Bracket::Extinguished {
                t_lo: (crossing - half).max(0.0),
                crossing,
                t_hi: crossing + half,
            })
        }
        None => {
            let min_abs = mass.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if min_abs > tol_mass {
                Ok(Bracket::NotByHorizon { horizon })
            } else {
                let t_lo = t
                    .iter()
                    .zip(mass)
                    .rev()
                    .find(|(_, m)| m.abs() > tol_mass)
                    .map(|(t, _)| *t)
                    .unwrap_or(0.0);
                Ok(Bracket::Unresolved { t_lo, horizon })
            }
        }
    }
}

/// Measured evolution of one point mass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomTrajectory {
    pub x: f64,
    pub snapped_x: f64,
    pub mass0: f64,
    /// Raw running mass (ghost-flux route), decimated in time.
    pub mass: Series,
    /// Ghost flux just right / left of the atom, while alive.
    pub flux_plus: Series,
    pub flux_minus: Series,
    /// Window-extrapolated traces (independent of the mass series).
    pub trace_plus: TraceSeries,
    pub trace_minus: TraceSeries,
    pub tol_mass: f64,
    pub bracket: Bracket,
}

/// One decomposition epoch: fields per sub-rectangle between live atoms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t0: f64,
    pub t1: f64,
    /// Interface index of each live atom on the level grid.
    pub atom_ifaces: Vec<usize>,
    /// Original atom index of each live atom.
    pub live_orig: Vec<usize>,
    pub fields: Vec<GridField>,
}

/// Output of one (surrogate, grid) run over `[0, t_max]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelRun {
    pub n: usize,
    pub dx: f64,
    pub eps: f64,
    pub surrogate: f64,
    pub epochs: Vec<EpochRecord>,
    pub atoms: Vec<AtomTrajectory>,
    /// Total of density plus live masses at snapshot times.
    pub conservation: Series,
    pub final_density: Vec<f64>,
    /// Sup of |u| away from singular layers, sampled over time.
    pub interior_sup: Series,
    /// Scheme flux through the window edges, decimated in time.
    pub edge_flux_left: Series,
    pub edge_flux_right: Series,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementReport {
    pub levels: Vec<(usize, f64)>,
    pub level_residuals: Vec<f64>,
    pub tol_conv: f64,
    pub surrogates: Vec<f64>,
    pub surrogate_residual: f64,
    pub accepted_surrogate: f64,
}

/// Full measure-valued solution: accepted finest run plus the previous grid
/// level for refinement studies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureSolution {
    pub flux_name: String,
    pub window: (f64, f64),
    pub t_max: f64,
    pub fine: LevelRun,
    pub coarse: Option<LevelRun>,
    pub refinement: RefinementReport,
}

struct LiveAtom {
    orig: usize,
    iface: usize,
    mass: f64,
}

struct StepLog {
    t: Vec<f64>,
    mass: Vec<Vec<f64>>,
    flux_plus: Vec<Vec<f64>>,
    flux_minus: Vec<Vec<f64>>,
}

/// Cells within this many cells of a live atom interface are excluded from
/// the interior sup used by tol_mass (the singular layer carries surrogate
/// -scale values by design).
const LAYER_EXCLUSION_CELLS: usize = 48;

#[allow(clippy::too_many_arguments)]
fn run_level(
    tables: &FluxTables,
    grid: Grid1,
    density0: &[f64],
    edge_bc: (Bc, Bc),
    atom_ifaces: &[usize],
    atom_orig_x: &[f64],
    atom_mass0: &[f64],
    surrogate: f64,
    eps: f64,
    t_max: f64,
    density_scale: f64,
    opts: &RefineOpts,
) -> Result<LevelRun, SingularError> {
    let n = grid.n;
    let dt_cfl = cfl_dt(grid.dx, tables.lip, eps);
    let total_steps = ((t_max / dt_cfl).ceil() as usize).saturating_mul(2) + 16;
    if total_steps > MAX_STEPS {
        return Err(SingularError::Viscous(ViscousError::CflViolation {
            need: total_steps,
            max: MAX_STEPS,
        }));
    }

    let mut u: Vec<f64> = density0.to_vec();
    let mut live: Vec<LiveAtom> = atom_ifaces
        .iter()
        .zip(atom_mass0)
        .enumerate()
        .map(|(orig, (&iface, &mass))| LiveAtom { orig, iface, mass })
        .collect();
    let p = live.len();

    let mut log = StepLog {
        t: vec![0.0],
        mass: vec![atom_mass0.to_vec()],
        flux_plus: vec![vec![f64::NAN; p]],
        flux_minus: vec![vec![f64::NAN; p]],
    };
    let mut conservation = Series::default();
    let mut interior_sup = Series::default();
    let mut edge_flux_left = Series::default();
    let mut edge_flux_right = Series::default();
    let mut epochs: Vec<EpochRecord> = Vec::new();

    let log_stride = (((t_max / dt_cfl) as usize) / 4096).max(1);
    let tol_mass_floor: f64 = atom_mass0
        .iter()
        .map(|c| opts.tol_mass_rel * c.abs())
        .fold(f64::INFINITY, f64::min);
    let t_end_eps = 1e-12 * t_max.max(1.0);
    let mut t = 0.0;
    let mut t_end = t_max;

    loop {
        // Decomposition for the current set of live atoms.
        let mut ifaces = vec![0usize];
        ifaces.extend(live.iter().map(|a| a.iface));
        ifaces.push(n);
        let nseg = ifaces.len() - 1;
        let mut segs: Vec<Segment> = Vec::with_capacity(nseg);
        for j in 0..nseg {
            let (i0, i1) = (ifaces[j], ifaces[j + 1]);
            let sub = Grid1 {
                x_lo: grid.interface(i0),
                dx: grid.dx,
                n: i1 - i0,
            };
            let bc_l = if j == 0 {
                edge_bc.0
            } else {
                Bc::Reservoir {
                    level: live[j - 1].mass.signum() * surrogate,
                }
            };
            let bc_r = if j == nseg - 1 {
                edge_bc.1
            } else {
                Bc::Reservoir {
                    level: live[j].mass.signum() * surrogate,
                }
            };
            segs.push(Segment::new(sub, u[i0..i1].to_vec(), bc_l, bc_r, tables));
        }

        // Once every mass is gone, optionally run only a short post-
        // extinction margin.
        if live.is_empty() && !atom_mass0.is_empty() {
            if let Some(margin) = opts.stop_after_extinction_margin {
                t_end = t_end.min((t * (1.0 + margin)).max(t + 16.0 * dt_cfl));
            }
        }
        let epoch_t0 = t;
        let planned = (((t_end - t) / dt_cfl).ceil() as usize).max(1);
        let snap_stride = (planned / opts.snapshots.max(1)).max(1);
        let mut fields: Vec<GridField> = segs
            .iter()
            .map(|s| GridField {
                grid: s.grid,
                eps,
                bc_left: s.bc_left,
                bc_right: s.bc_right,
                times: vec![t],
                values: vec![s.u.clone()],
                cum_h: vec![s.cum_h.clone()],
                cum_hv: vec![s.cum_hv.clone()],
                cum_f: vec![s.cum_f.clone()],
                sup_abs: s.sup_abs,
            })
            .collect();
        record_totals(t, &segs, &live, &mut conservation, &mut interior_sup);

        let mut step = 0usize;
        let mut any_extinct = false;
        while t < t_end - t_end_eps && !any_extinct {
            let bounds: Vec<(f64, f64)> =
                segs.iter_mut().map(|s| s.compute_fluxes(tables)).collect();
            let mut dt = dt_cfl.min(t_end - t);
            let mut rates = Vec::with_capacity(live.len());
            for (j, a) in live.iter().enumerate() {
                let f_plus = bounds[j + 1].0;
                let f_minus = bounds[j].1;
                let rate = f_plus - f_minus;
                rates.push((f_plus, f_minus, rate));
                if a.mass.abs() < 5.0 * tol_mass_floor {
                    dt = dt.min(dt_cfl / 4.0);
                }
                // Land exactly on the first crossing.
                if rate.abs() > 1e-300 {
                    let tc = a.mass / rate;
                    if tc > 0.0 && tc < dt {
                        dt = tc;
                    }
                }
            }
            for s in segs.iter_mut() {
                s.apply(tables, eps, dt, t)?;
            }
            t += dt;
            step += 1;
            for (j, a) in live.iter_mut().enumerate() {
                let rate = rates[j].2;
                a.mass -= dt * rate;
                if a.mass.abs() <= 1e-12 * atom_mass0[a.orig].abs() {
                    a.mass = 0.0;
                    any_extinct = true;
                } else if a.mass.signum() != atom_mass0[a.orig].signum() {
                    let overshoot = a.mass.abs();
                    if overshoot > tol_mass_floor {
                        return Err(SingularError::MassOvershoot {
                            atom: a.orig,
                            overshoot,
                        });
                    }
                    a.mass = 0.0;
                    any_extinct = true;
                }
            }

            let at_end = t >= t_end - t_end_eps;
            if step.is_multiple_of(log_stride) || any_extinct || at_end {
                edge_flux_left.push(t, bounds[0].0);
                edge_flux_right.push(t, bounds[bounds.len() - 1].1);
                log.t.push(t);
                let mut row_m = log.mass.last().unwrap().clone();
                let mut row_fp = vec![f64::NAN; p];
                let mut row_fm = vec![f64::NAN; p];
                for (j, a) in live.iter().enumerate() {
                    row_m[a.orig] = a.mass;
                    row_fp[a.orig] = rates[j].0;
                    row_fm[a.orig] = rates[j].1;
                }
                log.mass.push(row_m);
                log.flux_plus.push(row_fp);
                log.flux_minus.push(row_fm);
            }
            if step.is_multiple_of(snap_stride) || any_extinct || at_end {
                for (f, s) in fields.iter_mut().zip(&segs) {
                    f.times.push(t);
                    f.values.push(s.u.clone());
                    f.cum_h.push(s.cum_h.clone());
                    f.cum_hv.push(s.cum_hv.clone());
                    f.cum_f.push(s.cum_f.clone());
                    f.sup_abs = f.sup_abs.max(s.sup_abs);
                }
                record_totals(t, &segs, &live, &mut conservation, &mut interior_sup);
            }
        }

        // Close the epoch, write back the states, drop dead atoms.
        let mut cell = 0usize;
        for s in &segs {
            u[cell..cell + s.grid.n].copy_from_slice(&s.u);
            cell += s.grid.n;
        }
        epochs.push(EpochRecord {
            t0: epoch_t0,
            t1: t,
            atom_ifaces: live.iter().map(|a| a.iface).collect(),
            live_orig: live.iter().map(|a| a.orig).collect(),
            fields,
        });
        live.retain(|a| a.mass != 0.0);
        if t >= t_end - t_end_eps {
            break;
        }
    }

    // Per-atom trajectories with both trace routes.
    let mut atoms = Vec::with_capacity(p);
    for orig in 0..p {
        let snapped_x = grid.interface(atom_ifaces[orig]);
        let mut mass = Series::default();
        let mut flux_plus = Series::default();
        let mut flux_minus = Series::default();
        for (i, &tt) in log.t.iter().enumerate() {
            mass.push(tt, log.mass[i][orig]);
            if log.flux_plus[i][orig].is_finite() {
                flux_plus.push(tt, log.flux_plus[i][orig]);
                flux_minus.push(tt, log.flux_minus[i][orig]);
            }
        }
        let (trace_minus, trace_plus) =
            stitch_traces(&epochs, orig, snapped_x, tables, &opts.trace_windows)?;

        let tol_mass = (opts.tol_mass_rel * atom_mass0[orig].abs())
            .max(opts.tol_mass_cells * grid.dx * density_scale);
        let bracket = waiting_time(&mass.t, &mass.v, tol_mass)?;
        atoms.push(AtomTrajectory {
            x: atom_orig_x[orig],
            snapped_x,
            mass0: atom_mass0[orig],
            mass,
            flux_plus,
            flux_minus,
            trace_plus,
            trace_minus,
            tol_mass,
            bracket,
        });
    }

    Ok(LevelRun {
        n,
        dx: grid.dx,
        eps,
        surrogate,
        epochs,
        atoms,
        conservation,
        final_density: u,
        interior_sup,
        edge_flux_left,
        edge_flux_right,
    })
}

fn record_totals(
    t: f64,
    segs: &[Segment],
    live: &[LiveAtom],
    conservation: &mut Series,
    interior_sup: &mut Series,
) {
    let mut total: f64 = live.iter().map(|a| a.mass).sum();
    for s in segs {
        total += s.mass();
    }
    conservation.push(t, total);

    let mut sup = 0.0f64;
    let mut cell = 0usize;
    for s in segs {
        for (i, v) in s.u.iter().enumerate() {
            let global = cell + i;
            let near = live
                .iter()
                .any(|a| global.abs_diff(a.iface) < LAYER_EXCLUSION_CELLS);
            if !near {
                sup = sup.max(v.abs());
            }
        }
        cell += s.grid.n;
    }
    interior_sup.push(t, sup);
}

/// Window-average H(u) next to one boundary of a field, one value per
/// stored time, extrapolated over the window ladder.
pub fn extract_trace(
    field: &GridField,
    tables: &FluxTables,
    side: Side,
    windows: &[usize],
) -> Result<TraceSeries, SingularError> {
    let min_w = *windows.iter().min().unwrap_or(&0);
    if min_w < 4 {
        return Err(SingularError::WindowTooNarrow { cells: min_w });
    }
    let n = field.grid.n;
    let x = match side {
        Side::Plus => field.grid.x_lo,
        Side::Minus => field.grid.x_hi(),
    };
    // Early in the run only cells inside the information cone of the
    // boundary carry the trace; shrink the windows toward the cone (with a
    // 4-cell floor) so the extrapolation never reads undisturbed cells.
    let cone_cells = |t: f64| -> f64 {
        let reach = 0.75 * tables.lip.max(1e-9) * (t - field.times[0]) / field.grid.dx;
        reach.max(4.0)
    };
    let scaled =
        |w: usize, t: f64| -> usize { (w as f64).min(cone_cells(t)).round().max(4.0) as usize };
    let mut value = Vec::with_capacity(field.times.len());
    let mut error = Vec::with_capacity(field.times.len());
    for (ti, row) in field.values.iter().enumerate() {
        let t = field.times[ti];
        let mut avgs = Vec::with_capacity(windows.len());
        for &w in windows {
            let w = scaled(w, t).min(n).max(1);
            let slice: &[f64] = match side {
                Side::Plus => &row[..w],
                Side::Minus => &row[n - w..],
            };
            let avg = slice.iter().map(|u| tables.value(*u)).sum::<f64>() / w as f64;
            avgs.push(avg);
        }
        let ext = aitken_tail(&avgs).clamp(-tables.sup, tables.sup);
        let spread = avgs.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
            - avgs.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        value.push(ext);
        // Extrapolation distance plus half the inter-window spread: the
        // spread dominates while the boundary structure is still narrower
        // than the windows.
        error.push((ext - avgs.last().unwrap()).abs() + 0.5 * spread);
    }
    // The running trace integral extrapolates the interface flux
    // integrals at offsets 1, 2, 4 from the boundary to the boundary
    // itself (quadratic Lagrange weights 8/3, -2, 1/3), independently of
    // the ghost flux at offset 0.
    let mut integral = Vec::new();
    if field.cum_f.len() == field.times.len() && n >= 4 {
        for (ti, row) in field.cum_f.iter().enumerate() {
            let t = field.times[ti];
            let iface = |c: usize| match side {
                Side::Plus => row[c],
                Side::Minus => row[n - c],
            };
            let est = (8.0 * iface(1) - 6.0 * iface(2) + iface(4)) / 3.0;
            let cap = tables.sup * (t - field.times[0]);
            integral.push(est.clamp(-cap, cap));
        }
    }
    Ok(TraceSeries {
        x,
        side,
        t: field.times.clone(),
        value,
        error,
        integral,
        window_cells: windows.to_vec(),
    })
}

fn stitch_traces(
    epochs: &[EpochRecord],
    orig: usize,
    x: f64,
    tables: &FluxTables,
    windows: &[usize],
) -> Result<(TraceSeries, TraceSeries), SingularError> {
    let mut minus = TraceSeries {
        x,
        side: Side::Minus,
        t: Vec::new(),
        value: Vec::new(),
        error: Vec::new(),
        integral: Vec::new(),
        window_cells: windows.to_vec(),
    };
    let mut plus = TraceSeries {
        side: Side::Plus,
        ..minus.clone()
    };
    let (mut off_minus, mut off_plus) = (0.0, 0.0);
    for ep in epochs {
        let Some(slot) = ep.live_orig.iter().position(|o| *o == orig) else {
            continue;
        };
        let left = extract_trace(&ep.fields[slot], tables, Side::Minus, windows)?;
        let right = extract_trace(&ep.fields[slot + 1], tables, Side::Plus, windows)?;
        let skip = usize::from(!minus.t.is_empty());
        minus.t.extend(&left.t[skip..]);
        minus.value.extend(&left.value[skip..]);
        minus.error.extend(&left.error[skip..]);
        minus
            .integral
            .extend(left.integral[skip..].iter().map(|v| v + off_minus));
        plus.t.extend(&right.t[skip..]);
        plus.value.extend(&right.value[skip..]);
        plus.error.extend(&right.error[skip..]);
        plus.integral
            .extend(right.integral[skip..].iter().map(|v| v + off_plus));
        off_minus = *minus.integral.last().unwrap_or(&0.0);
        off_plus = *plus.integral.last().unwrap_or(&0.0);
    }
    Ok((minus, plus))
}

/// Block-average a fine-level density onto a coarse cell count (the counts
/// nest by construction).
fn restrict(fine: &[f64], coarse_n: usize) -> Vec<f64> {
    let ratio = fine.len() / coarse_n;
    (0..coarse_n)
        .map(|i| fine[i * ratio..(i + 1) * ratio].iter().sum::<f64>() / ratio as f64)
        .collect()
}

/// L1 difference of two same-grid densities, skipping cells inside the
/// exclusion intervals (the singular layers carry surrogate-scale values
/// whose extent shrinks with the surrogate, so they never become Cauchy).
fn l1_diff_masked(a: &[f64], b: &[f64], grid: &Grid1, excl: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let c = grid.center(i);
        if excl.iter().any(|(lo, hi)| c >= *lo && c <= *hi) {
            continue;
        }
        sum += (x - y).abs();
    }
    sum * grid.dx
}

/// Half-width of the layer exclusion around a singular point: covers the
/// slow near-boundary structures whose speed is at most sup|H| / level.
fn layer_halfwidth(dx_coarse: f64, sup_h: f64, t_max: f64, level_min: f64) -> f64 {
    (16.0 * dx_coarse).max(2.0 * sup_h * t_max / level_min.max(1e-9))
}

/// Relative motion between two brackets of the same atom.
fn bracket_motion(a: &Bracket, b: &Bracket, horizon: f64) -> f64 {
    match (a, b) {
        (
            Bracket::Extinguished { crossing: za, .. },
            Bracket::Extinguished { crossing: zb, .. },
        ) => (za - zb).abs() / zb.abs().max(1e-3 * horizon),
        (Bracket::NotByHorizon { .. }, Bracket::NotByHorizon { .. }) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Solve the measure-valued problem on its window up to `t_max`.
///
/// Runs the grid/viscosity ladder inside the surrogate ladder; accepts the
/// surrogate once the extinction data move less than `opts.bracket_tol_rel`
/// between consecutive surrogates, and requires the grid ladder to be
/// Cauchy in L1. Never silently accepts an exhausted schedule.
pub fn solve_measure_cauchy(
    flux: &Flux,
    u0: &Measure,
    t_max: f64,
    opts: &RefineOpts,
) -> Result<MeasureSolution, SingularError> {
    opts.validate()?;
    let window = u0.window();
    let n_coarse = opts.n_cells[0];
    let coarse = Grid1::new(window.0, window.1, n_coarse);

    // Atoms snap to interfaces of the coarsest grid so every finer level
    // shares them.
    let mut coarse_ifaces = Vec::new();
    for a in &u0.atoms {
        let i = coarse.nearest_interface(a.x);
        if i == 0 || i == n_coarse || coarse_ifaces.contains(&i) {
            return Err(SingularError::AtomSnapCollision);
        }
        coarse_ifaces.push(i);
    }
    let atom_x: Vec<f64> = u0.atoms.iter().map(|a| a.x).collect();
    let atom_mass: Vec<f64> = u0.atoms.iter().map(|a| a.mass).collect();

    let k_base = u0.density_sup().max(1.0);
    let k_hi = opts.surrogate_multipliers.last().unwrap() * k_base;
    let tables = FluxTables::for_range(flux, -k_hi, k_hi);

    let multipliers: Vec<f64> = if u0.atoms.is_empty() {
        vec![opts.surrogate_multipliers[0]]
    } else {
        opts.surrogate_multipliers.clone()
    };

    let dx_coarse = (window.1 - window.0) / n_coarse as f64;
    let halfw = layer_halfwidth(
        dx_coarse,
        tables.sup,
        t_max,
        opts.surrogate_multipliers[0] * k_base,
    );
    let excl: Vec<(f64, f64)> = atom_x.iter().map(|x| (x - halfw, x + halfw)).collect();

    let mut prev: Option<(LevelRun, Option<LevelRun>, Vec<f64>)> = None;
    let mut accepted: Option<(LevelRun, Option<LevelRun>, Vec<f64>)> = None;
    let mut surrogate_residual = f64::INFINITY;

    for &mult in &multipliers {
        let surrogate = mult * k_base;
        let mut level_runs: Vec<LevelRun> = Vec::new();
        let mut residuals = Vec::new();
        for &n in &opts.n_cells {
            let grid = Grid1::new(window.0, window.1, n);
            let ratio = n / n_coarse;
            let ifaces: Vec<usize> = coarse_ifaces.iter().map(|i| i * ratio).collect();
            let density: Vec<f64> = grid
                .centers()
                .map(|x| u0.grid.interp(&u0.density, x))
                .collect();
            let eps = opts.eps_over_dx * tables.lip * grid.dx;
            let edge = (Bc::Dirichlet(density[0]), Bc::Dirichlet(density[n - 1]));
            let run = run_level(
                &tables,
                grid,
                &density,
                edge,
                &ifaces,
                &atom_x,
                &atom_mass,
                surrogate,
                eps,
                t_max,
                u0.density_sup().max(1.0),
                opts,
            )?;
            if let Some(prev_run) = level_runs.last() {
                let fine_on_coarse = restrict(&run.final_density, prev_run.n);
                let cg = Grid1::new(window.0, window.1, prev_run.n);
                residuals.push(l1_diff_masked(
                    &fine_on_coarse,
                    &prev_run.final_density,
                    &cg,
                    &excl,
                ));
            }
            level_runs.push(run);
        }
        if let Some(last) = residuals.last() {
            if *last > opts.tol_conv {
                return Err(SingularError::NotConverged {
                    what: "grid/viscosity ladder",
                    residuals,
                    tol: opts.tol_conv,
                });
            }
        }

        let fine = level_runs.pop().unwrap();
        let coarse_run = level_runs.pop();

        if let Some((prev_fine, _, _)) = &prev {
            let mut worst: f64 = 0.0;
            for (a, b) in prev_fine.atoms.iter().zip(&fine.atoms) {
                worst = worst.max(bracket_motion(&a.bracket, &b.bracket, t_max));
            }
            surrogate_residual = worst;
            if worst <= opts.bracket_tol_rel {
                accepted = Some((fine, coarse_run, residuals));
                break;
            }
        }
        prev = Some((fine, coarse_run, residuals));
    }

    let (fine, coarse_run, level_residuals) = match accepted {
        Some(x) => x,
        None if multipliers.len() == 1 => {
            surrogate_residual = 0.0;
            prev.unwrap()
        }
        None => {
            return Err(SingularError::NotConverged {
                what: "surrogate ladder",
                residuals: vec![surrogate_residual],
                tol: opts.bracket_tol_rel,
            });
        }
    };

    let accepted_surrogate = fine.surrogate;
    Ok(MeasureSolution {
        flux_name: flux.name().to_string(),
        window,
        t_max,
        refinement: RefinementReport {
            levels: opts
                .n_cells
                .iter()
                .map(|&n| {
                    let dx = (window.1 - window.0) / n as f64;
                    (n, opts.eps_over_dx * tables.lip * dx)
                })
                .collect(),
            level_residuals,
            tol_conv: opts.tol_conv,
            surrogates: multipliers.iter().map(|m| m * k_base).collect(),
            surrogate_residual,
            accepted_surrogate,
        },
        fine,
        coarse: coarse_run,
    })
}

/// Sup distance between the singular-edge ghost fluxes of two runs over
/// the late half of the run (the sharp trace estimator, free of the window
/// transient).
fn edge_flux_motion(a: &LevelRun, b: &LevelRun) -> f64 {
    let mut worst = 0.0f64;
    for (sa, sb) in [
        (&a.edge_flux_left, &b.edge_flux_left),
        (&a.edge_flux_right, &b.edge_flux_right),
    ] {
        if sa.is_empty() || sb.is_empty() {
            continue;
        }
        let t_mid = 0.5 * (sa.t[0] + sa.t[sa.t.len() - 1]);
        for (t, v) in sa.t.iter().zip(&sa.v) {
            if *t >= t_mid {
                worst = worst.max((v - sb.at(*t)).abs());
            }
        }
    }
    worst
}

/// Boundary datum for the one-rectangle singular problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SideBc {
    Finite(f64),
    PlusInf,
    MinusInf,
}

/// One-rectangle solve with prescribed (possibly infinite) boundary data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularSolve {
    pub field: GridField,
    /// Window trace at the left boundary (limit from above), when singular.
    pub trace_left: Option<TraceSeries>,
    /// Window trace at the right boundary (limit from below), when singular.
    pub trace_right: Option<TraceSeries>,
    /// Scheme ghost flux at the edges: the sharp trace estimator.
    pub edge_flux_left: Series,
    pub edge_flux_right: Series,
    pub refinement: RefinementReport,
}

/// Solve u_t + [H(u)]_x = 0 on the window of `u0` (atom-free) with the
/// given boundary data, refining surrogates and grids as in
/// [`solve_measure_cauchy`].
pub fn solve_singular_dirichlet(
    flux: &Flux,
    u0: &Measure,
    bc_left: SideBc,
    bc_right: SideBc,
    t_max: f64,
    opts: &RefineOpts,
) -> Result<SingularSolve, SingularError> {
    opts.validate()?;
    if !u0.atoms.is_empty() {
        return Err(SingularError::UnexpectedAtoms);
    }
    let window = u0.window();
    let k_base = u0.density_sup().max(1.0);
    let k_hi = opts.surrogate_multipliers.last().unwrap() * k_base;
    let tables = FluxTables::for_range(flux, -k_hi, k_hi);

    let singular = |bc: &SideBc| !matches!(bc, SideBc::Finite(_));
    let multipliers: Vec<f64> = if singular(&bc_left) || singular(&bc_right) {
        opts.surrogate_multipliers.clone()
    } else {
        vec![opts.surrogate_multipliers[0]]
    };

    let dx_coarse = (window.1 - window.0) / opts.n_cells[0] as f64;
    let halfw = layer_halfwidth(
        dx_coarse,
        tables.sup,
        t_max,
        opts.surrogate_multipliers[0] * k_base,
    );
    let mut excl: Vec<(f64, f64)> = Vec::new();
    if singular(&bc_left) {
        excl.push((window.0, window.0 + halfw));
    }
    if singular(&bc_right) {
        excl.push((window.1 - halfw, window.1));
    }

    let mut prev: Option<(LevelRun, Vec<f64>)> = None;
    let mut accepted: Option<(LevelRun, Vec<f64>)> = None;
    let mut surrogate_residual = f64::INFINITY;

    for &mult in &multipliers {
        let surrogate = mult * k_base;
        let to_bc = |side: &SideBc| match side {
            SideBc::Finite(m) => Bc::Dirichlet(*m),
            SideBc::PlusInf => Bc::Reservoir { level: surrogate },
            SideBc::MinusInf => Bc::Reservoir { level: -surrogate },
        };
        let mut level_runs: Vec<LevelRun> = Vec::new();
        let mut residuals = Vec::new();
        for &n in &opts.n_cells {
            let grid = Grid1::new(window.0, window.1, n);
            let density: Vec<f64> = grid
                .centers()
                .map(|x| u0.grid.interp(&u0.density, x))
                .collect();
            let eps = opts.eps_over_dx * tables.lip * grid.dx;
            let edge = (to_bc(&bc_left), to_bc(&bc_right));
            let run = run_level(
                &tables,
                grid,
                &density,
                edge,
                &[],
                &[],
                &[],
                surrogate,
                eps,
                t_max,
                u0.density_sup().max(1.0),
                opts,
            )?;
            if let Some(prev_run) = level_runs.last() {
                let fine_on_coarse = restrict(&run.final_density, prev_run.n);
                let cg = Grid1::new(window.0, window.1, prev_run.n);
                residuals.push(l1_diff_masked(
                    &fine_on_coarse,
                    &prev_run.final_density,
                    &cg,
                    &excl,
                ));
            }
            level_runs.push(run);
        }
        if let Some(last) = residuals.last() {
            if *last > opts.tol_conv {
                return Err(SingularError::NotConverged {
                    what: "grid/viscosity ladder",
                    residuals,
                    tol: opts.tol_conv,
                });
            }
        }
        let fine = level_runs.pop().unwrap();

        if let Some((prev_fine, _)) = &prev {
            // Interior L1 motion plus sup-motion of the singular traces
            // between consecutive surrogates.
            let fg = Grid1::new(window.0, window.1, fine.n);
            let prev_on_fine = if prev_fine.n == fine.n {
                prev_fine.final_density.clone()
            } else {
                restrict(&fine.final_density, prev_fine.n)
            };
            let l1 = if prev_fine.n == fine.n {
                l1_diff_masked(&fine.final_density, &prev_on_fine, &fg, &excl)
            } else {
                let cg = Grid1::new(window.0, window.1, prev_fine.n);
                l1_diff_masked(&prev_on_fine, &prev_fine.final_density, &cg, &excl)
            };
            let trace_motion = edge_flux_motion(&fine, prev_fine);
            let trace_tol = opts.bracket_tol_rel * tables.sup.max(1e-9);
            surrogate_residual = l1.max(trace_motion);
            if l1 <= opts.tol_conv && trace_motion <= trace_tol {
                accepted = Some((fine, residuals));
                break;
            }
        }
        prev = Some((fine, residuals));
    }

    let (fine, level_residuals) = match accepted {
        Some(x) => x,
        None if multipliers.len() == 1 => {
            surrogate_residual = 0.0;
            prev.unwrap()
        }
        None => {
            return Err(SingularError::NotConverged {
                what: "surrogate ladder",
                residuals: vec![surrogate_residual],
                tol: opts.tol_conv,
            });
        }
    };

    let field = fine.epochs[0].fields[0].clone();
    let edge_flux_left = fine.edge_flux_left.clone();
    let edge_flux_right = fine.edge_flux_right.clone();
    let trace_left = if singular(&bc_left) {
        Some(extract_trace(
            &field,
            &tables,
            Side::Plus,
            &opts.trace_windows,
        )?)
    } else {
        None
    };
    let trace_right = if singular(&bc_right) {
        Some(extract_trace(
            &field,
            &tables,
            Side::Minus,
            &opts.trace_windows,
        )?)
    } else {
        None
    };
    let accepted_surrogate = fine.surrogate;
    Ok(SingularSolve {
        field,
        trace_left,
        trace_right,
        edge_flux_left,
        edge_flux_right,
        refinement: RefinementReport {
            levels: opts
                .n_cells
                .iter()
                .map(|&n| {
                    let dx = (window.1 - window.0) / n as f64;
                    (n, opts.eps_over_dx * tables.lip * dx)
                })
                .collect(),
            level_residuals,
            tol_conv: opts.tol_conv,
            surrogates: multipliers.iter().map(|m| m * k_base).collect(),
            surrogate_residual,
            accepted_surrogate,
        },
    })
}

// ---------------------------------------------------------------------------
// Diagnostics: one-sided sign conditions and the entropy inequality.

fn sgn_plus(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn sgn_minus(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn time_bump(t: f64, c: f64, w: f64) -> f64 {
    let s = (t - c) / w;
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        q * q * q
    }
}

/// Worst positive violation of the one-sided boundary sign condition for a
/// field adjacent to a point mass of the given sign.
///
/// `side` says which side of the mass the field lies on: `Plus` means the
/// field's left boundary touches the mass (limit from above), `Minus` the
/// reverse. The one-sided essential limit is approximated by extrapolating
/// column integrals toward the boundary.
pub fn compatibility_violation(
    field: &GridField,
    flux: &Flux,
    side: Side,
    atom_sign: f64,
    ks: &[f64],
) -> f64 {
    let n = field.grid.n;
    let times = &field.times;
    if times.len() < 3 || n < 8 {
        return 0.0;
    }
    let span = times.last().unwrap() - times[0];
    let bumps: Vec<(f64, f64)> = [0.25, 0.5, 0.75]
        .iter()
        .map(|f| (times[0] + f * span, 0.25 * span))
        .collect();

    // Column integrals at the three cells nearest the boundary,
    // extrapolated to the boundary (quadratic in the center offsets).
    let offsets = [0usize, 1, 3];
    let weights = [1.75, -0.875, 0.125];
    let sgn: fn(f64) -> f64 = if atom_sign > 0.0 { sgn_minus } else { sgn_plus };

    let mut worst = 0.0f64;
    for &k in ks {
        let hk = flux.h(k);
        for &(c, w) in &bumps {
            let mut limit = 0.0;
            for (&off, &wt) in offsets.iter().zip(&weights) {
                let cell = match side {
                    Side::Plus => off.min(n - 1),
                    Side::Minus => n - 1 - off.min(n - 1),
                };
                let mut integral = 0.0;
                for i in 1..times.len() {
                    let dt = times[i] - times[i - 1];
                    let f = |j: usize| {
                        let u = field.values[j][cell];
                        sgn(u - k) * (flux.h(u) - hk) * time_bump(times[j], c, w)
                    };
                    integral += 0.5 * (f(i - 1) + f(i)) * dt;
                }
                limit += wt * integral;
            }
            let violation = match side {
                Side::Plus => limit,   // must be <= 0
                Side::Minus => -limit, // must be >= 0
            };
            worst = worst.max(violation);
        }
    }
    worst
}

/// Worst violation of the entropy inequality over a battery of test
/// functions and levels `ks`. Nonnegative; zero (to quadrature error) for
/// entropy solutions.
pub fn entropy_residual(field: &GridField, flux: &Flux, ks: &[f64]) -> f64 {
    let grid = field.grid;
    let n = grid.n;
    let times = &field.times;
    if times.len() < 3 {
        return 0.0;
    }
    let t_span = times.last().unwrap() - times[0];
    let (xl, xr) = (grid.x_lo, grid.x_hi());
    let width = xr - xl;

    // Space bumps strictly inside the window; time profiles vanish at the
    // final time, and may be positive at t = 0 (the initial term is
    // included).
    let rhos: Vec<(f64, f64)> = vec![
        (xl + 0.5 * width, 0.35 * width),
        (xl + 0.35 * width, 0.25 * width),
        (xl + 0.65 * width, 0.25 * width),
    ];
    let hs: Vec<(f64, f64)> = vec![
        (times[0], 0.9 * t_span),
        (times[0] + 0.45 * t_span, 0.45 * t_span),
    ];

    let bump = |s: f64| {
        if s.abs() >= 1.0 {
            0.0
        } else {
            let q: f64 = 1.0 - s * s;
            q * q * q
        }
    };
    let bump_d = |s: f64| {
        if s.abs() >= 1.0 {
            0.0
        } else {
            let q: f64 = 1.0 - s * s;
            -6.0 * s * q * q
        }
    };

    let u0_row = &field.values[0];
    let mut worst = 0.0f64;
    for &k in ks {
        let hk = flux.h(k);
        for &(rc, rw) in &rhos {
            for &(hc, hw) in &hs {
                let mut lhs = 0.0;
                for ti in 0..times.len() {
                    let t = times[ti];
                    let wt = if ti == 0 {
                        0.5 * (times[1] - times[0])
                    } else if ti == times.len() - 1 {
                        0.5 * (times[ti] - times[ti - 1])
                    } else {
                        0.5 * (times[ti + 1] - times[ti - 1])
                    };
                    let h_t = bump((t - hc) / hw);
                    let h_dt = bump_d((t - hc) / hw) / hw;
                    if h_t == 0.0 && h_dt == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        let x = grid.center(i);
                        let s = (x - rc) / rw;
                        let rho = bump(s);
                        if rho == 0.0 {
                            continue;
                        }
                        let rho_dx = bump_d(s) / rw;
                        let u = field.values[ti][i];
                        lhs += wt
                            * grid.dx
                            * ((u - k).abs() * rho * h_dt
                                + (u - k).signum() * (flux.h(u) - hk) * rho_dx * h_t);
                    }
                }
                // Initial-time term.
                let h_0 = bump((times[0] - hc) / hw);
                if h_0 > 0.0 {
                    for (i, u0) in u0_row.iter().enumerate() {
                        let x = grid.center(i);
                        let rho = bump((x - rc) / rw);
                        if rho > 0.0 {
                            lhs += (u0 - k).abs() * rho * h_0 * grid.dx;
                        }
                    }
                }
                worst = worst.max(-lhs);
            }
        }
    }
    worst
}

/// Hand-built space-time field of a straight discontinuity from `u_left`
/// to `u_right` moving at `speed`. With `u_left < u_right` and a convex
/// flux this is the entropy-violating expansion shock used as a negative
/// control.
pub fn synthetic_shock_field(
    window: (f64, f64),
    n: usize,
    t_max: f64,
    levels: usize,
    u_left: f64,
    u_right: f64,
    speed: f64,
) -> GridField {
    let grid = Grid1::new(window.0, window.1, n);
    let times: Vec<f64> = (0..levels)
        .map(|i| t_max * i as f64 / (levels - 1) as f64)
        .collect();
    let values: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            grid.centers()
                .map(|x| if x < speed * t { u_left } else { u_right })
                .collect()
        })
        .collect();
    GridField {
        grid,
        eps: 0.0,
        bc_left: Bc::Dirichlet(u_left),
        bc_right: Bc::Dirichlet(u_right),
        times,
        values,
        cum_h: Vec::new(),
        cum_hv: Vec::new(),
        cum_f: Vec::new(),
        sup_abs: u_left.abs().max(u_right.abs()),
    }
}
