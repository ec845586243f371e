//! Explicit conservative solver for u_t + [H(u)]_x = eps * u_xx on an
//! interval with Dirichlet or reservoir boundary data.
//!
//! Interior interfaces use the Engquist-Osher splitting of H (monotone for
//! any Lipschitz flux, no convexity needed). A boundary marked as a
//! reservoir carries a huge signed ghost value standing in for +-infinity;
//! there the hyperbolic flux is the Godunov two-point flux against the
//! ghost, whose value saturates at the one-sided extremum of H and stays
//! within [inf H, sup H] no matter how large the surrogate, and no viscous
//! flux crosses the boundary. The Engquist-Osher split integrals are
//! unbounded in the state for oscillatory H, which is why the reservoir
//! interface uses Godunov instead.
//!
//! Time integration is forward Euler under the step cap
//! dt <= 0.4 * min(dx/L, dx^2/(2 eps)).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::Flux;
use crate::grid::{Grid1, Series};
use crate::measure::Smoothed;

/// Hard cap on explicit steps for a single solve.
pub const MAX_STEPS: usize = 20_000_000;

#[derive(Debug, Error)]
pub enum ViscousError {
    #[error("step cap requires {need} steps (max {max}); refine the schedule instead")]
    CflViolation { need: usize, max: usize },
    #[error("non-finite value at t = {t}; scheme bug, not a model property")]
    BlowUp { t: f64 },
}

/// Dense piecewise-linear tables for one flux: values, Engquist-Osher split
/// integrals, and range extrema for reservoir interfaces.
#[derive(Clone, Debug)]
pub struct FluxTables {
    pub u_lo: f64,
    pub du: f64,
    h: Vec<f64>,
    eo_pos: Vec<f64>,
    eo_neg: Vec<f64>,
    pub lip: f64,
    pub sup: f64,
}

impl FluxTables {
    /// Sample `flux` on `[lo, hi]` with resolution about `du`, keeping the
    /// origin on a node so the split integrals anchor exactly at 0.
    pub fn build(flux: &Flux, lo: f64, hi: f64, du: f64) -> Self {
        assert!(hi > lo && du > 0.0);
        let below = ((0.0 - lo) / du).max(0.0).ceil() as usize;
        let u_lo = -(below as f64) * du;
        let n = ((hi - u_lo) / du).ceil() as usize;
        let h: Vec<f64> = (0..=n).map(|i| flux.h(u_lo + i as f64 * du)).collect();
        let i0 = below.min(n);

        let mut eo_pos = vec![0.0; n + 1];
        let mut eo_neg = vec![0.0; n + 1];
        eo_pos[i0] = h[i0];
        for i in i0 + 1..=n {
            let dh = h[i] - h[i - 1];
            eo_pos[i] = eo_pos[i - 1] + dh.max(0.0);
            eo_neg[i] = eo_neg[i - 1] + dh.min(0.0);
        }
        for i in (0..i0).rev() {
            let dh = h[i + 1] - h[i];
            eo_pos[i] = eo_pos[i + 1] - dh.max(0.0);
            eo_neg[i] = eo_neg[i + 1] - dh.min(0.0);
        }

        let mut lip = 0.0f64;
        let mut sup = 0.0f64;
        for i in 0..=n {
            sup = sup.max(h[i].abs());
            if i > 0 {
                lip = lip.max((h[i] - h[i - 1]).abs() / du);
            }
        }
        FluxTables {
            u_lo,
            du,
            h,
            eo_pos,
            eo_neg,
            lip,
            sup,
        }
    }

    /// Table spanning the reachable value range of a solve.
    pub fn for_range(flux: &Flux, lo: f64, hi: f64) -> Self {
        let pad = 1.0;
        let (lo, hi) = (lo - pad, hi + pad);
        let du = ((hi - lo) / 50_000.0).clamp(1e-4, 2e-3);
        Self::build(flux, lo, hi, du)
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let s = (u - self.u_lo) / self.du;
        let max = (self.h.len() - 1) as f64;
        let s = s.clamp(0.0, max);
        let i = (s.floor() as usize).min(self.h.len() - 2);
        (i, s - i as f64)
    }

    fn interp(&self, table: &[f64], u: f64) -> f64 {
        let (i, w) = self.locate(u);
        table[i] * (1.0 - w) + table[i + 1] * w
    }

    /// H(u) through the table.
    pub fn value(&self, u: f64) -> f64 {
        self.interp(&self.h, u)
    }

    /// Engquist-Osher two-point flux.
    pub fn eo(&self, a: f64, b: f64) -> f64 {
        self.interp(&self.eo_pos, a) + self.interp(&self.eo_neg, b)
    }

    /// Precompute range extrema of H between any point and `level`.
    pub fn reservoir(&self, level: f64) -> RangeExtrema {
        let (node_k, _) = self.locate(level);
        let n = self.h.len();
        let mut gmax = self.h.clone();
        let mut gmin = self.h.clone();
        for i in node_k + 1..n {
            gmax[i] = gmax[i].max(gmax[i - 1]);
            gmin[i] = gmin[i].min(gmin[i - 1]);
        }
        for i in (0..node_k).rev() {
            gmax[i] = gmax[i].max(gmax[i + 1]);
            gmin[i] = gmin[i].min(gmin[i + 1]);
        }
        RangeExtrema {
            level: self.u_lo + node_k as f64 * self.du,
            node_k,
            gmax,
            gmin,
        }
    }
}

/// Extrema of H over the value range between a query point and a fixed
/// surrogate level; implements the Godunov flux against the reservoir.
#[derive(Clone, Debug)]
pub struct RangeExtrema {
    pub level: f64,
    node_k: usize,
    gmax: Vec<f64>,
    gmin: Vec<f64>,
}

impl RangeExtrema {
    fn range_max(&self, t: &FluxTables, u: f64) -> f64 {
        let (i, _) = t.locate(u);
        let v = t.value(u);
        if i >= self.node_k {
            v.max(self.gmax[i])
        } else {
            v.max(self.gmax[i + 1])
        }
    }

    fn range_min(&self, t: &FluxTables, u: f64) -> f64 {
        let (i, _) = t.locate(u);
        let v = t.value(u);
        if i >= self.node_k {
            v.min(self.gmin[i])
        } else {
            v.min(self.gmin[i + 1])
        }
    }

    /// Godunov flux with the reservoir as the left state.
    pub fn flux_ghost_left(&self, t: &FluxTables, u: f64) -> f64 {
        if self.level >= u {
            self.range_max(t, u)
        } else {
            self.range_min(t, u)
        }
    }

    /// Godunov flux with the reservoir as the right state.
    pub fn flux_ghost_right(&self, t: &FluxTables, u: f64) -> f64 {
        if u >= self.level {
            self.range_max(t, u)
        } else {
            self.range_min(t, u)
        }
    }
}

/// Boundary condition at one end of a segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bc {
    /// Finite pinned ghost value: Engquist-Osher flux and viscous flux
    /// against the ghost.
    Dirichlet(f64),
    /// Signed infinite reservoir realized by the finite surrogate `level`:
    /// Godunov flux, no viscous flux across.
    Reservoir { level: f64 },
}

/// One evolving segment plus running time integrals per cell.
#[derive(Clone, Debug)]
pub struct Segment {
    pub grid: Grid1,
    pub u: Vec<f64>,
    u_next: Vec<f64>,
    pub bc_left: Bc,
    pub bc_right: Bc,
    res_left: Option<RangeExtrema>,
    res_right: Option<RangeExtrema>,
    flux_buf: Vec<f64>,
    /// Per cell, running integral of H(u) dt.
    pub cum_h: Vec<f64>,
    /// Per cell, running integral of (H(u) - eps*u_x) dt.
    pub cum_hv: Vec<f64>,
    /// Per interface, running integral of the full scheme flux
    /// (hyperbolic plus viscous) dt.
    pub cum_f: Vec<f64>,
    pub sup_abs: f64,
}

impl Segment {
    pub fn new(grid: Grid1, u0: Vec<f64>, bc_left: Bc, bc_right: Bc, tables: &FluxTables) -> Self {
        assert_eq!(u0.len(), grid.n);
        let res = |bc: &Bc| match bc {
            Bc::Reservoir { level } => Some(tables.reservoir(*level)),
            Bc::Dirichlet(_) => None,
        };
        let sup_abs = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Segment {
            grid,
            res_left: res(&bc_left),
            res_right: res(&bc_right),
            flux_buf: vec![0.0; grid.n + 1],
            cum_h: vec![0.0; grid.n],
            cum_hv: vec![0.0; grid.n],
            cum_f: vec![0.0; grid.n + 1],
            sup_abs,
            u_next: vec![0.0; grid.n],
            u: u0,
            bc_left,
            bc_right,
        }
    }

    /// Fill the interface fluxes for the current state and return the
    /// boundary pair (left, right).
    pub fn compute_fluxes(&mut self, t: &FluxTables) -> (f64, f64) {
        let n = self.grid.n;
        self.flux_buf[0] = match self.bc_left {
            Bc::Dirichlet(m) => t.eo(m, self.u[0]),
            Bc::Reservoir { .. } => self
                .res_left
                .as_ref()
                .unwrap()
                .flux_ghost_left(t, self.u[0]),
        };
        for i in 1..n {
            self.flux_buf[i] = t.eo(self.u[i - 1], self.u[i]);
        }
        self.flux_buf[n] = match self.bc_right {
            Bc::Dirichlet(m) => t.eo(self.u[n - 1], m),
            Bc::Reservoir { .. } => self
                .res_right
                .as_ref()
                .unwrap()
                .flux_ghost_right(t, self.u[n - 1]),
        };
        (self.flux_buf[0], self.flux_buf[n])
    }

    /// Advance one explicit step of size `dt` using the fluxes filled by
    /// [`Segment::compute_fluxes`], accumulating the per-cell integrals.
    pub fn apply(
        &mut self,
        t: &FluxTables,
        eps: f64,
        dt: f64,
        time: f64,
    ) -> Result<(), ViscousError> {
        let n = self.grid.n;
        let dx = self.grid.dx;
        let lam = dt / dx;
        let mu = eps * dt / (dx * dx);

        // Viscous ghosts: pinned for Dirichlet, mirrored (zero flux) for
        // reservoirs.
        let ghost_l = match self.bc_left {
            Bc::Dirichlet(m) => m,
            Bc::Reservoir { .. } => self.u[0],
        };
        let ghost_r = match self.bc_right {
            Bc::Dirichlet(m) => m,
            Bc::Reservoir { .. } => self.u[n - 1],
        };

        // Full interface fluxes: hyperbolic part from flux_buf plus the
        // viscous part (zero across reservoir boundaries).
        self.cum_f[0] += dt
            * (self.flux_buf[0]
                + match self.bc_left {
                    Bc::Dirichlet(_) => -eps * (self.u[0] - ghost_l) / dx,
                    Bc::Reservoir { .. } => 0.0,
                });
        for i in 1..n {
            self.cum_f[i] += dt * (self.flux_buf[i] - eps * (self.u[i] - self.u[i - 1]) / dx);
        }
        self.cum_f[n] += dt
            * (self.flux_buf[n]
                + match self.bc_right {
                    Bc::Dirichlet(_) => -eps * (ghost_r - self.u[n - 1]) / dx,
                    Bc::Reservoir { .. } => 0.0,
                });

        let mut max_abs = 0.0f64;
        for i in 0..n {
            let here = self.u[i];
            let left = if i > 0 { self.u[i - 1] } else { ghost_l };
            let right = if i + 1 < n { self.u[i + 1] } else { ghost_r };
            let hval = t.value(here);
            let ux = (right - left) / (2.0 * dx);
            self.cum_h[i] += dt * hval;
            self.cum_hv[i] += dt * (hval - eps * ux);
            let v = here - lam * (self.flux_buf[i + 1] - self.flux_buf[i])
                + mu * (right - 2.0 * here + left);
            if !v.is_finite() {
                return Err(ViscousError::BlowUp { t: time });
            }
            max_abs = max_abs.max(v.abs());
            self.u_next[i] = v;
        }
        std::mem::swap(&mut self.u, &mut self.u_next);
        self.sup_abs = self.sup_abs.max(max_abs);
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        self.u.iter().sum::<f64>() * self.grid.dx
    }
}

/// Explicit step size under the stability cap.
pub fn cfl_dt(dx: f64, lip: f64, eps: f64) -> f64 {
    let conv = if lip > 1e-12 { dx / lip } else { f64::INFINITY };
    let diff = if eps > 1e-300 {
        dx * dx / (2.0 * eps)
    } else {
        f64::INFINITY
    };
    let dt = 0.4 * conv.min(diff);
    if dt.is_finite() {
        dt
    } else {
        dx
    }
}

/// Space-time snapshots of one solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid1,
    pub eps: f64,
    pub bc_left: Bc,
    pub bc_right: Bc,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub cum_h: Vec<Vec<f64>>,
    pub cum_hv: Vec<Vec<f64>>,
    /// Interface flux integrals (n+1 wide), when recorded.
    pub cum_f: Vec<Vec<f64>>,
    pub sup_abs: f64,
}

impl GridField {
    /// Index of the stored time closest to `t`.
    pub fn nearest_time(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    /// Largest over stored level pairs of sum |du| * dx / dt: a discrete
    /// bound on u_t in L_inf(0,T; L1).
    pub fn l1_ut_max(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 1..self.times.len() {
            let dt = self.times[k] - self.times[k - 1];
            if dt <= 0.0 {
                continue;
            }
            let sum: f64 = self.values[k]
                .iter()
                .zip(&self.values[k - 1])
                .map(|(a, b)| (a - b).abs())
                .sum();
            worst = worst.max(sum * self.grid.dx / dt);
        }
        worst
    }

    /// Largest over stored levels of sum |u_{i+1}-u_i|: total variation in
    /// L_inf over time.
    pub fn l1_ux_max(&self) -> f64 {
        self.values
            .iter()
            .map(|row| row.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest |u_{i+1}-u_i|/dx over stored levels and cells.
    pub fn sup_ux(&self) -> f64 {
        self.values
            .iter()
            .map(|row| {
                row.windows(2)
                    .map(|w| (w[1] - w[0]).abs() / self.grid.dx)
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Result of a standalone viscous solve.
#[derive(Clone, Debug)]
pub struct ViscousRun {
    pub field: GridField,
    /// Per-step boundary flux value series.
    pub left_flux: Series,
    pub right_flux: Series,
    /// Exact running integrals of the boundary fluxes over the run.
    pub left_flux_integral: f64,
    pub right_flux_integral: f64,
    pub mass: Series,
    pub initial_mass: f64,
}

/// Solve the viscous conservation law on the smoothed data's interval with
/// pinned Dirichlet values `data.m1`, `data.m2`.
pub fn solve_viscous_cl(
    flux: &Flux,
    data: &Smoothed,
    eps: f64,
    t_final: f64,
    n: usize,
) -> Result<ViscousRun, ViscousError> {
    let x_hi = data.x_lo + data.dx * (data.u0.len() - 1) as f64;
    let grid = Grid1::new(data.x_lo, x_hi, n);
    let u0 = data.resample_centers(&grid);
    let lo = u0.iter().fold(data.m1.min(data.m2), |m, v| m.min(*v));
    let hi = u0.iter().fold(data.m1.max(data.m2), |m, v| m.max(*v));
    let tables = FluxTables::for_range(flux, lo, hi);
    run_segment(
        &tables,
        grid,
        u0,
        Bc::Dirichlet(data.m1),
        Bc::Dirichlet(data.m2),
        eps,
        0.0,
        t_final,
        65,
    )
}

/// Drive a single segment from `t0` to `t1` with snapshots.
#[allow(clippy::too_many_arguments)]
pub fn run_segment(
    tables: &FluxTables,
    grid: Grid1,
    u0: Vec<f64>,
    bc_left: Bc,
    bc_right: Bc,
    eps: f64,
    t0: f64,
    t1: f64,
    snapshots: usize,
) -> Result<ViscousRun, ViscousError> {
    let dt = cfl_dt(grid.dx, tables.lip, eps);
    let need = ((t1 - t0) / dt).ceil() as usize;
    if need > MAX_STEPS {
        return Err(ViscousError::CflViolation {
            need,
            max: MAX_STEPS,
        });
    }
    let stride = (need / snapshots.max(1)).max(1);

    let mut seg = Segment::new(grid, u0, bc_left, bc_right, tables);
    let initial_mass = seg.mass();
    let mut field = GridField {
        grid,
        eps,
        bc_left,
        bc_right,
        times: vec![t0],
        values: vec![seg.u.clone()],
        cum_h: vec![seg.cum_h.clone()],
        cum_hv: vec![seg.cum_hv.clone()],
        cum_f: vec![seg.cum_f.clone()],
        sup_abs: seg.sup_abs,
    };
    let mut left_flux = Series::default();
    let mut right_flux = Series::default();
    let mut mass = Series::default();
    mass.push(t0, initial_mass);
    let (mut cum_l, mut cum_r) = (0.0, 0.0);

    let mut t = t0;
    let mut step = 0usize;
    let t_eps = 1e-14 * t1.abs().max(1.0);
    while t < t1 - t_eps {
        let h = dt.min(t1 - t);
        let (fl, fr) = seg.compute_fluxes(tables);
        seg.apply(tables, eps, h, t)?;
        t += h;
        step += 1;
        cum_l += fl * h;
        cum_r += fr * h;
        left_flux.push(t, fl);
        right_flux.push(t, fr);
        if step.is_multiple_of(stride) || t >= t1 - t_eps {
            field.times.push(t);
            field.values.push(seg.u.clone());
            field.cum_h.push(seg.cum_h.clone());
            field.cum_hv.push(seg.cum_hv.clone());
            field.cum_f.push(seg.cum_f.clone());
            mass.push(t, seg.mass());
        }
    }
    field.sup_abs = seg.sup_abs;
    Ok(ViscousRun {
        field,
        left_flux,
        right_flux,
        left_flux_integral: cum_l,
        right_flux_integral: cum_r,
        mass,
        initial_mass,
    })
}

/// The paired Hamilton-Jacobi field built by time quadrature of the viscous
/// flux: U(x,t) = primitive(x) - integral of (H(u) - eps * u_x) ds.
pub fn solve_viscous_hj(run: &ViscousRun, data: &Smoothed) -> GridField {
    let grid = run.field.grid;
    let base: Vec<f64> = grid.centers().map(|x| data.eval_primitive(x)).collect();
    let values: Vec<Vec<f64>> = run
        .field
        .cum_hv
        .iter()
        .map(|cum| base.iter().zip(cum).map(|(b, c)| b - c).collect())
        .collect();
    GridField {
        grid,
        eps: run.field.eps,
        bc_left: run.field.bc_left,
        bc_right: run.field.bc_right,
        times: run.field.times.clone(),
        values,
        cum_h: Vec::new(),
        cum_hv: Vec::new(),
        cum_f: Vec::new(),
        sup_abs: run.field.sup_abs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{smooth_initial, Piece};

    fn smoothed_bump(window: (f64, f64), amp: f64, m1: f64, m2: f64) -> Smoothed {
        // Primitive of a tanh front of derivative amplitude ~amp.
        let p = Piece::sample(window.0, window.1, 2049, move |x| {
            amp * 0.3 * (1.0 + (x / 0.3_f64).tanh())
        });
        smooth_initial(&p, m1, m2, 1e-4).unwrap()
    }

    #[test]
    fn eo_flux_is_consistent_and_monotone() {
        let f = Flux::from_registry("sin").unwrap();
        let t = FluxTables::for_range(&f, -8.0, 8.0);
        for &u in &[-3.0, -0.5, 0.0, 1.2, 2.9] {
            assert!((t.eo(u, u) - f.h(u)).abs() < 1e-6, "u={u}");
            assert!((t.value(u) - f.h(u)).abs() < 1e-6);
        }
        assert!(t.eo(0.5, 1.0) >= t.eo(0.4, 1.0) - 1e-12);
        assert!(t.eo(0.5, 1.0) <= t.eo(0.5, 0.9) + 1e-12);
    }

    #[test]
    fn reservoir_flux_saturates_at_tail_extrema() {
        let f = Flux::from_registry("sin").unwrap();
        let t = FluxTables::for_range(&f, -45.0, 45.0);
        let res = t.reservoir(40.0);
        // Ghost +40 on the left against a moderate cell: max of sin over
        // [u, 40] = 1. Ghost +40 on the right: min over [u, 40] = -1.
        assert!((res.flux_ghost_left(&t, 0.0) - 1.0).abs() < 1e-4);
        assert!((res.flux_ghost_left(&t, -2.0) - 1.0).abs() < 1e-4);
        assert!((res.flux_ghost_right(&t, 0.0) + 1.0).abs() < 1e-4);

        let resn = t.reservoir(-40.0);
        assert!((resn.flux_ghost_left(&t, 0.0) + 1.0).abs() < 1e-4);
        assert!((resn.flux_ghost_right(&t, 0.0) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn reservoir_flux_tracks_the_local_state_for_monotone_flux() {
        let f = Flux::from_registry("arctan").unwrap();
        let t = FluxTables::for_range(&f, -45.0, 45.0);
        let res = t.reservoir(40.0);
        // arctan increasing: max over [u, 40] is at 40, min at u.
        assert!((res.flux_ghost_left(&t, 0.0) - 40.0f64.atan()).abs() < 1e-6);
        assert!((res.flux_ghost_right(&t, 0.3) - 0.3f64.atan()).abs() < 1e-6);
    }

    #[test]
    fn zero_flux_is_pure_heat_flow() {
        let f = Flux::from_registry("constant(0)").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 1.0, 0.0, 0.0);
        let run = solve_viscous_cl(&f, &data, 0.05, 0.3, 200).unwrap();
        // The tanh front only decays to ~1e-5 at the pinned boundary, so a
        // little diffusive mass leaks out.
        let drift = (run.mass.v.last().unwrap() - run.initial_mass).abs();
        assert!(drift < 1e-4, "mass drift {drift}");
        let s0: f64 = run.field.values[0]
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .sum();
        let s1: f64 = run
            .field
            .final_values()
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .sum();
        assert!(s1 < s0, "diffusion should shrink variation");
    }

    #[test]
    fn discrete_maximum_principle_holds() {
        let f = Flux::from_registry("sin").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 1.0, 0.1, -0.2);
        let run = solve_viscous_cl(&f, &data, 0.03, 0.4, 300).unwrap();
        let bound = data.sup().max(0.1).max(0.2);
        assert!(
            run.field.sup_abs <= bound + 1e-9,
            "sup {} > bound {bound}",
            run.field.sup_abs
        );
    }

    #[test]
    fn mass_change_matches_boundary_fluxes_without_viscosity() {
        let f = Flux::from_registry("sin").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 0.8, 0.0, 0.0);
        let run = solve_viscous_cl(&f, &data, 0.0, 0.3, 250).unwrap();
        let expect = run.initial_mass + run.left_flux_integral - run.right_flux_integral;
        let got = *run.mass.v.last().unwrap();
        assert!((got - expect).abs() < 1e-10, "got {got} expect {expect}");
    }

    #[test]
    fn transport_band_matches_shifted_data() {
        let f = Flux::from_registry("clipped_linear(-1,1)").unwrap();
        let n = 400;
        let p = Piece::sample(-2.0, 2.0, 2049, |x| {
            0.25 * 0.25 * (1.0 + (x / 0.25_f64).tanh())
        });
        let data = smooth_initial(&p, 0.0, 0.0, 1e-4).unwrap();
        let eps = 0.02;
        let t_final = 0.8;
        let run = solve_viscous_cl(&f, &data, eps, t_final, n).unwrap();
        let grid = run.field.grid;
        let mut l1 = 0.0;
        for (i, x) in grid.centers().enumerate() {
            let exact = data.eval_u0(x - t_final);
            l1 += (run.field.final_values()[i] - exact).abs() * grid.dx;
        }
        let budget = 4.0 * (grid.dx + eps);
        assert!(l1 <= budget, "L1 {l1} > {budget}");
    }

    #[test]
    fn riemann_shock_travels_at_the_flux_chord_speed() {
        // Capped quadratic flux: Lipschitz and bounded, quadratic on the
        // data range. The entropy shock from 1 down to 0 moves at
        // (H(1)-H(0))/(1-0) = 1/2.
        let f = Flux::from_fn("burgers_capped", |u: f64| (0.5 * u * u).min(2.0), 1e3).unwrap();
        let n = 800;
        let p = Piece::sample(-1.0, 3.0, 4097, |x: f64| if x < 0.0 { x } else { 0.0 });
        let data = smooth_initial(&p, 1.0, 0.0, 2.5e-5).unwrap();
        let eps = 0.004;
        let run = solve_viscous_cl(&f, &data, eps, 1.0, n).unwrap();
        let grid = run.field.grid;
        let uf = run.field.final_values();
        let mut pos = f64::NAN;
        for i in 1..n {
            if uf[i - 1] >= 0.5 && uf[i] < 0.5 {
                pos = grid.center(i);
                break;
            }
        }
        assert!(
            (pos - 0.5).abs() < 10.0 * (grid.dx + eps),
            "shock at {pos}, expected 0.5"
        );
    }

    #[test]
    fn ordered_data_stays_ordered() {
        let f = Flux::from_registry("sin").unwrap();
        let lo = smoothed_bump((-2.0, 2.0), 0.5, 0.0, 0.0);
        let hi = smoothed_bump((-2.0, 2.0), 0.9, 0.0, 0.0);
        let ru = solve_viscous_cl(&f, &lo, 0.02, 0.4, 200).unwrap();
        let rv = solve_viscous_cl(&f, &hi, 0.02, 0.4, 200).unwrap();
        for (tu, tv) in ru.field.values.iter().zip(&rv.field.values) {
            for (a, b) in tu.iter().zip(tv) {
                assert!(*a <= b + 1e-9);
            }
        }
    }

    #[test]
    fn l1_growth_is_capped_by_the_flux_norm() {
        let f = Flux::from_registry("sin").unwrap();
        let data = smoothed_bump((-3.0, 3.0), 0.6, 0.0, 0.0);
        let t_final = 0.5;
        let run = solve_viscous_cl(&f, &data, 0.02, t_final, 300).unwrap();
        let grid = run.field.grid;
        let l1 = |row: &[f64]| row.iter().map(|v| v.abs()).sum::<f64>() * grid.dx;
        assert!(l1(run.field.final_values()) <= l1(&run.field.values[0]) + 2.0 * t_final + 0.05);
    }

    #[test]
    fn step_cap_violation_is_reported() {
        let f = Flux::from_registry("sin").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 1.0, 0.0, 0.0);
        let err = solve_viscous_cl(&f, &data, 50.0, 10.0, 4000).unwrap_err();
        assert!(matches!(err, ViscousError::CflViolation { .. }));
    }

    #[test]
    fn hj_field_from_zero_flux_stays_at_the_primitive() {
        let f = Flux::from_registry("constant(0)").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 0.0, 0.0, 0.0);
        let run = solve_viscous_cl(&f, &data, 0.01, 0.2, 100).unwrap();
        let hj = solve_viscous_hj(&run, &data);
        for row in &hj.values {
            for (i, x) in hj.grid.centers().enumerate() {
                assert!((row[i] - data.eval_primitive(x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hj_gradient_matches_the_conservation_field() {
        let f = Flux::from_registry("sin").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 0.7, 0.1, -0.1);
        let run = solve_viscous_cl(&f, &data, 0.05, 0.4, 400).unwrap();
        let hj = solve_viscous_hj(&run, &data);
        let grid = hj.grid;
        let sup_ux = run.field.sup_ux();
        let mut worst = 0.0f64;
        for (k, row) in hj.values.iter().enumerate() {
            for i in 1..grid.n - 1 {
                let dxu = (row[i + 1] - row[i - 1]) / (2.0 * grid.dx);
                worst = worst.max((dxu - run.field.values[k][i]).abs());
            }
        }
        let cap = 5.0 * grid.dx * sup_ux.max(1.0);
        assert!(worst <= cap, "worst {worst}, cap {cap}");
    }

    #[test]
    fn hj_time_derivative_is_bounded_by_the_flux() {
        let f = Flux::from_registry("sin").unwrap();
        let data = smoothed_bump((-2.0, 2.0), 0.7, 0.0, 0.0);
        let eps = 0.05;
        let run = solve_viscous_cl(&f, &data, eps, 0.4, 400).unwrap();
        let hj = solve_viscous_hj(&run, &data);
        let cap = 1.0 + eps * run.field.sup_ux() + 0.05;
        let mut worst = 0.0f64;
        for k in 1..hj.times.len() {
            let dt = hj.times[k] - hj.times[k - 1];
            for i in 0..hj.grid.n {
                worst = worst.max((hj.values[k][i] - hj.values[k - 1][i]).abs() / dt);
            }
        }
        assert!(worst <= cap, "dU/dt {worst} > {cap}");
    }
}
