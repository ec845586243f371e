//! Signed measures with finitely many point masses and their primitives.
//!
//! A [`Measure`] is a sampled density plus a finite list of signed atoms on
//! a computational window; a [`Piecewise`] is a function continuous on the
//! closure of each piece with nonzero jumps at the breakpoints. The two are
//! linked by differentiation (jumps become atoms, the in-piece derivative
//! becomes the density) and integration from an anchor point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid1;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("atom locations must be strictly increasing and strictly inside the window")]
    BadAtoms,
    #[error("atom masses must be nonzero")]
    ZeroMass,
    #[error("anchor {0} coincides with an atom location")]
    AnchorOnAtom(f64),
    #[error("anchor {0} outside the window")]
    AnchorOutside(f64),
    #[error("pieces must tile the window contiguously")]
    NonContiguous,
    #[error("jump at breakpoint {0} is zero; merge the pieces")]
    ZeroJump(f64),
    #[error("smoothing scale too coarse: need 6*sqrt(eps) < window width")]
    DomainTooNarrow,
    #[error("eps must lie in (0,1)")]
    BadEps,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

/// Signed Radon measure on a window: absolutely continuous density sampled
/// at cell centers plus finitely many atoms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Measure {
    pub grid: Grid1,
    pub density: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl Measure {
    pub fn new(grid: Grid1, density: Vec<f64>, atoms: Vec<Atom>) -> Result<Self, MeasureError> {
        assert_eq!(density.len(), grid.n);
        let (lo, hi) = (grid.x_lo, grid.x_hi());
        for w in atoms.windows(2) {
            if w[1].x <= w[0].x {
                return Err(MeasureError::BadAtoms);
            }
        }
        for a in &atoms {
            if a.x <= lo || a.x >= hi {
                return Err(MeasureError::BadAtoms);
            }
            if a.mass == 0.0 {
                return Err(MeasureError::ZeroMass);
            }
        }
        Ok(Measure {
            grid,
            density,
            atoms,
        })
    }

    pub fn zero(window: (f64, f64), n: usize) -> Self {
        let grid = Grid1::new(window.0, window.1, n);
        Measure {
            grid,
            density: vec![0.0; n],
            atoms: Vec::new(),
        }
    }

    pub fn from_density_fn(
        window: (f64, f64),
        n: usize,
        f: impl Fn(f64) -> f64,
        atoms: Vec<Atom>,
    ) -> Result<Self, MeasureError> {
        let grid = Grid1::new(window.0, window.1, n);
        let density = grid.centers().map(f).collect();
        Measure::new(grid, density, atoms)
    }

    pub fn window(&self) -> (f64, f64) {
        (self.grid.x_lo, self.grid.x_hi())
    }

    pub fn density_sup(&self) -> f64 {
        self.density.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn density_l1(&self) -> f64 {
        self.density.iter().map(|v| v.abs()).sum::<f64>() * self.grid.dx
    }

    /// ∫ u_r dx + Σ masses over the window.
    pub fn total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.dx
            + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }
}

/// One continuous piece of a piecewise function, sampled at `values.len()`
/// uniform nodes spanning the closed interval.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Piece {
    pub x_lo: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl Piece {
    pub fn sample(x_lo: f64, x_hi: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Self {
        assert!(nodes >= 2 && x_hi > x_lo);
        let dx = (x_hi - x_lo) / (nodes - 1) as f64;
        Piece {
            x_lo,
            dx,
            values: (0..nodes).map(|i| f(x_lo + i as f64 * dx)).collect(),
        }
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + self.dx * (self.values.len() - 1) as f64
    }

    pub fn left_value(&self) -> f64 {
        self.values[0]
    }

    pub fn right_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Piecewise-linear evaluation inside the closed interval.
    pub fn eval(&self, x: f64) -> f64 {
        let s = ((x - self.x_lo) / self.dx).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.values.len() - 2);
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Slope of the linear interpolant at `x`.
    pub fn slope(&self, x: f64) -> f64 {
        let s = ((x - self.x_lo) / self.dx).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.values.len() - 2);
        (self.values[i + 1] - self.values[i]) / self.dx
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Function continuous on the closure of each piece, with nonzero jumps at
/// the interior breakpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Piecewise {
    pub pieces: Vec<Piece>,
}

impl Piecewise {
    pub fn new(pieces: Vec<Piece>) -> Result<Self, MeasureError> {
        assert!(!pieces.is_empty());
        for w in pieces.windows(2) {
            if (w[0].x_hi() - w[1].x_lo).abs() > 1e-9 * (1.0 + w[0].x_hi().abs()) {
                return Err(MeasureError::NonContiguous);
            }
            if w[1].left_value() == w[0].right_value() {
                return Err(MeasureError::ZeroJump(w[1].x_lo));
            }
        }
        Ok(Piecewise { pieces })
    }

    pub fn single(piece: Piece) -> Self {
        Piecewise {
            pieces: vec![piece],
        }
    }

    pub fn window(&self) -> (f64, f64) {
        (self.pieces[0].x_lo, self.pieces.last().unwrap().x_hi())
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces[1..].iter().map(|p| p.x_lo).collect()
    }

    /// Jump at interior breakpoint `j`: right limit minus left limit.
    pub fn jump(&self, j: usize) -> f64 {
        self.pieces[j + 1].left_value() - self.pieces[j].right_value()
    }

    /// Evaluate away from breakpoints (at a breakpoint the right limit is
    /// returned).
    pub fn eval(&self, x: f64) -> f64 {
        let i = self
            .pieces
            .iter()
            .position(|p| x < p.x_hi())
            .unwrap_or(self.pieces.len() - 1);
        self.pieces[i].eval(x)
    }

    pub fn sup(&self) -> f64 {
        self.pieces.iter().fold(0.0f64, |m, p| m.max(p.sup()))
    }

    /// Largest slope magnitude of the interpolants (Lipschitz bound away
    /// from breakpoints).
    pub fn max_slope(&self) -> f64 {
        let mut m = 0.0f64;
        for p in &self.pieces {
            for w in p.values.windows(2) {
                m = m.max(((w[1] - w[0]) / p.dx).abs());
            }
        }
        m
    }
}

/// Distributional derivative: jumps become atoms, the in-piece derivative
/// becomes the density resampled onto an `n`-cell grid.
pub fn derivative_measure(u0: &Piecewise, n: usize) -> Measure {
    let (lo, hi) = u0.window();
    let grid = Grid1::new(lo, hi, n);
    let density = grid.centers().map(|x| slope_at(u0, x)).collect();
    let atoms = (0..u0.pieces.len() - 1)
        .map(|j| Atom {
            x: u0.pieces[j + 1].x_lo,
            mass: u0.jump(j),
        })
        .collect();
    Measure {
        grid,
        density,
        atoms,
    }
}

fn slope_at(u0: &Piecewise, x: f64) -> f64 {
    let i = u0
        .pieces
        .iter()
        .position(|p| x < p.x_hi())
        .unwrap_or(u0.pieces.len() - 1);
    u0.pieces[i].slope(x)
}

/// Primitive with `U(anchor) = 0`: breakpoints at the atom locations, jumps
/// equal to the masses, slope equal to the density.
pub fn primitive_function(u0: &Measure, anchor: f64) -> Result<Piecewise, MeasureError> {
    let (lo, hi) = u0.window();
    if !(anchor > lo && anchor < hi) {
        return Err(MeasureError::AnchorOutside(anchor));
    }
    let tol = 1e-9 * (hi - lo);
    if u0.atoms.iter().any(|a| (a.x - anchor).abs() < tol) {
        return Err(MeasureError::AnchorOnAtom(anchor));
    }

    let mut bounds = vec![lo];
    bounds.extend(u0.atoms.iter().map(|a| a.x));
    bounds.push(hi);

    let mut pieces = Vec::new();
    let mut base = 0.0;
    for (j, w) in bounds.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let nodes = ((b - a) / u0.grid.dx).ceil().max(16.0) as usize + 1;
        let dx = (b - a) / (nodes - 1) as f64;
        let mut values = Vec::with_capacity(nodes);
        let mut acc = base;
        values.push(acc);
        for i in 1..nodes {
            let xm = a + (i as f64 - 0.5) * dx;
            acc += u0.grid.interp(&u0.density, xm) * dx;
            values.push(acc);
        }
        base = acc;
        if j < u0.atoms.len() {
            base += u0.atoms[j].mass;
        }
        pieces.push(Piece {
            x_lo: a,
            dx,
            values,
        });
    }

    let mut pw = Piecewise { pieces };
    let shift = pw.eval(anchor);
    for p in &mut pw.pieces {
        for v in &mut p.values {
            *v -= shift;
        }
    }
    Ok(pw)
}

/// Smoothed restriction of one continuous piece with prescribed boundary
/// derivatives, built with a three-piece partition of unity at sqrt(eps)
/// scales.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Smoothed {
    pub eps: f64,
    pub x_lo: f64,
    pub dx: f64,
    /// Smoothed derivative at nodes; equals `m1` on [a, a+sqrt(eps)] and
    /// `m2` on [b-sqrt(eps), b].
    pub u0: Vec<f64>,
    /// Its primitive at nodes, anchored at the piece's left value.
    pub primitive: Vec<f64>,
    pub m1: f64,
    pub m2: f64,
    /// L1 norm of the first derivative of `u0`.
    pub l1_du: f64,
    /// sqrt(eps) times the L1 norm of the second derivative of `u0`.
    pub l1_ddu_scaled: f64,
}

impl Smoothed {
    pub fn sup(&self) -> f64 {
        self.u0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.u0.len()).map(move |i| self.x_lo + i as f64 * self.dx)
    }

    /// Resample the smoothed derivative at the centers of `grid`.
    pub fn resample_centers(&self, grid: &Grid1) -> Vec<f64> {
        grid.centers().map(|x| self.eval_u0(x)).collect()
    }

    pub fn eval_u0(&self, x: f64) -> f64 {
        let s = ((x - self.x_lo) / self.dx).clamp(0.0, (self.u0.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.u0.len() - 2);
        let w = s - i as f64;
        self.u0[i] * (1.0 - w) + self.u0[i + 1] * w
    }

    pub fn eval_primitive(&self, x: f64) -> f64 {
        let s = ((x - self.x_lo) / self.dx).clamp(0.0, (self.primitive.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.primitive.len() - 2);
        let w = s - i as f64;
        self.primitive[i] * (1.0 - w) + self.primitive[i + 1] * w
    }
}

/// C² ramp from 0 at `x0` to 1 at `x1`.
fn ramp_up(x: f64, x0: f64, x1: f64) -> f64 {
    let s = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Smooth one piece against boundary derivative values `m1`, `m2`.
pub fn smooth_initial(piece: &Piece, m1: f64, m2: f64, eps: f64) -> Result<Smoothed, MeasureError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(MeasureError::BadEps);
    }
    let (a, b) = (piece.x_lo, piece.x_hi());
    let r = eps.sqrt();
    if 6.0 * r >= b - a {
        return Err(MeasureError::DomainTooNarrow);
    }

    let dx = (r / 16.0).min(piece.dx).min((b - a) / 64.0);
    let n = ((b - a) / dx).ceil() as usize;
    let dx = (b - a) / n as f64;

    // f1 = 1 up to a+2r, supported below a+3r; f3 mirrored at b; f2 fills in.
    let f1 = |x: f64| 1.0 - ramp_up(x, a + 2.0 * r, a + 3.0 * r);
    let f3 = |x: f64| ramp_up(x, b - 3.0 * r, b - 2.0 * r);

    let mut u0 = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = a + i as f64 * dx;
        let (w1, w3) = (f1(x), f3(x));
        let w2 = (1.0 - w1 - w3).max(0.0);
        u0.push(m1 * w1 + w2 * piece.slope(x) + m2 * w3);
    }

    let mut primitive = Vec::with_capacity(n + 1);
    let mut acc = piece.left_value();
    primitive.push(acc);
    for i in 1..=n {
        acc += 0.5 * (u0[i - 1] + u0[i]) * dx;
        primitive.push(acc);
    }

    let mut l1_du = 0.0;
    let mut l1_ddu = 0.0;
    for i in 1..=n {
        l1_du += (u0[i] - u0[i - 1]).abs();
        if i < n {
            l1_ddu += (u0[i + 1] - 2.0 * u0[i] + u0[i - 1]).abs() / dx;
        }
    }

    Ok(Smoothed {
        eps,
        x_lo: a,
        dx,
        u0,
        primitive,
        m1,
        m2,
        l1_du,
        l1_ddu_scaled: eps.sqrt() * l1_ddu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn heaviside() -> Piecewise {
        Piecewise::new(vec![
            Piece::sample(-2.0, 0.0, 33, |_| 0.0),
            Piece::sample(0.0, 2.0, 33, |_| 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn heaviside_derivative_is_a_unit_atom() {
        let m = derivative_measure(&heaviside(), 64);
        assert_eq!(m.atoms.len(), 1);
        assert!((m.atoms[0].x - 0.0).abs() < 1e-12);
        assert!((m.atoms[0].mass - 1.0).abs() < 1e-12);
        assert!(m.density_sup() < 1e-12);
    }

    #[test]
    fn smooth_function_derivative_has_no_atoms() {
        let u0 = Piecewise::single(Piece::sample(-1.0, 1.0, 257, |x| (x * x) / 2.0));
        let m = derivative_measure(&u0, 128);
        assert!(m.atoms.is_empty());
        for (i, x) in m.grid.centers().enumerate() {
            assert!((m.density[i] - x).abs() < 1e-2);
        }
    }

    #[test]
    fn linear_plus_two_steps() {
        // U0(x) = x + 2*step(x-1) - step(x+1)
        let u0 = Piecewise::new(vec![
            Piece::sample(-3.0, -1.0, 65, |x| x),
            Piece::sample(-1.0, 1.0, 65, |x| x - 1.0),
            Piece::sample(1.0, 3.0, 65, |x| x + 1.0),
        ])
        .unwrap();
        let m = derivative_measure(&u0, 192);
        assert_eq!(m.atoms.len(), 2);
        assert!((m.atoms[0].x + 1.0).abs() < 1e-12 && (m.atoms[0].mass + 1.0).abs() < 1e-12);
        assert!((m.atoms[1].x - 1.0).abs() < 1e-12 && (m.atoms[1].mass - 2.0).abs() < 1e-12);
        for d in &m.density {
            assert!((d - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn primitive_of_unit_atom_is_heaviside() {
        let m =
            Measure::from_density_fn((-2.0, 2.0), 64, |_| 0.0, vec![Atom { x: 0.0, mass: 1.0 }])
                .unwrap();
        let u0 = primitive_function(&m, -1.0).unwrap();
        assert_eq!(u0.pieces.len(), 2);
        assert!(u0.eval(-0.5).abs() < 1e-12);
        assert!((u0.eval(0.5) - 1.0).abs() < 1e-12);
        assert!((u0.jump(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn primitive_of_unit_density_is_identity() {
        let m = Measure::from_density_fn((-2.0, 2.0), 256, |_| 1.0, vec![]).unwrap();
        let u0 = primitive_function(&m, 0.0).unwrap();
        for &x in &[-1.5, -0.3, 0.0, 0.7, 1.9] {
            assert!((u0.eval(x) - x).abs() < 1e-9, "U0({x}) = {}", u0.eval(x));
        }
    }

    #[test]
    fn anchor_on_atom_is_rejected() {
        let m =
            Measure::from_density_fn((-2.0, 2.0), 64, |_| 0.0, vec![Atom { x: 0.5, mass: 1.0 }])
                .unwrap();
        assert!(matches!(
            primitive_function(&m, 0.5),
            Err(MeasureError::AnchorOnAtom(_))
        ));
        assert!(matches!(
            primitive_function(&m, 3.0),
            Err(MeasureError::AnchorOutside(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Differentiating the primitive reproduces the measure up to grid
        /// tolerance: atom locations/masses exactly, density to O(dx).
        #[test]
        fn derivative_of_primitive_round_trips(
            masses in proptest::array::uniform3(-2.0f64..2.0),
            amp in -1.5f64..1.5,
            freq in 0.5f64..2.0,
        ) {
            prop_assume!(masses.iter().all(|m| m.abs() > 0.05));
            let atoms = vec![
                Atom { x: -1.0, mass: masses[0] },
                Atom { x: 0.25, mass: masses[1] },
                Atom { x: 1.25, mass: masses[2] },
            ];
            let n = 512;
            let m = Measure::from_density_fn(
                (-3.0, 3.0), n, |x| amp * (freq * x).sin(), atoms.clone(),
            ).unwrap();
            let u0 = primitive_function(&m, -2.0).unwrap();
            let back = derivative_measure(&u0, n);
            prop_assert_eq!(back.atoms.len(), atoms.len());
            for (a, b) in back.atoms.iter().zip(&atoms) {
                prop_assert!((a.x - b.x).abs() < 1e-9);
                prop_assert!((a.mass - b.mass).abs() < 1e-9);
            }
            let dx = m.grid.dx;
            let mut l1 = 0.0;
            for (i, x) in m.grid.centers().enumerate() {
                // Skip cells straddling an atom; the resampled slope there
                // reads across the jump.
                if atoms.iter().any(|a| (a.x - x).abs() < 2.0 * dx) { continue; }
                l1 += (back.density[i] - m.density[i]).abs() * dx;
            }
            prop_assert!(l1 < 10.0 * dx * (1.0 + amp.abs()), "l1 = {l1}");
        }
    }

    #[test]
    fn smoothing_zero_data_gives_zero() {
        let p = Piece::sample(0.0, 1.0, 65, |_| 0.0);
        let s = smooth_initial(&p, 0.0, 0.0, 0.01).unwrap();
        assert!(s.sup() < 1e-15);
        for v in &s.primitive {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_matches_prescribed_plateaus() {
        // Linear piece on [0,1] with slope 1, boundary derivatives 5 and -3,
        // eps = 0.01, so sqrt(eps) = 0.1.
        let p = Piece::sample(0.0, 1.0, 129, |x| x);
        let s = smooth_initial(&p, 5.0, -3.0, 0.01).unwrap();
        for (i, x) in s.nodes().enumerate() {
            if x <= 0.1 {
                assert!((s.u0[i] - 5.0).abs() < 1e-12, "x={x}");
            }
            if (0.3..=0.7).contains(&x) {
                assert!((s.u0[i] - 1.0).abs() < 1e-12, "x={x}");
            }
            if x >= 0.9 {
                assert!((s.u0[i] + 3.0).abs() < 1e-12, "x={x}");
            }
        }
        // Sup bound by the data and boundary values.
        assert!(s.sup() <= 5.0 + 1e-12);
        // Primitive differentiates back to u0.
        for i in 1..s.u0.len() - 1 {
            let d = (s.primitive[i + 1] - s.primitive[i - 1]) / (2.0 * s.dx);
            assert!((d - s.u0[i]).abs() < 5.0 * s.dx * 40.0);
        }
    }

    #[test]
    fn smoothing_converges_to_the_slope_in_l1() {
        let p = Piece::sample(0.0, 1.0, 513, |x| 0.5 * x * x);
        let mut errs = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            let s = smooth_initial(&p, 2.0, -1.0, eps).unwrap();
            let mut l1 = 0.0;
            for (i, x) in s.nodes().enumerate() {
                l1 += (s.u0[i] - x).abs() * s.dx;
            }
            errs.push(l1);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn smoothing_rejects_narrow_domains() {
        let p = Piece::sample(0.0, 0.5, 33, |_| 0.0);
        assert!(matches!(
            smooth_initial(&p, 0.0, 0.0, 0.01),
            Err(MeasureError::DomainTooNarrow)
        ));
    }

    #[test]
    fn smoothed_sup_respects_the_bound() {
        let p = Piece::sample(-1.0, 1.0, 257, |x| (3.0 * x).sin());
        for (m1, m2) in [(0.5, -0.5), (4.0, 0.0), (0.0, 0.0)] {
            let s = smooth_initial(&p, m1, m2, 0.004).unwrap();
            let cap = m1.abs().max(m2.abs()).max(3.0);
            assert!(s.sup() <= cap + 1e-9);
        }
    }
}
