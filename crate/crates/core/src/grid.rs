//! Uniform 1-D cell grids shared by the measure and solver layers.

use serde::{Deserialize, Serialize};

/// Uniform grid of `n` cells on `[x_lo, x_lo + n*dx]`.
///
/// Cell `i` owns `[x_lo + i*dx, x_lo + (i+1)*dx]`; sampled values live at
/// cell centers. Interfaces are indexed `0..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1 {
    pub x_lo: f64,
    pub dx: f64,
    pub n: usize,
}

impl Grid1 {
    pub fn new(x_lo: f64, x_hi: f64, n: usize) -> Self {
        assert!(n > 0 && x_hi > x_lo);
        Grid1 {
            x_lo,
            dx: (x_hi - x_lo) / n as f64,
            n,
        }
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + self.dx * self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_lo + (i as f64 + 0.5) * self.dx
    }

    pub fn interface(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.dx
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.center(i))
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_of(&self, x: f64) -> usize {
        let i = ((x - self.x_lo) / self.dx).floor() as i64;
        i.clamp(0, self.n as i64 - 1) as usize
    }

    /// Nearest interface index to `x`.
    pub fn nearest_interface(&self, x: f64) -> usize {
        let i = ((x - self.x_lo) / self.dx).round() as i64;
        i.clamp(0, self.n as i64) as usize
    }

    /// Linear interpolation of cell-center samples, constant beyond the
    /// outermost centers.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let s = (x - self.x_lo) / self.dx - 0.5;
        if s <= 0.0 {
            return values[0];
        }
        let last = self.n - 1;
        if s >= last as f64 {
            return values[last];
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }
}

/// A sampled time series (values at increasing times).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl Series {
    pub fn push(&mut self, t: f64, v: f64) {
        self.t.push(t);
        self.v.push(v);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Linear interpolation in time, constant beyond the sampled range.
    pub fn at(&self, t: f64) -> f64 {
        assert!(!self.t.is_empty());
        if t <= self.t[0] {
            return self.v[0];
        }
        let last = self.t.len() - 1;
        if t >= self.t[last] {
            return self.v[last];
        }
        let i = match self
            .t
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => return self.v[i],
            Err(i) => i - 1,
        };
        let w = (t - self.t[i]) / (self.t[i + 1] - self.t[i]);
        self.v[i] * (1.0 - w) + self.v[i + 1] * w
    }

    /// Trapezoid integral of the series from its start to `t`.
    pub fn integral_to(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.t.len() {
            let (t0, t1) = (self.t[i - 1], self.t[i]);
            if t <= t0 {
                break;
            }
            let hi = t.min(t1);
            let v1 = self.at(hi);
            acc += 0.5 * (self.v[i - 1] + v1) * (hi - t0);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_indexing() {
        let g = Grid1::new(-2.0, 2.0, 8);
        assert!((g.dx - 0.5).abs() < 1e-15);
        assert!((g.center(0) + 1.75).abs() < 1e-15);
        assert_eq!(g.cell_of(-1.9), 0);
        assert_eq!(g.cell_of(1.9), 7);
        assert_eq!(g.nearest_interface(0.01), 4);
        assert!((g.interface(4) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn interp_is_exact_on_linear_data() {
        let g = Grid1::new(0.0, 1.0, 10);
        let vals: Vec<f64> = g.centers().map(|x| 3.0 * x - 1.0).collect();
        for &x in &[0.06, 0.5, 0.94] {
            assert!((g.interp(&vals, x) - (3.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn series_integral_matches_closed_form() {
        let mut s = Series::default();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            s.push(t, 2.0 * t);
        }
        assert!((s.integral_to(1.0) - 1.0).abs() < 1e-12);
        assert!((s.integral_to(0.5) - 0.25).abs() < 1e-12);
    }
}
