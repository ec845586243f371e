//! Bounded Lipschitz flux functions H and their tail structure.
//!
//! A [`Flux`] wraps an evaluator ξ ↦ H(ξ) together with numerically probed
//! metadata: sup/Lipschitz norms, the four tail quantities
//! limsup/liminf H(ξ) as ξ → ±∞, detected tail limits, and (via
//! [`Flux::classify`]) the tail hypothesis flags that decide which
//! waiting-time estimates apply:
//!
//! * both tails have a gap limsup > liminf → finite waiting time with an
//!   explicit bound,
//! * a tail limit exists and the derivative modulus M_k = ‖H'‖ beyond k
//!   decays with |H(k) − H∞| comparable to M_k → finite (pinch-sequence
//!   route),
//! * a tail limit exists and H − H∞ has constant sign on the tail →
//!   finite (one-sided route),
//! * H eventually constant → the singularity may persist forever.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type EvalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default half-width of the probed interval.
pub const DEFAULT_PROBE_RANGE: f64 = 1e6;

/// |H| above this during probing is treated as an unbounded flux.
const SUP_CAP: f64 = 1e4;

/// Tail oscillation below this counts as "the limit exists".
const TAIL_TOL: f64 = 1e-6;

/// Derivative modulus below this counts as "H constant beyond k".
const MODULUS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FluxError {
    #[error("sampled difference quotients diverge under refinement (max quotient {0:.3e})")]
    NonLipschitz(f64),
    #[error("|H| exceeds the probe cap {cap:.1e} (found {found:.3e})")]
    Unbounded { found: f64, cap: f64 },
    #[error("probe range too short to stabilize the {side} tail (oscillation {osc:.3e})")]
    InconclusiveTail { side: &'static str, osc: f64 },
    #[error("mollification width must lie in (0, 0.5], got {0}")]
    InvalidEps(f64),
    #[error("flux table needs at least two strictly increasing abscissae")]
    BadTable,
    #[error("unknown flux spec `{0}`")]
    UnknownFlux(String),
    #[error("k grid must be increasing and within the probe range")]
    BadKGrid,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One-sided tail data of a probed flux.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TailAsymptotics {
    /// limsup of H toward this infinity.
    pub limsup: f64,
    /// liminf of H toward this infinity.
    pub liminf: f64,
    /// Present when the tail oscillation stabilizes below tolerance.
    pub limit: Option<f64>,
    /// Oscillation was still shrinking at the end of the probe range, so
    /// limit detection is unreliable.
    pub inconclusive: bool,
}

impl TailAsymptotics {
    /// limsup − liminf, clamped at zero.
    pub fn gap(&self) -> f64 {
        (self.limsup - self.liminf).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Asymptotics {
    pub pos: TailAsymptotics,
    pub neg: TailAsymptotics,
}

/// A bounded Lipschitz flux with probed metadata.
#[derive(Clone)]
pub struct Flux {
    name: String,
    eval: EvalFn,
    pub sup_norm: f64,
    pub lip_norm: f64,
    /// Probed global extrema of H (signed, unlike `sup_norm`).
    pub min_value: f64,
    pub max_value: f64,
    pub asym: Asymptotics,
    pub probe_range: f64,
}

impl std::fmt::Debug for Flux {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Flux")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("lip_norm", &self.lip_norm)
            .field("asym", &self.asym)
            .finish()
    }
}

/// Aitken Δ² extrapolation of the last three terms; falls back to the last
/// term when the sequence is flat.
pub(crate) fn aitken_tail(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n < 3 {
        return seq[n - 1];
    }
    let (a, b, c) = (seq[n - 3], seq[n - 2], seq[n - 1]);
    let denom = (c - b) - (b - a);
    let scale = a.abs().max(b.abs()).max(c.abs()).max(1.0);
    if denom.abs() < 1e-12 * scale {
        c
    } else {
        c - (c - b) * (c - b) / denom
    }
}

struct TailProbe {
    sup_star: Vec<f64>, // per-window max, innermost first
    inf_star: Vec<f64>, // per-window min
    max_abs: f64,
    max_quot: f64,
    vmin: f64,
    vmax: f64,
}

fn probe_tail(eval: &EvalFn, sign: f64, lo: f64, probe_range: f64) -> TailProbe {
    let mut sup_star = Vec::new();
    let mut inf_star = Vec::new();
    let mut max_abs: f64 = 0.0;
    let mut max_quot: f64 = 0.0;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    let mut w_lo = lo;
    loop {
        let w_hi = (w_lo * 4.0).min(probe_range);
        let m = 1024usize;
        let mut wmax = f64::NEG_INFINITY;
        let mut wmin = f64::INFINITY;
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=m {
            let x = w_lo * (w_hi / w_lo).powf(i as f64 / m as f64);
            let v = eval(sign * x);
            wmax = wmax.max(v);
            wmin = wmin.min(v);
            max_abs = max_abs.max(v.abs());
            vmin = vmin.min(v);
            vmax = vmax.max(v);
            if let Some((xp, vp)) = prev {
                let dx = (x - xp).abs();
                if dx > 0.0 {
                    max_quot = max_quot.max((v - vp).abs() / dx);
                }
            }
            prev = Some((x, v));
        }
        sup_star.push(wmax);
        inf_star.push(wmin);
        if w_hi >= probe_range {
            break;
        }
        w_lo = w_hi;
    }
    TailProbe {
        sup_star,
        inf_star,
        max_abs,
        max_quot,
        vmin,
        vmax,
    }
}

fn tail_asymptotics(probe: &TailProbe) -> TailAsymptotics {
    let star = aitken_tail(&probe.sup_star);
    let low = aitken_tail(&probe.inf_star);
    let (star, low) = if star >= low {
        (star, low)
    } else {
        (low, star)
    };
    let osc: Vec<f64> = probe
        .sup_star
        .iter()
        .zip(&probe.inf_star)
        .map(|(a, b)| a - b)
        .collect();
    let n = osc.len();
    if star - low < TAIL_TOL {
        let limit = 0.5 * (star + low);
        return TailAsymptotics {
            limsup: limit,
            liminf: limit,
            limit: Some(limit),
            inconclusive: false,
        };
    }
    // No limit detected. If the raw window oscillation was still shrinking
    // substantially at the end of the range, the probe was too short to
    // tell a genuine non-limit from a slow tail.
    let inconclusive = n >= 2 && osc[n - 1] < 0.75 * osc[n - 2] && osc[n - 1] > TAIL_TOL;
    TailAsymptotics {
        limsup: star,
        liminf: low,
        limit: None,
        inconclusive,
    }
}

impl Flux {
    /// Probe an evaluator and build the flux spec.
    ///
    /// Dense linear sampling near the origin estimates the sup and Lipschitz
    /// norms (with a refinement check that flags non-Lipschitz evaluators);
    /// geometric tail windows estimate the asymptotics, extrapolated so that
    /// slowly converging tails still resolve.
    pub fn from_fn(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        probe_range: f64,
    ) -> Result<Self, FluxError> {
        Self::from_eval(name.into(), Arc::new(eval), probe_range)
    }

    fn from_eval(name: String, eval: EvalFn, probe_range: f64) -> Result<Self, FluxError> {
        assert!(probe_range > 1.0, "probe range must exceed 1");
        let lin = probe_range.min(48.0);

        // Difference quotients at three refinements; persistent growth means
        // the evaluator is not Lipschitz on the probed interval.
        let mut quots = [0.0f64; 3];
        let mut sup: f64 = 0.0;
        let mut vmin = eval(0.0);
        let mut vmax = vmin;
        for (r, q) in quots.iter_mut().enumerate() {
            let n = 12288usize << r;
            let dx = 2.0 * lin / n as f64;
            let mut prev = eval(-lin);
            let mut qmax: f64 = 0.0;
            for i in 1..=n {
                let x = -lin + i as f64 * dx;
                let v = eval(x);
                qmax = qmax.max((v - prev).abs() / dx);
                if r == 2 {
                    sup = sup.max(v.abs());
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
                prev = v;
            }
            *q = qmax;
        }
        if quots[2] > 1e-6 && quots[1] >= 1.25 * quots[0] && quots[2] >= 1.25 * quots[1] {
            return Err(FluxError::NonLipschitz(quots[2]));
        }
        let mut lip = quots[2];

        let w0 = (probe_range / 4.0).clamp(1.0, 8.0);
        let pos = probe_tail(&eval, 1.0, w0, probe_range);
        let neg = probe_tail(&eval, -1.0, w0, probe_range);
        sup = sup.max(pos.max_abs).max(neg.max_abs);
        lip = lip.max(pos.max_quot).max(neg.max_quot);
        vmin = vmin.min(pos.vmin).min(neg.vmin);
        vmax = vmax.max(pos.vmax).max(neg.vmax);
        if sup > SUP_CAP {
            return Err(FluxError::Unbounded {
                found: sup,
                cap: SUP_CAP,
            });
        }

        Ok(Flux {
            name,
            eval,
            sup_norm: sup,
            lip_norm: lip,
            min_value: vmin,
            max_value: vmax,
            asym: Asymptotics {
                pos: tail_asymptotics(&pos),
                neg: tail_asymptotics(&neg),
            },
            probe_range,
        })
    }

    /// Piecewise-linear flux through `(x, H(x))` points, constant beyond the
    /// table ends.
    pub fn from_table(name: impl Into<String>, points: &[(f64, f64)]) -> Result<Self, FluxError> {
        if points.len() < 2 || points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(FluxError::BadTable);
        }
        let pts: Vec<(f64, f64)> = points.to_vec();
        let range = pts.last().unwrap().0.abs().max(pts[0].0.abs()).max(2.0) * 4.0;
        let eval = move |x: f64| -> f64 {
            if x <= pts[0].0 {
                return pts[0].1;
            }
            if x >= pts[pts.len() - 1].0 {
                return pts[pts.len() - 1].1;
            }
            let i = pts.partition_point(|p| p.0 <= x) - 1;
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[i + 1];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        };
        Self::from_fn(name, eval, range)
    }

    /// Two-column whitespace/comma-separated table file.
    pub fn from_table_path(path: &std::path::Path) -> Result<Self, FluxError> {
        let text = std::fs::read_to_string(path)?;
        let mut pts = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(FluxError::BadTable);
            }
            let x: f64 = cols[0].parse().map_err(|_| FluxError::BadTable)?;
            let y: f64 = cols[1].parse().map_err(|_| FluxError::BadTable)?;
            pts.push((x, y));
        }
        let name = format!("table({})", path.display());
        Self::from_table(name, &pts)
    }

    /// Parse a registry spec: `sin`, `arctan`, `exp_sin`, `constant(c)`,
    /// `clipped_linear(lo,hi)`, `table(path)`.
    pub fn from_registry(spec: &str) -> Result<Self, FluxError> {
        let spec = spec.trim();
        let (head, args) = match spec.find('(') {
            Some(i) if spec.ends_with(')') => (&spec[..i], &spec[i + 1..spec.len() - 1]),
            _ => (spec, ""),
        };
        let num = |s: &str| -> Result<f64, FluxError> {
            s.trim()
                .parse()
                .map_err(|_| FluxError::UnknownFlux(spec.to_string()))
        };
        match head {
            "sin" => Self::from_fn("sin", f64::sin, DEFAULT_PROBE_RANGE),
            "arctan" => Self::from_fn("arctan", f64::atan, DEFAULT_PROBE_RANGE),
            // Bounded variant with decaying oscillation in both tails.
            "exp_sin" => Self::from_fn(
                "exp_sin",
                |x: f64| (-x.abs()).exp() * x.sin(),
                DEFAULT_PROBE_RANGE,
            ),
            "constant" => {
                let c = num(args)?;
                Self::from_fn(format!("constant({c})"), move |_| c, DEFAULT_PROBE_RANGE)
            }
            "clipped_linear" => {
                let mut it = args.split(',');
                let lo = num(it.next().ok_or(FluxError::UnknownFlux(spec.into()))?)?;
                let hi = num(it.next().ok_or(FluxError::UnknownFlux(spec.into()))?)?;
                if hi <= lo || !hi.is_finite() || !lo.is_finite() {
                    return Err(FluxError::UnknownFlux(spec.into()));
                }
                Self::from_fn(
                    format!("clipped_linear({lo},{hi})"),
                    move |x: f64| x.clamp(lo, hi),
                    DEFAULT_PROBE_RANGE,
                )
            }
            "table" => Self::from_table_path(std::path::Path::new(args.trim())),
            _ => Err(FluxError::UnknownFlux(spec.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Evaluate H(u).
    pub fn h(&self, u: f64) -> f64 {
        (self.eval)(u)
    }

    pub fn eval_fn(&self) -> EvalFn {
        self.eval.clone()
    }

    /// Smoothed, compactly supported regularization of the flux.
    ///
    /// The evaluator is convolved with a compactly supported bump of width
    /// `eps` (normalized 129-node Simpson stencil), shifted so the result
    /// vanishes at the origin, and cut off by a C² ramp that equals 1 on
    /// (−1/eps, 1/eps) and vanishes outside (−2/eps, 2/eps) with ramp slope
    /// at most one for eps ≤ 0.5.
    pub fn mollify(&self, eps: f64) -> Result<Flux, FluxError> {
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(FluxError::InvalidEps(eps));
        }
        // Normalized bump kernel on 128 Simpson intervals.
        const M: usize = 128;
        let mut nodes = [0.0f64; M + 1];
        let mut weights = [0.0f64; M + 1];
        let mut total = 0.0;
        for i in 0..=M {
            let s = -1.0 + 2.0 * i as f64 / M as f64;
            nodes[i] = s;
            let bump = if s.abs() < 1.0 {
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            };
            let simpson = if i == 0 || i == M {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weights[i] = bump * simpson;
            total += weights[i];
        }
        for w in weights.iter_mut() {
            *w /= total;
        }

        let base = self.eval.clone();
        let conv = move |u: f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..=M {
                acc += weights[i] * base(u - eps * nodes[i]);
            }
            acc
        };
        let conv0 = conv(0.0);

        let half = 2.0 / eps + 1.0;
        let du = (eps / 8.0).max(half / 100_000.0).min(0.02);
        let n = (2.0 * half / du).ceil() as usize;
        let x0 = -half;
        let cut = move |u: f64| -> f64 {
            let s = (u.abs() - 1.0 / eps) * eps;
            if s <= 0.0 {
                1.0
            } else if s >= 1.0 {
                0.0
            } else {
                1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
            }
        };
        let values: Vec<f64> = (0..=n)
            .map(|i| {
                let u = x0 + i as f64 * du;
                let g = cut(u);
                if g == 0.0 {
                    0.0
                } else {
                    g * (conv(u) - conv0)
                }
            })
            .collect();

        let eval = move |u: f64| -> f64 {
            let s = (u - x0) / du;
            if s <= 0.0 {
                return values[0];
            }
            if s >= n as f64 {
                return values[n];
            }
            let i = s.floor() as usize;
            let w = s - i as f64;
            values[i] * (1.0 - w) + values[i + 1] * w
        };
        Self::from_fn(format!("{}~{eps}", self.name), eval, half)
    }

    /// Classify the tail hypotheses on the given increasing `k_grid`.
    ///
    /// Positive entries feed the +∞ side, negative entries the −∞ side.
    /// Errors with `InconclusiveTail` when the probe range was too short to
    /// stabilize a tail rather than guessing.
    pub fn classify(&self, k_grid: &[f64]) -> Result<HypothesisReport, FluxError> {
        if k_grid.len() < 4
            || k_grid.windows(2).any(|w| w[1] <= w[0])
            || k_grid.iter().any(|k| k.abs() > self.probe_range)
        {
            return Err(FluxError::BadKGrid);
        }
        if self.asym.pos.inconclusive {
            return Err(FluxError::InconclusiveTail {
                side: "+",
                osc: self.asym.pos.gap(),
            });
        }
        if self.asym.neg.inconclusive {
            return Err(FluxError::InconclusiveTail {
                side: "-",
                osc: self.asym.neg.gap(),
            });
        }
        let pos_ks: Vec<f64> = k_grid.iter().copied().filter(|k| *k > 0.0).collect();
        let neg_ks: Vec<f64> = k_grid.iter().copied().filter(|k| *k < 0.0).collect();
        Ok(HypothesisReport {
            pos: self.classify_side(&pos_ks, true),
            neg: self.classify_side(&neg_ks, false),
        })
    }

    fn classify_side(&self, ks: &[f64], positive: bool) -> TailReport {
        let tail = if positive {
            self.asym.pos
        } else {
            self.asym.neg
        };
        if ks.is_empty() {
            return TailReport::trivial(tail);
        }
        let (k_near, k_far) = if positive {
            (ks[0], ks[ks.len() - 1])
        } else {
            (ks[ks.len() - 1], ks[0])
        };
        // Dense |H'| samples from the nearest grid point out past the
        // farthest one; suffix maxima give M_k = ‖H'‖ beyond k.
        let reach = (k_far.abs() + 32.0).max(64.0).min(self.probe_range);
        let step = 0.005;
        let m = ((reach - k_near.abs()) / step).ceil() as usize;
        let sgn = if positive { 1.0 } else { -1.0 };
        let mut deriv: Vec<f64> = (0..=m)
            .map(|i| {
                let s = sgn * (k_near.abs() + i as f64 * step);
                (self.h(s + sgn * 0.5 * step) - self.h(s - sgn * 0.5 * step)).abs() / step
            })
            .collect();
        for i in (0..m).rev() {
            deriv[i] = deriv[i].max(deriv[i + 1]);
        }
        let modulus_at = |k: f64| -> f64 {
            let i = (((k.abs() - k_near.abs()) / step).floor() as usize).min(m);
            deriv[i]
        };
        let floor = MODULUS_FLOOR * self.lip_norm.max(1.0);

        let tail_modulus: Vec<(f64, f64)> = ks.iter().map(|&k| (k, modulus_at(k))).collect();
        let m_far = modulus_at(k_far);
        let m_near = modulus_at(k_near);
        let eventually_constant = tail.limit.is_some() && m_far < floor;
        let h4 = tail.limit.is_some() && !eventually_constant;

        let mut c0: Option<f64> = None;
        let mut h6_sign: Option<i8> = None;
        let mut h6_threshold = None;
        let mut h5 = false;
        let mut h6 = false;
        if let Some(hlim) = tail.limit {
            if h4 {
                // Pinch-constant estimate: max over the grid of |H(k)−H∞|/M_k.
                let mut best = 0.0f64;
                for &k in ks {
                    let mk = modulus_at(k);
                    if mk > floor {
                        best = best.max((self.h(k) - hlim).abs() / mk);
                    }
                }
                if best > 0.0 {
                    c0 = Some(best);
                }
                let decays = m_far <= (0.02 * m_near).max(10.0 * floor);
                h5 = decays && best > 1e-3;

                // Constant sign of H − H∞ from some grid threshold onward.
                let sign_floor = 1e-13 * self.sup_norm.max(1.0);
                let iter: Vec<f64> = if positive {
                    ks.to_vec()
                } else {
                    ks.iter().rev().copied().collect()
                };
                let signs: Vec<i8> = iter
                    .iter()
                    .map(|&k| {
                        let d = self.h(k) - hlim;
                        if d > sign_floor {
                            1
                        } else if d < -sign_floor {
                            -1
                        } else {
                            0
                        }
                    })
                    .collect();
                // Smallest threshold index from which all signs agree and are
                // nonzero, covering at least the outer quarter of the grid.
                let nk = signs.len();
                for start in 0..=(3 * nk / 4) {
                    let s0 = signs[start];
                    if s0 != 0 && signs[start..].iter().all(|&s| s == s0) {
                        h6 = true;
                        h6_sign = Some(s0);
                        h6_threshold = Some(iter[start]);
                        break;
                    }
                }
            }
        }

        let regime = if tail.limit.is_none() {
            FluxRegime::NoLimit
        } else if eventually_constant {
            FluxRegime::EventuallyConstant
        } else if h6 {
            FluxRegime::H6
        } else if h5 {
            FluxRegime::H5
        } else {
            FluxRegime::Conjecture
        };

        TailReport {
            limit: tail.limit,
            limsup: tail.limsup,
            liminf: tail.liminf,
            eventually_constant,
            h4,
            h5,
            c0,
            h6,
            h6_sign,
            h6_threshold,
            tail_modulus,
            regime,
        }
    }
}

/// Which tail mechanism governs the waiting time for singularities fed by
/// this side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxRegime {
    /// limsup > liminf: explicit finite upper bound.
    NoLimit,
    /// Constant beyond a threshold: the singularity may never vanish.
    EventuallyConstant,
    /// Tail limit with sign-definite approach.
    H6,
    /// Tail limit with pinch-comparable derivative decay.
    H5,
    /// Tail limit exists but neither mechanism applies; finiteness is only
    /// known for data of linear growth.
    Conjecture,
}

/// Per-side classification of the flux tail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub limit: Option<f64>,
    pub limsup: f64,
    pub liminf: f64,
    pub eventually_constant: bool,
    pub h4: bool,
    pub h5: bool,
    /// Pinch constant estimate (max of |H(k)−H∞|/M_k over the grid).
    pub c0: Option<f64>,
    pub h6: bool,
    pub h6_sign: Option<i8>,
    pub h6_threshold: Option<f64>,
    /// Sampled map k ↦ M_k (nonincreasing toward the infinity).
    pub tail_modulus: Vec<(f64, f64)>,
    pub regime: FluxRegime,
}

impl TailReport {
    fn trivial(tail: TailAsymptotics) -> Self {
        TailReport {
            limit: tail.limit,
            limsup: tail.limsup,
            liminf: tail.liminf,
            eventually_constant: false,
            h4: false,
            h5: false,
            c0: None,
            h6: false,
            h6_sign: None,
            h6_threshold: None,
            tail_modulus: Vec::new(),
            regime: if tail.limit.is_none() {
                FluxRegime::NoLimit
            } else {
                FluxRegime::Conjecture
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub pos: TailReport,
    pub neg: TailReport,
}

/// Symmetric default grid for tail classification.
pub fn default_k_grid() -> Vec<f64> {
    let mut ks = Vec::new();
    let mut k: f64 = -24.0;
    while k <= 24.0 + 1e-9 {
        if k.abs() > 0.2 {
            ks.push(k);
        }
        k += 0.05;
    }
    ks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_flux() -> Flux {
        Flux::from_registry("sin").unwrap()
    }

    #[test]
    fn sin_probe_matches_elementary_analysis() {
        let f = sin_flux();
        assert!((f.sup_norm - 1.0).abs() < 1e-3);
        assert!((f.lip_norm - 1.0).abs() < 1e-3);
        assert!((f.asym.pos.limsup - 1.0).abs() < 1e-3);
        assert!((f.asym.pos.liminf + 1.0).abs() < 1e-3);
        assert!(f.asym.pos.limit.is_none());
        assert!(f.asym.neg.limit.is_none());
    }

    #[test]
    fn arctan_probe_detects_limits() {
        let f = Flux::from_registry("arctan").unwrap();
        let pi2 = std::f64::consts::FRAC_PI_2;
        assert!((f.asym.pos.limit.unwrap() - pi2).abs() < 1e-4);
        assert!((f.asym.neg.limit.unwrap() + pi2).abs() < 1e-4);
        assert!((f.sup_norm - pi2).abs() < 1e-3);
    }

    #[test]
    fn zero_flux_probe_is_all_zero() {
        let f = Flux::from_registry("constant(0)").unwrap();
        assert_eq!(f.sup_norm, 0.0);
        assert_eq!(f.asym.pos.limsup, 0.0);
        assert_eq!(f.asym.neg.liminf, 0.0);
        assert_eq!(f.asym.pos.limit, Some(0.0));
    }

    #[test]
    fn linear_flux_is_rejected_as_unbounded() {
        let err = Flux::from_fn("linear", |x| x, DEFAULT_PROBE_RANGE).unwrap_err();
        assert!(matches!(err, FluxError::Unbounded { .. }));
    }

    #[test]
    fn sqrt_flux_is_rejected_as_non_lipschitz() {
        let err = Flux::from_fn("sqrt", |x| x.abs().sqrt().min(2.0), 1e3).unwrap_err();
        assert!(matches!(err, FluxError::NonLipschitz(_)));
    }

    #[test]
    fn short_probe_of_arctan_is_inconclusive() {
        let f = Flux::from_fn("arctan", f64::atan, 100.0).unwrap();
        assert!(f.asym.pos.inconclusive);
        let err = f.classify(&default_k_grid()).unwrap_err();
        assert!(matches!(err, FluxError::InconclusiveTail { .. }));
    }

    #[test]
    fn mollified_constant_vanishes_identically() {
        let f = Flux::from_registry("constant(3.5)").unwrap();
        let fm = f.mollify(0.1).unwrap();
        for &u in &[-15.0, -3.0, 0.0, 1.0, 9.0, 25.0] {
            assert!(fm.h(u).abs() < 1e-12, "H_eps({u}) = {}", fm.h(u));
        }
    }

    #[test]
    fn mollified_flux_vanishes_at_origin() {
        for spec in ["sin", "arctan", "exp_sin"] {
            let f = Flux::from_registry(spec).unwrap();
            for eps in [0.05, 0.2] {
                let fm = f.mollify(eps).unwrap();
                assert!(fm.h(0.0).abs() < 1e-12, "{spec} eps={eps}");
            }
        }
    }

    #[test]
    fn mollified_sin_converges_uniformly_on_compacts() {
        let f = sin_flux();
        let mut errs = Vec::new();
        for eps in [0.2, 0.1, 0.05] {
            let fm = f.mollify(eps).unwrap();
            let mut e: f64 = 0.0;
            let mut x = -10.0;
            while x <= 10.0 {
                e = e.max((fm.h(x) - f.h(x)).abs());
                x += 0.01;
            }
            errs.push(e);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        assert!(errs[2] < 0.01);
    }

    #[test]
    fn mollified_family_keeps_uniform_norm_bound() {
        let f = sin_flux();
        for eps in [0.05, 0.1, 0.25, 0.5] {
            let fm = f.mollify(eps).unwrap();
            let cap = 2.0 * f.sup_norm + f.lip_norm * eps;
            assert!(fm.sup_norm <= cap + 1e-9, "eps={eps}: {}", fm.sup_norm);
            assert!(fm.lip_norm <= f.lip_norm + 2.0 * f.sup_norm + 1e-6);
        }
    }

    #[test]
    fn mollify_rejects_bad_eps() {
        let f = sin_flux();
        assert!(matches!(f.mollify(0.0), Err(FluxError::InvalidEps(_))));
        assert!(matches!(f.mollify(0.9), Err(FluxError::InvalidEps(_))));
    }

    #[test]
    fn exp_sin_satisfies_pinch_hypothesis() {
        let f = Flux::from_registry("exp_sin").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        assert!(rep.pos.h4);
        assert!(rep.pos.h5, "c0 = {:?}", rep.pos.c0);
        assert!(!rep.pos.h6);
        assert_eq!(rep.pos.regime, FluxRegime::H5);
        // e^{-k} sin k has derivative bounded by sqrt(2) e^{-k} beyond k.
        for &(k, mk) in rep.pos.tail_modulus.iter().filter(|(k, _)| *k >= 0.5) {
            assert!(
                mk <= 2.0f64.sqrt() * (-k).exp() * (1.0 + 1e-2),
                "M_{k} = {mk}"
            );
        }
        // Mirror tail.
        assert!(rep.neg.h5);
    }

    #[test]
    fn arctan_is_one_sided_below_its_limit() {
        let f = Flux::from_registry("arctan").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        assert!(rep.pos.h4);
        assert!(rep.pos.h6);
        assert_eq!(rep.pos.h6_sign, Some(-1));
        assert_eq!(rep.pos.regime, FluxRegime::H6);
        assert_eq!(rep.neg.h6_sign, Some(1));
    }

    #[test]
    fn eventually_constant_tail_fails_h4() {
        let f = Flux::from_registry("clipped_linear(-1,1)").unwrap();
        let rep = f.classify(&default_k_grid()).unwrap();
        assert!(!rep.pos.h4);
        assert!(rep.pos.eventually_constant);
        assert_eq!(rep.pos.regime, FluxRegime::EventuallyConstant);
    }

    #[test]
    fn tail_modulus_is_nonincreasing() {
        for spec in ["sin", "arctan", "exp_sin"] {
            let f = Flux::from_registry(spec).unwrap();
            let rep = f.classify(&default_k_grid()).unwrap();
            for w in rep.pos.tail_modulus.windows(2) {
                assert!(w[1].1 <= w[0].1 + 1e-12, "{spec}");
            }
            // Negative side: nonincreasing in -k means nondecreasing in k.
            for w in rep.neg.tail_modulus.windows(2) {
                assert!(w[1].1 >= w[0].1 - 1e-12, "{spec}");
            }
        }
    }

    #[test]
    fn classification_ignores_constant_shifts() {
        let base = Flux::from_registry("exp_sin").unwrap();
        let shifted = Flux::from_fn(
            "exp_sin+5",
            |x: f64| (-x.abs()).exp() * x.sin() + 5.0,
            DEFAULT_PROBE_RANGE,
        )
        .unwrap();
        let a = base.classify(&default_k_grid()).unwrap();
        let b = shifted.classify(&default_k_grid()).unwrap();
        assert_eq!(a.pos.h4, b.pos.h4);
        assert_eq!(a.pos.h5, b.pos.h5);
        assert_eq!(a.pos.h6, b.pos.h6);
        assert_eq!(a.pos.regime, b.pos.regime);
        let (ca, cb) = (a.pos.c0.unwrap(), b.pos.c0.unwrap());
        assert!((ca - cb).abs() < 1e-6 * ca.max(1.0));
        for (x, y) in a.pos.tail_modulus.iter().zip(&b.pos.tail_modulus) {
            assert!((x.1 - y.1).abs() < 1e-9);
        }
    }

    #[test]
    fn registry_parses_parameterized_specs() {
        assert!(Flux::from_registry("constant(0.5)").is_ok());
        assert!(Flux::from_registry("clipped_linear(-1, 1)").is_ok());
        assert!(Flux::from_registry("unknown_flux").is_err());
    }

    #[test]
    fn table_flux_interpolates_and_extends() {
        let f = Flux::from_table("tbl", &[(-1.0, 0.0), (0.0, 1.0), (2.0, 0.0)]).unwrap();
        assert!((f.h(-0.5) - 0.5).abs() < 1e-12);
        assert!((f.h(1.0) - 0.5).abs() < 1e-12);
        assert_eq!(f.h(100.0), 0.0);
        assert_eq!(f.h(-100.0), 0.0);
        assert_eq!(f.asym.pos.limit, Some(0.0));
    }
}
