//! Closed-form transport on the real line.
//!
//! In one dimension the optimal coupling is the monotone rearrangement, so
//! `W_1` is the `L¹` distance between cumulative distribution functions and
//! `W_p` is the `Lᵖ` distance between quantile functions. Both are evaluated
//! exactly: atoms give step functions and grid cells give linear pieces, so
//! every integral reduces to `∫|linear|ᵖ` over a list of merged breakpoints.
//!
//! These routines serve as the ground truth that the other solvers are
//! checked against.

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridDensity, Normalize};

/// A one-dimensional measure accepted by the closed-form routines.
#[derive(Debug, Clone, Copy)]
pub enum Measure1d<'a> {
    Discrete(&'a DiscreteMeasure),
    Grid(&'a GridDensity),
}

impl<'a> From<&'a DiscreteMeasure> for Measure1d<'a> {
    fn from(m: &'a DiscreteMeasure) -> Self {
        Measure1d::Discrete(m)
    }
}

impl<'a> From<&'a GridDensity> for Measure1d<'a> {
    fn from(g: &'a GridDensity) -> Self {
        Measure1d::Grid(g)
    }
}

/// Atom (`lo == hi`) or uniform mass on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    mass: f64,
}

impl Piece {
    fn is_atom(&self) -> bool {
        self.lo == self.hi
    }
}

/// Sorted, non-overlapping pieces of unit total mass.
fn pieces(m: Measure1d<'_>) -> Result<Vec<Piece>> {
    let mut out = match m {
        Measure1d::Discrete(d) => {
            if d.dim() != 1 {
                return Err(Error::UnsupportedDimension(d.dim()));
            }
            let total = d.total_mass();
            if total <= 0.0 {
                return Err(Error::ZeroMass);
            }
            d.coords()
                .iter()
                .zip(d.weights())
                .filter(|(_, &w)| w > 0.0)
                .map(|(&x, &w)| Piece {
                    lo: x,
                    hi: x,
                    mass: w / total,
                })
                .collect::<Vec<_>>()
        }
        Measure1d::Grid(g) => {
            if g.dim() != 1 {
                return Err(Error::UnsupportedDimension(g.dim()));
            }
            let total = g.total_mass();
            if total <= 0.0 {
                return Err(Error::ZeroMass);
            }
            let h = g.spacing()[0];
            g.masses()
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(|(i, &m)| Piece {
                    lo: i as f64 * h,
                    hi: (i + 1) as f64 * h,
                    mass: m / total,
                })
                .collect()
        }
    };
    out.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(out)
}

/// `F(x)` (right-continuous) or `F(x⁻)` when `left` is set.
fn cdf(pieces: &[Piece], x: f64, left: bool) -> f64 {
    let start = pieces.partition_point(|p| p.hi < x);
    let mut f: f64 = pieces[..start].iter().map(|p| p.mass).sum();
    for p in &pieces[start..] {
        if p.lo > x {
            break;
        }
        if p.is_atom() {
            if !left {
                f += p.mass;
            }
        } else {
            f += p.mass * ((x - p.lo) / (p.hi - p.lo)).clamp(0.0, 1.0);
        }
    }
    f.min(1.0)
}

/// Quantile function as linear segments `(s0, s1, q0, q1)` covering `[0, 1]`.
fn quantile_segments(pieces: &[Piece]) -> Vec<(f64, f64, f64, f64)> {
    let mut segs = Vec::with_capacity(pieces.len());
    let mut s = 0.0;
    for (k, p) in pieces.iter().enumerate() {
        let s1 = if k + 1 == pieces.len() {
            1.0
        } else {
            s + p.mass
        };
        segs.push((s, s1, p.lo, p.hi));
        s = s1;
    }
    segs
}

/// `∫_0^len |d0 + (d1 − d0) u / len|^p du`, exact.
pub(crate) fn integrate_abs_linear_pow(d0: f64, d1: f64, len: f64, p: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if d0 == 0.0 && d1 == 0.0 {
        return 0.0;
    }
    if d0 * d1 < 0.0 {
        let root = len * d0 / (d0 - d1);
        return (root * d0.abs().powf(p) + (len - root) * d1.abs().powf(p)) / (p + 1.0);
    }
    let (a, b) = {
        let (x, y) = (d0.abs(), d1.abs());
        if x <= y {
            (x, y)
        } else {
            (y, x)
        }
    };
    // mean of t^p over [a, b]
    let mean = if a == 0.0 {
        b.powf(p) / (p + 1.0)
    } else {
        let delta = (b - a) / a;
        if delta < 1e-4 {
            a.powf(p)
                * (1.0
                    + p * delta / 2.0
                    + p * (p - 1.0) * delta * delta / 6.0
                    + p * (p - 1.0) * (p - 2.0) * delta.powi(3) / 24.0)
        } else {
            (b.powf(p + 1.0) - a.powf(p + 1.0)) / ((p + 1.0) * (b - a))
        }
    };
    len * mean
}

/// `W_1 = ∫ |F_0(x) − F_1(x)| dx`, integrated exactly between the merged
/// breakpoints of the two CDFs.
pub fn w1_cdf<'a, 'b>(mu0: impl Into<Measure1d<'a>>, mu1: impl Into<Measure1d<'b>>) -> Result<f64> {
    let p0 = pieces(mu0.into())?;
    let p1 = pieces(mu1.into())?;
    let mut xs: Vec<f64> = p0.iter().chain(&p1).flat_map(|p| [p.lo, p.hi]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut total = 0.0;
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d_start = cdf(&p0, a, false) - cdf(&p1, a, false);
        let d_end = cdf(&p0, b, true) - cdf(&p1, b, true);
        total += integrate_abs_linear_pow(d_start, d_end, b - a, 1.0);
    }
    Ok(total)
}

/// `W_p = (∫_0^1 |Q_0(s) − Q_1(s)|ᵖ ds)^{1/p}` for `p ≥ 1`, integrated exactly
/// on the merged quantile breakpoints.
pub fn wp_quantile<'a, 'b>(
    mu0: impl Into<Measure1d<'a>>,
    mu1: impl Into<Measure1d<'b>>,
    p: f64,
) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::UnsupportedExponent(p));
    }
    let q0 = quantile_segments(&pieces(mu0.into())?);
    let q1 = quantile_segments(&pieces(mu1.into())?);
    let mut ss: Vec<f64> = q0.iter().chain(&q1).flat_map(|s| [s.0, s.1]).collect();
    ss.sort_by(f64::total_cmp);
    ss.dedup();

    // Both segment lists are sorted in s; sweep them together.
    let eval = |seg: &(f64, f64, f64, f64), s: f64| {
        if seg.1 > seg.0 {
            seg.2 + (seg.3 - seg.2) * ((s - seg.0) / (seg.1 - seg.0)).clamp(0.0, 1.0)
        } else {
            seg.2
        }
    };
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    for w in ss.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        while i + 1 < q0.len() && q0[i].1 <= mid {
            i += 1;
        }
        while j + 1 < q1.len() && q1[j].1 <= mid {
            j += 1;
        }
        let d0 = eval(&q0[i], a) - eval(&q1[j], a);
        let d1 = eval(&q0[i], b) - eval(&q1[j], b);
        total += integrate_abs_linear_pow(d0, d1, b - a, p);
    }
    Ok(total.powf(1.0 / p))
}

/// Target interval `[b, c]` receiving the mass of one source atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub source_index: usize,
    pub atom: f64,
    pub weight: f64,
    pub b: f64,
    pub c: f64,
}

/// Monotone assignment of source atoms to consecutive target intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalAssignment {
    /// Ordered by atom position.
    pub intervals: Vec<Interval>,
    target: GridDensity,
}

impl IntervalAssignment {
    /// Target mass carried by interval `k`.
    pub fn interval_mass(&self, k: usize) -> f64 {
        let pcs = pieces(Measure1d::Grid(&self.target)).expect("validated at construction");
        let iv = &self.intervals[k];
        cdf(&pcs, iv.c, false) - cdf(&pcs, iv.b, true)
    }

    /// `Σ_i ∫_{b_i}^{c_i} ρ(y) |x_i − y|ᵖ dy`, exact for piecewise-constant ρ.
    pub fn cost(&self, p: f64) -> f64 {
        let h = self.target.spacing()[0];
        let dens = self.target.normalize().expect("validated at construction");
        let mut total = 0.0;
        for iv in &self.intervals {
            for (cell, &rho) in dens.values().iter().enumerate() {
                let lo = (cell as f64 * h).max(iv.b);
                let hi = ((cell + 1) as f64 * h).min(iv.c);
                if hi > lo && rho > 0.0 {
                    total += rho * integrate_abs_linear_pow(lo - iv.atom, hi - iv.atom, hi - lo, p);
                }
            }
        }
        total
    }
}

/// Left-continuous inverse `F⁻¹(s) = inf{x : F(x) ≥ s}` of a grid CDF.
fn grid_inverse_cdf(masses: &[f64], h: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, &m) in masses.iter().enumerate() {
        if m > 0.0 && acc + m >= s {
            let frac = ((s - acc) / m).clamp(0.0, 1.0);
            return (i as f64 + frac) * h;
        }
        acc += m;
    }
    // s slightly above the accumulated total from round-off
    let last = masses
        .iter()
        .rposition(|&m| m > 0.0)
        .unwrap_or(masses.len() - 1);
    (last + 1) as f64 * h
}

/// Semidiscrete transport from atoms to a 1D grid density: atom `i` (in sorted
/// order) receives `[F⁻¹(Σ_{j<i} a_j), F⁻¹(Σ_{j≤i} a_j)]`.
pub fn semidiscrete_1d(mu0: &DiscreteMeasure, rho1: &GridDensity) -> Result<IntervalAssignment> {
    if mu0.dim() != 1 {
        return Err(Error::UnsupportedDimension(mu0.dim()));
    }
    if rho1.dim() != 1 {
        return Err(Error::UnsupportedDimension(rho1.dim()));
    }
    let target = rho1.normalize()?;
    let mu0 = mu0.normalize()?;
    let masses = target.masses();
    let h = target.spacing()[0];

    let mut order: Vec<usize> = (0..mu0.len()).collect();
    order.sort_by(|&a, &b| mu0.coords()[a].total_cmp(&mu0.coords()[b]));

    let mut intervals = Vec::with_capacity(order.len());
    let mut cum = 0.0;
    let mut b = grid_inverse_cdf(&masses, h, 0.0);
    for (k, &i) in order.iter().enumerate() {
        let w = mu0.weights()[i];
        cum += w;
        let c = if k + 1 == order.len() {
            target.extent()[0]
        } else {
            grid_inverse_cdf(&masses, h, cum)
        };
        intervals.push(Interval {
            source_index: i,
            atom: mu0.coords()[i],
            weight: w,
            b,
            c,
        });
        b = c;
    }
    Ok(IntervalAssignment { intervals, target })
}
