//! Semidiscrete transport from a piecewise-constant density on a rectangle
//! to finitely many weighted sites, under the cost `c(x, y) = ½‖x − y‖²`.
//!
//! For shifts `φ`, the Laguerre (power) cell of site `xᵢ` is
//!
//! ```text
//! Lagᵢ = { y : ½‖xᵢ − y‖² − φᵢ ≤ ½‖xⱼ − y‖² − φⱼ for all j }.
//! ```
//!
//! The dual objective
//!
//! ```text
//! F(φ) = Σᵢ aᵢφᵢ + Σᵢ ∫_{Lagᵢ} ρ(y) (½‖xᵢ − y‖² − φᵢ) dy
//! ```
//!
//! is concave, with gradient `aᵢ − ρ(Lagᵢ)`. Its maximum is `½W₂²`, reached
//! when every cell holds exactly the mass `aᵢ`. Cells are exact convex
//! polygons and all integrals are exact against the grid density.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridDensity, Normalize};

/// Vertices closer than this are merged while clipping.
const GEOM_EPS: f64 = 1e-12;

/// Which constraint produced a polygon edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSource {
    /// Side of the domain rectangle.
    Boundary,
    /// Power bisector with the given site.
    Site(usize),
}

/// Convex polygon, counterclockwise. Edge `k` runs from vertex `k` to
/// vertex `k + 1` (cyclically) and is labelled by `sources[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
    pub sources: Vec<EdgeSource>,
}

impl Polygon {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            sources: vec![EdgeSource::Boundary; 4],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn area(&self) -> f64 {
        moments(&self.vertices)[0]
    }

    /// Keeps the part where `n·y ≤ c`; the new edge is labelled `label`.
    pub fn clip(&self, n: [f64; 2], c: f64, label: EdgeSource) -> Polygon {
        let len = self.vertices.len();
        let mut out = Polygon {
            vertices: Vec::with_capacity(len + 1),
            sources: Vec::with_capacity(len + 1),
        };
        if len == 0 {
            return out;
        }
        let side = |p: &[f64; 2]| n[0] * p[0] + n[1] * p[1] - c;
        let scale = GEOM_EPS * (1.0 + c.abs());
        for k in 0..len {
            let (p, q) = (self.vertices[k], self.vertices[(k + 1) % len]);
            let (fp, fq) = (side(&p), side(&q));
            let (p_in, q_in) = (fp <= scale, fq <= scale);
            if p_in {
                out.push(p, self.sources[k]);
                if !q_in {
                    out.push(intersect(p, q, fp, fq), label);
                }
            } else if q_in {
                out.push(intersect(p, q, fp, fq), self.sources[k]);
            }
        }
        out.dedup();
        out
    }

    fn push(&mut self, p: [f64; 2], s: EdgeSource) {
        self.vertices.push(p);
        self.sources.push(s);
    }

    /// Drops repeated vertices (zero-length edges) and degenerate remnants.
    fn dedup(&mut self) {
        let mut k = 0;
        while self.vertices.len() > 1 && k < self.vertices.len() {
            let next = (k + 1) % self.vertices.len();
            let (p, q) = (self.vertices[k], self.vertices[next]);
            if (p[0] - q[0]).abs() <= GEOM_EPS && (p[1] - q[1]).abs() <= GEOM_EPS {
                // edge k has zero length: keep the vertex, drop its label
                self.vertices.remove(k);
                self.sources.remove(k);
            } else {
                k += 1;
            }
        }
        if self.vertices.len() < 3 || self.area() <= 0.0 {
            self.vertices.clear();
            self.sources.clear();
        }
    }
}

fn intersect(p: [f64; 2], q: [f64; 2], fp: f64, fq: f64) -> [f64; 2] {
    let t = (fp / (fp - fq)).clamp(0.0, 1.0);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// `[∫1, ∫x, ∫y, ∫(x² + y²)]` over a counterclockwise polygon.
fn moments(v: &[[f64; 2]]) -> [f64; 4] {
    let mut m = [0.0; 4];
    let n = v.len();
    if n < 3 {
        return m;
    }
    for k in 0..n {
        let (p, q) = (v[k], v[(k + 1) % n]);
        let cross = p[0] * q[1] - q[0] * p[1];
        m[0] += cross;
        m[1] += (p[0] + q[0]) * cross;
        m[2] += (p[1] + q[1]) * cross;
        m[3] += (p[0] * p[0] + p[0] * q[0] + q[0] * q[0] + p[1] * p[1] + p[1] * q[1] + q[1] * q[1])
            * cross;
    }
    [m[0] / 2.0, m[1] / 6.0, m[2] / 6.0, m[3] / 12.0]
}

/// Laguerre cells of weighted sites, clipped to a rectangle.
#[derive(Debug, Clone)]
pub struct PowerDiagram {
    sites: Vec<[f64; 2]>,
    phi: Vec<f64>,
    domain: [f64; 2],
    cells: Vec<Polygon>,
}

impl PowerDiagram {
    /// Cells of `sites` with shifts `phi` in `[0, w] × [0, h]`.
    pub fn build(sites: &[[f64; 2]], phi: &[f64], domain: [f64; 2]) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidInput("need at least one site".into()));
        }
        if phi.len() != sites.len() {
            return Err(Error::DimensionMismatch {
                expected: sites.len(),
                got: phi.len(),
            });
        }
        if sites.iter().flatten().chain(phi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "sites and shifts must be finite".into(),
            ));
        }
        if !(domain[0] > 0.0 && domain[1] > 0.0) {
            return Err(Error::InvalidInput("domain must have positive size".into()));
        }
        let mut order: Vec<usize> = (0..sites.len()).collect();
        order.sort_by(|&i, &j| {
            sites[i][0]
                .total_cmp(&sites[j][0])
                .then(sites[i][1].total_cmp(&sites[j][1]))
        });
        for w in order.windows(2) {
            if sites[w[0]] == sites[w[1]] {
                return Err(Error::InvalidInput(format!(
                    "sites {} and {} coincide",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        let cells = (0..sites.len())
            .into_par_iter()
            .map(|i| power_cell(sites, phi, domain, i))
            .collect();
        Ok(Self {
            sites: sites.to_vec(),
            phi: phi.to_vec(),
            domain,
            cells,
        })
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn domain(&self) -> [f64; 2] {
        self.domain
    }

    pub fn cells(&self) -> &[Polygon] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Pairs `(i, j)`, `i < j`, whose cells share an edge.
    pub fn adjacency(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .cells
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                c.sources.iter().filter_map(move |s| match *s {
                    EdgeSource::Site(j) => Some((i.min(j), i.max(j))),
                    EdgeSource::Boundary => None,
                })
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Index of the cell containing `y` (lowest index on ties).
    pub fn locate(&self, y: [f64; 2]) -> usize {
        let cost = |i: usize| {
            let s = self.sites[i];
            0.5 * ((s[0] - y[0]).powi(2) + (s[1] - y[1]).powi(2)) - self.phi[i]
        };
        (0..self.sites.len())
            .min_by(|&i, &j| cost(i).total_cmp(&cost(j)).then(i.cmp(&j)))
            .unwrap()
    }
}

fn power_cell(sites: &[[f64; 2]], phi: &[f64], domain: [f64; 2], i: usize) -> Polygon {
    let xi = sites[i];
    let ni = xi[0] * xi[0] + xi[1] * xi[1];
    // clip against near sites first so the polygon shrinks early
    let mut others: Vec<usize> = (0..sites.len()).filter(|&j| j != i).collect();
    let dist = |j: usize| (sites[j][0] - xi[0]).powi(2) + (sites[j][1] - xi[1]).powi(2);
    others.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    let mut cell = Polygon::rectangle(0.0, 0.0, domain[0], domain[1]);
    for j in others {
        if cell.is_empty() {
            break;
        }
        let xj = sites[j];
        let n = [xj[0] - xi[0], xj[1] - xi[1]];
        let c = 0.5 * (xj[0] * xj[0] + xj[1] * xj[1] - ni) - phi[j] + phi[i];
        if cell.vertices.iter().all(|p| n[0] * p[0] + n[1] * p[1] <= c) {
            continue;
        }
        cell = cell.clip(n, c, EdgeSource::Site(j));
    }
    cell
}

/// `[ρ-mass, ∫ρx, ∫ρy, ∫ρ‖y‖²]` of a polygon against a 2D grid density.
pub fn polygon_moments(poly: &Polygon, rho: &GridDensity) -> [f64; 4] {
    let mut out = [0.0; 4];
    if poly.is_empty() {
        return out;
    }
    let (nx, ny) = (rho.shape()[0], rho.shape()[1]);
    let h = rho.spacing();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &poly.vertices {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let range = |a: usize, n: usize| {
        let first = ((lo[a] / h[a]).floor().max(0.0) as usize).min(n - 1);
        let last = ((hi[a] / h[a]).ceil().max(1.0) as usize).min(n);
        first..last
    };
    let none = EdgeSource::Boundary;
    for ix in range(0, nx) {
        let (x0, x1) = (ix as f64 * h[0], (ix + 1) as f64 * h[0]);
        let strip = poly.clip([-1.0, 0.0], -x0, none).clip([1.0, 0.0], x1, none);
        if strip.is_empty() {
            continue;
        }
        for iy in range(1, ny) {
            let v = rho.values()[ix + nx * iy];
            if v == 0.0 {
                continue;
            }
            let (y0, y1) = (iy as f64 * h[1], (iy + 1) as f64 * h[1]);
            let piece = strip
                .clip([0.0, -1.0], -y0, none)
                .clip([0.0, 1.0], y1, none);
            let m = moments(&piece.vertices);
            for k in 0..4 {
                out[k] += v * m[k];
            }
        }
    }
    out
}

/// `∫ρ ds` along the segment `p → q`.
fn segment_integral(p: [f64; 2], q: [f64; 2], rho: &GridDensity) -> f64 {
    let (nx, ny) = (rho.shape()[0], rho.shape()[1]);
    let h = rho.spacing();
    let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let mut ts = vec![0.0, 1.0];
    for a in 0..2 {
        let (u, v) = (p[a] / h[a], q[a] / h[a]);
        if (v - u).abs() > 0.0 {
            let (a0, a1) = (u.min(v).ceil() as i64, u.max(v).floor() as i64);
            for k in a0..=a1 {
                let t = (k as f64 - u) / (v - u);
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if dt <= 0.0 {
            continue;
        }
        let t = 0.5 * (w[0] + w[1]);
        let x = p[0] + t * (q[0] - p[0]);
        let y = p[1] + t * (q[1] - p[1]);
        let ix = ((x / h[0]) as usize).min(nx - 1);
        let iy = ((y / h[1]) as usize).min(ny - 1);
        total += dt * rho.values()[ix + nx * iy];
    }
    total * len
}

fn check_density(rho: &GridDensity) -> Result<()> {
    if rho.dim() != 2 {
        return Err(Error::UnsupportedDimension(rho.dim()));
    }
    Ok(())
}

/// `ρ(Lagᵢ)` for every cell. The diagram must live on the density's box.
pub fn cell_masses(diagram: &PowerDiagram, rho: &GridDensity) -> Result<Vec<f64>> {
    check_density(rho)?;
    Ok(diagram
        .cells
        .par_iter()
        .map(|c| polygon_moments(c, rho)[0])
        .collect())
}

/// Value and gradient of the concave dual objective `F`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub masses: Vec<f64>,
    /// `ρ`-barycenter of every cell; the site itself for empty cells.
    pub centroids: Vec<[f64; 2]>,
    /// `∫_{Lagᵢ} ρ ‖xᵢ − y‖²` summed over cells.
    pub transport_cost: f64,
    pub diagram: PowerDiagram,
}

fn validate(sites: &[[f64; 2]], a: &[f64], rho: &GridDensity) -> Result<[f64; 2]> {
    check_density(rho)?;
    if a.len() != sites.len() {
        return Err(Error::DimensionMismatch {
            expected: sites.len(),
            got: a.len(),
        });
    }
    let ext = rho.extent();
    Ok([ext[0], ext[1]])
}

/// `F(φ)` and `∂F/∂φᵢ = aᵢ − ρ(Lagᵢ)`.
pub fn objective_and_gradient(
    sites: &[[f64; 2]],
    a: &[f64],
    phi: &[f64],
    rho: &GridDensity,
) -> Result<Evaluation> {
    let domain = validate(sites, a, rho)?;
    let diagram = PowerDiagram::build(sites, phi, domain)?;
    Ok(evaluate(diagram, a, rho))
}

fn evaluate(diagram: PowerDiagram, a: &[f64], rho: &GridDensity) -> Evaluation {
    let m: Vec<[f64; 4]> = diagram
        .cells
        .par_iter()
        .map(|c| polygon_moments(c, rho))
        .collect();
    let mut value = 0.0;
    let mut transport_cost = 0.0;
    let mut gradient = Vec::with_capacity(a.len());
    let mut masses = Vec::with_capacity(a.len());
    let mut centroids = Vec::with_capacity(a.len());
    for (i, mi) in m.iter().enumerate() {
        let x = diagram.sites[i];
        let sq = mi[3] - 2.0 * (x[0] * mi[1] + x[1] * mi[2]) + (x[0] * x[0] + x[1] * x[1]) * mi[0];
        let sq = sq.max(0.0);
        transport_cost += sq;
        value += a[i] * diagram.phi[i] + 0.5 * sq - diagram.phi[i] * mi[0];
        gradient.push(a[i] - mi[0]);
        masses.push(mi[0]);
        centroids.push(if mi[0] > 0.0 {
            [mi[1] / mi[0], mi[2] / mi[0]]
        } else {
            x
        });
    }
    Evaluation {
        value,
        gradient,
        masses,
        centroids,
        transport_cost,
        diagram,
    }
}

/// Hessian of `F`: `Hᵢⱼ = ∫_{Lagᵢ ∩ Lagⱼ} ρ / ‖xᵢ − xⱼ‖` off the diagonal and
/// rows summing to zero.
pub fn hessian(diagram: &PowerDiagram, rho: &GridDensity) -> Result<DMatrix<f64>> {
    check_density(rho)?;
    let k = diagram.len();
    let mut h = DMatrix::zeros(k, k);
    for (i, cell) in diagram.cells.iter().enumerate() {
        let n = cell.vertices.len();
        for (e, s) in cell.sources.iter().enumerate() {
            if let EdgeSource::Site(j) = *s {
                let (p, q) = (cell.vertices[e], cell.vertices[(e + 1) % n]);
                let (xi, xj) = (diagram.sites[i], diagram.sites[j]);
                let d = ((xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2)).sqrt();
                let w = segment_integral(p, q, rho) / d;
                h[(i, j)] += w;
                h[(i, i)] -= w;
            }
        }
    }
    // each shared edge was seen from both sides; symmetrize to kill drift
    let sym = (&h + h.transpose()) * 0.5;
    Ok(sym)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Gradient ascent with Armijo backtracking.
    Ascent,
    /// Damped Newton, falling back to ascent when a step would empty a cell.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemidiscreteOptions {
    pub method: Method,
    /// Bound on `‖∇F‖∞`, i.e. on every cell's mass error.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SemidiscreteOptions {
    fn default() -> Self {
        Self {
            method: Method::Newton,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemidiscreteSolution {
    /// Optimal shifts, normalized to mean zero.
    pub phi: Vec<f64>,
    pub diagram: PowerDiagram,
    pub masses: Vec<f64>,
    pub centroids: Vec<[f64; 2]>,
    /// `2F(φ)`.
    pub w2_squared: f64,
    /// `‖∇F‖∞` at the returned shifts.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether Newton gave way to ascent at some point.
    pub fell_back: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximizes `F` from the Voronoi start `φ = 0`.
pub fn solve_semidiscrete(
    sites: &[[f64; 2]],
    a: &[f64],
    rho: &GridDensity,
    opts: SemidiscreteOptions,
) -> Result<SemidiscreteSolution> {
    solve_from(sites, a, rho, &vec![0.0; sites.len()], opts)
}

/// Maximizes `F` starting from the given shifts.
pub fn solve_from(
    sites: &[[f64; 2]],
    a: &[f64],
    rho: &GridDensity,
    phi0: &[f64],
    opts: SemidiscreteOptions,
) -> Result<SemidiscreteSolution> {
    let domain = validate(sites, a, rho)?;
    if a.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidInput(
            "target weights must be positive".into(),
        ));
    }
    let total: f64 = a.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(total));
    }
    let rho = &rho.normalize()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let k = sites.len();
    let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let eval = |phi: &[f64]| -> Result<Evaluation> {
        Ok(evaluate(PowerDiagram::build(sites, phi, domain)?, a, rho))
    };
    let mut cur = eval(phi0)?;
    let mut method = opts.method;
    let mut fell_back = false;
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < opts.max_iter && inf_norm(&cur.gradient) > opts.tol {
        iterations += 1;
        let m_min = cur.masses.iter().cloned().fold(f64::INFINITY, f64::min);
        if method == Method::Newton && m_min > 0.0 {
            if let Some(next) = newton_step(&cur, rho, 0.5 * a_min.min(m_min), &eval)? {
                cur = next;
                continue;
            }
            // no admissible damping: the step would empty a cell
            method = Method::Ascent;
            fell_back = true;
        }
        let g = cur.gradient.clone();
        let g2: f64 = g.iter().map(|x| x * x).sum();
        step *= 2.0;
        loop {
            let phi: Vec<f64> = cur
                .diagram
                .phi
                .iter()
                .zip(&g)
                .map(|(p, d)| p + step * d)
                .collect();
            let next = eval(&phi)?;
            let armijo = next.value >= cur.value + 0.5 * step * g2;
            // near the optimum F is flat below rounding; accept steps that
            // do not overshoot along g instead
            let slope: f64 = next.gradient.iter().zip(&g).map(|(a, b)| a * b).sum();
            let flat = slope >= 0.0 && next.value >= cur.value - 1e-14 * (1.0 + cur.value.abs());
            if armijo || flat || step < 1e-16 {
                cur = next;
                break;
            }
            step *= 0.5;
        }
        if method == Method::Ascent && opts.method == Method::Newton {
            // retry Newton once every cell has mass again
            if cur.masses.iter().all(|&m| m > 0.0) {
                method = Method::Newton;
            }
        }
    }
    let converged = inf_norm(&cur.gradient) <= opts.tol;
    let mean = cur.diagram.phi.iter().sum::<f64>() / k as f64;
    let phi: Vec<f64> = cur.diagram.phi.iter().map(|p| p - mean).collect();
    let diagram = PowerDiagram {
        phi: phi.clone(),
        ..cur.diagram
    };
    Ok(SemidiscreteSolution {
        phi,
        diagram,
        gradient_norm: inf_norm(&cur.gradient),
        w2_squared: 2.0 * cur.value,
        masses: cur.masses,
        centroids: cur.centroids,
        iterations,
        converged,
        fell_back,
    })
}

/// One damped Newton step: halve until every cell keeps mass `≥ floor` and
/// the gradient shrinks by `1 − τ/2`. `None` when no damping works.
fn newton_step(
    cur: &Evaluation,
    rho: &GridDensity,
    floor: f64,
    eval: &dyn Fn(&[f64]) -> Result<Evaluation>,
) -> Result<Option<Evaluation>> {
    let k = cur.gradient.len();
    let h = hessian(&cur.diagram, rho)?;
    // −H is positive semidefinite with the constants in its kernel; the
    // rank-one term pins the gauge
    let sys = -h + DMatrix::from_element(k, k, 1.0 / k as f64);
    let g = DVector::from_column_slice(&cur.gradient);
    let Some(d) = sys.lu().solve(&g) else {
        return Ok(None);
    };
    if d.iter().any(|x| !x.is_finite()) {
        return Ok(None);
    }
    let g_norm = l2_norm(&cur.gradient);
    let mut tau = 1.0;
    while tau > 1e-10 {
        let phi: Vec<f64> = cur
            .diagram
            .phi
            .iter()
            .zip(d.iter())
            .map(|(p, di)| p + tau * di)
            .collect();
        let next = eval(&phi)?;
        let m_min = next.masses.iter().cloned().fold(f64::INFINITY, f64::min);
        if m_min >= floor && l2_norm(&next.gradient) <= (1.0 - 0.5 * tau) * g_norm {
            return Ok(Some(next));
        }
        tau *= 0.5;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StippleOptions {
    pub outer_iters: usize,
    /// Stop once no site moves farther than this.
    pub move_tol: f64,
    pub seed: u64,
    pub inner: SemidiscreteOptions,
}

impl Default for StippleOptions {
    fn default() -> Self {
        Self {
            outer_iters: 50,
            move_tol: 1e-6,
            seed: 0,
            inner: SemidiscreteOptions {
                tol: 1e-11,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct StippleResult {
    /// Equal-weight points.
    pub points: DiscreteMeasure,
    /// `W₂²` after each transport solve, in order.
    pub w2_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Initial sites drawn from `ρ` with a seeded generator.
pub fn sample_sites(rho: &GridDensity, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    check_density(rho)?;
    let masses = rho.masses();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut cdf = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for m in &masses {
        acc += m / total;
        cdf.push(acc);
    }
    let nx = rho.shape()[0];
    let h = rho.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites: Vec<[f64; 2]> = Vec::with_capacity(n);
    while sites.len() < n {
        let u: f64 = rng.gen();
        let cell = cdf.partition_point(|&c| c < u).min(masses.len() - 1);
        if masses[cell] == 0.0 {
            continue;
        }
        let (ix, iy) = (cell % nx, cell / nx);
        let p = [
            (ix as f64 + rng.gen::<f64>()) * h[0],
            (iy as f64 + rng.gen::<f64>()) * h[1],
        ];
        if !sites.contains(&p) {
            sites.push(p);
        }
    }
    Ok(sites)
}

/// Blue-noise stippling: alternate an optimal equal-mass partition with
/// moving every site to the `ρ`-barycenter of its cell.
pub fn lloyd_stipple(rho: &GridDensity, n: usize, opts: StippleOptions) -> Result<StippleResult> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one point".into()));
    }
    let rho = rho.normalize()?;
    let mut sites = sample_sites(&rho, n, opts.seed)?;
    let a = vec![1.0 / n as f64; n];
    let mut phi = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.outer_iters {
        iterations += 1;
        let sol = solve_from(&sites, &a, &rho, &phi, opts.inner)?;
        history.push(sol.w2_squared);
        let mut moved: f64 = 0.0;
        for (s, c) in sites.iter_mut().zip(&sol.centroids) {
            moved = moved.max((s[0] - c[0]).hypot(s[1] - c[1]));
            *s = *c;
        }
        phi = sol.phi;
        if moved <= opts.move_tol {
            converged = true;
            break;
        }
    }
    let flat: Vec<f64> = sites.iter().flatten().copied().collect();
    Ok(StippleResult {
        points: DiscreteMeasure::from_flat(2, flat, a)?,
        w2_history: history,
        iterations,
        converged,
    })
}
