//! Eulerian transport: the Benamou–Brenier dynamic problem and the Beckmann
//! minimal-flow problem, both solved by the same augmented-Lagrangian cycle.
//!
//! With momentum `J = ρv`, the squared distance is the least action
//!
//! ```text
//! W₂² = min ∫₀¹∫ ‖J‖²/ρ  s.t.  ∂ρ/∂t + ∇·J = 0,  ρ(0) = ρ₀,  ρ(1) = ρ₁.
//! ```
//!
//! Its dual asks for a potential `φ(x, t)` with `∂φ/∂t + ½‖∇φ‖² ≤ 0`. Write
//! `q = (b, a)` for the space and time parts of `∇_{x,t}φ`. The solver then
//! cycles through
//!
//! 1. `φ`-step: a space-time Poisson problem,
//! 2. `q`-step: pointwise projection onto `{a + ‖b‖²/2 ≤ 0}`,
//! 3. `z`-step: `z ← z + r(∇φ − q)` for the multiplier `z = (J, ρ)`.
//!
//! # Discretization
//!
//! Every unknown lives on the nodes of the space-time lattice: spatial cell
//! corners × `nt + 1` time levels, interpolated multilinearly. The discrete
//! gradient of `φ` is the L² projection of its exact gradient onto nodal
//! fields, with a lumped (trapezoidal) mass matrix; inner products of `q`
//! and `z` use the same lumped weights, so the `q`-step stays pointwise.
//! The Poisson operator of the `φ`-step is then a sum of Kronecker products
//! of 1D matrices. It is inverted exactly through per-axis generalized
//! eigenbases, so every `φ`-step is direct and costs a few dense transforms.
//!
//! The time derivative couples every other level, so the scheme conserves
//! the mass of each time slab exactly while single levels may alternate
//! around it. Interior frames therefore average the two adjacent slabs.
//! Each is then reconstructed cellwise as the density whose integrals
//! against every hat function match the nodal field's — the same way the
//! inputs enter the boundary term. The end frames are the inputs.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::measures::{GridDensity, InterpolationSequence, Normalize};

/// Iterations between evaluations of the continuity residual.
const CHECK_EVERY: usize = 10;

/// Tridiagonal 1D operator: `out[i] = lower[i]·x[i−1] + diag[i]·x[i] + upper[i]·x[i+1]`.
#[derive(Debug, Clone)]
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    fn diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        Self {
            lower: vec![0.0; n],
            diag,
            upper: vec![0.0; n],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        match j as isize - i as isize {
            -1 => self.lower[i] += v,
            0 => self.diag[i] += v,
            1 => self.upper[i] += v,
            _ => unreachable!("entry off the three diagonals"),
        }
    }

    fn scale_rows(&self, s: &[f64]) -> Self {
        let f = |v: &[f64]| v.iter().zip(s).map(|(a, b)| a * b).collect();
        Self {
            lower: f(&self.lower),
            diag: f(&self.diag),
            upper: f(&self.upper),
        }
    }

    fn transpose(&self) -> Self {
        let n = self.diag.len();
        let mut t = Self::zeros(n);
        for i in 0..n {
            t.diag[i] = self.diag[i];
            if i > 0 {
                t.upper[i - 1] = self.lower[i];
                t.lower[i] = self.upper[i - 1];
            }
        }
        t
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        DMatrix::from_fn(n, n, |i, j| match j as isize - i as isize {
            -1 => self.lower[i],
            0 => self.diag[i],
            1 => self.upper[i],
            _ => 0.0,
        })
    }

    /// Solves `(I ⊗ T ⊗ I) x = data` along `axis` in place by elimination
    /// without pivoting; `T` must be diagonally dominant.
    fn solve_along_axis(&self, data: &mut [f64], dims: &[usize], axis: usize) {
        let n = dims[axis];
        let inner: usize = dims[..axis].iter().product();
        let mut c = vec![0.0; n];
        let mut denom = vec![0.0; n];
        for i in 0..n {
            let prev = if i > 0 { self.lower[i] * c[i - 1] } else { 0.0 };
            denom[i] = self.diag[i] - prev;
            c[i] = self.upper[i] / denom[i];
        }
        for block in data.chunks_exact_mut(n * inner) {
            for j in 0..inner {
                for i in 0..n {
                    let prev = if i > 0 {
                        self.lower[i] * block[(i - 1) * inner + j]
                    } else {
                        0.0
                    };
                    block[i * inner + j] = (block[i * inner + j] - prev) / denom[i];
                }
                for i in (0..n - 1).rev() {
                    block[i * inner + j] -= c[i] * block[(i + 1) * inner + j];
                }
            }
        }
    }

    /// `out = (I ⊗ T ⊗ I) data` along `axis`.
    fn apply_along_axis(&self, data: &[f64], out: &mut [f64], dims: &[usize], axis: usize) {
        let n = dims[axis];
        let inner: usize = dims[..axis].iter().product();
        let block = n * inner;
        for (src, dst) in data.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
            for i in 0..n {
                let (lo, di, up) = (self.lower[i], self.diag[i], self.upper[i]);
                let row = &mut dst[i * inner..(i + 1) * inner];
                for (j, d) in row.iter_mut().enumerate() {
                    let mut v = di * src[i * inner + j];
                    if i > 0 {
                        v += lo * src[(i - 1) * inner + j];
                    }
                    if i + 1 < n {
                        v += up * src[(i + 1) * inner + j];
                    }
                    *d = v;
                }
            }
        }
    }
}

/// 1D P1 matrices on `cells` intervals of width `h`.
#[derive(Debug, Clone)]
struct Axis {
    /// Consistent mass `∫ψᵢψⱼ`.
    mass: Tridiagonal,
    /// Lumped mass: `h/2` at the ends, `h` inside.
    lumped: Vec<f64>,
    /// `∫ψᵢψⱼ'`.
    gradient: Tridiagonal,
}

impl Axis {
    fn new(cells: usize, h: f64) -> Self {
        let n = cells + 1;
        let mut mass = Tridiagonal::zeros(n);
        let mut gradient = Tridiagonal::zeros(n);
        let mut lumped = vec![0.0; n];
        for e in 0..cells {
            for (i, j) in [(e, e), (e + 1, e + 1)] {
                mass.add(i, j, h / 3.0);
            }
            mass.add(e, e + 1, h / 6.0);
            mass.add(e + 1, e, h / 6.0);
            for i in [e, e + 1] {
                lumped[i] += h / 2.0;
                gradient.add(i, e, -0.5);
                gradient.add(i, e + 1, 0.5);
            }
        }
        Self {
            mass,
            lumped,
            gradient,
        }
    }
}

/// Tensor lattice of `cells[a]` intervals of width `h[a]` per axis, axis 0
/// fastest. Functions are multilinear; vector fields are nodal, and the
/// discrete gradient is the lumped-mass L² projection of the exact one.
#[derive(Debug, Clone)]
struct Lattice {
    cells: Vec<usize>,
    h: Vec<f64>,
    nodes: Vec<usize>,
    n_nodes: usize,
    /// `L⁻¹G` and `L⁻¹M` per axis.
    derivative: Vec<Tridiagonal>,
    smoothing: Vec<Tridiagonal>,
    /// `Gᵀ` and `M` per axis, for the adjoint.
    derivative_t: Vec<Tridiagonal>,
    mass: Vec<Tridiagonal>,
    axes_1d: Vec<Axis>,
    /// Lumped quadrature weight of every node.
    weights: Vec<f64>,
}

impl Lattice {
    fn new(cells: Vec<usize>, h: Vec<f64>) -> Self {
        let nodes: Vec<usize> = cells.iter().map(|c| c + 1).collect();
        let n_nodes = nodes.iter().product();
        let axes_1d: Vec<Axis> = cells
            .iter()
            .zip(&h)
            .map(|(&c, &h)| Axis::new(c, h))
            .collect();
        let inv = |ax: &Axis| ax.lumped.iter().map(|l| 1.0 / l).collect::<Vec<_>>();
        let derivative = axes_1d
            .iter()
            .map(|ax| ax.gradient.scale_rows(&inv(ax)))
            .collect();
        let smoothing = axes_1d
            .iter()
            .map(|ax| ax.mass.scale_rows(&inv(ax)))
            .collect();
        let derivative_t = axes_1d.iter().map(|ax| ax.gradient.transpose()).collect();
        let mass = axes_1d.iter().map(|ax| ax.mass.clone()).collect();
        let mut weights = vec![1.0; n_nodes];
        let mut idx = vec![0usize; nodes.len()];
        for w in weights.iter_mut() {
            for (a, &i) in idx.iter().enumerate() {
                *w *= axes_1d[a].lumped[i];
            }
            for a in 0..idx.len() {
                idx[a] += 1;
                if idx[a] < nodes[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            cells,
            h,
            nodes,
            n_nodes,
            derivative,
            smoothing,
            derivative_t,
            mass,
            axes_1d,
            weights,
        }
    }

    fn axes(&self) -> usize {
        self.cells.len()
    }

    /// Length of a nodal vector field: `axes` components per node.
    fn field_len(&self) -> usize {
        self.n_nodes * self.axes()
    }

    /// `out = ⊗ₐ ops[a] · data`, through the two scratch buffers.
    fn tensor_apply<'a>(&self, ops: impl Fn(usize) -> &'a Tridiagonal, work: &mut [Vec<f64>; 2]) {
        let [x, y] = work;
        y.resize(x.len(), 0.0);
        for a in 0..self.axes() {
            ops(a).apply_along_axis(x, y, &self.nodes, a);
            std::mem::swap(x, y);
        }
    }

    /// Discrete gradient of a nodal function, interleaved per node.
    fn grad(&self, phi: &[f64], out: &mut [f64], work: &mut [Vec<f64>; 2]) {
        let axes = self.axes();
        for c in 0..axes {
            work[0].clear();
            work[0].extend_from_slice(phi);
            self.tensor_apply(
                |a| {
                    if a == c {
                        &self.derivative[a]
                    } else {
                        &self.smoothing[a]
                    }
                },
                work,
            );
            for (o, v) in out.iter_mut().skip(c).step_by(axes).zip(&work[0]) {
                *o = *v;
            }
        }
    }

    /// Adjoint of [`Lattice::grad`] under the lumped inner product.
    fn grad_adjoint(&self, y: &[f64], out: &mut [f64], work: &mut [Vec<f64>; 2]) {
        let axes = self.axes();
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..axes {
            work[0].clear();
            work[0].extend(y.iter().skip(c).step_by(axes));
            self.tensor_apply(
                |a| {
                    if a == c {
                        &self.derivative_t[a]
                    } else {
                        &self.mass[a]
                    }
                },
                work,
            );
            for (o, v) in out.iter_mut().zip(&work[0]) {
                *o += v;
            }
        }
    }
}

/// Exact inverse of the Poisson operator `Σₐ (GᵀL⁻¹G)ₐ ⊗ ⊗_{b≠a} (ML⁻¹M)_b`
/// on mean-zero node functions.
#[derive(Debug, Clone)]
struct PoissonSolver {
    dims: Vec<usize>,
    /// Per axis, the eigenbasis `V` and its transpose, both row-major.
    forward: Vec<Vec<f64>>,
    backward: Vec<Vec<f64>>,
    /// `1/Σλ` per node, zero on the constant mode.
    inv_eigen: Vec<f64>,
}

/// `out = (I ⊗ M ⊗ I) data` along `axis`, with `M` row-major `n × n`.
fn apply_along_axis(data: &[f64], out: &mut [f64], dims: &[usize], axis: usize, mat: &[f64]) {
    let n = dims[axis];
    let inner: usize = dims[..axis].iter().product();
    let block = n * inner;
    for (src, dst) in data.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
        if inner == 1 {
            for (d, row) in dst.iter_mut().zip(mat.chunks_exact(n)) {
                *d = row.iter().zip(src).map(|(a, b)| a * b).sum();
            }
        } else {
            for (r, row) in mat.chunks_exact(n).enumerate() {
                let d = &mut dst[r * inner..(r + 1) * inner];
                d.iter_mut().for_each(|x| *x = 0.0);
                for (k, &m) in row.iter().enumerate() {
                    for (x, &v) in d.iter_mut().zip(&src[k * inner..(k + 1) * inner]) {
                        *x += m * v;
                    }
                }
            }
        }
    }
}

impl PoissonSolver {
    fn new(lattice: &Lattice) -> Result<Self> {
        let (mut forward, mut backward) = (Vec::new(), Vec::new());
        let mut eigenvalues = Vec::new();
        for ax in &lattice.axes_1d {
            let l_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                ax.lumped.len(),
                ax.lumped.iter().map(|l| 1.0 / l),
            ));
            let g = ax.gradient.dense();
            let m = ax.mass.dense();
            let stiff = g.transpose() * &l_inv * &g;
            let mass = &m * &l_inv * &m;
            let chol = mass
                .cholesky()
                .ok_or_else(|| Error::Geometry("1D mass matrix is not positive definite".into()))?;
            let l = chol.l();
            let l_inv = l
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Geometry("singular mass factor".into()))?;
            let c = &l_inv * &stiff * l_inv.transpose();
            let c = (&c + c.transpose()) * 0.5;
            let eig = SymmetricEigen::new(c);
            let v = l_inv.transpose() * eig.eigenvectors;
            let mut lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            // the constant mode is exactly in the kernel of the stiffness matrix
            let zero = lambda
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            lambda[zero] = 0.0;
            let n = v.nrows();
            forward.push((0..n * n).map(|i| v[(i % n, i / n)]).collect());
            backward.push((0..n * n).map(|i| v[(i / n, i % n)]).collect());
            eigenvalues.push(lambda);
        }
        let dims = lattice.nodes.clone();
        let mut inv_eigen = Vec::with_capacity(lattice.n_nodes);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..lattice.n_nodes {
            let s: f64 = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| eigenvalues[a][i])
                .sum();
            inv_eigen.push(if s > 0.0 { 1.0 / s } else { 0.0 });
            for a in 0..idx.len() {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self {
            dims,
            forward,
            backward,
            inv_eigen,
        })
    }

    /// Solves into `x`, using `work` as scratch; both have the node count.
    fn solve_into(&self, rhs: &[f64], x: &mut Vec<f64>, work: &mut Vec<f64>) {
        x.clear();
        x.extend_from_slice(rhs);
        work.resize(rhs.len(), 0.0);
        for (a, m) in self.forward.iter().enumerate() {
            apply_along_axis(x, work, &self.dims, a, m);
            std::mem::swap(x, work);
        }
        x.iter_mut().zip(&self.inv_eigen).for_each(|(v, s)| *v *= s);
        for (a, m) in self.backward.iter().enumerate() {
            apply_along_axis(x, work, &self.dims, a, m);
            std::mem::swap(x, work);
        }
    }

    #[cfg(test)]
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (mut x, mut work) = (Vec::new(), Vec::new());
        self.solve_into(rhs, &mut x, &mut work);
        x
    }
}

/// Closest point to `(a, b)` in `{a + ‖b‖²/2 ≤ 0}`.
///
/// Outside points land on the boundary at `(a − μ, b/(1 + μ))`. Here
/// `s = 1 + μ` is the unique root above 1 of `s³ − (a + 1)s² − ‖b‖²/2`,
/// found by Newton's method started above the root.
pub fn project_paraboloid(a: f64, b: &[f64]) -> (f64, Vec<f64>) {
    let mut p = b.to_vec();
    p.push(a);
    project_in_place(&mut p);
    let a = p.pop().unwrap();
    (a, p)
}

/// [`project_paraboloid`] on a packed `(b, a)` point.
fn project_in_place(p: &mut [f64]) {
    let d = p.len() - 1;
    let a = p[d];
    let beta = 0.5 * p[..d].iter().map(|x| x * x).sum::<f64>();
    if a + beta <= 0.0 {
        return;
    }
    let s = paraboloid_scale(a, beta);
    p[..d].iter_mut().for_each(|x| *x /= s);
    let a_out = a - (s - 1.0);
    // clean rounding so the output is feasible
    let excess = a_out + 0.5 * p[..d].iter().map(|x| x * x).sum::<f64>();
    p[d] = if excess > 0.0 { a_out - excess } else { a_out };
}

fn paraboloid_scale(a: f64, beta: f64) -> f64 {
    // f is increasing and convex right of the root, so Newton started above
    // it decreases monotonically
    let c = a + 1.0;
    let mut s = c.max(1.0) + beta.cbrt();
    for _ in 0..100 {
        let f = s * s * (s - c) - beta;
        let df = s * (3.0 * s - 2.0 * c);
        if f <= 0.0 || df <= 0.0 {
            break;
        }
        let step = f / df;
        s -= step;
        if step <= 1e-15 * s {
            break;
        }
    }
    s.max(1.0)
}

/// Settings for [`solve_dynamic`] and [`beckmann_w1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicOptions {
    /// Time intervals (ignored by the static problem).
    pub nt: usize,
    /// Augmented-Lagrangian penalty.
    pub r: f64,
    pub max_iter: usize,
    /// Bound on the constraint residual `‖∇φ − q‖`.
    pub tol: f64,
    /// Give up when the best residual over a window of this many iterations
    /// is not below `stall_ratio` times the best over the window before;
    /// 0 disables the check.
    pub stall_window: usize,
    pub stall_ratio: f64,
    /// Input densities are floored at this fraction of the uniform level.
    pub floor: f64,
    /// Over-relaxation factor in `(0, 2)`; 1 is the plain cycle.
    pub relaxation: f64,
    /// Rebalance `r` between the constraint and continuity residuals.
    pub adaptive: bool,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            nt: 16,
            r: 1.0,
            max_iter: 20_000,
            tol: 1e-5,
            stall_window: 500,
            stall_ratio: 1.0,
            floor: 1e-7,
            relaxation: 1.6,
            adaptive: true,
        }
    }
}

impl DynamicOptions {
    fn validate(&self, needs_time: bool) -> Result<()> {
        if needs_time && self.nt < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 time steps, got {}",
                self.nt
            )));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "penalty r must be positive, got {}",
                self.r
            )));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::InvalidInput(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Unknowns of the dynamic problem after (or during) a solve.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    lattice: Lattice,
    grid: GridDensity,
    /// Node functional `φ ↦ ∫φ(0)ρ₀ − ∫φ(1)ρ₁`.
    boundary: Vec<f64>,
    /// Potential at lattice nodes.
    pub phi: Vec<f64>,
    /// `(b, a)` per node, spatial components first.
    pub q: Vec<f64>,
    /// `(J, ρ)` per node, spatial components first.
    pub z: Vec<f64>,
}

fn floored(g: &GridDensity, floor: f64) -> Result<GridDensity> {
    let g = g.normalize()?;
    let level = floor / g.extent().iter().product::<f64>();
    g.with_values(g.values().iter().map(|v| v.max(level)).collect())?
        .normalize()
}

/// Spatial node indices of the corners of every grid cell.
fn cell_corners(g: &GridDensity) -> Vec<Vec<usize>> {
    let shape = g.shape();
    let nx = shape[0] + 1;
    let ny = if shape.len() == 2 { shape[1] } else { 1 };
    let mut out = Vec::with_capacity(g.len());
    for iy in 0..ny {
        for ix in 0..shape[0] {
            out.push(if shape.len() == 2 {
                vec![
                    ix + nx * iy,
                    ix + 1 + nx * iy,
                    ix + nx * (iy + 1),
                    ix + 1 + nx * (iy + 1),
                ]
            } else {
                vec![ix, ix + 1]
            });
        }
    }
    out
}

/// Integrals `∫ψ_n ρ` of every spatial node's hat function against a cellwise
/// constant density.
fn nodal_integrals(g: &GridDensity) -> Vec<f64> {
    let corners = cell_corners(g);
    let share = g.cell_volume() / corners[0].len() as f64;
    let nodes: usize = g.shape().iter().map(|m| m + 1).product();
    let mut out = vec![0.0; nodes];
    for (cell, &v) in corners.iter().zip(g.values()) {
        for &n in cell {
            out[n] += share * v;
        }
    }
    out
}

/// Per-axis map from nodal densities to cell densities, `m × (m + 1)`
/// row-major: `c = (PᵀL⁻¹P)⁻¹PᵀL⁻¹Mρ` with `P` the cell-to-hat integrals.
/// It returns `c` exactly when `Mρ = Pc`, the way input densities enter the
/// boundary term, and preserves mass.
fn reconstruction(ax: &Axis, cells: usize, h: f64) -> Result<Vec<f64>> {
    let n = cells + 1;
    let p = DMatrix::from_fn(
        n,
        cells,
        |i, c| if i == c || i == c + 1 { 0.5 * h } else { 0.0 },
    );
    let l_inv = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / ax.lumped[i] } else { 0.0 });
    let normal = p.transpose() * &l_inv * &p;
    let inv = normal
        .try_inverse()
        .ok_or_else(|| Error::Geometry("singular frame reconstruction".into()))?;
    let r = inv * p.transpose() * l_inv * ax.mass.dense();
    Ok((0..cells * n).map(|k| r[(k / n, k % n)]).collect())
}

/// `out = (I ⊗ R ⊗ I) data` along `axis` for a row-major `rows × dims[axis]`
/// matrix; returns the new dimensions.
fn apply_rect_along_axis(
    data: &[f64],
    dims: &[usize],
    axis: usize,
    mat: &[f64],
    rows: usize,
) -> (Vec<f64>, Vec<usize>) {
    let n = dims[axis];
    let inner: usize = dims[..axis].iter().product();
    let outer: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; inner * rows * outer];
    for o in 0..outer {
        let src = &data[o * n * inner..(o + 1) * n * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for (r, row) in mat.chunks_exact(n).enumerate() {
            let d = &mut dst[r * inner..(r + 1) * inner];
            for (k, &m) in row.iter().enumerate() {
                if m != 0.0 {
                    for (x, &v) in d.iter_mut().zip(&src[k * inner..(k + 1) * inner]) {
                        *x += m * v;
                    }
                }
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims[axis] = rows;
    (out, new_dims)
}

impl SpaceTimeField {
    fn empty(rho0: &GridDensity, rho1: &GridDensity, nt: usize) -> Result<Self> {
        if !rho0.same_grid(rho1) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                rho0.shape(),
                rho1.shape()
            )));
        }
        let mut cells = rho0.shape().to_vec();
        let mut h = rho0.spacing();
        cells.push(nt);
        h.push(1.0 / nt as f64);
        let lattice = Lattice::new(cells, h);
        let (b0, b1) = (nodal_integrals(rho0), nodal_integrals(rho1));
        let spatial = b0.len();
        let mut boundary = vec![0.0; lattice.n_nodes];
        for i in 0..spatial {
            boundary[i] += b0[i];
            boundary[nt * spatial + i] -= b1[i];
        }
        Ok(Self {
            phi: vec![0.0; lattice.n_nodes],
            q: vec![0.0; lattice.field_len()],
            z: vec![0.0; lattice.field_len()],
            lattice,
            grid: rho0.clone(),
            boundary,
        })
    }

    /// Field with prescribed `ρ(x, t)` and `J(x, t)` sampled at the lattice
    /// nodes, for diagnostics. `φ` and `q` are zero.
    pub fn from_functions(
        rho0: &GridDensity,
        rho1: &GridDensity,
        nt: usize,
        rho: impl Fn(&[f64], f64) -> f64,
        flux: impl Fn(&[f64], f64) -> Vec<f64>,
    ) -> Result<Self> {
        if nt == 0 {
            return Err(Error::InvalidInput("need at least one time step".into()));
        }
        let mut field = Self::empty(rho0, rho1, nt)?;
        let lat = &field.lattice;
        let axes = lat.axes();
        let d = axes - 1;
        let mut idx = vec![0usize; axes];
        for (n, z) in field.z.chunks_exact_mut(axes).enumerate() {
            debug_assert!(n < lat.n_nodes);
            let x: Vec<f64> = (0..d).map(|a| idx[a] as f64 * lat.h[a]).collect();
            let t = idx[d] as f64 * lat.h[d];
            let j = flux(&x, t);
            if j.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: j.len(),
                });
            }
            z[..d].copy_from_slice(&j);
            z[d] = rho(&x, t);
            for a in 0..axes {
                idx[a] += 1;
                if idx[a] < lat.nodes[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(field)
    }

    pub fn nt(&self) -> usize {
        *self.lattice.cells.last().unwrap()
    }

    /// L1 norm of the weak continuity residual
    /// `R_n = ∫ψ_n(1)ρ₁ − ∫ψ_n(0)ρ₀ − ∫∫ (ρ ∂ₜψ_n + J·∇ψ_n)`
    /// over all lattice nodes `n`, with `(ρ, J)` interpolated multilinearly.
    /// It vanishes exactly when `∂ₜρ + ∇·J = 0` with the prescribed end
    /// densities, tested against every multilinear function.
    pub fn continuity_residual(&self) -> f64 {
        let mut dz = vec![0.0; self.lattice.n_nodes];
        self.lattice
            .grad_adjoint(&self.z, &mut dz, &mut Default::default());
        dz.iter()
            .zip(&self.boundary)
            .map(|(a, b)| (a + b).abs())
            .sum()
    }

    /// Smallest nodal `ρ`.
    pub fn min_density(&self) -> f64 {
        let axes = self.lattice.axes();
        self.z
            .iter()
            .skip(axes - 1)
            .step_by(axes)
            .fold(f64::INFINITY, |m, &x| m.min(x))
    }

    /// `∫∫ ‖J‖²/ρ` by the nodal (trapezoidal) rule over nodes with `ρ > 0`.
    pub fn action(&self) -> f64 {
        let axes = self.lattice.axes();
        self.z
            .chunks(axes)
            .zip(&self.lattice.weights)
            .filter(|(p, _)| p[axes - 1] > 0.0)
            .map(|(p, w)| w * p[..axes - 1].iter().map(|j| j * j).sum::<f64>() / p[axes - 1])
            .sum()
    }

    /// `2(∫φ(1)ρ₁ − ∫φ(0)ρ₀)`, the dual estimate of `W₂²`.
    pub fn dual_objective(&self) -> f64 {
        -2.0 * self
            .phi
            .iter()
            .zip(&self.boundary)
            .map(|(p, b)| p * b)
            .sum::<f64>()
    }

    /// Density at every time level `k/nt`: the mean over the two adjacent
    /// time slabs, reconstructed cellwise from the nodal `ρ`. Negative
    /// undershoot is clipped and the frame rescaled to the slab mass. The
    /// end levels are the inputs.
    pub fn frames(&self, rho0: &GridDensity, rho1: &GridDensity) -> Result<InterpolationSequence> {
        let nt = self.nt();
        let axes = self.lattice.axes();
        let d = axes - 1;
        let maps = (0..d)
            .map(|a| {
                reconstruction(
                    &self.lattice.axes_1d[a],
                    self.lattice.cells[a],
                    self.lattice.h[a],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let spatial: usize = self.lattice.nodes[..d].iter().product();
        let mut frames = vec![rho0.clone()];
        for k in 1..nt {
            // mean of the two adjacent slabs: the scheme pins slab masses,
            // while single levels may alternate around them
            let rho = |level: usize, n: usize| self.z[(level * spatial + n) * axes + d];
            let mut vals: Vec<f64> = (0..spatial)
                .map(|n| 0.25 * (rho(k - 1, n) + 2.0 * rho(k, n) + rho(k + 1, n)))
                .collect();
            let mut dims = self.lattice.nodes[..d].to_vec();
            for (a, map) in maps.iter().enumerate() {
                (vals, dims) = apply_rect_along_axis(&vals, &dims, a, map, self.lattice.cells[a]);
            }
            // clip reconstruction undershoot, keeping the slab's mass
            let before: f64 = vals.iter().sum();
            vals.iter_mut().for_each(|v| *v = v.max(0.0));
            let after: f64 = vals.iter().sum();
            if before > 0.0 && after > 0.0 {
                vals.iter_mut().for_each(|v| *v *= before / after);
            }
            frames.push(self.grid.with_values(vals)?);
        }
        frames.push(rho1.clone());
        let times = (0..=nt).map(|k| k as f64 / nt as f64).collect();
        InterpolationSequence::new(frames, times)
    }

    /// Total nodal mass `∫ρ(t)` at every time level. Slab means of these are
    /// exactly conserved; single levels need not be.
    pub fn level_masses(&self) -> Vec<f64> {
        let axes = self.lattice.axes();
        let d = axes - 1;
        let spatial: usize = self.lattice.nodes[..d].iter().product();
        (0..=self.nt())
            .map(|k| {
                let time_weight = self.lattice.axes_1d[d].lumped[k];
                (0..spatial)
                    .map(|n| {
                        let node = k * spatial + n;
                        self.lattice.weights[node] / time_weight * self.z[node * axes + d]
                    })
                    .sum()
            })
            .collect()
    }
}

/// Output of [`solve_dynamic`].
#[derive(Debug, Clone)]
pub struct DynamicSolution {
    pub interpolation: InterpolationSequence,
    /// `∫∫ ‖J‖²/ρ` on the final fields.
    pub w2_squared: f64,
    /// Dual estimate `2(∫φ(1)ρ₁ − ∫φ(0)ρ₀)`.
    pub dual_w2_squared: f64,
    /// Constraint residual `‖∇φ − q‖` after every iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub continuity_residual: f64,
    pub field: SpaceTimeField,
}

struct Admm {
    lattice: Lattice,
    solver: PoissonSolver,
    boundary: Vec<f64>,
}

impl Admm {
    fn new(lattice: Lattice, boundary: Vec<f64>) -> Result<Self> {
        let solver = PoissonSolver::new(&lattice)?;
        Ok(Self {
            lattice,
            solver,
            boundary,
        })
    }

    /// Iterates until the constraint residual `‖∇φ − q‖` drops below `tol`
    /// and the continuity residual below `10·tol`, the residuals stall, or
    /// `max_iter` is reached.
    fn run(
        &self,
        phi: &mut Vec<f64>,
        q: &mut [f64],
        z: &mut [f64],
        opts: &DynamicOptions,
        project: impl Fn(&mut [f64]),
    ) -> Progress {
        let lat = &self.lattice;
        let axes = lat.axes();
        let mut r = opts.r;
        let theta = opts.relaxation;
        let mut dphi = vec![0.0; lat.field_len()];
        let mut shifted = vec![0.0; lat.field_len()];
        let mut rhs = vec![0.0; lat.n_nodes];
        let mut work = Vec::new();
        let mut bufs = Default::default();
        let mut progress = Progress::default();
        let mut cres = f64::INFINITY;
        let mut stall = StallMonitor::new(opts.stall_window, opts.stall_ratio);
        for it in 0..opts.max_iter {
            // Λᵀq + cont/r with cont = −(∇G + ΛᵀWz) the continuity residual
            for ((s, qp), zp) in shifted.iter_mut().zip(q.iter()).zip(z.iter()) {
                *s = qp - zp / r;
            }
            lat.grad_adjoint(&shifted, &mut rhs, &mut bufs);
            for (x, b) in rhs.iter_mut().zip(&self.boundary) {
                *x -= b / r;
            }
            self.solver.solve_into(&rhs, phi, &mut work);
            lat.grad(phi, &mut dphi, &mut bufs);
            let mut res = 0.0;
            for (((qp, zp), dp), w) in q
                .chunks_exact_mut(axes)
                .zip(z.chunks_exact_mut(axes))
                .zip(dphi.chunks_exact(axes))
                .zip(&lat.weights)
            {
                let mut relaxed = [0.0; 3];
                for k in 0..axes {
                    relaxed[k] = theta * dp[k] + (1.0 - theta) * qp[k];
                    qp[k] = relaxed[k] + zp[k] / r;
                }
                project(qp);
                for k in 0..axes {
                    let gap = dp[k] - qp[k];
                    res += w * gap * gap;
                    zp[k] += r * (relaxed[k] - qp[k]);
                }
            }
            let res = res.sqrt();
            let check =
                it % CHECK_EVERY == CHECK_EVERY - 1 || res <= opts.tol || it + 1 == opts.max_iter;
            if check {
                cres = self.continuity(z, &mut rhs, &mut bufs);
            }
            progress.residuals.push(res);
            progress.continuity.push(cres);
            if res <= opts.tol && cres <= 10.0 * opts.tol {
                progress.converged = true;
                break;
            }
            if opts.adaptive && it % CHECK_EVERY == CHECK_EVERY - 1 {
                if res > 10.0 * cres {
                    r *= 2.0;
                } else if cres > 10.0 * res {
                    r *= 0.5;
                }
            }
            if stall.push(res.max(cres)) {
                break;
            }
        }
        progress
    }

    /// L1 norm of `∇G + ΛᵀWz`, using `buf` as scratch.
    fn continuity(&self, z: &[f64], buf: &mut [f64], bufs: &mut [Vec<f64>; 2]) -> f64 {
        self.lattice.grad_adjoint(z, buf, bufs);
        buf.iter()
            .zip(&self.boundary)
            .map(|(d, b)| (d + b).abs())
            .sum()
    }
}

/// Detects stagnation of a noisy residual: the best value of the latest
/// window is compared with the best value of the window before it.
#[derive(Debug)]
struct StallMonitor {
    window: usize,
    ratio: f64,
    count: usize,
    previous_best: f64,
    current_best: f64,
}

impl StallMonitor {
    fn new(window: usize, ratio: f64) -> Self {
        Self {
            window,
            ratio,
            count: 0,
            previous_best: f64::INFINITY,
            current_best: f64::INFINITY,
        }
    }

    /// Records a value; true once a full window failed to improve on the
    /// previous one by the factor `ratio`.
    fn push(&mut self, value: f64) -> bool {
        if self.window == 0 {
            return false;
        }
        self.current_best = self.current_best.min(value);
        self.count += 1;
        if self.count < self.window {
            return false;
        }
        let stalled =
            self.previous_best.is_finite() && self.current_best >= self.ratio * self.previous_best;
        self.previous_best = self.current_best;
        self.current_best = f64::INFINITY;
        self.count = 0;
        stalled
    }
}

#[derive(Debug, Default)]
struct Progress {
    residuals: Vec<f64>,
    continuity: Vec<f64>,
    converged: bool,
}

/// Benamou–Brenier transport between two grid densities of the same shape.
///
/// Inputs are normalized and floored at `opts.floor` times the uniform
/// level. Non-convergence is reported through `converged = false`; the
/// fields and estimates are still returned.
pub fn solve_dynamic(
    rho0: &GridDensity,
    rho1: &GridDensity,
    opts: DynamicOptions,
) -> Result<DynamicSolution> {
    opts.validate(true)?;
    if !rho0.same_grid(rho1) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            rho0.shape(),
            rho1.shape()
        )));
    }
    let a = floored(rho0, opts.floor)?;
    let b = floored(rho1, opts.floor)?;
    let mut field = SpaceTimeField::empty(&a, &b, opts.nt)?;
    // start from the motionless guess: J = 0 and ρ linear in time, with end
    // levels whose hat integrals match the inputs (lumped when that goes
    // negative); for equal inputs this is the discrete optimum
    let d = a.dim();
    let dims = &field.lattice.nodes[..d];
    let nodal = |g: &GridDensity| {
        let mut u = nodal_integrals(g);
        for ax in 0..d {
            field.lattice.mass[ax].solve_along_axis(&mut u, dims, ax);
        }
        if u.iter().all(|&x| x >= 0.0) {
            return u;
        }
        let mut u = nodal_integrals(g);
        for ax in 0..d {
            Tridiagonal::diagonal(field.lattice.axes_1d[ax].lumped.clone())
                .solve_along_axis(&mut u, dims, ax);
        }
        u
    };
    let (u, v) = (nodal(&a), nodal(&b));
    let axes = field.lattice.axes();
    for k in 0..=opts.nt {
        let t = k as f64 / opts.nt as f64;
        for (n, (x, y)) in u.iter().zip(&v).enumerate() {
            field.z[(k * u.len() + n) * axes + axes - 1] = (1.0 - t) * x + t * y;
        }
    }
    let admm = Admm::new(field.lattice.clone(), field.boundary.clone())?;
    let progress = admm.run(
        &mut field.phi,
        &mut field.q,
        &mut field.z,
        &opts,
        project_in_place,
    );
    Ok(DynamicSolution {
        interpolation: field.frames(&a, &b)?,
        w2_squared: field.action(),
        dual_w2_squared: field.dual_objective(),
        iterations: progress.residuals.len(),
        residuals: progress.residuals,
        converged: progress.converged,
        continuity_residual: field.continuity_residual(),
        field,
    })
}

/// Free-standing form of [`SpaceTimeField::continuity_residual`].
pub fn continuity_residual(field: &SpaceTimeField) -> f64 {
    field.continuity_residual()
}

/// Output of [`beckmann_w1`].
#[derive(Debug, Clone)]
pub struct BeckmannSolution {
    /// `∫‖J‖` on the final flow.
    pub w1: f64,
    /// Dual estimate `∫φ(ρ₁ − ρ₀)`.
    pub dual_w1: f64,
    /// Cell-averaged flow, `dim` components per cell, with `∇·J = ρ₀ − ρ₁`.
    pub flux: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimal-flow (Beckmann) formulation of `W₁`:
/// `min ∫‖J‖ s.t. ∇·J = ρ₀ − ρ₁` with no flux through the boundary.
///
/// Same splitting as [`solve_dynamic`] without the time axis. The pointwise
/// projection is onto the unit ball, the dual of the Lipschitz constraint on `φ`.
pub fn beckmann_w1(
    rho0: &GridDensity,
    rho1: &GridDensity,
    opts: DynamicOptions,
) -> Result<BeckmannSolution> {
    opts.validate(false)?;
    if !rho0.same_grid(rho1) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            rho0.shape(),
            rho1.shape()
        )));
    }
    let (a, b) = (rho0.normalize()?, rho1.normalize()?);
    let lattice = Lattice::new(a.shape().to_vec(), a.spacing());
    let boundary: Vec<f64> = nodal_integrals(&a)
        .iter()
        .zip(nodal_integrals(&b))
        .map(|(x, y)| x - y)
        .collect();
    let admm = Admm::new(lattice, boundary.clone())?;
    let lat = &admm.lattice;
    let mut phi = vec![0.0; lat.n_nodes];
    let mut q = vec![0.0; lat.field_len()];
    let mut z = vec![0.0; lat.field_len()];
    let progress = admm.run(&mut phi, &mut q, &mut z, &opts, |p| {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1.0 {
            p.iter_mut().for_each(|x| *x /= norm);
        }
    });
    let axes = lat.axes();
    let w1 = z
        .chunks(axes)
        .zip(&lat.weights)
        .map(|(j, w)| w * j.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>();
    let dual_w1 = -phi.iter().zip(&boundary).map(|(p, b)| p * b).sum::<f64>();
    let corners = cell_corners(&a);
    let mut flux = vec![0.0; a.len() * axes];
    for (c, nodes) in corners.iter().enumerate() {
        for &n in nodes {
            for k in 0..axes {
                flux[c * axes + k] += z[n * axes + k] / nodes.len() as f64;
            }
        }
    }
    Ok(BeckmannSolution {
        w1,
        dual_w1,
        flux,
        iterations: progress.residuals.len(),
        residuals: progress.residuals,
        converged: progress.converged,
    })
}
