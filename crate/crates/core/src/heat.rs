//! Heat-kernel convolutions and convolutional Wasserstein distances.
//!
//! On a flat domain the Sinkhorn kernel `exp(−‖x − y‖²/α)` is a Gaussian, so
//! multiplying by it is a blur. On a triangle mesh the same kernel is replaced
//! by short-time heat diffusion, discretized with the cotangent Laplacian and
//! a few implicit Euler steps. Both modes expose a single [`HeatOperator`]:
//!
//! * [`HeatOperator::apply`] diffuses a *function* (per-cell or per-vertex
//!   values). It preserves constants and is self-adjoint for the
//!   area-weighted inner product.
//! * [`HeatOperator::apply_kernel`] multiplies a *mass vector* by the
//!   kernel matrix, `K q = N · H(q ⊘ A)`. The scale `N` makes `K` match
//!   `exp(−d²/α)` in flat space.
//!
//! The diffusion time is `t = α/4` for `∂u/∂t = Δu`. That is the time at
//! which the Euclidean heat kernel is proportional to `exp(−d²/α)`.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::measures::{triangle_area, GridDensity, MeshDensity};
use crate::sinkhorn::{validate_barycenter_inputs, BarycenterResult, SinkhornOptions};

/// Default number of implicit Euler substeps for mesh diffusion.
pub const DEFAULT_SUBSTEPS: usize = 10;

// exp(-40) ≈ 4e-18: Gaussian tail beyond this radius is dropped
const TAIL: f64 = 40.0;

#[derive(Clone)]
enum Mode {
    Grid {
        shape: Vec<usize>,
        /// Per axis: dense reflected Gaussian `g_ij` (unnormalized) and the
        /// lattice sum used to normalize it.
        kernels: Vec<DMatrix<f64>>,
        sq_dist: Vec<DMatrix<f64>>,
        lattice_sums: Vec<f64>,
    },
    Mesh {
        factor: std::sync::Arc<CscCholesky<f64>>,
        substeps: usize,
    },
}

/// Heat diffusion for a fixed time on a grid or a triangle mesh.
#[derive(Clone)]
pub struct HeatOperator {
    alpha: f64,
    areas: Vec<f64>,
    kernel_scale: f64,
    mode: Mode,
}

impl std::fmt::Debug for HeatOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = match &self.mode {
            Mode::Grid { shape, .. } => format!("grid {shape:?}"),
            Mode::Mesh { substeps, .. } => format!("mesh, {substeps} substeps"),
        };
        f.debug_struct("HeatOperator")
            .field("alpha", &self.alpha)
            .field("nodes", &self.areas.len())
            .field("mode", &mode)
            .finish()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )))
    }
}

/// Gaussian `exp(−(x_i − y)²/α)` summed over the reflections of `y_j` about
/// both ends of `[0, len]`. The images of a cell-centred lattice tile the
/// infinite lattice, so every row sums to the same lattice constant.
fn reflected_gaussian(m: usize, len: f64, alpha: f64) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let h = len / m as f64;
    let center = |i: usize| (i as f64 + 0.5) * h;
    let cutoff = (TAIL * alpha).sqrt();
    let reps = (cutoff / (2.0 * len)).ceil() as i64 + 1;
    let mut g = DMatrix::zeros(m, m);
    let mut d2 = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let (xi, yj) = (center(i), center(j));
            let mut s = 0.0;
            for k in -reps..=reps {
                let shift = 2.0 * len * k as f64;
                for y in [shift + yj, shift - yj] {
                    let d = xi - y;
                    if d * d <= TAIL * alpha {
                        s += (-d * d / alpha).exp();
                    }
                }
            }
            g[(i, j)] = s;
            d2[(i, j)] = (xi - yj) * (xi - yj);
        }
    }
    let n_max = (cutoff / h).ceil() as i64;
    let z: f64 = (-n_max..=n_max)
        .map(|n| {
            let x = n as f64 * h;
            (-x * x / alpha).exp()
        })
        .sum();
    (g, d2, z)
}

/// Sparse cotangent stiffness matrix (positive semidefinite, rows sum to 0).
pub fn cotangent_stiffness(mesh: &MeshDensity) -> CscMatrix<f64> {
    let n = mesh.len();
    let v = mesh.vertices();
    let mut coo = CooMatrix::new(n, n);
    for tri in mesh.triangles() {
        for k in 0..3 {
            let (i, j, o) = (tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k]);
            let a = [v[i][0] - v[o][0], v[i][1] - v[o][1], v[i][2] - v[o][2]];
            let b = [v[j][0] - v[o][0], v[j][1] - v[o][1], v[j][2] - v[o][2]];
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let cross = 2.0 * triangle_area(&v[o], &v[i], &v[j]);
            let w = 0.5 * dot / cross;
            coo.push(i, j, -w);
            coo.push(j, i, -w);
            coo.push(i, i, w);
            coo.push(j, j, w);
        }
    }
    CscMatrix::from(&coo)
}

impl HeatOperator {
    /// Separable Gaussian blur on a regular grid with reflecting boundary.
    pub fn grid(shape: &[usize], extent: &[f64], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::UnsupportedDimension(shape.len()));
        }
        if shape.len() != extent.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                got: extent.len(),
            });
        }
        let mut kernels = Vec::new();
        let mut sq_dist = Vec::new();
        let mut lattice_sums = Vec::new();
        let mut scale = 1.0;
        let mut cell = 1.0;
        for (&m, &len) in shape.iter().zip(extent) {
            if m == 0 || !(len > 0.0) {
                return Err(Error::InvalidInput(
                    "grid axes need cells and positive extent".into(),
                ));
            }
            let (g, d2, z) = reflected_gaussian(m, len, alpha);
            let h = len / m as f64;
            scale *= z * h;
            cell *= h;
            kernels.push(g);
            sq_dist.push(d2);
            lattice_sums.push(z);
        }
        let n: usize = shape.iter().product();
        Ok(Self {
            alpha,
            areas: vec![cell; n],
            kernel_scale: scale,
            mode: Mode::Grid {
                shape: shape.to_vec(),
                kernels,
                sq_dist,
                lattice_sums,
            },
        })
    }

    pub fn for_grid(g: &GridDensity, alpha: f64) -> Result<Self> {
        Self::grid(g.shape(), g.extent(), alpha)
    }

    /// Implicit heat diffusion on a triangle mesh with [`DEFAULT_SUBSTEPS`].
    pub fn mesh(mesh: &MeshDensity, alpha: f64) -> Result<Self> {
        Self::mesh_with_substeps(mesh, alpha, DEFAULT_SUBSTEPS)
    }

    /// `s` steps of `(A + (t/s) L) u_{k+1} = A u_k`; the matrix is factored once.
    pub fn mesh_with_substeps(mesh: &MeshDensity, alpha: f64, substeps: usize) -> Result<Self> {
        check_alpha(alpha)?;
        if substeps == 0 {
            return Err(Error::InvalidInput("need at least one substep".into()));
        }
        let t = alpha / 4.0;
        let tau = t / substeps as f64;
        let n = mesh.len();
        let stiff = cotangent_stiffness(mesh);
        let mut coo = CooMatrix::new(n, n);
        for (i, j, &x) in stiff.triplet_iter() {
            coo.push(i, j, tau * x);
        }
        for (i, &a) in mesh.vertex_area().iter().enumerate() {
            coo.push(i, i, a);
        }
        let system = CscMatrix::from(&coo);
        let factor = CscCholesky::factor(&system)
            .map_err(|e| Error::Geometry(format!("heat system is not positive definite: {e}")))?;
        Ok(Self {
            alpha,
            areas: mesh.vertex_area().to_vec(),
            kernel_scale: std::f64::consts::PI * alpha,
            mode: Mode::Mesh {
                factor: std::sync::Arc::new(factor),
                substeps,
            },
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Diffusion time `t = α/4`.
    pub fn time(&self) -> f64 {
        self.alpha / 4.0
    }

    /// Lumped area (cell volume on grids) of every node.
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.mode, Mode::Grid { .. })
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// Diffuse a function for time `t`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        match &self.mode {
            Mode::Grid {
                shape,
                kernels,
                lattice_sums,
                ..
            } => {
                let mut out = f.to_vec();
                for (axis, (g, z)) in kernels.iter().zip(lattice_sums).enumerate() {
                    out = convolve_axis(shape, axis, g, &out);
                    out.iter_mut().for_each(|x| *x /= z);
                }
                Ok(out)
            }
            Mode::Mesh { factor, substeps } => {
                let mut u = f.to_vec();
                for _ in 0..*substeps {
                    let rhs: Vec<f64> = u.iter().zip(&self.areas).map(|(u, a)| u * a).collect();
                    let sol = factor.solve(&DMatrix::from_column_slice(rhs.len(), 1, &rhs));
                    u = sol.as_slice().to_vec();
                }
                if u.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Geometry(
                        "heat solve produced non-finite values".into(),
                    ));
                }
                Ok(u)
            }
        }
    }

    /// Kernel-matrix product on masses, `K q = N · H(q ⊘ A)`.
    pub fn apply_kernel(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_len(q)?;
        let f: Vec<f64> = q.iter().zip(&self.areas).map(|(q, a)| q / a).collect();
        let mut out = self.apply(&f)?;
        out.iter_mut().for_each(|x| *x *= self.kernel_scale);
        Ok(out)
    }

    /// `⟨diag[p] K diag[q], C⟩` for the squared Euclidean cost, exact on
    /// grids (the kernel is separable, and so is `K ∘ C`). `None` for meshes.
    pub fn grid_transport_cost(&self, p: &[f64], q: &[f64]) -> Option<f64> {
        let Mode::Grid {
            shape,
            kernels,
            sq_dist,
            ..
        } = &self.mode
        else {
            return None;
        };
        let mut total = 0.0;
        for a in 0..shape.len() {
            let mut out = q.to_vec();
            for b in 0..shape.len() {
                let m = if a == b {
                    kernels[b].component_mul(&sq_dist[b])
                } else {
                    kernels[b].clone()
                };
                out = convolve_axis(shape, b, &m, &out);
            }
            total += p
                .iter()
                .zip(&out)
                .map(|(p, x)| if *p > 0.0 { p * x } else { 0.0 })
                .sum::<f64>();
        }
        Some(total)
    }
}

/// Convenience form of [`HeatOperator::apply`].
pub fn apply_heat(op: &HeatOperator, f: &[f64]) -> Result<Vec<f64>> {
    op.apply(f)
}

fn convolve_axis(shape: &[usize], axis: usize, g: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    match (shape.len(), axis) {
        (1, _) | (2, 0) => {
            let nx = shape[0];
            for (src, dst) in f.chunks(nx).zip(out.chunks_mut(nx)) {
                for i in 0..nx {
                    let mut s = 0.0;
                    for j in 0..nx {
                        s += g[(i, j)] * src[j];
                    }
                    dst[i] = s;
                }
            }
        }
        _ => {
            let (nx, ny) = (shape[0], shape[1]);
            for i in 0..ny {
                let dst = &mut out[i * nx..(i + 1) * nx];
                for j in 0..ny {
                    let w = g[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    for (d, s) in dst.iter_mut().zip(&f[j * nx..(j + 1) * nx]) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    out
}

/// Result of a convolutional Sinkhorn solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionalResult {
    /// `α(⟨v, log p⟩ + ⟨w, log q⟩)`, the regularized objective at the fixed point.
    pub regularized_cost: f64,
    /// `⟨T, ‖x − y‖²⟩`, available on grids.
    pub transport_cost: Option<f64>,
    /// Scalings on masses; the plan is `diag[p] K diag[q]`.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
    pub residuals: Vec<f64>,
}

impl ConvolutionalResult {
    /// The distance estimate: `√⟨T, C⟩` when available, else `√` of the
    /// regularized objective (clamped at 0).
    pub fn distance(&self) -> f64 {
        self.transport_cost
            .unwrap_or(self.regularized_cost)
            .max(0.0)
            .sqrt()
    }
}

fn masses_of(op: &HeatOperator, density: &[f64], what: &str) -> Result<Vec<f64>> {
    op.check_len(density)?;
    crate::error::check_finite_nonneg(density, what)?;
    let m: Vec<f64> = density.iter().zip(op.areas()).map(|(d, a)| d * a).collect();
    let total: f64 = m.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(total));
    }
    Ok(m)
}

/// Sinkhorn iteration whose kernel products are heat diffusions.
///
/// `mu0` and `mu1` are densities with respect to the operator's areas
/// (per-cell values on grids, per-vertex values on meshes), each of unit mass.
pub fn convolutional_sinkhorn(
    mu0: &[f64],
    mu1: &[f64],
    op: &HeatOperator,
    opts: SinkhornOptions,
) -> Result<ConvolutionalResult> {
    let v = masses_of(op, mu0, "mu0")?;
    let w = masses_of(op, mu1, "mu1")?;
    let n = v.len();
    let underflow = |x: &[f64], m: &[f64]| -> Result<()> {
        match (0..n).find(|&i| m[i] > 0.0 && !(x[i] >= f64::MIN_POSITIVE && x[i].is_finite())) {
            Some(i) => Err(Error::Underflow(i)),
            None => Ok(()),
        }
    };
    let mut p = vec![0.0; n];
    let mut q: Vec<f64> = w.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut kq = op.apply_kernel(&q)?;
    let mut residuals = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        underflow(&kq, &v)?;
        for i in 0..n {
            p[i] = if v[i] > 0.0 { v[i] / kq[i] } else { 0.0 };
        }
        let kp = op.apply_kernel(&p)?;
        underflow(&kp, &w)?;
        for j in 0..n {
            q[j] = if w[j] > 0.0 { w[j] / kp[j] } else { 0.0 };
        }
        let col_err: f64 = (0..n).map(|j| (q[j] * kp[j] - w[j]).abs()).sum();
        kq = op.apply_kernel(&q)?;
        let row_err: f64 = (0..n).map(|i| (p[i] * kq[i] - v[i]).abs()).sum();
        let err = row_err.max(col_err);
        residuals.push(err);
        if !err.is_finite() {
            return Err(Error::Underflow(0));
        }
        if err <= opts.tol {
            break;
        }
    }
    let dual = |m: &[f64], s: &[f64]| -> f64 {
        m.iter()
            .zip(s)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, s)| m * s.ln())
            .sum()
    };
    let regularized_cost = op.alpha() * (dual(&v, &p) + dual(&w, &q));
    let transport_cost = op.grid_transport_cost(&p, &q);
    let marginal_error = residuals.last().copied().unwrap_or(f64::INFINITY);
    Ok(ConvolutionalResult {
        regularized_cost,
        transport_cost,
        p,
        q,
        iterations,
        converged: marginal_error <= opts.tol,
        marginal_error,
        residuals,
    })
}

/// Entropic barycenter with kernel products replaced by heat diffusion.
///
/// Inputs and output are densities with respect to the operator's areas; the
/// output has unit mass.
pub fn convolutional_barycenter(
    measures: &[Vec<f64>],
    lambda: &[f64],
    op: &HeatOperator,
    opts: SinkhornOptions,
) -> Result<BarycenterResult> {
    validate_barycenter_inputs(measures, lambda)?;
    let mus: Vec<Vec<f64>> = measures
        .iter()
        .map(|m| {
            op.check_len(m)?;
            let masses: Vec<f64> = m.iter().zip(op.areas()).map(|(d, a)| d * a).collect();
            let s: f64 = masses.iter().sum();
            Ok(masses.iter().map(|x| x / s).collect())
        })
        .collect::<Result<_>>()?;
    let n = op.len();
    let k = mus.len();
    let mut u = vec![vec![1.0; n]; k];
    let mut v = vec![vec![1.0; n]; k];
    let mut kv = vec![vec![0.0; n]; k];
    let mut b = vec![0.0; n];
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        for s in 0..k {
            let ku = op.apply_kernel(&u[s])?;
            for j in 0..n {
                v[s][j] = if mus[s][j] > 0.0 {
                    mus[s][j] / ku[j]
                } else {
                    0.0
                };
                if !v[s][j].is_finite() {
                    return Err(Error::Underflow(j));
                }
            }
            kv[s] = op.apply_kernel(&v[s])?;
        }
        for i in 0..n {
            let log_b: f64 = (0..k)
                .filter(|&s| lambda[s] > 0.0)
                .map(|s| lambda[s] * kv[s][i].ln())
                .sum();
            b[i] = log_b.exp();
        }
        for s in 0..k {
            for i in 0..n {
                u[s][i] = if kv[s][i] > 0.0 { b[i] / kv[s][i] } else { 0.0 };
            }
        }
        err = 0.0;
        for s in (0..k).filter(|&s| lambda[s] > 0.0) {
            let ku = op.apply_kernel(&u[s])?;
            let e: f64 = (0..n).map(|j| (v[s][j] * ku[j] - mus[s][j]).abs()).sum();
            err = err.max(e);
        }
        if !err.is_finite() {
            return Err(Error::Underflow(0));
        }
        if err <= opts.tol {
            break;
        }
    }
    let total: f64 = b.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Underflow(0));
    }
    Ok(BarycenterResult {
        histogram: b
            .iter()
            .zip(op.areas())
            .map(|(b, a)| b / total / a)
            .collect(),
        iterations,
        converged: err <= opts.tol,
        marginal_error: err,
    })
}
