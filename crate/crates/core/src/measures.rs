//! Probability measure representations, cost matrices and the plan/potential
//! containers shared by every solver.
//!
//! Three kinds of measure appear throughout the crate:
//!
//! * [`DiscreteMeasure`]: a weighted point cloud `Σ a_i δ_{x_i}` in 1, 2 or 3
//!   dimensions.
//! * [`GridDensity`]: a piecewise-constant density on a regular grid covering
//!   an axis-aligned box `[0, L_x] × [0, L_y]` (or an interval in 1D).
//! * [`MeshDensity`]: a per-vertex density on a triangle mesh together with
//!   lumped (one-third) vertex areas.
//!
//! Constructors validate non-negativity and finiteness but do not rescale; use
//! [`Normalize::normalize`] to obtain a probability measure.

use std::collections::HashMap;

use crate::error::{check_finite_nonneg, Error, Result};

/// Tolerance on the total mass of a [`DiscreteMeasure`].
pub const DISCRETE_MASS_TOL: f64 = 1e-12;
/// Tolerance on the total mass of grid and mesh densities.
pub const DENSITY_MASS_TOL: f64 = 1e-10;

/// Uniform rescaling to unit total mass.
pub trait Normalize: Sized {
    fn total_mass(&self) -> f64;

    /// Returns a copy scaled so that the total mass is one.
    fn normalize(&self) -> Result<Self>;

    fn is_normalized(&self) -> bool;
}

/// Weighted point cloud `Σ a_i δ_{x_i}`.
///
/// Atoms are stored flattened (`dim` coordinates per atom). Coincident atoms are
/// merged at construction by summing their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from points given as coordinate rows.
    pub fn new(points: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("measure has no atoms".into()));
        }
        let dim = points[0].len();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights.to_vec())
    }

    /// Builds a measure from `dim`-strided coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates for {} atoms in dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidInput("measure has no atoms".into()));
        }
        check_finite_nonneg(&weights, "weights")?;
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("coordinate {i} is not finite")));
        }

        // Merge duplicates, keeping the order of first occurrence.
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut merged_coords = Vec::with_capacity(coords.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(weights.len());
        for (i, &w) in weights.iter().enumerate() {
            let p = &coords[i * dim..(i + 1) * dim];
            // -0.0 and 0.0 are the same location
            let key: Vec<u64> = p.iter().map(|&c| (c + 0.0).to_bits()).collect();
            match seen.get(&key) {
                Some(&j) => merged_weights[j] += w,
                None => {
                    seen.insert(key, merged_weights.len());
                    merged_coords.extend_from_slice(p);
                    merged_weights.push(w);
                }
            }
        }
        Ok(Self {
            dim,
            coords: merged_coords,
            weights: merged_weights,
        })
    }

    /// 1D measure from positions and weights.
    pub fn on_line(xs: &[f64], weights: &[f64]) -> Result<Self> {
        Self::from_flat(1, xs.to_vec(), weights.to_vec())
    }

    /// Builds and normalizes in one step.
    pub fn probability(points: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        Self::new(points, weights)?.normalize()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let mass = self.total_mass();
        let mut m = vec![0.0; self.dim];
        for (p, &w) in self.points().zip(&self.weights) {
            for (mi, &pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m.iter_mut().for_each(|v| *v /= mass);
        m
    }
}

impl Normalize for DiscreteMeasure {
    fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn normalize(&self) -> Result<Self> {
        let weights = normalize_weights(&self.weights)?;
        Ok(Self {
            dim: self.dim,
            coords: self.coords.clone(),
            weights,
        })
    }

    fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= DISCRETE_MASS_TOL
    }
}

/// Scales a nonnegative weight vector to unit sum.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    check_finite_nonneg(weights, "weights")?;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Piecewise-constant density on a regular grid over `[0, extent_0] × …`.
///
/// Axis 0 varies fastest in `values`. In 2D, axis 0 is `x` (columns) and axis 1
/// is `y` (rows), so `values[ix + nx * iy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    shape: Vec<usize>,
    extent: Vec<f64>,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(shape: Vec<usize>, extent: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let d = shape.len();
        if !(1..=2).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if extent.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: extent.len(),
            });
        }
        if let Some(&m) = shape.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidInput(format!(
                "grid axis has {m} cells, need at least 2"
            )));
        }
        if extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidInput("grid extent must be positive".into()));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n} cells",
                values.len()
            )));
        }
        check_finite_nonneg(&values, "values")?;
        Ok(Self {
            shape,
            extent,
            values,
        })
    }

    /// Grid on the unit interval or unit square.
    pub fn unit(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let d = shape.len();
        Self::new(shape, vec![1.0; d], values)
    }

    /// Samples `f` at cell centers of a unit-box grid and normalizes.
    pub fn from_fn(shape: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = shape.len();
        let proto = Self::new(
            shape.clone(),
            vec![1.0; d],
            vec![0.0; shape.iter().product()],
        )?;
        let values = (0..proto.len()).map(|i| f(&proto.cell_center(i))).collect();
        Self::unit(shape, values)?.normalize()
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Cell widths per axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.extent
            .iter()
            .zip(&self.shape)
            .map(|(e, &m)| e / m as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&m| {
                let i = idx % m;
                idx /= m;
                i
            })
            .collect()
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        self.unravel(idx)
            .iter()
            .zip(&h)
            .map(|(&i, &hi)| (i as f64 + 0.5) * hi)
            .collect()
    }

    /// Per-cell masses `value · cellVolume`.
    pub fn masses(&self) -> Vec<f64> {
        let vol = self.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    /// Density-weighted centroid.
    pub fn center_of_mass(&self) -> Vec<f64> {
        let masses = self.masses();
        let total: f64 = masses.iter().sum();
        let mut c = vec![0.0; self.dim()];
        for (i, m) in masses.iter().enumerate() {
            for (ca, xa) in c.iter_mut().zip(self.cell_center(i)) {
                *ca += m * xa;
            }
        }
        c.iter_mut().for_each(|v| *v /= total);
        c
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.shape == other.shape
            && self
                .extent
                .iter()
                .zip(&other.extent)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }

    /// Copy of this grid carrying different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.shape.clone(), self.extent.clone(), values)
    }
}

impl Normalize for GridDensity {
    fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    fn normalize(&self) -> Result<Self> {
        let mass = self.total_mass();
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let values = self.values.iter().map(|v| v / mass).collect();
        Ok(Self {
            shape: self.shape.clone(),
            extent: self.extent.clone(),
            values,
        })
    }

    fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= DENSITY_MASS_TOL
    }
}

/// One atom per cell at the cell center, weighted by cell mass. Empty cells
/// are dropped.
pub fn grid_to_discrete(g: &GridDensity) -> Result<DiscreteMeasure> {
    let masses = g.masses();
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (i, &m) in masses.iter().enumerate() {
        if m > 0.0 {
            coords.extend(g.cell_center(i));
            weights.push(m);
        }
    }
    if weights.is_empty() {
        return Err(Error::ZeroMass);
    }
    DiscreteMeasure::from_flat(g.dim(), coords, weights)
}

/// Triangle mesh carrying a per-vertex density.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshDensity {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    density: Vec<f64>,
    vertex_area: Vec<f64>,
}

impl MeshDensity {
    /// Validates the mesh (positive-area triangles, one connected component,
    /// every vertex used) and computes barycentric lumped areas.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        density: Vec<f64>,
    ) -> Result<Self> {
        let n = vertices.len();
        if density.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} densities for {n} vertices",
                density.len()
            )));
        }
        check_finite_nonneg(&density, "density")?;
        if triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }
        let mut vertex_area = vec![0.0; n];
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::Geometry(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let area = triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::Geometry(format!("triangle {t} has zero area")));
            }
            for &v in tri {
                vertex_area[v] += area / 3.0;
            }
            for k in 1..3 {
                let (a, b) = (find(&mut parent, tri[0]), find(&mut parent, tri[k]));
                parent[a] = b;
            }
        }
        if let Some(v) = vertex_area.iter().position(|&a| a <= 0.0) {
            return Err(Error::Geometry(format!(
                "vertex {v} is not used by any triangle"
            )));
        }
        let root = find(&mut parent, 0);
        if (0..n).any(|v| find(&mut parent, v) != root) {
            return Err(Error::Geometry("mesh is not connected".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            density,
            vertex_area,
        })
    }

    /// Flat `nx × ny` vertex lattice over `[0, lx] × [0, ly]`, each quad split
    /// into two triangles along the same diagonal.
    pub fn flat_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidInput(
                "flat grid needs at least 2x2 vertices".into(),
            ));
        }
        let mut vertices = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                vertices.push([
                    lx * i as f64 / (nx - 1) as f64,
                    ly * j as f64 / (ny - 1) as f64,
                    0.0,
                ]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let v00 = i + nx * j;
                let v10 = v00 + 1;
                let v01 = v00 + nx;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let n = vertices.len();
        Self::new(vertices, triangles, vec![1.0; n])?.normalize()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn vertex_area(&self) -> &[f64] {
        &self.vertex_area
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Same mesh, different per-vertex density.
    pub fn with_density(&self, density: Vec<f64>) -> Result<Self> {
        if density.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} densities for {} vertices",
                density.len(),
                self.vertices.len()
            )));
        }
        check_finite_nonneg(&density, "density")?;
        Ok(Self {
            density,
            ..self.clone()
        })
    }

    /// Unit-mass density concentrated at a single vertex.
    pub fn delta_at(&self, v: usize) -> Result<Self> {
        if v >= self.len() {
            return Err(Error::InvalidInput(format!("vertex {v} out of range")));
        }
        let mut d = vec![0.0; self.len()];
        d[v] = 1.0 / self.vertex_area[v];
        self.with_density(d)
    }

    /// Per-vertex masses `density · vertexArea`.
    pub fn masses(&self) -> Vec<f64> {
        self.density
            .iter()
            .zip(&self.vertex_area)
            .map(|(d, a)| d * a)
            .collect()
    }
}

impl Normalize for MeshDensity {
    fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    fn normalize(&self) -> Result<Self> {
        let mass = self.total_mass();
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        self.with_density(self.density.iter().map(|d| d / mass).collect())
    }

    fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= DENSITY_MASS_TOL
    }
}

pub(crate) fn triangle_area(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Dense row-major cost matrix `c_ij ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    exponent: Option<f64>,
}

impl CostMatrix {
    /// Rejects negative or NaN entries. `+∞` is accepted here and refused by
    /// the solvers that cannot handle it.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} cost matrix",
                entries.len()
            )));
        }
        for (k, &c) in entries.iter().enumerate() {
            if c.is_nan() || c < 0.0 {
                return Err(Error::InvalidCost(k / cols, k % cols));
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
            exponent: None,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self::new(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Exponent `p` when built from point distances.
    pub fn exponent(&self) -> Option<f64> {
        self.exponent
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().sum::<f64>() / self.entries.len() as f64
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut t = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.push(self.get(i, j));
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            entries: t,
            exponent: self.exponent,
        }
    }

    /// Rows and columns restricted to the given index sets.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CostMatrix {
        let mut e = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                e.push(self.get(i, j));
            }
        }
        CostMatrix {
            rows: rows.len(),
            cols: cols.len(),
            entries: e,
            exponent: self.exponent,
        }
    }
}

/// `c_ij = ‖x_i − y_j‖₂^p`.
pub fn build_cost_matrix(
    src: &DiscreteMeasure,
    dst: &DiscreteMeasure,
    p: f64,
) -> Result<CostMatrix> {
    if src.dim() != dst.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            got: dst.dim(),
        });
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cost exponent must be positive, got {p}"
        )));
    }
    let mut entries = Vec::with_capacity(src.len() * dst.len());
    for x in src.points() {
        for y in dst.points() {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            entries.push(if p == 2.0 { d2 } else { d2.sqrt().powf(p) });
        }
    }
    let mut c = CostMatrix::new(src.len(), dst.len(), entries)?;
    c.exponent = Some(p);
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
enum PlanStorage {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, usize, f64)>),
}

/// Coupling between a row marginal `v` and a column marginal `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    storage: PlanStorage,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    cost: f64,
}

impl TransportPlan {
    pub fn dense(
        masses: Vec<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
        c: &CostMatrix,
    ) -> Self {
        let (rows, cols) = (row_marginal.len(), col_marginal.len());
        assert_eq!(masses.len(), rows * cols);
        let cost = masses
            .iter()
            .zip(c.entries())
            .map(|(t, c)| if *t > 0.0 { t * c } else { 0.0 })
            .sum();
        Self {
            rows,
            cols,
            storage: PlanStorage::Dense(masses),
            row_marginal,
            col_marginal,
            cost,
        }
    }

    /// Coordinate-format plan. Zero-mass entries are kept.
    pub fn sparse(
        entries: Vec<(usize, usize, f64)>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
        c: &CostMatrix,
    ) -> Self {
        let (rows, cols) = (row_marginal.len(), col_marginal.len());
        let cost = entries
            .iter()
            .map(|&(i, j, t)| if t > 0.0 { t * c.get(i, j) } else { 0.0 })
            .sum();
        Self {
            rows,
            cols,
            storage: PlanStorage::Sparse(entries),
            row_marginal,
            col_marginal,
            cost,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    /// `Σ T_ij c_ij` as computed at construction.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, PlanStorage::Sparse(_))
    }

    /// Stored entries as `(i, j, mass)`; for dense plans only nonzeros.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            PlanStorage::Sparse(e) => e.clone(),
            PlanStorage::Dense(m) => m
                .iter()
                .enumerate()
                .filter(|(_, &t)| t != 0.0)
                .map(|(k, &t)| (k / self.cols, k % self.cols, t))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            PlanStorage::Dense(m) => m.clone(),
            PlanStorage::Sparse(e) => {
                let mut m = vec![0.0; self.rows * self.cols];
                for &(i, j, t) in e {
                    m[i * self.cols + j] += t;
                }
                m
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            PlanStorage::Dense(m) => m[i * self.cols + j],
            PlanStorage::Sparse(e) => e
                .iter()
                .filter(|&&(a, b, _)| a == i && b == j)
                .map(|e| e.2)
                .sum(),
        }
    }

    /// Number of stored entries with strictly positive mass.
    pub fn support_size(&self) -> usize {
        self.entries().iter().filter(|e| e.2 > 0.0).count()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for (i, _, t) in self.entries() {
            s[i] += t;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for (_, j, t) in self.entries() {
            s[j] += t;
        }
        s
    }

    /// `Σ T_ij c_ij` recomputed against `c`.
    pub fn recompute_cost(&self, c: &CostMatrix) -> f64 {
        self.entries()
            .iter()
            .map(|&(i, j, t)| t * c.get(i, j))
            .sum()
    }

    /// `max(‖T1 − v‖₁, ‖Tᵀ1 − w‖₁)`.
    pub fn marginal_error(&self) -> f64 {
        let r: f64 = self
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let c: f64 = self
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .map(|(a, b)| (a - b).abs())
            .sum();
        r.max(c)
    }

    /// Replaces the stored marginals, e.g. to test certification.
    pub fn with_marginals(mut self, row_marginal: Vec<f64>, col_marginal: Vec<f64>) -> Self {
        assert_eq!(row_marginal.len(), self.rows);
        assert_eq!(col_marginal.len(), self.cols);
        self.row_marginal = row_marginal;
        self.col_marginal = col_marginal;
        self
    }

    /// Plan with the given entry mass changed.
    pub fn with_entry(mut self, i: usize, j: usize, mass: f64, c: &CostMatrix) -> Self {
        match &mut self.storage {
            PlanStorage::Dense(m) => m[i * self.cols + j] = mass,
            PlanStorage::Sparse(e) => {
                e.retain(|&(a, b, _)| !(a == i && b == j));
                e.push((i, j, mass));
            }
        }
        self.cost = self.recompute_cost(c);
        self
    }
}

/// Kantorovich dual variables `(φ, ψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPotentials {
    /// `Σ φ_i v_i + Σ ψ_j w_j`.
    pub fn objective(&self, v: &[f64], w: &[f64]) -> f64 {
        self.phi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            + self.psi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Largest violation `max(φ_i + ψ_j − c_ij, 0)`.
    pub fn max_violation(&self, c: &CostMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &p) in self.phi.iter().enumerate() {
            for (j, &q) in self.psi.iter().enumerate() {
                worst = worst.max(p + q - c.get(i, j));
            }
        }
        worst
    }
}

/// Frames `ρ(·, t_k)` of a displacement interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSequence {
    frames: Vec<GridDensity>,
    times: Vec<f64>,
}

impl InterpolationSequence {
    pub fn new(frames: Vec<GridDensity>, times: Vec<f64>) -> Result<Self> {
        if frames.len() != times.len() || frames.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "{} frames for {} times",
                frames.len(),
                times.len()
            )));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput(
                "interpolation times must start at 0 and end at 1".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "interpolation times must increase".into(),
            ));
        }
        if frames.iter().any(|f| !f.same_grid(&frames[0])) {
            return Err(Error::ShapeMismatch(
                "frames live on different grids".into(),
            ));
        }
        Ok(Self { frames, times })
    }

    pub fn frames(&self) -> &[GridDensity] {
        &self.frames
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_cost() {
        let a = DiscreteMeasure::on_line(&[0.0], &[1.0]).unwrap();
        let b = DiscreteMeasure::on_line(&[3.0], &[1.0]).unwrap();
        let c = build_cost_matrix(&a, &b, 2.0).unwrap();
        assert_eq!(c.entries(), &[9.0]);
    }

    #[test]
    fn planar_cost_matches_independent_norms() {
        let a = DiscreteMeasure::new(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[0.5, 0.5]).unwrap();
        let b = DiscreteMeasure::new(&[vec![0.0, 1.0]], &[1.0]).unwrap();
        let c = build_cost_matrix(&a, &b, 1.0).unwrap();
        // hypot is an independent distance routine
        assert_eq!(c.get(0, 0), 1.0);
        assert!((c.get(1, 0) - f64::hypot(1.0, 1.0)).abs() < 1e-15);
        assert!((c.get(1, 0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn self_cost_zero_diagonal_symmetric() {
        let m = DiscreteMeasure::new(
            &[
                vec![0.1, 0.4],
                vec![0.9, 0.2],
                vec![0.5, 0.5],
                vec![0.3, 0.8],
            ],
            &[1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        for p in [0.5, 1.0, 2.0, 3.0] {
            let c = build_cost_matrix(&m, &m, p).unwrap();
            for i in 0..4 {
                assert_eq!(c.get(i, i), 0.0);
                for j in 0..4 {
                    assert_eq!(c.get(i, j), c.get(j, i));
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = DiscreteMeasure::on_line(&[0.0], &[1.0]).unwrap();
        let b = DiscreteMeasure::new(&[vec![0.0, 1.0]], &[1.0]).unwrap();
        assert!(matches!(
            build_cost_matrix(&a, &b, 2.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let g = GridDensity::unit(vec![2, 2], vec![2.0; 4]).unwrap();
        // unit box of 4 cells: mass = 2 · 4 · ¼ = 2
        let n = g.normalize().unwrap();
        assert!(n.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let m = DiscreteMeasure::on_line(&[0.0, 1.0], &[2.0, 2.0])
            .unwrap()
            .normalize()
            .unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let m = DiscreteMeasure::on_line(&[0.0, 1.0], &[1.0, 3.0])
            .unwrap()
            .normalize()
            .unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(m.is_normalized());
    }

    #[test]
    fn zero_mass_is_rejected() {
        let g = GridDensity::unit(vec![2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(g.normalize(), Err(Error::ZeroMass)));
        let m = DiscreteMeasure::on_line(&[0.0], &[0.0]).unwrap();
        assert!(matches!(m.normalize(), Err(Error::ZeroMass)));
    }

    #[test]
    fn constructors_reject_nan_and_negative() {
        assert!(DiscreteMeasure::on_line(&[0.0, 1.0], &[1.0, -1.0]).is_err());
        assert!(DiscreteMeasure::on_line(&[f64::NAN], &[1.0]).is_err());
        assert!(GridDensity::unit(vec![2], vec![f64::NAN, 1.0]).is_err());
        assert!(GridDensity::unit(vec![1], vec![1.0]).is_err());
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn duplicate_atoms_are_merged() {
        let m = DiscreteMeasure::on_line(&[0.0, 1.0, 0.0, -0.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weights(), &[3.0, 1.0]);
    }

    #[test]
    fn grid_to_discrete_examples() {
        let g = GridDensity::unit(vec![2], vec![1.0, 1.0]).unwrap();
        let d = grid_to_discrete(&g).unwrap();
        assert_eq!(d.coords(), &[0.25, 0.75]);
        assert_eq!(d.weights(), &[0.5, 0.5]);

        let g = GridDensity::unit(vec![2], vec![2.0, 0.0]).unwrap();
        let d = grid_to_discrete(&g).unwrap();
        assert_eq!(d.coords(), &[0.25]);
        assert_eq!(d.weights(), &[1.0]);

        let g = GridDensity::unit(vec![2, 2], vec![1.0; 4]).unwrap();
        let d = grid_to_discrete(&g).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.weights().iter().all(|&w| w == 0.25));
        assert_eq!(d.point(0), &[0.25, 0.25]);
        assert_eq!(d.point(1), &[0.75, 0.25]);
        assert_eq!(d.point(3), &[0.75, 0.75]);
    }

    #[test]
    fn flat_mesh_areas() {
        let m = MeshDensity::flat_grid(3, 3, 1.0, 1.0).unwrap();
        let total: f64 = m.vertex_area().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(m.is_normalized());
        assert!(m.vertex_area().iter().all(|&a| a > 0.0));
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 0.0, 0.0],
            [6.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
        ];
        let t = vec![[0, 1, 2], [3, 4, 5]];
        assert!(matches!(
            MeshDensity::new(v, t, vec![1.0; 6]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn plan_cost_matches_recomputation() {
        let c = CostMatrix::new(2, 2, vec![0.0, 1.0, 2.0, 0.5]).unwrap();
        let t = TransportPlan::dense(
            vec![0.25, 0.25, 0.0, 0.5],
            vec![0.5, 0.5],
            vec![0.25, 0.75],
            &c,
        );
        assert!((t.cost() - t.recompute_cost(&c)).abs() < 1e-15);
        assert!(t.marginal_error() < 1e-15);
    }
}
