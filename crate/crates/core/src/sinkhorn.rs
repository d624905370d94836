//! Entropically regularized transport.
//!
//! Minimizing `⟨T, C⟩ + α⟨T, log T⟩` under the marginal constraints gives a
//! plan of the form `T = diag[p] K_α diag[q]` with `K_α = exp(−C/α)`. The
//! Sinkhorn iteration alternates the two marginal projections
//!
//! ```text
//! p ← v ⊘ (K_α q)
//! q ← w ⊘ (K_αᵀ p)
//! ```
//!
//! [`sinkhorn`] runs it on the scalings directly and reports underflow of
//! `K_α q`. [`sinkhorn_log_domain`] runs the same fixed point on the potentials
//! `f = α log p`, `g = α log q` with log-sum-exp reductions. Zero-mass bins are
//! removed before iterating and come back as zero rows or columns of `T`.

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, TransportPlan};

/// Stopping rule shared by the Sinkhorn-type iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub max_iter: usize,
    /// Bound on `max(‖T1 − v‖₁, ‖Tᵀ1 − w‖₁)`.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            tol: 1e-9,
        }
    }
}

/// Converged (or last) scalings of a Sinkhorn run.
///
/// Scalings are stored as natural logarithms over the full index range;
/// removed zero-mass bins carry `−∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub log_p: Vec<f64>,
    pub log_q: Vec<f64>,
    pub alpha: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
    /// Marginal error after every full sweep.
    pub residuals: Vec<f64>,
}

impl SinkhornState {
    pub fn p(&self) -> Vec<f64> {
        self.log_p.iter().map(|x| x.exp()).collect()
    }

    pub fn q(&self) -> Vec<f64> {
        self.log_q.iter().map(|x| x.exp()).collect()
    }

    /// `diag[p] K_α diag[q]` rebuilt from the stored scalings.
    pub fn reconstruct_plan(&self, c: &CostMatrix) -> Vec<f64> {
        let mut t = Vec::with_capacity(c.rows() * c.cols());
        for i in 0..c.rows() {
            for j in 0..c.cols() {
                let e = self.log_p[i] + self.log_q[j] - c.get(i, j) / self.alpha;
                t.push(if e == f64::NEG_INFINITY { 0.0 } else { e.exp() });
            }
        }
        t
    }
}

/// Output of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub state: SinkhornState,
    pub plan: TransportPlan,
    /// `⟨T, C⟩`.
    pub transport_cost: f64,
    /// `⟨T, C⟩ + α⟨T, log T⟩`.
    pub regularized_cost: f64,
}

impl SinkhornResult {
    /// The regularized objective written as `α KL(T | K_α) = α Σ T_ij log(T_ij / K_ij)`.
    pub fn kl_objective(&self, c: &CostMatrix) -> f64 {
        let alpha = self.state.alpha;
        self.plan
            .entries()
            .iter()
            .filter(|e| e.2 > 0.0)
            .map(|&(i, j, t)| t * (t.ln() - (-c.get(i, j) / alpha)))
            .sum::<f64>()
            * alpha
    }

    /// Dual form `α(⟨v, log p⟩ + ⟨w, log q⟩)`, which equals the regularized
    /// objective at the fixed point.
    pub fn dual_objective(&self) -> f64 {
        let a = self.state.alpha;
        let pv: f64 = self
            .plan
            .row_marginal()
            .iter()
            .zip(&self.state.log_p)
            .filter(|(v, _)| **v > 0.0)
            .map(|(v, lp)| v * lp)
            .sum();
        let qw: f64 = self
            .plan
            .col_marginal()
            .iter()
            .zip(&self.state.log_q)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, lq)| w * lq)
            .sum();
        a * (pv + qw)
    }
}

struct Restricted {
    rows: Vec<usize>,
    cols: Vec<usize>,
    v: Vec<f64>,
    w: Vec<f64>,
    c: CostMatrix,
}

fn restrict(v: &[f64], w: &[f64], c: &CostMatrix, alpha: f64) -> Result<Restricted> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if c.rows() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: c.rows(),
            got: v.len(),
        });
    }
    if c.cols() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: c.cols(),
            got: w.len(),
        });
    }
    crate::error::check_finite_nonneg(v, "v")?;
    crate::error::check_finite_nonneg(w, "w")?;
    let (sv, sw): (f64, f64) = (v.iter().sum(), w.iter().sum());
    if sv <= 0.0 || sw <= 0.0 {
        return Err(Error::ZeroMass);
    }
    if (sv - sw).abs() > crate::lp::MARGINAL_SLACK {
        return Err(Error::InfeasibleMarginals { row: sv, col: sw });
    }
    let rows: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    let cols: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    let sub = c.submatrix(&rows, &cols);
    for i in 0..sub.rows() {
        if let Some(j) = sub.row(i).iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidCost(rows[i], cols[j]));
        }
    }
    Ok(Restricted {
        v: rows.iter().map(|&i| v[i]).collect(),
        w: cols.iter().map(|&j| w[j]).collect(),
        rows,
        cols,
        c: sub,
    })
}

fn finish(
    r: &Restricted,
    v: &[f64],
    w: &[f64],
    c: &CostMatrix,
    alpha: f64,
    log_p_sub: &[f64],
    log_q_sub: &[f64],
    iterations: usize,
    residuals: Vec<f64>,
    tol: f64,
) -> SinkhornResult {
    let mut log_p = vec![f64::NEG_INFINITY; v.len()];
    let mut log_q = vec![f64::NEG_INFINITY; w.len()];
    for (k, &i) in r.rows.iter().enumerate() {
        log_p[i] = log_p_sub[k];
    }
    for (k, &j) in r.cols.iter().enumerate() {
        log_q[j] = log_q_sub[k];
    }
    let marginal_error = residuals.last().copied().unwrap_or(f64::INFINITY);
    let state = SinkhornState {
        log_p,
        log_q,
        alpha,
        iterations,
        marginal_error,
        converged: marginal_error <= tol,
        residuals,
    };
    let masses = state.reconstruct_plan(c);
    let regularized_cost = masses
        .iter()
        .zip(c.entries())
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, cij)| t * cij + alpha * t * t.ln())
        .sum();
    let plan = TransportPlan::dense(masses, v.to_vec(), w.to_vec(), c);
    SinkhornResult {
        transport_cost: plan.cost(),
        regularized_cost,
        plan,
        state,
    }
}

/// Sinkhorn scaling iteration on `p` and `q`.
///
/// Fails with [`Error::Underflow`] when `K_α q` (or `K_αᵀ p`) leaves the
/// normal floating-point range; [`sinkhorn_log_domain`] handles that regime.
pub fn sinkhorn(
    v: &[f64],
    w: &[f64],
    c: &CostMatrix,
    alpha: f64,
    opts: SinkhornOptions,
) -> Result<SinkhornResult> {
    let r = restrict(v, w, c, alpha)?;
    let (n1, n2) = (r.v.len(), r.w.len());
    let kernel: Vec<f64> = r.c.entries().iter().map(|x| (-x / alpha).exp()).collect();

    let mat_vec = |x: &[f64], out: &mut [f64]| {
        for i in 0..n1 {
            let row = &kernel[i * n2..(i + 1) * n2];
            out[i] = row.iter().zip(x).map(|(k, x)| k * x).sum();
        }
    };
    let mat_t_vec = |y: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n1 {
            let row = &kernel[i * n2..(i + 1) * n2];
            let yi = y[i];
            for (o, k) in out.iter_mut().zip(row) {
                *o += k * yi;
            }
        }
    };
    let check = |x: &[f64], ids: &[usize]| -> Result<()> {
        match x
            .iter()
            .position(|&s| !(s >= f64::MIN_POSITIVE && s.is_finite()))
        {
            Some(k) => Err(Error::Underflow(ids[k])),
            None => Ok(()),
        }
    };

    let mut p = vec![1.0; n1];
    let mut q = vec![1.0; n2];
    let mut kq = vec![0.0; n1];
    let mut ktp = vec![0.0; n2];
    let mut residuals = Vec::new();
    mat_vec(&q, &mut kq);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        check(&kq, &r.rows)?;
        for i in 0..n1 {
            p[i] = r.v[i] / kq[i];
        }
        mat_t_vec(&p, &mut ktp);
        check(&ktp, &r.cols)?;
        for j in 0..n2 {
            q[j] = r.w[j] / ktp[j];
        }
        let col_err: f64 = (0..n2).map(|j| (q[j] * ktp[j] - r.w[j]).abs()).sum();
        mat_vec(&q, &mut kq);
        let row_err: f64 = (0..n1).map(|i| (p[i] * kq[i] - r.v[i]).abs()).sum();
        let err = row_err.max(col_err);
        residuals.push(err);
        if !err.is_finite() {
            return Err(Error::Underflow(r.rows[0]));
        }
        if err <= opts.tol {
            break;
        }
    }
    let log_p: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|x| x.ln()).collect();
    Ok(finish(
        &r, v, w, c, alpha, &log_p, &log_q, iterations, residuals, opts.tol,
    ))
}

/// `log Σ exp(x_k)` over an iterator, `−∞` for an empty or all-`−∞` input.
pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Same fixed point as [`sinkhorn`], iterated on the potentials
/// `f = α log p`, `g = α log q`.
pub fn sinkhorn_log_domain(
    v: &[f64],
    w: &[f64],
    c: &CostMatrix,
    alpha: f64,
    opts: SinkhornOptions,
) -> Result<SinkhornResult> {
    let r = restrict(v, w, c, alpha)?;
    let (n1, n2) = (r.v.len(), r.w.len());
    // scaled cost −c/α and its transpose for contiguous reductions
    let neg: Vec<f64> = r.c.entries().iter().map(|x| -x / alpha).collect();
    let mut neg_t = vec![0.0; n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            neg_t[j * n1 + i] = neg[i * n2 + j];
        }
    }
    let log_v: Vec<f64> = r.v.iter().map(|x| x.ln()).collect();
    let log_w: Vec<f64> = r.w.iter().map(|x| x.ln()).collect();

    // log p, log q directly (f/α, g/α)
    let mut lp = vec![0.0; n1];
    let mut lq = vec![0.0; n2];
    let mut residuals = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n1 {
            let row = &neg[i * n2..(i + 1) * n2];
            lp[i] = log_v[i] - log_sum_exp(row.iter().zip(&lq).map(|(k, q)| k + q));
        }
        let mut col_err = 0.0;
        for j in 0..n2 {
            let col = &neg_t[j * n1..(j + 1) * n1];
            let lse = log_sum_exp(col.iter().zip(&lp).map(|(k, p)| k + p));
            lq[j] = log_w[j] - lse;
            col_err += ((lq[j] + lse).exp() - r.w[j]).abs();
        }
        let mut row_err = 0.0;
        for i in 0..n1 {
            let row = &neg[i * n2..(i + 1) * n2];
            let s: f64 = row
                .iter()
                .zip(&lq)
                .map(|(k, q)| (k + q + lp[i]).exp())
                .sum();
            row_err += (s - r.v[i]).abs();
        }
        let err = f64::max(row_err, col_err);
        residuals.push(err);
        if err <= opts.tol {
            break;
        }
    }
    Ok(finish(
        &r, v, w, c, alpha, &lp, &lq, iterations, residuals, opts.tol,
    ))
}

/// Output of a barycenter computation.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterResult {
    pub histogram: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `‖v_k ⊙ K_αᵀ u_k − μ_k‖₁` at exit over inputs with `λ_k > 0`.
    pub marginal_error: f64,
}

pub(crate) fn validate_barycenter_inputs(measures: &[Vec<f64>], lambda: &[f64]) -> Result<usize> {
    if measures.is_empty() {
        return Err(Error::InvalidInput("no input measures".into()));
    }
    if measures.len() != lambda.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} measures for {} weights",
            measures.len(),
            lambda.len()
        )));
    }
    crate::error::check_finite_nonneg(lambda, "lambda")?;
    if (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(
            "barycenter weights must sum to one".into(),
        ));
    }
    let k = measures[0].len();
    for m in measures {
        if m.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: m.len(),
            });
        }
        crate::error::check_finite_nonneg(m, "measure")?;
        if m.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ZeroMass);
        }
    }
    Ok(k)
}

/// Entropic Wasserstein barycenter `argmin_b Σ_k λ_k OT_α(b, μ_k)` by iterated
/// Bregman projections: one scaling pair `(u_k, v_k)` per input and a
/// weighted geometric mean coupling step
///
/// ```text
/// v_k ← μ_k ⊘ K_αᵀ u_k
/// b   ← Π_k (K_α v_k)^{λ_k}
/// u_k ← b ⊘ K_α v_k
/// ```
///
/// carried out on logarithms so that widely separated inputs do not underflow.
pub fn entropic_barycenter(
    measures: &[Vec<f64>],
    lambda: &[f64],
    c: &CostMatrix,
    alpha: f64,
    opts: SinkhornOptions,
) -> Result<BarycenterResult> {
    let k = validate_barycenter_inputs(measures, lambda)?;
    if c.rows() != k || c.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: c.rows(),
        });
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let log_k: Vec<f64> = c.entries().iter().map(|x| -x / alpha).collect();
    let mut log_k_t = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            log_k_t[j * k + i] = log_k[i * k + j];
        }
    }
    let log_mu: Vec<Vec<f64>> = measures
        .iter()
        .map(|m| {
            let s: f64 = m.iter().sum();
            m.iter().map(|x| (x / s).ln()).collect()
        })
        .collect();
    let n = measures.len();
    let mut log_u = vec![vec![0.0; k]; n];
    let mut log_v = vec![vec![0.0; k]; n];
    let mut log_kv = vec![vec![0.0; k]; n];
    let mut log_b = vec![0.0; k];

    let apply = |mat: &[f64], x: &[f64], out: &mut [f64]| {
        for i in 0..k {
            let row = &mat[i * k..(i + 1) * k];
            out[i] = log_sum_exp(row.iter().zip(x).map(|(a, b)| a + b));
        }
    };

    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let mut ktu = vec![0.0; k];
    while iterations < opts.max_iter {
        iterations += 1;
        for s in 0..n {
            apply(&log_k_t, &log_u[s], &mut ktu);
            for j in 0..k {
                log_v[s][j] = log_mu[s][j] - ktu[j];
            }
            apply(&log_k, &log_v[s], &mut log_kv[s]);
        }
        for i in 0..k {
            log_b[i] = (0..n)
                .filter(|&s| lambda[s] > 0.0)
                .map(|s| lambda[s] * log_kv[s][i])
                .sum();
        }
        for s in 0..n {
            for i in 0..k {
                log_u[s][i] = log_b[i] - log_kv[s][i];
            }
        }
        err = 0.0;
        // a zero-weight input does not move b, so its coupling is irrelevant
        for s in (0..n).filter(|&s| lambda[s] > 0.0) {
            apply(&log_k_t, &log_u[s], &mut ktu);
            let e: f64 = (0..k)
                .map(|j| {
                    let lhs = (log_v[s][j] + ktu[j]).exp();
                    let rhs = log_mu[s][j].exp();
                    if lhs.is_nan() {
                        0.0
                    } else {
                        (lhs - rhs).abs()
                    }
                })
                .sum();
            err = err.max(e);
        }
        if err <= opts.tol {
            break;
        }
    }
    let b: Vec<f64> = log_b.iter().map(|x| x.exp()).collect();
    let total: f64 = b.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Underflow(0));
    }
    Ok(BarycenterResult {
        histogram: b.iter().map(|x| x / total).collect(),
        iterations,
        converged: err <= opts.tol,
        marginal_error: err,
    })
}
