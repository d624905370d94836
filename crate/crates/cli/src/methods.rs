//! Input loading and the per-method solvers behind `dist` and `compare`.

use std::path::Path;
use std::time::Instant;

use otkit::dynamic::{beckmann_w1, solve_dynamic, DynamicOptions};
use otkit::heat::{convolutional_sinkhorn, HeatOperator};
use otkit::io;
use otkit::lp::solve_lp_detailed;
use otkit::measures::grid_to_discrete;
use otkit::{
    build_cost_matrix, sinkhorn, sinkhorn_log_domain, w1_cdf, wp_quantile, DiscreteMeasure, Error,
    GridDensity, MeshDensity, Normalize, SinkhornOptions,
};
use serde_json::{Map, Value};

use crate::report::{num, nums};
use crate::Failure;

/// A measure read from disk; the kind follows the file extension.
#[derive(Debug, Clone)]
pub enum Input {
    Discrete(DiscreteMeasure),
    Grid(GridDensity),
    Mesh(MeshDensity),
}

impl Input {
    pub fn load(path: &Path, flag: &str) -> Result<Self, Failure> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let loaded = match ext.as_str() {
            "json" => io::read_measure(path).map(Input::Discrete),
            "pgm" | "csv" => io::read_grid(path).map(Input::Grid),
            "off" => io::read_mesh(path).map(Input::Mesh),
            _ => {
                return Err(Failure::input(format!(
                    "{flag}: unknown file type '{}'",
                    path.display()
                )))
            }
        };
        let input = loaded.map_err(|e| {
            Failure::input(format!("{flag}: cannot load '{}': {e}", path.display()))
        })?;
        input
            .normalized()
            .map_err(|e| Failure::input(format!("{flag}: {e}")))
    }

    fn normalized(self) -> otkit::Result<Self> {
        Ok(match self {
            Input::Discrete(d) => Input::Discrete(d.normalize()?),
            Input::Grid(g) => Input::Grid(g.normalize()?),
            Input::Mesh(m) => Input::Mesh(m.normalize()?),
        })
    }

    /// Atoms for the discrete solvers: grid cells become their centers.
    pub fn atoms(&self) -> Option<DiscreteMeasure> {
        match self {
            Input::Discrete(d) => Some(d.clone()),
            Input::Grid(g) => grid_to_discrete(g).ok(),
            Input::Mesh(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Input::Discrete(d) => d.dim(),
            Input::Grid(g) => g.dim(),
            Input::Mesh(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Lp,
    Cdf1d,
    Sinkhorn,
    Conv,
    Dynamic,
    Beckmann,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Cdf1d,
        Method::Lp,
        Method::Sinkhorn,
        Method::Conv,
        Method::Dynamic,
        Method::Beckmann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lp => "lp",
            Method::Cdf1d => "cdf1d",
            Method::Sinkhorn => "sinkhorn",
            Method::Conv => "conv",
            Method::Dynamic => "dynamic",
            Method::Beckmann => "beckmann",
        }
    }

    /// Whether the method can compare `a` and `b` with exponent `p`.
    pub fn applies(self, a: &Input, b: &Input, p: f64) -> bool {
        use Input::*;
        let same_grid = matches!((a, b), (Grid(x), Grid(y)) if x.same_grid(y));
        let same_mesh = matches!((a, b), (Mesh(x), Mesh(y)) if x.vertices() == y.vertices() && x.triangles() == y.triangles());
        let atoms = a.atoms().is_some() && b.atoms().is_some() && a.dim() == b.dim();
        match self {
            Method::Lp | Method::Sinkhorn => atoms,
            Method::Cdf1d => atoms && a.dim() == 1,
            Method::Conv => p == 2.0 && (same_grid || same_mesh),
            Method::Dynamic => p == 2.0 && same_grid,
            Method::Beckmann => p == 1.0 && same_grid,
        }
    }
}

/// Solver settings shared by `dist`, `plan` and `compare`.
#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub p: f64,
    pub alpha: f64,
    pub relative_alpha: bool,
    pub log_domain: bool,
    pub iters: Option<usize>,
    pub tol: Option<f64>,
    pub nt: usize,
    pub r: f64,
}

impl Settings {
    pub fn sinkhorn(&self) -> SinkhornOptions {
        let d = SinkhornOptions::default();
        SinkhornOptions {
            max_iter: self.iters.unwrap_or(d.max_iter),
            tol: self.tol.unwrap_or(d.tol),
        }
    }

    pub fn dynamic(&self) -> DynamicOptions {
        let d = DynamicOptions::default();
        DynamicOptions {
            nt: self.nt,
            r: self.r,
            max_iter: self.iters.unwrap_or(d.max_iter),
            tol: self.tol.unwrap_or(d.tol),
            ..d
        }
    }
}

/// One solver run. `value` is the optimal cost `W_p^p`.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub method: Method,
    pub value: f64,
    pub seconds: f64,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub converged: bool,
    pub extra: Map<String, Value>,
}

impl Outcome {
    fn new(method: Method, value: f64) -> Self {
        Self {
            method,
            value,
            seconds: 0.0,
            iterations: None,
            residual: None,
            converged: true,
            extra: Map::new(),
        }
    }

    pub fn to_json(&self, p: f64) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("method".into(), Value::String(self.method.name().into()));
        m.insert("value".into(), num(self.value));
        m.insert("distance".into(), num(self.value.max(0.0).powf(1.0 / p)));
        m.insert("converged".into(), Value::Bool(self.converged));
        if let Some(i) = self.iterations {
            m.insert("iterations".into(), Value::from(i));
        }
        if let Some(r) = self.residual {
            m.insert("residual".into(), num(r));
        }
        m.extend(self.extra.clone());
        m
    }
}

fn solver_failure(method: Method, e: Error) -> Failure {
    match e {
        Error::Underflow(_) => Failure::numeric(format!("{}: {e}", method.name())),
        _ => Failure::input(format!("{}: {e}", method.name())),
    }
}

fn both_atoms(a: &Input, b: &Input) -> (DiscreteMeasure, DiscreteMeasure) {
    (
        a.atoms().expect("checked by applies"),
        b.atoms().expect("checked by applies"),
    )
}

/// Absolute regularization for a cost matrix with maximum `max_c`.
pub fn absolute_alpha(s: &Settings, max_c: f64) -> f64 {
    if s.relative_alpha {
        s.alpha * max_c
    } else {
        s.alpha
    }
}

pub fn run(method: Method, a: &Input, b: &Input, s: &Settings) -> Result<Outcome, Failure> {
    if !method.applies(a, b, s.p) {
        return Err(Failure::input(format!(
            "--method: {} does not apply to these inputs with p = {}",
            method.name(),
            s.p
        )));
    }
    let start = Instant::now();
    let fail = |e| solver_failure(method, e);
    let mut out = match method {
        Method::Cdf1d => {
            let (x, y) = both_atoms(a, b);
            let value = if s.p == 1.0 {
                w1_cdf(&x, &y)
            } else {
                wp_quantile(&x, &y, s.p).map(|w| w.powf(s.p))
            };
            Outcome::new(method, value.map_err(fail)?)
        }
        Method::Lp => {
            let (x, y) = both_atoms(a, b);
            let c = build_cost_matrix(&x, &y, s.p).map_err(fail)?;
            let sol = solve_lp_detailed(x.weights(), y.weights(), &c).map_err(fail)?;
            let mut o = Outcome::new(method, sol.plan.cost());
            o.iterations = Some(sol.pivots);
            o.extra.insert("duality_gap".into(), num(sol.duality_gap()));
            o
        }
        Method::Sinkhorn => {
            let (x, y) = both_atoms(a, b);
            let c = build_cost_matrix(&x, &y, s.p).map_err(fail)?;
            let alpha = absolute_alpha(s, c.max());
            let solve = if s.log_domain {
                sinkhorn_log_domain
            } else {
                sinkhorn
            };
            let r = solve(x.weights(), y.weights(), &c, alpha, s.sinkhorn()).map_err(fail)?;
            let mut o = Outcome::new(method, r.transport_cost);
            o.iterations = Some(r.state.iterations);
            o.residual = Some(r.state.marginal_error);
            o.converged = r.state.converged;
            o.extra.insert("alpha".into(), num(alpha));
            o.extra
                .insert("regularized_cost".into(), num(r.regularized_cost));
            o
        }
        Method::Conv => {
            let (op, mu0, mu1, diam2) = match (a, b) {
                (Input::Grid(x), Input::Grid(y)) => {
                    let diam2: f64 = x.extent().iter().map(|e| e * e).sum();
                    let alpha = if s.relative_alpha {
                        s.alpha * diam2
                    } else {
                        s.alpha
                    };
                    (
                        HeatOperator::for_grid(x, alpha),
                        x.values().to_vec(),
                        y.values().to_vec(),
                        diam2,
                    )
                }
                (Input::Mesh(x), Input::Mesh(y)) => {
                    let diam2 = mesh_diameter_sq(x);
                    let alpha = if s.relative_alpha {
                        s.alpha * diam2
                    } else {
                        s.alpha
                    };
                    (
                        HeatOperator::mesh(x, alpha),
                        x.density().to_vec(),
                        y.density().to_vec(),
                        diam2,
                    )
                }
                _ => unreachable!("checked by applies"),
            };
            let op = op.map_err(fail)?;
            let r = convolutional_sinkhorn(&mu0, &mu1, &op, s.sinkhorn()).map_err(fail)?;
            let mut o = Outcome::new(method, r.transport_cost.unwrap_or(r.regularized_cost));
            o.iterations = Some(r.iterations);
            o.residual = Some(r.marginal_error);
            o.converged = r.converged;
            o.extra.insert("alpha".into(), num(op.alpha()));
            o.extra.insert("diameter_sq".into(), num(diam2));
            o.extra
                .insert("regularized_cost".into(), num(r.regularized_cost));
            o
        }
        Method::Dynamic => {
            let (Input::Grid(x), Input::Grid(y)) = (a, b) else {
                unreachable!("checked by applies")
            };
            let sol = solve_dynamic(x, y, s.dynamic()).map_err(fail)?;
            let mut o = Outcome::new(method, sol.w2_squared);
            o.iterations = Some(sol.iterations);
            o.residual = sol.residuals.last().copied();
            o.converged = sol.converged;
            o.extra
                .insert("dual_value".into(), num(sol.dual_w2_squared));
            o.extra
                .insert("continuity_residual".into(), num(sol.continuity_residual));
            o
        }
        Method::Beckmann => {
            let (Input::Grid(x), Input::Grid(y)) = (a, b) else {
                unreachable!("checked by applies")
            };
            let sol = beckmann_w1(x, y, s.dynamic()).map_err(fail)?;
            let mut o = Outcome::new(method, sol.w1);
            o.iterations = Some(sol.iterations);
            o.residual = sol.residuals.last().copied();
            o.converged = sol.converged;
            o.extra.insert("dual_value".into(), num(sol.dual_w1));
            o.extra.insert("flux".into(), nums(&sol.flux));
            o
        }
    };
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

fn mesh_diameter_sq(m: &MeshDensity) -> f64 {
    let v = m.vertices();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in v {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum()
}
