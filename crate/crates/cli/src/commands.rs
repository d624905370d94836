//! Subcommand bodies. Each returns the exit code on success.

use std::fs;
use std::path::{Path, PathBuf};

use otkit::dynamic::{solve_dynamic, DynamicOptions};
use otkit::heat::{convolutional_barycenter, HeatOperator};
use otkit::io;
use otkit::semidiscrete::{
    lloyd_stipple, solve_semidiscrete, Method as Newtonish, SemidiscreteOptions, StippleOptions,
};
use otkit::{
    build_cost_matrix, entropic_barycenter, sinkhorn, sinkhorn_log_domain, solve_lp, CostMatrix,
    DiscreteMeasure, GridDensity, Normalize, SinkhornOptions,
};
use serde_json::{json, Map, Value};

use crate::methods::{absolute_alpha, run, Input, Method, Outcome, Settings};
use crate::report::{emit, fmt12, num, nums, round12};
use crate::{Failure, SemiMethod};

fn status(converged: bool) -> u8 {
    if converged {
        0
    } else {
        2
    }
}

fn load_pair(a: &Path, b: &Path) -> Result<(Input, Input), Failure> {
    Ok((Input::load(a, "--a")?, Input::load(b, "--b")?))
}

fn check_p(p: f64) -> Result<(), Failure> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Failure::input(format!(
            "--p: exponent must be at least 1, got {p}"
        )));
    }
    Ok(())
}

fn write_file(path: &Path, data: impl AsRef<[u8]>, flag: &str) -> Result<(), Failure> {
    fs::write(path, data)
        .map_err(|e| Failure::input(format!("{flag}: cannot write '{}': {e}", path.display())))
}

fn io_failure(flag: &str, path: &Path, e: otkit::Error) -> Failure {
    Failure::input(format!("{flag}: cannot write '{}': {e}", path.display()))
}

pub fn dist(method: Method, a: &Path, b: &Path, s: &Settings, json: bool) -> Result<u8, Failure> {
    check_p(s.p)?;
    let (x, y) = load_pair(a, b)?;
    let out = run(method, &x, &y, s)?;
    let converged = out.converged;
    let mut obj = out.to_json(s.p);
    obj.insert("seconds".into(), num(out.seconds));
    emit(obj, json);
    Ok(status(converged))
}

pub fn plan(
    method: Method,
    a: &Path,
    b: &Path,
    out: Option<&Path>,
    s: &Settings,
    json: bool,
) -> Result<u8, Failure> {
    check_p(s.p)?;
    let (x, y) = load_pair(a, b)?;
    let (Some(xa), Some(ya)) = (x.atoms(), y.atoms()) else {
        return Err(Failure::input(
            "--a/--b: plans need discrete measures or grids",
        ));
    };
    if xa.dim() != ya.dim() {
        return Err(Failure::input("--b: measures live in different dimensions"));
    }
    let c = build_cost_matrix(&xa, &ya, s.p).map_err(|e| Failure::input(e.to_string()))?;
    let (plan, converged) = match method {
        Method::Lp => (
            solve_lp(xa.weights(), ya.weights(), &c)
                .map_err(|e| Failure::input(e.to_string()))?
                .0,
            true,
        ),
        Method::Sinkhorn => {
            let solve = if s.log_domain {
                sinkhorn_log_domain
            } else {
                sinkhorn
            };
            let r = solve(
                xa.weights(),
                ya.weights(),
                &c,
                absolute_alpha(s, c.max()),
                s.sinkhorn(),
            )
            .map_err(|e| Failure::numeric(e.to_string()))?;
            (r.plan, r.state.converged)
        }
        _ => {
            return Err(Failure::input(
                "--method: plans are available for lp and sinkhorn",
            ))
        }
    };
    match out {
        Some(path) => io::write_plan(path, &plan).map_err(|e| io_failure("--out", path, e))?,
        None => print!("{}", io::plan_to_csv(&plan)),
    }
    if out.is_some() {
        let mut obj = Map::new();
        obj.insert("method".into(), Value::String(method.name().into()));
        obj.insert("cost".into(), num(plan.cost()));
        obj.insert("entries".into(), Value::from(plan.entries().len()));
        obj.insert("converged".into(), Value::Bool(converged));
        emit(obj, json);
    }
    Ok(status(converged))
}

pub fn compare(
    a: &Path,
    b: &Path,
    only: Option<&[Method]>,
    s: &Settings,
    json: bool,
) -> Result<u8, Failure> {
    check_p(s.p)?;
    let (x, y) = load_pair(a, b)?;
    let candidates: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| only.map_or(true, |o| o.contains(m)))
        .filter(|m| m.applies(&x, &y, s.p))
        .collect();
    if candidates.len() < 2 {
        return Err(Failure::input(format!(
            "--a/--b: need at least two applicable methods, found {}",
            candidates.len()
        )));
    }
    let mut rows: Vec<Outcome> = Vec::new();
    let mut failures = Map::new();
    for m in candidates {
        match run(m, &x, &y, s) {
            Ok(o) => rows.push(o),
            Err(f) => {
                failures.insert(m.name().into(), Value::String(f.message));
            }
        }
    }
    let mut deviations = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        for q in &rows[i + 1..] {
            let scale = r.value.abs().max(q.value.abs());
            let dev = if scale > 0.0 {
                (r.value - q.value).abs() / scale
            } else {
                0.0
            };
            deviations.push(json!({"a": r.method.name(), "b": q.method.name(), "relative": num(dev), "absolute": num((r.value - q.value).abs())}));
        }
    }
    let all_converged = rows.iter().all(|r| r.converged) && failures.is_empty();
    if json {
        let mut obj = Map::new();
        obj.insert("p".into(), num(s.p));
        let table: Vec<Value> = rows
            .iter()
            .map(|r| {
                let mut m = r.to_json(s.p);
                m.remove("flux");
                m.insert("seconds".into(), num(r.seconds));
                Value::Object(m)
            })
            .collect();
        obj.insert("rows".into(), Value::Array(table));
        obj.insert("deviations".into(), Value::Array(deviations));
        obj.insert("failures".into(), Value::Object(failures));
        emit(obj, true);
    } else {
        println!(
            "{:<10} {:>20} {:>12} {:>10} {:>14} {:>9}",
            "method", "value", "seconds", "iters", "residual", "converged"
        );
        for r in &rows {
            println!(
                "{:<10} {:>20} {:>12} {:>10} {:>14} {:>9}",
                r.method.name(),
                fmt12(r.value),
                format!("{:.4}", r.seconds),
                r.iterations.map_or("-".into(), |i| i.to_string()),
                r.residual.map_or("-".into(), |x| format!("{:.3e}", x)),
                r.converged
            );
        }
        println!();
        for d in &deviations {
            println!(
                "{} vs {}: relative deviation {}",
                d["a"].as_str().unwrap(),
                d["b"].as_str().unwrap(),
                fmt12(d["relative"].as_f64().unwrap_or(f64::NAN))
            );
        }
        for (m, msg) in &failures {
            println!("{m}: failed: {}", msg.as_str().unwrap_or(""));
        }
    }
    Ok(status(all_converged))
}

fn grid_input(path: &Path, flag: &str) -> Result<GridDensity, Failure> {
    match Input::load(path, flag)? {
        Input::Grid(g) => Ok(g),
        _ => Err(Failure::input(format!(
            "{flag}: expected a grid density (.csv or .pgm)"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    a: &Path,
    b: &Path,
    out: &Path,
    frames: usize,
    r: f64,
    iters: Option<usize>,
    tol: Option<f64>,
    json: bool,
) -> Result<u8, Failure> {
    let x = grid_input(a, "--a")?;
    let y = grid_input(b, "--b")?;
    if !x.same_grid(&y) {
        return Err(Failure::input("--b: grid shape differs from --a"));
    }
    let d = DynamicOptions::default();
    let opts = DynamicOptions {
        nt: frames,
        r,
        max_iter: iters.unwrap_or(d.max_iter),
        tol: tol.unwrap_or(d.tol),
        ..d
    };
    let sol = solve_dynamic(&x, &y, opts).map_err(|e| match e {
        otkit::Error::InvalidInput(m) => Failure::input(format!("--frames/--r/--tol: {m}")),
        e => Failure::numeric(e.to_string()),
    })?;
    fs::create_dir_all(out)
        .map_err(|e| Failure::input(format!("--out: cannot create '{}': {e}", out.display())))?;
    let mut written = Vec::new();
    for (k, frame) in sol.interpolation.frames().iter().enumerate() {
        let path: PathBuf = out.join(format!("frame_{k:04}.pgm"));
        io::write_grid_pgm(&path, frame).map_err(|e| io_failure("--out", &path, e))?;
        written.push(Value::String(path.display().to_string()));
    }
    let mut report = Map::new();
    report.insert("w2sq".into(), num(sol.w2_squared));
    report.insert("dual_w2sq".into(), num(sol.dual_w2_squared));
    report.insert("iterations".into(), Value::from(sol.iterations));
    report.insert("converged".into(), Value::Bool(sol.converged));
    report.insert("continuity_residual".into(), num(sol.continuity_residual));
    report.insert("residuals".into(), nums(&sol.residuals));
    let text = serde_json::to_string_pretty(&crate::report::rounded(Value::Object(report.clone())))
        .expect("json");
    write_file(&out.join("report.json"), text, "--out")?;
    report.remove("residuals");
    report.insert("frames".into(), Value::Array(written));
    emit(report, json);
    Ok(status(sol.converged))
}

pub struct BarycenterArgs {
    pub alpha: f64,
    pub relative_alpha: bool,
    pub method: Method,
    pub iters: Option<usize>,
    pub tol: Option<f64>,
}

pub fn barycenter(
    inputs: &[PathBuf],
    weights: &[f64],
    out: &Path,
    o: BarycenterArgs,
    json: bool,
) -> Result<u8, Failure> {
    if inputs.len() != weights.len() {
        return Err(Failure::input(format!(
            "--weights: {} weights for {} inputs",
            weights.len(),
            inputs.len()
        )));
    }
    let loaded: Vec<Input> = inputs
        .iter()
        .map(|p| Input::load(p, "--inputs"))
        .collect::<Result<_, _>>()?;
    let d = SinkhornOptions::default();
    let opts = SinkhornOptions {
        max_iter: o.iters.unwrap_or(d.max_iter),
        tol: o.tol.unwrap_or(1e-7),
    };
    let numeric = |e: otkit::Error| match e {
        otkit::Error::Underflow(_) => Failure::numeric(e.to_string()),
        e => Failure::input(format!("--inputs/--weights: {e}")),
    };
    let (result, write): (
        otkit::sinkhorn::BarycenterResult,
        Box<dyn Fn(&[f64]) -> Result<(), Failure>>,
    ) = match &loaded[0] {
        Input::Grid(g0) => {
            let grids: Vec<&GridDensity> = loaded
                .iter()
                .map(|i| match i {
                    Input::Grid(g) if g.same_grid(g0) => Ok(g),
                    _ => Err(Failure::input("--inputs: all inputs must share one grid")),
                })
                .collect::<Result<_, _>>()?;
            let vol = g0.cell_volume();
            let r = match o.method {
                Method::Sinkhorn => {
                    let n = g0.len();
                    let centers: Vec<Vec<f64>> = (0..n).map(|i| g0.cell_center(i)).collect();
                    let c = CostMatrix::from_fn(n, n, |i, j| {
                        centers[i]
                            .iter()
                            .zip(&centers[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum()
                    })
                    .map_err(numeric)?;
                    let alpha = if o.relative_alpha {
                        o.alpha * c.max()
                    } else {
                        o.alpha
                    };
                    let hist: Vec<Vec<f64>> = grids.iter().map(|g| g.masses()).collect();
                    let mut r =
                        entropic_barycenter(&hist, weights, &c, alpha, opts).map_err(numeric)?;
                    r.histogram.iter_mut().for_each(|m| *m /= vol);
                    r
                }
                Method::Conv => {
                    let diam2: f64 = g0.extent().iter().map(|e| e * e).sum();
                    let alpha = if o.relative_alpha {
                        o.alpha * diam2
                    } else {
                        o.alpha
                    };
                    let op = HeatOperator::for_grid(g0, alpha).map_err(numeric)?;
                    let dens: Vec<Vec<f64>> = grids.iter().map(|g| g.values().to_vec()).collect();
                    convolutional_barycenter(&dens, weights, &op, opts).map_err(numeric)?
                }
                _ => return Err(Failure::input("--method: barycenters use sinkhorn or conv")),
            };
            let g0 = g0.clone();
            let out = out.to_path_buf();
            (
                r,
                Box::new(move |values: &[f64]| {
                    let g = g0
                        .with_values(values.to_vec())
                        .map_err(|e| Failure::numeric(e.to_string()))?;
                    let is_pgm = out
                        .extension()
                        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
                    let res = if is_pgm {
                        io::write_grid_pgm(&out, &g)
                    } else {
                        io::write_grid_csv(&out, &g)
                    };
                    res.map_err(|e| io_failure("--out", &out, e))
                }),
            )
        }
        Input::Discrete(m0) => {
            if o.method != Method::Sinkhorn {
                return Err(Failure::input(
                    "--method: histogram barycenters use sinkhorn",
                ));
            }
            let hist: Vec<Vec<f64>> = loaded
                .iter()
                .map(|i| match i {
                    Input::Discrete(m) if m.coords() == m0.coords() => Ok(m.weights().to_vec()),
                    _ => Err(Failure::input(
                        "--inputs: all histograms must share the support of the first",
                    )),
                })
                .collect::<Result<_, _>>()?;
            let c = build_cost_matrix(m0, m0, 2.0).map_err(numeric)?;
            let alpha = if o.relative_alpha {
                o.alpha * c.max()
            } else {
                o.alpha
            };
            let r = entropic_barycenter(&hist, weights, &c, alpha, opts).map_err(numeric)?;
            let m0 = m0.clone();
            let out = out.to_path_buf();
            (
                r,
                Box::new(move |values: &[f64]| {
                    let m =
                        DiscreteMeasure::from_flat(m0.dim(), m0.coords().to_vec(), values.to_vec())
                            .map_err(|e| Failure::numeric(e.to_string()))?;
                    io::write_measure(&out, &m).map_err(|e| io_failure("--out", &out, e))
                }),
            )
        }
        Input::Mesh(_) => {
            return Err(Failure::input(
                "--inputs: mesh barycenters are not supported by the CLI",
            ))
        }
    };
    write(&result.histogram)?;
    let mut obj = Map::new();
    obj.insert("output".into(), Value::String(out.display().to_string()));
    obj.insert("iterations".into(), Value::from(result.iterations));
    obj.insert("converged".into(), Value::Bool(result.converged));
    obj.insert("marginal_error".into(), num(result.marginal_error));
    emit(obj, json);
    Ok(status(result.converged))
}

fn density_2d(path: &Path) -> Result<GridDensity, Failure> {
    let g = grid_input(path, "--density")?;
    if g.dim() != 2 {
        return Err(Failure::input("--density: expected a 2D grid"));
    }
    Ok(g)
}

pub fn semidiscrete(
    sites: &Path,
    density: &Path,
    solver: SemiMethod,
    tol: f64,
    iters: usize,
    out: Option<&Path>,
    json: bool,
) -> Result<u8, Failure> {
    let rho = density_2d(density)?;
    let m = io::read_measure(sites)
        .map_err(|e| Failure::input(format!("--sites: cannot load '{}': {e}", sites.display())))?;
    if m.dim() != 2 {
        return Err(Failure::input("--sites: sites must be 2D points"));
    }
    let m = m
        .normalize()
        .map_err(|e| Failure::input(format!("--sites: {e}")))?;
    let pts: Vec<[f64; 2]> = m.points().map(|p| [p[0], p[1]]).collect();
    let method = match solver {
        SemiMethod::Newton => Newtonish::Newton,
        SemiMethod::Ascent => Newtonish::Ascent,
    };
    let sol = solve_semidiscrete(
        &pts,
        m.weights(),
        &rho,
        SemidiscreteOptions {
            method,
            tol,
            max_iter: iters,
        },
    )
    .map_err(|e| Failure::input(format!("--sites/--density: {e}")))?;
    let features: Vec<Value> = sol
        .diagram
        .cells()
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let mut ring: Vec<Value> = cell.vertices.iter().map(|v| json!([round12(v[0]), round12(v[1])])).collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            json!({
                "type": "Feature",
                "properties": {"site": i, "x": pts[i][0], "y": pts[i][1], "phi": sol.phi[i], "mass": sol.masses[i]},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
        })
        .collect();
    let cells = json!({"type": "FeatureCollection", "features": features});
    if let Some(path) = out {
        let text =
            serde_json::to_string_pretty(&crate::report::rounded(cells.clone())).expect("json");
        write_file(path, text, "--out")?;
    }
    let mut obj = Map::new();
    obj.insert("w2sq".into(), num(sol.w2_squared));
    obj.insert("iterations".into(), Value::from(sol.iterations));
    obj.insert("converged".into(), Value::Bool(sol.converged));
    obj.insert("gradient_norm".into(), num(sol.gradient_norm));
    obj.insert("fell_back".into(), Value::Bool(sol.fell_back));
    obj.insert("phi".into(), nums(&sol.phi));
    obj.insert("masses".into(), nums(&sol.masses));
    if json {
        obj.insert("cells".into(), cells);
    }
    emit(obj, json);
    Ok(status(sol.converged))
}

fn svg_scatter(points: &DiscreteMeasure, extent: &[f64]) -> String {
    let (w, h) = (extent[0], extent[1]);
    let scale = 512.0 / w.max(h);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w * scale,
        h * scale
    );
    for p in points.points() {
        s += &format!(
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"2\" fill=\"black\"/>\n",
            p[0] * scale,
            (h - p[1]) * scale
        );
    }
    s + "</svg>\n"
}

#[allow(clippy::too_many_arguments)]
pub fn stipple(
    density: &Path,
    n: usize,
    seed: u64,
    iters: usize,
    out: Option<&Path>,
    svg: Option<&Path>,
    json: bool,
) -> Result<u8, Failure> {
    let rho = density_2d(density)?;
    if n == 0 {
        return Err(Failure::input("--n: need at least one point"));
    }
    let opts = StippleOptions {
        outer_iters: iters,
        seed,
        ..Default::default()
    };
    let r = lloyd_stipple(&rho, n, opts).map_err(|e| Failure::numeric(e.to_string()))?;
    let text = io::measure_to_json(&r.points);
    match out {
        Some(path) => write_file(path, &text, "--out")?,
        None if !json => println!("{text}"),
        None => {}
    }
    if let Some(path) = svg {
        write_file(path, svg_scatter(&r.points, rho.extent()), "--svg")?;
    }
    let mut obj = Map::new();
    obj.insert("points".into(), Value::from(n));
    obj.insert("iterations".into(), Value::from(r.iterations));
    obj.insert("converged".into(), Value::Bool(r.converged));
    obj.insert(
        "w2sq".into(),
        num(r.w2_history.last().copied().unwrap_or(f64::NAN)),
    );
    obj.insert("w2sq_history".into(), nums(&r.w2_history));
    if json {
        let coords: Vec<Value> = r.points.points().map(|p| json!([p[0], p[1]])).collect();
        obj.insert("coordinates".into(), Value::Array(coords));
    }
    if out.is_none() && !json {
        // stdout already carries the points
        eprint!("{}", crate::report::plain(&obj));
    } else {
        emit(obj, json);
    }
    // a finished Lloyd run is a valid stippling even if sites still move
    Ok(0)
}
