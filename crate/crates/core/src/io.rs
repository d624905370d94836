//! File formats.
//!
//! - Discrete measures: JSON `{"points": [[x, ...], ...], "weights": [...]}`.
//! - Grid densities: CSV whose first line is the header `rows,cols,extent`,
//!   followed by one line `R,C,E` (or `R,C,Ex,Ey`) and then `R` lines of `C`
//!   values. Row `r` holds the cells with `y` index `r`; a single row is a 1D
//!   grid. Grid densities also read and write binary PGM (`P5`), top row
//!   first, on the unit box, rescaled to unit mass on load.
//! - Meshes: OFF files with triangular faces plus a sidecar CSV holding one
//!   vertex density per line.
//! - Plans: CSV triples `i,j,mass` after the header `i,j,mass`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridDensity, MeshDensity, Normalize, TransportPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeasureFile {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

pub fn measure_to_json(m: &DiscreteMeasure) -> String {
    let file = MeasureFile {
        points: m.points().map(<[f64]>::to_vec).collect(),
        weights: m.weights().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("measures serialize")
}

pub fn measure_from_json(text: &str) -> Result<DiscreteMeasure> {
    let file: MeasureFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    DiscreteMeasure::new(&file.points, &file.weights)
}

pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    measure_from_json(&fs::read_to_string(path)?)
}

pub fn write_measure(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    Ok(fs::write(path, measure_to_json(m))?)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} '{}'", s.trim())))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} '{}'", s.trim())))
}

pub fn grid_from_csv(text: &str) -> Result<GridDensity> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty grid file".into()))?;
    if header.replace(' ', "") != "rows,cols,extent" {
        return Err(Error::Parse(format!(
            "expected header 'rows,cols,extent', got '{header}'"
        )));
    }
    let dims: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("missing grid size line".into()))?
        .split(',')
        .collect();
    if dims.len() != 3 && dims.len() != 4 {
        return Err(Error::Parse("grid size line needs rows,cols,extent".into()));
    }
    let rows = parse_usize(dims[0], "row count")?;
    let cols = parse_usize(dims[1], "column count")?;
    let ex = parse_f64(dims[2], "extent")?;
    let ey = if dims.len() == 4 {
        parse_f64(dims[3], "extent")?
    } else {
        ex
    };
    let mut values = Vec::with_capacity(rows * cols);
    for (r, line) in lines.enumerate() {
        if r >= rows {
            return Err(Error::Parse(format!("more than {rows} data rows")));
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| parse_f64(s, "value"))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(Error::Parse(format!(
                "row {r} has {} values, expected {cols}",
                row.len()
            )));
        }
        values.extend(row);
    }
    if values.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {rows} data rows, got {}",
            values.len() / cols.max(1)
        )));
    }
    if rows == 1 {
        GridDensity::new(vec![cols], vec![ex], values)
    } else {
        GridDensity::new(vec![cols, rows], vec![ex, ey], values)
    }
}

pub fn grid_to_csv(g: &GridDensity) -> String {
    let (cols, rows) = (g.shape()[0], g.shape().get(1).copied().unwrap_or(1));
    let ext = g.extent();
    let mut out = String::from("rows,cols,extent\n");
    if ext.len() == 2 && ext[0] != ext[1] {
        out += &format!("{rows},{cols},{},{}\n", ext[0], ext[1]);
    } else {
        out += &format!("{rows},{cols},{}\n", ext[0]);
    }
    for row in g.values().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out += &line.join(",");
        out.push('\n');
    }
    out
}

pub fn read_grid_csv(path: &Path) -> Result<GridDensity> {
    grid_from_csv(&fs::read_to_string(path)?)
}

pub fn write_grid_csv(path: &Path, g: &GridDensity) -> Result<()> {
    Ok(fs::write(path, grid_to_csv(g))?)
}

/// Next whitespace-separated header token, skipping `#` comments.
fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("truncated PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn grid_from_pgm(bytes: &[u8]) -> Result<GridDensity> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos)? != "P5" {
        return Err(Error::Parse("not a binary PGM (P5) file".into()));
    }
    let width = parse_usize(&pgm_token(bytes, &mut pos)?, "PGM width")?;
    let height = parse_usize(&pgm_token(bytes, &mut pos)?, "PGM height")?;
    let maxval = parse_usize(&pgm_token(bytes, &mut pos)?, "PGM maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(Error::Parse(format!("PGM maxval {maxval} out of range")));
    }
    pos += 1; // single whitespace before the raster
    let wide = maxval > 255;
    let n = width * height;
    let need = n * if wide { 2 } else { 1 };
    if bytes.len() < pos + need {
        return Err(Error::Parse("truncated PGM raster".into()));
    }
    let raster = &bytes[pos..pos + need];
    let sample = |k: usize| {
        if wide {
            u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as f64
        } else {
            raster[k] as f64
        }
    };
    // image rows run top to bottom; grid rows bottom to top
    let mut values = Vec::with_capacity(n);
    for iy in 0..height {
        let r = height - 1 - iy;
        values.extend((0..width).map(|x| sample(r * width + x)));
    }
    let g = if height == 1 {
        GridDensity::unit(vec![width], values)?
    } else {
        GridDensity::unit(vec![width, height], values)?
    };
    g.normalize()
}

/// 16-bit PGM with the largest value mapped to 65535.
pub fn grid_to_pgm(g: &GridDensity) -> Vec<u8> {
    let (width, height) = (g.shape()[0], g.shape().get(1).copied().unwrap_or(1));
    let max = g.values().iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for r in 0..height {
        let iy = height - 1 - r;
        for x in 0..width {
            let v = (g.values()[x + width * iy] * scale)
                .round()
                .clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn read_grid_pgm(path: &Path) -> Result<GridDensity> {
    grid_from_pgm(&fs::read(path)?)
}

pub fn write_grid_pgm(path: &Path, g: &GridDensity) -> Result<()> {
    Ok(fs::write(path, grid_to_pgm(g))?)
}

/// Reads a grid by extension: `.pgm` or CSV otherwise.
pub fn read_grid(path: &Path) -> Result<GridDensity> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => read_grid_pgm(path),
        _ => read_grid_csv(path),
    }
}

/// Vertices and triangles of an OFF file; polygons are fanned.
pub fn parse_off(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("OFF") {
        return Err(Error::Parse("missing OFF header".into()));
    }
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("truncated OFF file at {what}")))
    };
    let nv = parse_usize(next("counts")?, "vertex count")?;
    let nf = parse_usize(next("counts")?, "face count")?;
    next("counts")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut p = [0.0; 3];
        for c in &mut p {
            *c = parse_f64(next("vertex")?, "coordinate")?;
        }
        vertices.push(p);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k = parse_usize(next("face")?, "face size")?;
        if k < 3 {
            return Err(Error::Parse(format!("face with {k} vertices")));
        }
        let idx: Vec<usize> = (0..k)
            .map(|_| parse_usize(next("face")?, "vertex index"))
            .collect::<Result<_>>()?;
        for w in 1..k - 1 {
            triangles.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    Ok((vertices, triangles))
}

/// Path of the density sidecar: same stem, `.csv` extension.
pub fn sidecar_path(off: &Path) -> PathBuf {
    off.with_extension("csv")
}

/// One value per line; a non-numeric first line is a header.
pub fn parse_column(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
    {
        match line.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if k == 0 => {}
            Err(_) => return Err(Error::Parse(format!("bad value '{line}'"))),
        }
    }
    Ok(out)
}

/// Mesh from an OFF file and its density sidecar (uniform if absent).
pub fn read_mesh(path: &Path) -> Result<MeshDensity> {
    let (vertices, triangles) = parse_off(&fs::read_to_string(path)?)?;
    let side = sidecar_path(path);
    let density = if side.exists() {
        parse_column(&fs::read_to_string(side)?)?
    } else {
        vec![1.0; vertices.len()]
    };
    MeshDensity::new(vertices, triangles, density)
}

pub fn write_mesh(path: &Path, m: &MeshDensity) -> Result<()> {
    let mut off = format!("OFF\n{} {} 0\n", m.vertices().len(), m.triangles().len());
    for v in m.vertices() {
        off += &format!("{} {} {}\n", v[0], v[1], v[2]);
    }
    for t in m.triangles() {
        off += &format!("3 {} {} {}\n", t[0], t[1], t[2]);
    }
    fs::write(path, off)?;
    let mut side = String::from("density\n");
    for d in m.density() {
        side += &format!("{d:e}\n");
    }
    Ok(fs::write(sidecar_path(path), side)?)
}

pub fn plan_to_csv(plan: &TransportPlan) -> String {
    let mut out = String::from("i,j,mass\n");
    for (i, j, t) in plan.entries() {
        out += &format!("{i},{j},{t:e}\n");
    }
    out
}

pub fn write_plan(path: &Path, plan: &TransportPlan) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(plan_to_csv(plan).as_bytes())?;
    Ok(())
}

/// `(i, j, mass)` triples of a plan CSV.
pub fn plan_from_csv(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next().map(|h| h.replace(' ', "")) != Some("i,j,mass".into()) {
        return Err(Error::Parse("expected header 'i,j,mass'".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("bad plan line '{l}'")));
            }
            Ok((
                parse_usize(f[0], "row")?,
                parse_usize(f[1], "column")?,
                parse_f64(f[2], "mass")?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_json_roundtrip() {
        let m = DiscreteMeasure::new(&[vec![0.0, 1.0], vec![2.5, -1.0]], &[0.25, 0.75]).unwrap();
        let back = measure_from_json(&measure_to_json(&m)).unwrap();
        assert_eq!(back.coords(), m.coords());
        assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn grid_csv_roundtrip() {
        let g = GridDensity::new(
            vec![3, 2],
            vec![1.5, 2.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.125],
        )
        .unwrap();
        let back = grid_from_csv(&grid_to_csv(&g)).unwrap();
        assert_eq!(back, g);
        let line = GridDensity::unit(vec![4], vec![1.0, 0.0, 2.0, 1.0]).unwrap();
        assert_eq!(grid_from_csv(&grid_to_csv(&line)).unwrap(), line);
    }

    #[test]
    fn csv_errors() {
        assert!(grid_from_csv("a,b\n").is_err());
        assert!(grid_from_csv("rows,cols,extent\n2,2,1\n1,2\n3,4\n").is_ok());
        assert!(grid_from_csv("rows,cols,extent\n2,2,1\n1,2\n3\n").is_err());
        assert!(grid_from_csv("rows,cols,extent\n2,2,1\n1,2\n").is_err());
    }

    #[test]
    fn pgm_roundtrip_keeps_orientation() {
        let g = GridDensity::unit(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 6.0])
            .unwrap()
            .normalize()
            .unwrap();
        let back = grid_from_pgm(&grid_to_pgm(&g)).unwrap();
        for (a, b) in back.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-4 * b.max(1.0));
        }
        // top image row is the last grid row
        let bytes = grid_to_pgm(&g);
        let raster = &bytes[bytes.len() - 12..];
        assert_eq!(u16::from_be_bytes([raster[4], raster[5]]), 65535);
    }

    #[test]
    fn eight_bit_pgm() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 255, 0]);
        let g = grid_from_pgm(&bytes).unwrap();
        assert_eq!(g.shape(), &[2, 2]);
        // the bottom image row comes first
        assert!((g.values()[0] - 2.0).abs() < 1e-12);
        assert_eq!(g.values()[1], 0.0);
        assert!((g.values()[3] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn off_fans_polygons() {
        let (v, t) = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(t, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn mesh_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.off");
        let m = MeshDensity::flat_grid(3, 3, 1.0, 1.0).unwrap();
        write_mesh(&path, &m).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        for (a, b) in back.density().iter().zip(m.density()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }
}
