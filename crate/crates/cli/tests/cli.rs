use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

fn ot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ot"))
        .args(args)
        .output()
        .expect("run ot")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p: PathBuf = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn uniform_square(dir: &Path) -> String {
    write(
        dir,
        "square.csv",
        "rows,cols,extent\n4,4,1\n1,1,1,1\n1,1,1,1\n1,1,1,1\n1,1,1,1\n",
    )
}

// Sorted-quantile coupling of the two bundled atom sets, by hand:
// pieces of mass .1, .4, .25, .05, .2 move by .1, .15, .1, .25, .15.
const ATOMS_W1: f64 = 0.1375;
const ATOMS_W2_SQ: f64 = 0.020125;

#[test]
fn exact_methods_reproduce_the_hand_computed_coupling() {
    for (method, p, want) in [
        ("lp", "1", ATOMS_W1),
        ("cdf1d", "1", ATOMS_W1),
        ("lp", "2", ATOMS_W2_SQ),
        ("cdf1d", "2", ATOMS_W2_SQ),
    ] {
        let out = ot(&[
            "--json",
            "dist",
            "--method",
            method,
            "--p",
            p,
            "--a",
            &data("atoms_a.json"),
            "--b",
            &data("atoms_b.json"),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let v = json_of(&out)["value"].as_f64().unwrap();
        assert!((v - want).abs() < 1e-12, "{method} p={p}: {v}");
    }
}

#[test]
fn environment_supplies_defaults_and_flags_win() {
    let run = |env_p: &str, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ot"));
        cmd.env("OT_METHOD", "lp").env("OT_P", env_p);
        cmd.args([
            "--json",
            "dist",
            "--a",
            &data("atoms_a.json"),
            "--b",
            &data("atoms_b.json"),
        ]);
        if let Some(p) = flag {
            cmd.args(["--p", p]);
        }
        json_of(&cmd.output().unwrap())["value"].as_f64().unwrap()
    };
    assert!((run("1", None) - ATOMS_W1).abs() < 1e-12);
    assert!((run("1", Some("2")) - ATOMS_W2_SQ).abs() < 1e-12);
}

#[test]
fn plan_rows_carry_the_marginals() {
    let out = ot(&[
        "plan",
        "--a",
        &data("atoms_a.json"),
        "--b",
        &data("atoms_b.json"),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = [0.0; 4];
    let mut cols = [0.0; 3];
    for line in text
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
    {
        let f: Vec<&str> = line.split(',').collect();
        let (i, j, m): (usize, usize, f64) = (
            f[0].parse().unwrap(),
            f[1].parse().unwrap(),
            f[2].parse().unwrap(),
        );
        rows[i] += m;
        cols[j] += m;
    }
    for (s, t) in rows
        .iter()
        .zip([0.1, 0.4, 0.3, 0.2])
        .chain(cols.iter().zip([0.5, 0.25, 0.25]))
    {
        assert!((s - t).abs() < 1e-12);
    }
}

#[test]
fn interpolation_writes_one_frame_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frames");
    let res = ot(&[
        "interpolate",
        "--a",
        &data("a.csv"),
        "--b",
        &data("b.csv"),
        "--out",
        out.to_str().unwrap(),
        "--frames",
        "2",
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "frame_0000.pgm",
            "frame_0001.pgm",
            "frame_0002.pgm",
            "report.json"
        ]
    );
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], Value::Bool(true));
}

#[test]
fn barycenter_with_degenerate_weights_returns_the_selected_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bary.csv");
    let inputs = format!("{},{}", data("a.csv"), data("b.csv"));
    let res = ot(&[
        "barycenter",
        "--inputs",
        &inputs,
        "--weights",
        "1,0",
        "--alpha",
        "1e-5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let got = otkit::io::read_grid_csv(&out).unwrap();
    let want =
        otkit::Normalize::normalize(&otkit::io::read_grid_csv(Path::new(&data("a.csv"))).unwrap())
            .unwrap();
    for (x, y) in got.values().iter().zip(want.values()) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn single_stipple_sits_at_the_centroid() {
    let dir = tempfile::tempdir().unwrap();
    let density = uniform_square(dir.path());
    let out = ot(&["stipple", "--density", &density, "--n", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let m = otkit::io::measure_from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(
        (m.point(0)[0] - 0.5).abs() < 1e-9 && (m.point(0)[1] - 0.5).abs() < 1e-9,
        "{:?}",
        m.point(0)
    );
}

#[test]
fn stippling_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let density = uniform_square(dir.path());
    let run = |seed: &str| {
        ot(&[
            "stipple",
            "--density",
            &density,
            "--n",
            "6",
            "--seed",
            seed,
            "--iters",
            "5",
        ])
        .stdout
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

#[test]
fn semidiscrete_reports_target_masses() {
    let dir = tempfile::tempdir().unwrap();
    let density = uniform_square(dir.path());
    let sites = write(
        dir.path(),
        "sites.json",
        r#"{"points": [[0.25, 0.5], [0.75, 0.5]], "weights": [0.25, 0.75]}"#,
    );
    let cells = dir.path().join("cells.json");
    let out = ot(&[
        "--json",
        "semidiscrete",
        "--sites",
        &sites,
        "--density",
        &density,
        "--out",
        cells.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let masses: Vec<f64> = json_of(&out)["masses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m.as_f64().unwrap())
        .collect();
    assert!((masses[0] - 0.25).abs() < 1e-9 && (masses[1] - 0.75).abs() < 1e-9);
    let geo: Value = serde_json::from_str(&fs::read_to_string(cells).unwrap()).unwrap();
    assert_eq!(geo["features"].as_array().unwrap().len(), 2);
}

#[test]
fn json_and_text_modes_agree() {
    let args = [
        "dist",
        "--method",
        "cdf1d",
        "--a",
        &data("a.csv"),
        "--b",
        &data("b.csv"),
    ];
    let text = String::from_utf8(ot(&args).stdout).unwrap();
    let mut with_json = vec!["--json"];
    with_json.extend(args);
    let v = json_of(&ot(&with_json))["value"].as_f64().unwrap();
    assert!(
        text.contains(&format!("{v}")) || text.contains(&format!("{:.11}", v)),
        "{text} vs {v}"
    );
}

#[test]
fn unusable_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(
        dir.path(),
        "empty.json",
        r#"{"points": [[0.5]], "weights": [0.0]}"#,
    );
    for args in [
        vec![
            "dist",
            "--method",
            "lp",
            "--a",
            &empty,
            "--b",
            &data("atoms_b.json"),
        ],
        vec!["stipple", "--density", &data("a.csv"), "--n", "4"],
        vec![
            "barycenter",
            "--inputs",
            &data("a.csv"),
            "--weights",
            "0.5,0.5",
            "--out",
            "x.csv",
        ],
        vec![
            "--threads",
            "0",
            "dist",
            "--method",
            "lp",
            "--a",
            &data("a.csv"),
            "--b",
            &data("b.csv"),
        ],
    ] {
        assert_eq!(ot(&args).status.code(), Some(1), "{args:?}");
    }
}
