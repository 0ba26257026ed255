mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use seepage::constitutive::LayeredMedium;
use seepage::driver::CycleRecord;
use seepage::fem::{CoordMode, DofMap};
use seepage::io::config::{load_config, parse_config, parse_config_bytes, to_toml, ConfigError, RunConfig};
use seepage::io::vtk::{write_vtk, Field};
use seepage::io::{convergence_csv, mesh_dump, CSV_HEADER};
use seepage::problem::{benchmark, example_soil, BENCHMARKS};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

#[test]
fn benchmarks_round_trip_through_toml() {
    for name in BENCHMARKS {
        let cfg = RunConfig::with_defaults(benchmark(name).unwrap());
        let text = to_toml(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg, "{name}");
        assert_eq!(to_toml(&back), text);
    }
}

#[test]
fn shipped_configs_match_benchmarks() {
    let e1 = load_config(&shipped("example1")).unwrap();
    assert_eq!(e1, RunConfig::with_defaults(benchmark("example1").unwrap()));
    for name in BENCHMARKS {
        let cfg = load_config(&shipped(name)).unwrap();
        assert_eq!(cfg.problem, benchmark(name).unwrap(), "{name}");
        assert_eq!(parse_config(&to_toml(&cfg)).unwrap(), cfg);
    }
}

fn invalid_path(text: &str) -> (String, String) {
    match parse_config(text) {
        Err(ConfigError::Invalid { path, message }) => (path, message),
        other => panic!("expected a semantic error, got {other:?}"),
    }
}

fn example1_text() -> String {
    std::fs::read_to_string(shipped("example1")).unwrap()
}

#[test]
fn missing_soil_is_rejected() {
    let text = example1_text().replace("[soil.0]\npreset = \"example\"\n", "");
    let (path, message) = invalid_path(&text);
    assert_eq!(path, "soil");
    assert!(message.contains("at least one layer"), "{message}");
}

#[test]
fn n_of_one_is_rejected() {
    let text = example1_text().replace("preset = \"example\"", "preset = \"example\"\nn = 1.0");
    let (path, message) = invalid_path(&text);
    assert_eq!(path, "soil.0.n");
    assert!(message.contains("exceed 1"), "{message}");
}

#[test]
fn unknown_keys_and_syntax_errors_carry_positions() {
    let text = example1_text().replace("nx = 16", "nx = 16\nny = 3");
    match parse_config(&text) {
        Err(ConfigError::Syntax { line, message, .. }) => {
            assert_eq!(line, 12);
            assert!(message.contains("ny"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    match parse_config("name = \"x\"\n[geometry\n") {
        Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_config_bytes(&[0x6e, 0xff, 0x0a]), Err(ConfigError::Syntax { .. })));
}

#[test]
fn other_semantic_errors_name_their_field() {
    let cases = [
        (example1_text().replace("nx = 16", "nx = 0"), "geometry"),
        (example1_text().replace("kind = \"seepage_flux\"", "kind = \"seepage_flux\"\n[adaptivity]\ntheta = 1.5"), "adaptivity"),
        (example1_text().replace("kind = \"seepage_flux\"", "kind = \"seepage_flux\"\n[solver]\ntol = -1.0"), "solver"),
        (example1_text().replace("preset = \"example\"", "preset = \"loam\""), "soil.0.preset"),
        (example1_text().replace("[goal]\nkind = \"seepage_flux\"\n", ""), "goal"),
    ];
    for (text, want) in cases {
        assert_eq!(invalid_path(&text).0, want);
    }
}

#[test]
fn vtk_of_one_cell_is_stable() {
    let mesh = unit_square(1);
    let dofs = DofMap::new(&mesh);
    let ones = vec![1.0; 4];
    let text = write_vtk(&mesh, &dofs, &[Field { name: "u", values: &ones }], &[Field { name: "eta", values: &[0.5] }]);
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/one_cell.vtk")).unwrap();
    assert_eq!(text, golden);
}

/// Structural check of a legacy ASCII unstructured grid.
fn validate_vtk(text: &str) -> Result<(usize, usize), String> {
    let mut it = text.lines();
    if it.next() != Some("# vtk DataFile Version 3.0") {
        return Err("bad version line".into());
    }
    it.next().ok_or("missing title")?;
    if it.next() != Some("ASCII") || it.next() != Some("DATASET UNSTRUCTURED_GRID") {
        return Err("bad format lines".into());
    }
    let tok: Vec<&str> = it.next().ok_or("no POINTS")?.split(' ').collect();
    if tok.len() != 3 || tok[0] != "POINTS" || tok[2] != "double" {
        return Err("bad POINTS".into());
    }
    let n: usize = tok[1].parse().map_err(|_| "bad point count")?;
    for _ in 0..n {
        let v: Vec<f64> = it.next().ok_or("short points")?.split(' ').map(|s| s.parse().unwrap()).collect();
        if v.len() != 3 || v[2] != 0.0 {
            return Err("bad point".into());
        }
    }
    let tok: Vec<usize> = it.next().ok_or("no CELLS")?[6..].split(' ').map(|s| s.parse().unwrap()).collect();
    let m = tok[0];
    if tok[1] != 5 * m {
        return Err("bad CELLS size".into());
    }
    for _ in 0..m {
        let v: Vec<usize> = it.next().ok_or("short cells")?.split(' ').map(|s| s.parse().unwrap()).collect();
        if v[0] != 4 || v.len() != 5 || v[1..].iter().any(|&i| i >= n) {
            return Err("bad cell".into());
        }
    }
    if it.next() != Some(format!("CELL_TYPES {m}").as_str()) {
        return Err("bad CELL_TYPES".into());
    }
    for _ in 0..m {
        if it.next() != Some("9") {
            return Err("not a quad".into());
        }
    }
    let mut section = 0;
    while let Some(l) = it.next() {
        let count = if l == format!("POINT_DATA {n}") {
            n
        } else if l == format!("CELL_DATA {m}") {
            m
        } else {
            return Err(format!("unexpected line `{l}`"));
        };
        section += 1;
        let mut peek = it.clone();
        while let Some(h) = peek.next() {
            if !h.starts_with("SCALARS ") {
                break;
            }
            it = peek.clone();
            if it.next() != Some("LOOKUP_TABLE default") {
                return Err("missing lookup table".into());
            }
            for _ in 0..count {
                it.next().ok_or("short data")?.parse::<f64>().map_err(|_| "bad value")?;
            }
            peek = it.clone();
        }
    }
    if section == 0 {
        return Err("no data".into());
    }
    Ok((n, m))
}

#[test]
fn vtk_of_adapted_mesh_is_well_formed() {
    let (_, mut mesh) = benchmark_mesh("example1", 0);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
    random_adapt(&mut mesh, &mut rng, 6, 3000);
    let dofs = DofMap::new(&mesh);
    let u: Vec<f64> = (0..dofs.n_dofs()).map(|d| d as f64 * 0.1).collect();
    let eta = vec![1e-300; mesh.n_active()];
    let text = write_vtk(&mesh, &dofs, &[Field { name: "u", values: &u }, Field { name: "v", values: &u }], &[Field { name: "eta", values: &eta }]);
    assert_eq!(validate_vtk(&text), Ok((dofs.n_dofs(), mesh.n_active())));
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/one_cell.vtk")).unwrap();
    assert_eq!(validate_vtk(&golden), Ok((4, 1)));
}

#[test]
fn csv_has_one_row_per_cycle() {
    let recs: Vec<CycleRecord> = (0..3)
        .map(|c| CycleRecord {
            cycle: c,
            n_dofs: 10 * (c + 1),
            n_cells: 4 * (c + 1),
            goal: 1.0 + c as f64,
            estimate: 0.5,
            picard_iterations: 3,
            active_dofs: 1,
        })
        .collect();
    let text = convergence_csv(&recs, Some(3.0));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[1],
        "0,10,4,1.0000000000000000e0,5.0000000000000000e-1,3.0000000000000000e0,2.0000000000000000e0,4.0000000000000000e0"
    );
    let bare = convergence_csv(&recs, None);
    assert!(bare.lines().skip(1).all(|l| l.ends_with(",,,")));
}

#[test]
fn mesh_dump_round_trips() {
    let (_, mesh) = benchmark_mesh("example2", 0);
    let text = mesh_dump::write(&mesh);
    let dump = mesh_dump::parse(&text).unwrap();
    assert_eq!(dump.cells.len(), 4036);
    let rebuilt = dump.to_mesh().unwrap();
    assert_eq!(mesh_dump::parse(&mesh_dump::write(&rebuilt)).unwrap(), dump);
    // meshes with hanging vertices still round-trip as dumps
    let (_, mut m) = benchmark_mesh("example1", 0);
    let first = m.active_cells()[0];
    m.refine(&[first]).unwrap();
    let text = mesh_dump::write(&m);
    let dump = mesh_dump::parse(&text).unwrap();
    assert_eq!(dump.hanging.len(), 2);
    assert!(dump.to_mesh().is_err());
}

#[test]
fn mesh_dump_rejects_bad_input() {
    let (_, mesh) = benchmark_mesh("example1", 0);
    let good = mesh_dump::write(&mesh);
    let cases = [
        ("", 0),
        ("seepage-mesh 2\n", 1),
        ("seepage-mesh 1\nvertices 99999999999\n", 2),
        ("seepage-mesh 1\nvertices 1\n0 nan\n", 3),
        ("seepage-mesh 1\nvertices 1\n0 0\ncells 1\n0 0 0 1 0\n", 5),
    ];
    for (text, line) in cases {
        let e = mesh_dump::parse(text).unwrap_err();
        assert_eq!(e.line, line, "{text:?}: {e}");
    }
    let truncated = &good[..good.len() / 2];
    assert!(mesh_dump::parse(truncated).is_err());
}

fn fuzz_corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

// same properties as the fuzz targets, replayed on the seeds
#[test]
fn fuzz_seeds_replay() {
    let configs = fuzz_corpus("parse_config");
    assert!(configs.len() >= 4);
    for (name, data) in configs {
        let cfg = parse_config_bytes(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_config(&to_toml(&cfg)).unwrap(), cfg, "{name}");
    }
    let mut rebuilt = 0;
    for (name, data) in fuzz_corpus("parse_mesh_dump") {
        let dump = mesh_dump::parse(std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        if let Ok(mesh) = dump.to_mesh() {
            let again = mesh_dump::parse(&mesh_dump::write(&mesh)).unwrap();
            assert_eq!(again.cells.len(), mesh.n_active(), "{name}");
            rebuilt += 1;
        }
    }
    assert_eq!(rebuilt, 2);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_seepage")).args(args).output().unwrap()
}

#[test]
fn cli_smoke_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&["run", "--benchmark", "example1", "--max-cycles", "8", "--out", out, "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains(env!("CARGO_PKG_VERSION")));
    let echoed = load_config(&dir.path().join("config.toml")).unwrap();
    assert_eq!(echoed.adaptivity.max_cycles, 8);
    assert!(dir.path().join("mesh.txt").exists());
    assert!(dir.path().join("picard-07.csv").exists());
}

#[test]
fn cli_uniform_mode_quadruples_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&["run", "--benchmark", "example1", "--uniform", "--max-cycles", "4", "--out", out, "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let rows: Vec<Vec<usize>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for w in rows.windows(2) {
        assert_eq!(w[1][2], 4 * w[0][2]);
    }
    // dofs of an N x N square grid go from (N + 1)^2 to (2N + 1)^2
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![33 * 33, 65 * 65, 129 * 129, 257 * 257]);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(cli(&["run", "--config", "missing.toml", "--out", out]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--benchmark", "nope", "--out", out]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--benchmark", "example1", "--theta", "2", "--out", out]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(cli(&["config", "--benchmark", "nope"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, example1_text().replace("preset = \"example\"", "preset = \"example\"\nn = 0.5")).unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    // a Picard iteration cap of one cannot converge
    let cap = dir.path().join("cap.toml");
    std::fs::write(&cap, example1_text() + "\n[solver]\nmax_iter = 1\n").unwrap();
    let o = cli(&["run", "--config", cap.to_str().unwrap(), "--out", out, "--quiet"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let printed = cli(&["config", "--benchmark", "case2"]);
    assert_eq!(printed.status.code(), Some(0));
    let cfg = parse_config(&String::from_utf8(printed.stdout).unwrap()).unwrap();
    assert_eq!(cfg.problem, benchmark("case2").unwrap());
}

#[test]
fn vtk_fields_follow_dof_order() {
    let mesh = unit_square(2);
    let medium = LayeredMedium::homogeneous(example_soil(), 0.0, 1.0).unwrap();
    let disc = seepage::fem::Discretization::new(&mesh, &medium, CoordMode::Cartesian).unwrap();
    let u = disc.interpolate(|p| p.x + 10.0 * p.z);
    let text = write_vtk(&mesh, &disc.dofs, &[Field { name: "u", values: &u }], &[]);
    let lines: Vec<&str> = text.lines().collect();
    let pts = &lines[5..5 + disc.n_dofs()];
    let data_start = lines.iter().position(|l| *l == "LOOKUP_TABLE default").unwrap() + 1;
    for (k, p) in pts.iter().enumerate() {
        let c: Vec<f64> = p.split(' ').map(|s| s.parse().unwrap()).collect();
        let v: f64 = lines[data_start + k].parse().unwrap();
        assert!((v - (c[0] + 10.0 * c[1])).abs() < 1e-12);
    }
}
