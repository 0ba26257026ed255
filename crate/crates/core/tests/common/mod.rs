#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;
use seepage::fem::Discretization;
use seepage::geometry::{BoundarySegment, Condition, Geometry, Rectangle};
use seepage::mesh::{EdgeNeighbor, Mesh, Side};

pub fn rectangle(x: (f64, f64), z: (f64, f64), nx: usize, nz: usize) -> Geometry {
    Geometry::Rectangle(Rectangle {
        x_min: x.0,
        x_max: x.1,
        z_min: z.0,
        z_max: z.1,
        nx,
        nz,
        x_lines: vec![],
        z_lines: vec![],
    })
}

/// Rectangle with every side under one condition.
pub fn rect_mesh(x: (f64, f64), z: (f64, f64), nx: usize, nz: usize, cond: Condition) -> Mesh {
    let segs: Vec<_> =
        [Side::Left, Side::Right, Side::Bottom, Side::Top].map(|s| BoundarySegment::whole(s, cond.clone())).into();
    rectangle(x, z, nx, nz).build_mesh(&segs).unwrap()
}

pub fn unit_square(n: usize) -> Mesh {
    rect_mesh((0.0, 1.0), (0.0, 1.0), n, n, Condition::NoFlow)
}

pub fn total_area(mesh: &Mesh) -> f64 {
    mesh.active_cells().iter().map(|&c| mesh.cell_area(c)).sum()
}

/// Apply `steps` random refine or coarsen operations.
pub fn random_adapt(mesh: &mut Mesh, rng: &mut impl Rng, steps: usize, max_cells: usize) {
    for _ in 0..steps {
        let act = mesh.active_cells().to_vec();
        if rng.gen_bool(0.6) && act.len() < max_cells {
            let k = rng.gen_range(1..=act.len().min(4));
            let marked: Vec<usize> = (0..k).map(|_| act[rng.gen_range(0..act.len())]).collect();
            mesh.refine(&marked).unwrap();
        } else {
            let marked: Vec<usize> = act.iter().copied().filter(|_| rng.gen_bool(0.7)).collect();
            mesh.coarsen(&marked).unwrap();
        }
    }
}

/// Level jumps of at most one across every edge and at most one hanging
/// vertex per coarse edge.
pub fn check_one_irregular(mesh: &Mesh) -> Result<(), String> {
    mesh.validate().map_err(|e| e.to_string())?;
    let mut hanging = HashSet::new();
    for h in mesh.hanging_constraints() {
        if !hanging.insert(h.vertex) {
            return Err(format!("vertex {} constrained twice", h.vertex));
        }
        let (a, b) = (mesh.vertex(h.masters[0]), mesh.vertex(h.masters[1]));
        let p = mesh.vertex(h.vertex);
        if (0.5 * (a.x + b.x) - p.x).abs() > 1e-12 || (0.5 * (a.z + b.z) - p.z).abs() > 1e-12 {
            return Err(format!("hanging vertex {} is not a master midpoint", h.vertex));
        }
    }
    for &c in mesh.active_cells() {
        let lc = mesh.cell(c).level as i32;
        for nb in mesh.neighbors(c) {
            let jump = match *nb {
                EdgeNeighbor::Boundary(_) => 0,
                EdgeNeighbor::Same(n, _) => mesh.cell(n).level as i32 - lc,
                EdgeNeighbor::Finer(f) => {
                    let d = mesh.cell(f[0].0).level as i32 - lc;
                    if mesh.cell(f[1].0).level as i32 - lc != d {
                        return Err(format!("uneven finer neighbours at cell {c}"));
                    }
                    d
                }
                EdgeNeighbor::Coarser(n, _, _) => mesh.cell(n).level as i32 - lc,
            };
            if jump.abs() > 1 {
                return Err(format!("level jump {jump} at cell {c}"));
            }
        }
    }
    Ok(())
}

/// Two-sided evaluation of `u` at points of every irregular edge.
pub fn continuity_defect(disc: &Discretization<'_>, u: &[f64]) -> f64 {
    let mesh = disc.mesh;
    let mut worst = 0.0f64;
    for (pos, &c) in mesh.active_cells().iter().enumerate() {
        for (e, nb) in mesh.neighbors(c).iter().enumerate() {
            let EdgeNeighbor::Finer(fine) = *nb else { continue };
            for (half, &(f, fe)) in fine.iter().enumerate() {
                let fpos = mesh.active_index(f).unwrap();
                for k in 0..5 {
                    let t = (k as f64 + 0.5) / 5.0;
                    // fine edge runs opposite to the coarse one
                    let s = 0.5 * half as f64 + 0.5 * t;
                    let (xi, eta) = seepage::fem::edge_ref_point(e, s);
                    let (fxi, feta) = seepage::fem::edge_ref_point(fe as usize, 1.0 - t);
                    let a = disc.eval(pos, u, xi, eta).0;
                    let b = disc.eval(fpos, u, fxi, feta).0;
                    let pa = seepage::mesh::bilinear_map(&disc.cell_points(pos), xi, eta);
                    let pb = seepage::mesh::bilinear_map(&disc.cell_points(fpos), fxi, feta);
                    assert!(pa.dist(pb) < 1e-12, "edge parametrisation mismatch");
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    worst
}

/// Smallest number of entries whose sum reaches `theta * total`, by
/// exhaustive search.
pub fn brute_force_min_card(eta: &[f64], theta: f64) -> usize {
    let total: f64 = eta.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let n = eta.len();
    let mut best = n;
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k >= best {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| eta[i]).sum();
        if s >= theta * total {
            best = k;
        }
    }
    best
}

/// Bulk criterion, minimal cardinality and the prefix property of a
/// Dörfler set.
pub fn check_dorfler(eta: &[f64], theta: f64, marked: &[usize]) -> Result<(), String> {
    let total: f64 = eta.iter().sum();
    let s: f64 = marked.iter().map(|&i| eta[i]).sum();
    if total > 0.0 && s < theta * total {
        return Err(format!("marked sum {s} below {}", theta * total));
    }
    let best = brute_force_min_card(eta, theta);
    if marked.len() != best {
        return Err(format!("marked {} cells, minimum is {best}", marked.len()));
    }
    let min_in = marked.iter().map(|&i| eta[i]).fold(f64::INFINITY, f64::min);
    let max_out = (0..eta.len()).filter(|i| !marked.contains(i)).map(|i| eta[i]).fold(0.0, f64::max);
    if !marked.is_empty() && max_out > min_in {
        return Err("an unmarked cell beats a marked one".into());
    }
    Ok(())
}

/// Rows `(soil, u, theta, kr)` of the high-precision reference table.
pub fn vg_table() -> Vec<(String, f64, f64, f64)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/vg_table.csv");
    let text = std::fs::read_to_string(path).expect("reference table");
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

/// Worst relative deviation of `Θ` and `K_R` from the reference table.
pub fn vg_table_deviation() -> (f64, f64, usize) {
    let rows = vg_table();
    let (mut dt, mut dk) = (0.0f64, 0.0f64);
    for (name, u, theta, kr) in &rows {
        let soil = seepage::constitutive::SoilModel::preset(name).expect("preset");
        dt = dt.max(((soil.effective_saturation(*u) - theta) / theta).abs());
        dk = dk.max(((soil.relative_conductivity(*u) - kr) / kr).abs());
    }
    (dt, dk, rows.len())
}

/// Benchmark problem on its initial mesh refined `levels` times.
pub fn benchmark_mesh(name: &str, levels: usize) -> (seepage::problem::ProblemConfig, Mesh) {
    let p = seepage::problem::benchmark(name).expect("benchmark");
    let mut mesh = p.initial_mesh().unwrap();
    for _ in 0..levels {
        mesh.refine_uniform().unwrap();
    }
    (p, mesh)
}

/// Picard solve from the hydrostatic guess.
pub fn solve_problem(
    p: &seepage::problem::ProblemConfig,
    disc: &Discretization<'_>,
    cfg: &seepage::solver::SolverConfig,
) -> (seepage::problem::BoundaryData, seepage::solver::PicardSolution) {
    let bd = seepage::problem::BoundaryData::resolve(disc, &p.boundary);
    let (u0, a0) = seepage::problem::initial_guess(disc, &bd, p.water_table);
    let sol = seepage::solver::picard_solve(disc, &p.source, &bd, cfg, &u0, &a0).unwrap();
    (bd, sol)
}
