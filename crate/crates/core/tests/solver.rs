mod common;

use common::*;
use seepage::constitutive::{LayeredMedium, SoilModel};
use seepage::fem::{CoordMode, Discretization, SourceTerm};
use seepage::geometry::{BoundarySegment, Condition};
use seepage::mesh::{BoundaryKind, Side};
use seepage::problem::{initial_guess, BoundaryData};
use seepage::solver::{
    complementarity_residual, exit_point, picard_solve, update_active_set, SolveError, SolverConfig,
};

fn dof_z(disc: &Discretization<'_>, d: usize) -> f64 {
    disc.mesh.vertex(disc.dofs.dof_vertex[d]).z
}

#[test]
fn hydrostatic_initial_guess_example1() {
    let (p, mesh) = benchmark_mesh("example1", 0);
    let medium = p.medium().unwrap();
    let disc = Discretization::new(&mesh, &medium, p.mode).unwrap();
    let bd = BoundaryData::resolve(&disc, &p.boundary);
    let (u, active) = initial_guess(&disc, &bd, 0.8);
    let mut seen = 0;
    for d in 0..disc.n_dofs() {
        let z = dof_z(&disc, d);
        if (z - 0.3125).abs() < 1e-12 {
            seen += 1;
            let want = if bd.is_seepage(d) { 0.0 } else { 0.8 - 0.3125 };
            assert_eq!(u[d], want);
        }
        if bd.is_seepage(d) {
            assert!(u[d] <= 0.0);
            assert_eq!(active[d], z <= 0.8);
        }
    }
    assert_eq!(seen, 17);
}

#[test]
fn initial_guess_without_constraints_is_minus_z() {
    let mesh = unit_square(3);
    let medium = LayeredMedium::homogeneous(SoilModel::preset("example").unwrap(), 0.0, 1.0).unwrap();
    let disc = Discretization::new(&mesh, &medium, CoordMode::Cartesian).unwrap();
    let bd = BoundaryData::with_function(&disc, &[], |_| 0.0);
    let (u, active) = initial_guess(&disc, &bd, 0.0);
    for d in 0..disc.n_dofs() {
        assert_eq!(u[d], -dof_z(&disc, d));
    }
    assert!(active.iter().all(|a| !a));
}

#[test]
fn active_set_rules() {
    let seep = [0, 1, 2];
    let frozen = [false; 3];
    let mut active = [false; 3];
    assert!(update_active_set(&seep, &[-1.0, -0.5, -0.1], None, &mut active, 0.0, &frozen).is_empty());
    assert_eq!(active, [false; 3]);
    let sw = update_active_set(&seep, &[-1.0, 0.1, -0.1], None, &mut active, 0.0, &frozen);
    assert_eq!((sw, active), (vec![1], [false, true, false]));
    // reaction +1 is an outward flux of -1, i.e. inflow
    let sw = update_active_set(&seep, &[0.0; 3], Some(&[0.0, 1.0, 0.0]), &mut active, 1e-12, &frozen);
    assert_eq!((sw, active), (vec![1], [false; 3]));
    // outflow keeps a pinned dof
    let mut active = [true; 3];
    assert!(update_active_set(&seep, &[0.0; 3], Some(&[-1.0, -2.0, 0.0]), &mut active, 1e-12, &frozen).is_empty());
    // frozen dofs never switch
    let mut active = [false; 3];
    assert!(update_active_set(&seep, &[1.0; 3], None, &mut active, 0.0, &[true; 3]).is_empty());
}

#[test]
fn saturated_linear_problem_converges_immediately() {
    let mesh = unit_square(6);
    let medium = LayeredMedium::homogeneous(SoilModel::new(2.0, 1.0, 1.5).unwrap(), 0.0, 1.0).unwrap();
    let disc = Discretization::new(&mesh, &medium, CoordMode::Cartesian).unwrap();
    let bd = BoundaryData::with_function(&disc, &[BoundaryKind::Neumann], |p| 3.0 + p.x * p.x - p.z);
    let u0 = vec![5.0; disc.n_dofs()];
    let sol = picard_solve(&disc, &SourceTerm::Zero, &bd, &SolverConfig::default(), &u0, &vec![false; disc.n_dofs()])
        .unwrap();
    assert!(sol.report.converged);
    assert!(sol.report.n_iterations() <= 2, "{:?}", sol.report);
    assert!(sol.report.final_increment() <= 1e-14);
}

#[test]
fn example1_converges_with_bracketed_exit_point() {
    let (p, mesh) = benchmark_mesh("example1", 1);
    let medium = p.medium().unwrap();
    let disc = Discretization::new(&mesh, &medium, p.mode).unwrap();
    let cfg = SolverConfig::default();
    let (bd, sol) = solve_problem(&p, &disc, &cfg);
    assert!(sol.report.converged);
    let exit = exit_point(&disc, &bd, &sol.active).unwrap();
    assert!(exit > 0.25 && exit < 0.8, "exit point {exit}");
    let res = complementarity_residual(&disc, &p.source, &bd, &sol.u, &sol.active);
    assert!(res <= 100.0 * cfg.tol, "complementarity {res:e}");
    let umax = sol.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for &d in &bd.seepage {
        assert!(sol.u[d] <= cfg.tol * umax);
        if sol.active[d] {
            assert_eq!(sol.u[d], 0.0);
        }
    }
    let it = &sol.report.iterations;
    assert!(it.len() >= 2);
    assert_eq!(it[it.len() - 1].switched, 0);
    assert!(it.iter().all(|r| r.increment >= 0.0));
    assert!(it.last().unwrap().increment <= cfg.tol);
}

#[test]
fn picard_is_deterministic() {
    let (p, mesh) = benchmark_mesh("example1", 0);
    let medium = p.medium().unwrap();
    let disc = Discretization::new(&mesh, &medium, p.mode).unwrap();
    let (_, a) = solve_problem(&p, &disc, &SolverConfig::default());
    let (_, b) = solve_problem(&p, &disc, &SolverConfig::default());
    assert_eq!(a.report, b.report);
    assert!(a.u.iter().zip(&b.u).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.active, b.active);
}

#[test]
fn iteration_cap_reports_failure_with_history() {
    let (p, mesh) = benchmark_mesh("example1", 0);
    let medium = p.medium().unwrap();
    let disc = Discretization::new(&mesh, &medium, p.mode).unwrap();
    let bd = BoundaryData::resolve(&disc, &p.boundary);
    let (u0, a0) = initial_guess(&disc, &bd, p.water_table);
    let cfg = SolverConfig { max_iter: 2, ..SolverConfig::default() };
    match picard_solve(&disc, &p.source, &bd, &cfg, &u0, &a0) {
        Err(SolveError::NotConverged(s)) => {
            assert_eq!(s.report.n_iterations(), 2);
            assert!(!s.report.converged);
            assert_eq!(s.report.to_csv().lines().count(), 3);
        }
        other => panic!("expected failure, got {:?}", other.map(|s| s.report)),
    }
}

#[test]
fn invalid_solver_settings_are_rejected() {
    let ok = SolverConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        SolverConfig { tol: 0.0, ..ok.clone() },
        SolverConfig { max_iter: 0, ..ok.clone() },
        SolverConfig { damping: 0.0, ..ok.clone() },
        SolverConfig { damping: 1.5, ..ok.clone() },
        SolverConfig { flux_tol: Some(-1.0), ..ok.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

/// Unit square at rest: head 0.4 on the right, seepage face above z = 0.5
/// on the left.
fn resting_column() -> (seepage::mesh::Mesh, Vec<BoundarySegment>) {
    let segs = vec![
        BoundarySegment::whole(Side::Right, Condition::Head { head: 0.4 }),
        BoundarySegment::new(Side::Left, Some(0.5), Some(1.0), Condition::Seepage),
    ];
    let mesh = rectangle((0.0, 1.0), (0.0, 1.0), 4, 4).build_mesh(&segs).unwrap();
    (mesh, segs)
}

#[test]
fn resting_water_has_no_complementarity_violation() {
    let (mesh, segs) = resting_column();
    let medium = LayeredMedium::homogeneous(SoilModel::preset("example").unwrap(), 0.0, 1.0).unwrap();
    let disc = Discretization::new(&mesh, &medium, CoordMode::Cartesian).unwrap();
    let bd = BoundaryData::resolve(&disc, &segs);
    assert!(!bd.seepage.is_empty());
    let (u0, a0) = initial_guess(&disc, &bd, 0.4);
    let sol = picard_solve(&disc, &SourceTerm::Zero, &bd, &SolverConfig::default(), &u0, &a0).unwrap();
    assert!(sol.active.iter().all(|a| !a));
    assert_eq!(complementarity_residual(&disc, &SourceTerm::Zero, &bd, &sol.u, &sol.active), 0.0);
}

#[test]
fn positive_head_on_the_face_is_a_unit_violation() {
    let (mesh, segs) = resting_column();
    let medium = LayeredMedium::homogeneous(SoilModel::preset("example").unwrap(), 0.0, 1.0).unwrap();
    let disc = Discretization::new(&mesh, &medium, CoordMode::Cartesian).unwrap();
    let bd = BoundaryData::resolve(&disc, &segs);
    let (mut u, active) = initial_guess(&disc, &bd, 0.4);
    u[bd.seepage[0]] = 1.0;
    let r = complementarity_residual(&disc, &SourceTerm::Zero, &bd, &u, &active);
    assert_eq!(r, 1.0);
}
