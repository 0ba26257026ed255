mod common;

use common::*;
use seepage::constitutive::{Layer, SoilModel};
use seepage::driver::{adaptive_loop, reference_goal, uniform_sequence, AdaptiveConfig, DriverError};
use seepage::fem::{CoordMode, SourceTerm};
use seepage::geometry::{BoundarySegment, Condition, Geometry};
use seepage::problem::{benchmark, GoalSpec, ProblemConfig};
use seepage::solver::SolverConfig;

fn small(max_cycles: usize) -> AdaptiveConfig {
    AdaptiveConfig { max_cycles, ..AdaptiveConfig::default() }
}

#[test]
fn records_match_observed_cycles() {
    let p = benchmark("example1").unwrap();
    let mut seen = Vec::new();
    let run = adaptive_loop(&p, &small(4), &SolverConfig::default(), |s| {
        let sum: f64 = s.estimate.indicators.iter().sum();
        seen.push((s.disc.n_dofs(), s.disc.mesh.n_active(), sum, s.estimate.indicators.len()));
    })
    .unwrap();
    assert_eq!(run.records.len(), 4);
    for (r, (n, cells, sum, len)) in run.records.iter().zip(&seen) {
        assert_eq!((r.n_dofs, r.n_cells, *len), (*n, *cells, *cells));
        assert!((r.estimate - sum).abs() <= 1e-12 * sum.abs());
    }
    assert!(run.records.windows(2).all(|w| w[1].n_dofs > w[0].n_dofs));
    assert_eq!(run.records[0].n_cells, 4 * p.initial_mesh().unwrap().n_active());
    assert_eq!(run.mesh.n_active(), run.records[3].n_cells);
}

#[test]
fn runs_are_reproducible() {
    let p = benchmark("example1").unwrap();
    let a = adaptive_loop(&p, &small(3), &SolverConfig::default(), |_| {}).unwrap();
    let b = adaptive_loop(&p, &small(3), &SolverConfig::default(), |_| {}).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn uniform_mode_refines_every_cell() {
    let p = benchmark("example1").unwrap();
    let adapt = AdaptiveConfig { uniform: true, ..small(3) };
    let run = adaptive_loop(&p, &adapt, &SolverConfig::default(), |_| {}).unwrap();
    let cells: Vec<usize> = run.records.iter().map(|r| r.n_cells).collect();
    assert_eq!(cells, vec![1024, 4096, 16384]);
    let dofs: Vec<usize> = run.records.iter().map(|r| r.n_dofs).collect();
    assert_eq!(dofs, vec![33 * 33, 65 * 65, 129 * 129]);
}

#[test]
fn dof_cap_stops_the_loop() {
    let p = benchmark("example1").unwrap();
    let adapt = AdaptiveConfig { max_dofs: 2000, ..small(50) };
    let run = adaptive_loop(&p, &adapt, &SolverConfig::default(), |_| {}).unwrap();
    assert!(run.records.len() < 50);
    assert!(run.records.iter().all(|r| r.n_dofs <= 2000));
}

#[test]
fn goal_tolerance_stops_the_loop() {
    let p = benchmark("example1").unwrap();
    let adapt = AdaptiveConfig { goal_tol: Some(1.0), ..small(10) };
    let run = adaptive_loop(&p, &adapt, &SolverConfig::default(), |_| {}).unwrap();
    assert_eq!(run.records.len(), 1);
}

#[test]
fn adaptive_config_validation() {
    let ok = AdaptiveConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        AdaptiveConfig { theta: 0.0, ..ok.clone() },
        AdaptiveConfig { theta: 1.0, ..ok.clone() },
        AdaptiveConfig { max_cycles: 0, ..ok.clone() },
        AdaptiveConfig { max_dofs: 0, ..ok.clone() },
        AdaptiveConfig { goal_tol: Some(-1.0), ..ok.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn coarsening_keeps_the_loop_consistent() {
    let p = benchmark("example1").unwrap();
    let adapt = AdaptiveConfig { coarsen: true, coarsen_fraction: 0.2, ..small(5) };
    let run = adaptive_loop(&p, &adapt, &SolverConfig::default(), |s| {
        check_one_irregular(s.disc.mesh).unwrap();
    })
    .unwrap();
    assert_eq!(run.records.len(), 5);
}

#[test]
fn benchmark_parameters() {
    let e1 = benchmark("example1").unwrap();
    let s = &e1.layers[0].soil;
    assert_eq!((s.n, s.alpha, s.ks), (2.06, 1.0, 1.0));
    assert_eq!(benchmark("case2").unwrap().layers.len(), 5);
    let c1 = benchmark("case1").unwrap();
    assert_eq!(c1.geometry.x_range().0, 0.0762);
    assert_eq!(c1.mode, CoordMode::Axisymmetric);
    assert!(benchmark("example3").is_none());
}

/// Horizontal saturated flow through two stacked layers: head 3 on the
/// left, 2 on the right, so the flux into the domain is the layer
/// conductivity times the thickness.
fn two_layer_flow() -> (ProblemConfig, f64) {
    let (k1, k2) = (2.0, 0.5);
    let soil = |ks| SoilModel::new(ks, 1.0, 2.0).unwrap();
    let p = ProblemConfig {
        name: "layers".into(),
        geometry: rectangle((0.0, 1.0), (0.0, 1.0), 4, 2),
        mode: CoordMode::Cartesian,
        layers: vec![
            Layer { z_low: 0.0, z_high: 0.5, soil: soil(k1) },
            Layer { z_low: 0.5, z_high: 1.0, soil: soil(k2) },
        ],
        boundary: vec![
            BoundarySegment::whole(seepage::mesh::Side::Left, Condition::Head { head: 3.0 }),
            BoundarySegment::whole(seepage::mesh::Side::Right, Condition::Head { head: 2.0 }),
        ],
        source: SourceTerm::Zero,
        goal: GoalSpec::WellFlux,
        water_table: 3.0,
    };
    (p, -(0.5 * k1 + 0.5 * k2))
}

#[test]
fn reference_goal_matches_closed_form() {
    let (p, exact) = two_layer_flow();
    assert!(matches!(p.geometry, Geometry::Rectangle(_)));
    let base = p.initial_mesh().unwrap();
    let r = reference_goal(&p, &base, 5, &SolverConfig::default(), 1_000_000, None).unwrap();
    assert!((r.goal - exact).abs() < 1e-6, "{} vs {exact}", r.goal);
    assert_eq!(r.n_dofs, 129 * 65);
    assert!(!r.cached);
}

#[test]
fn reference_goal_is_cauchy_in_levels() {
    let (p, base) = benchmark_mesh("example1", 0);
    let cfg = SolverConfig::default();
    let j: Vec<f64> =
        (1..=4).map(|l| reference_goal(&p, &base, l, &cfg, 1_000_000, None).unwrap().goal).collect();
    let d: Vec<f64> = j.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{j:?}");
}

#[test]
fn reference_cache_returns_identical_bits() {
    let dir = tempfile::tempdir().unwrap();
    let (p, base) = benchmark_mesh("example1", 0);
    let cfg = SolverConfig::default();
    let a = reference_goal(&p, &base, 1, &cfg, 1_000_000, Some(dir.path())).unwrap();
    let b = reference_goal(&p, &base, 1, &cfg, 1_000_000, Some(dir.path())).unwrap();
    assert!(!a.cached && b.cached);
    assert_eq!(a.goal.to_bits(), b.goal.to_bits());
    assert_eq!(a.n_dofs, b.n_dofs);
    // a different level count is a different key
    let c = reference_goal(&p, &base, 2, &cfg, 1_000_000, Some(dir.path())).unwrap();
    assert!(!c.cached);
}

#[test]
fn reference_goal_refuses_oversized_runs() {
    let (p, base) = benchmark_mesh("example1", 0);
    match reference_goal(&p, &base, 3, &SolverConfig::default(), 10_000, None) {
        Err(DriverError::ResourceLimit { needed, limit }) => assert_eq!((needed, limit), (129 * 129, 10_000)),
        other => panic!("expected a resource error, got {:?}", other.map(|r| r.goal)),
    }
}

#[test]
fn uniform_sequence_counts() {
    let (p, _) = two_layer_flow();
    let seq = uniform_sequence(&p, 3, &SolverConfig::default(), false).unwrap();
    let dofs: Vec<usize> = seq.iter().map(|s| s.0).collect();
    assert_eq!(dofs, vec![5 * 3, 9 * 5, 17 * 9]);
}
