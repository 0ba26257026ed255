mod common;

use proptest::prelude::*;
use seepage::constitutive::{relative_conductivity_of_saturation, Layer, LayeredMedium, SoilModel, PRESETS};
use seepage::mesh::Point;
use seepage::problem::benchmark;

fn example() -> SoilModel {
    SoilModel::preset("example").unwrap()
}

#[test]
fn matches_high_precision_table() {
    let (dt, dk, n) = common::vg_table_deviation();
    assert_eq!(n, 1000);
    assert!(dt <= 1e-12, "saturation deviation {dt:e}");
    assert!(dk <= 1e-12, "relative conductivity deviation {dk:e}");
}

#[test]
fn saturated_branch_is_exact() {
    for (name, ..) in PRESETS {
        let s = SoilModel::preset(name).unwrap();
        for u in [0.0, 1e-300, 0.5, 40.0] {
            assert_eq!(s.effective_saturation(u), 1.0);
            assert_eq!(s.relative_conductivity(u), 1.0);
            assert_eq!(s.conductivity(u), s.ks);
        }
        assert_eq!(relative_conductivity_of_saturation(1.0, s.m()).unwrap(), 1.0);
    }
}

#[test]
fn m_is_derived_exactly() {
    let s = example();
    assert_eq!(s.m(), (2.06 - 1.0) / 2.06);
}

#[test]
fn unit_suction_example() {
    let s = example();
    let expect = 2f64.powf(-s.m());
    assert!((s.effective_saturation(-1.0) - expect).abs() < 1e-15);
    assert!((s.m() - 0.514_563).abs() < 1e-6);
    let kr = relative_conductivity_of_saturation(expect, s.m()).unwrap();
    assert!((s.conductivity(-1.0) - kr).abs() < 1e-14 * kr.max(1e-300) + 1e-16);
}

#[test]
fn half_saturation_example() {
    // n = 2 gives m = 1/2
    let direct = 0.5f64.sqrt() * (1.0 - 0.75f64.sqrt()).powi(2);
    let kr = relative_conductivity_of_saturation(0.5, 0.5).unwrap();
    assert!((kr - direct).abs() < 1e-15);
    assert!((kr - 0.01269).abs() < 1e-5);
}

#[test]
fn invalid_saturation_is_rejected() {
    for t in [0.0, -0.1, 1.0 + 1e-12, f64::NAN] {
        assert!(relative_conductivity_of_saturation(t, 0.5).is_err(), "{t}");
    }
}

#[test]
fn invalid_soils_are_rejected() {
    assert!(SoilModel::new(0.0, 1.0, 2.0).is_err());
    assert!(SoilModel::new(1.0, -1.0, 2.0).is_err());
    assert!(SoilModel::new(1.0, 1.0, 1.0).is_err());
    let mut s = example();
    s.porosity = 0.3;
    assert!(s.validate().is_err(), "porosity below theta_s");
    s.porosity = 0.4;
    s.theta_r = 0.4;
    assert!(s.validate().is_err());
}

#[test]
fn table_presets() {
    let case1 = benchmark("case1").unwrap().medium().unwrap();
    assert_eq!(case1.conductivity(0.1, Point::new(1.0, 50.0)).unwrap(), 5e-6);
    assert_eq!(case1.soil_at(Point::new(1.0, 50.0)).unwrap(), &SoilModel::preset("sandy_loam").unwrap());
    let case2 = benchmark("case2").unwrap().medium().unwrap();
    assert_eq!(case2.conductivity(0.0, Point::new(1.0, 17.0)).unwrap(), 5.0e-9);
    assert_eq!(case2.soil_at(Point::new(1.0, 17.0)).unwrap(), &SoilModel::preset("slate").unwrap());
    let one = LayeredMedium::homogeneous(example(), -3.0, 3.0).unwrap();
    for z in [-3.0, 0.0, 2.9, 3.0] {
        assert_eq!(one.soil_at(Point::new(0.0, z)).unwrap(), &example());
    }
}

#[test]
fn layers_must_tile_the_height() {
    let s = example();
    let gap = vec![
        Layer { z_low: 0.0, z_high: 1.0, soil: s.clone() },
        Layer { z_low: 1.5, z_high: 2.0, soil: s.clone() },
    ];
    assert!(LayeredMedium::new(gap).is_err());
    let overlap = vec![Layer { z_low: 0.0, z_high: 1.0, soil: s.clone() }, Layer { z_low: 0.5, z_high: 2.0, soil: s }];
    assert!(LayeredMedium::new(overlap).is_err());
}

#[test]
fn conductivity_is_continuous_at_saturation() {
    for (name, ..) in PRESETS {
        let s = SoilModel::preset(name).unwrap();
        let gaps: Vec<f64> = (3..=8).map(|k| s.ks - s.conductivity(-(10f64.powi(-k)))).collect();
        assert!(gaps.iter().all(|&g| g >= 0.0), "{name}");
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{name}: {gaps:?}");
        assert!(gaps[5] < 1e-2 * s.ks, "{name}: {gaps:?}");
    }
}

#[test]
fn relative_conductivity_grid_is_monotone() {
    for (name, ..) in PRESETS {
        let m = SoilModel::preset(name).unwrap().m();
        let mut prev = 0.0;
        for i in 1..=1000 {
            let kr = relative_conductivity_of_saturation(i as f64 / 1000.0, m).unwrap();
            assert!(kr > prev, "{name} at {i}");
            prev = kr;
        }
    }
}

fn preset() -> impl Strategy<Value = SoilModel> {
    (0..PRESETS.len()).prop_map(|i| SoilModel::preset(PRESETS[i].0).unwrap())
}

proptest! {
    #[test]
    fn saturation_and_conductivity_are_monotone(s in preset(), a in -50.0f64..2.0, b in -50.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(s.effective_saturation(lo) <= s.effective_saturation(hi));
        prop_assert!(s.conductivity(lo) <= s.conductivity(hi));
        let t = s.effective_saturation(lo);
        prop_assert!(t > 0.0 && t <= 1.0);
    }

    #[test]
    fn conductivity_is_bounded(s in preset(), u in -1e4f64..1e2) {
        let k = s.conductivity(u);
        prop_assert!(k >= s.k_min() && k <= s.ks && k > 0.0);
    }

    #[test]
    fn two_routes_to_relative_conductivity_agree(s in preset(), u in -30.0f64..-1e-3) {
        let t = s.effective_saturation(u);
        prop_assume!(t < 0.99 && t > 1e-6);
        let a = s.relative_conductivity(u);
        let b = relative_conductivity_of_saturation(t, s.m()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a, "{a} vs {b}");
    }

    #[test]
    fn saturation_derivative_matches_differences(s in preset(), u in -20.0f64..-0.01) {
        let h = 1e-4 * u.abs();
        let fd = (s.effective_saturation(u + h) - s.effective_saturation(u - h)) / (2.0 * h);
        prop_assume!(fd.abs() > 1e-12);
        prop_assert!((fd - s.d_saturation(u)).abs() <= 1e-5 * fd.abs());
    }
}
