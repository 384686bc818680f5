use std::collections::BTreeMap;

use lifepred::dataset::{load_cycle_data, CellRecord, ChargeProtocol, DischargeCurve};
use lifepred::features::{average_charge_crate, delta_q_curve, extract_features, FeatureError, GridConfig};
use lifepred::rng::rng_from;
use lifepred::stats::pearson;
use proptest::prelude::*;
use rand::Rng as _;

const VOLTS: [&str; 18] =
    ["3.6", "3.5", "3.4", "3.3", "3.2", "3.1", "3.0", "2.9", "2.8", "2.7", "2.6", "2.5", "2.4", "2.3", "2.2", "2.1", "2.0", "1.9"];

fn volts() -> Vec<f64> {
    VOLTS.iter().map(|v| v.parse().unwrap()).collect()
}

fn curve_from(f: impl Fn(f64) -> f64) -> DischargeCurve {
    let v = volts();
    let q = v.iter().map(|&x| f(x)).collect();
    DischargeCurve::new(v, q).unwrap()
}

fn cell_with(c2: DischargeCurve, c10: DischargeCurve, c100: DischargeCurve) -> CellRecord {
    let protocol = ChargeProtocol::from_pairs("x", &[(4.0, 0.8), (1.0, 0.2)]).unwrap();
    CellRecord::new(protocol, BTreeMap::from([(2, c2), (10, c10), (100, c100)]), Some(20.0)).unwrap()
}

fn base(v: f64) -> f64 {
    0.6 * (3.6 - v) + 0.3 * (3.0 - v).max(0.0)
}

#[test]
fn piecewise_linear_difference_matches_closed_form() {
    // kinks sit on sample voltages, so linear interpolation is exact
    let faded = |v: f64| base(v) - 0.04 * (3.2 - v).max(0.0) + 0.01;
    let cell = cell_with(curve_from(base), curve_from(base), curve_from(faded));
    let grid = GridConfig::default();
    let dq = delta_q_curve(&cell, 10, 100, &grid).unwrap();
    assert_eq!(dq.voltage_grid.len(), 1000);
    assert_eq!(dq.voltage_grid[0], 3.5);
    assert_eq!(dq.voltage_grid[999], 2.0);
    assert!(dq.voltage_grid.windows(2).all(|w| w[0] > w[1]));
    for (v, d) in dq.voltage_grid.iter().zip(&dq.delta_q) {
        let expected = -0.04 * (3.2 - v).max(0.0) + 0.01;
        assert!((d - expected).abs() < 1e-12, "at {v}: {d} vs {expected}");
    }
}

#[test]
fn grid_outside_support_is_not_extrapolated() {
    let cell = cell_with(curve_from(base), curve_from(base), curve_from(base));
    let grid = GridConfig { vmin: 1.5, ..GridConfig::default() };
    let err = delta_q_curve(&cell, 10, 100, &grid).unwrap_err();
    assert!(matches!(err, FeatureError::OutsideSupport { cycle: 10, .. }), "{err}");
    let err = delta_q_curve(&cell, 10, 50, &GridConfig::default()).unwrap_err();
    assert_eq!(err, FeatureError::MissingCycle { cell_id: "x".into(), cycle: 50 });
    assert!(err.to_string().contains("50"));
}

#[test]
fn fixture_cells_extract_finite_features() {
    let cells = load_cycle_data(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/cycles")).unwrap();
    let f = extract_features(&cells[0], &GridConfig::default(), 1e-12).unwrap();
    assert!((f.g - 3.8).abs() < 1e-12);
    assert!(f.f1.is_finite() && f.f2.is_finite());
    assert!((f.f3 - 1.071).abs() < 1e-9);
    // the faster-fading cell has the deeper ΔQ minimum
    let g = extract_features(&cells[1], &GridConfig::default(), 1e-12).unwrap();
    assert!(f.f2 > g.f2);
}

#[test]
fn deeper_minima_go_with_shorter_lives_across_a_fleet() {
    let mut rng = rng_from(5, &[0]);
    let mut f1 = Vec::new();
    let mut life = Vec::new();
    for _ in 0..80 {
        let amplitude = 10f64.powf(rng.random_range(-2.5..-1.0));
        let bump = move |v: f64| amplitude * (std::f64::consts::PI * (3.6 - v) / 1.7).sin();
        let cell = cell_with(curve_from(base), curve_from(base), curve_from(|v| base(v) + 0.1 - bump(v)));
        let f = extract_features(&cell, &GridConfig::default(), 1e-12).unwrap();
        let noise: f64 = rng.random_range(-0.1..0.1);
        f1.push(f.f1);
        life.push(1.4 - 0.4 * (amplitude.log10() + 1.75) + noise);
    }
    let r = pearson(&f1, &life);
    assert!(r < -0.5, "r = {r}");
}

fn arb_curve() -> impl Strategy<Value = DischargeCurve> {
    (0.3f64..1.2, 0.0f64..0.5, prop::collection::vec(0.0f64..0.02, 17)).prop_map(|(slope, bend, jitter)| {
        let v = volts();
        let mut q = vec![0.0];
        for i in 1..v.len() {
            q.push(q[i - 1] + 0.1 * slope + bend * 0.01 * i as f64 + jitter[i - 1]);
        }
        DischargeCurve::new(v, q).unwrap()
    })
}

proptest! {
    #[test]
    fn delta_of_a_cycle_with_itself_is_zero(c in arb_curve()) {
        let cell = cell_with(c.clone(), c.clone(), c);
        for a in [2, 10, 100] {
            let dq = delta_q_curve(&cell, a, a, &GridConfig::default()).unwrap();
            prop_assert!(dq.delta_q.iter().all(|d| *d == 0.0));
        }
    }

    #[test]
    fn capacity_scaling_shifts_log_features(a in arb_curve(), b in arb_curve(), s in 0.5f64..2.0) {
        let cell = cell_with(a.clone(), a.clone(), b.clone());
        let scaled = cell_with(a.scaled_capacity(s), a.scaled_capacity(s), b.scaled_capacity(s));
        let f = extract_features(&cell, &GridConfig::default(), 1e-12).unwrap();
        let g = extract_features(&scaled, &GridConfig::default(), 1e-12).unwrap();
        prop_assume!(f.f1 > -11.0 && f.f2 > -11.0);
        prop_assert!((g.f1 - f.f1 - 2.0 * s.log10()).abs() < 1e-9);
        prop_assert!((g.f2 - f.f2 - s.log10()).abs() < 1e-9);
        prop_assert!((g.f3 - s * f.f3).abs() < 1e-12);
    }

    #[test]
    fn features_ignore_cycle_insertion_order(a in arb_curve(), b in arb_curve()) {
        let protocol = ChargeProtocol::from_pairs("x", &[(4.0, 0.8), (1.0, 0.2)]).unwrap();
        let forward: BTreeMap<u32, DischargeCurve> = [(2, a.clone()), (10, a.clone()), (100, b.clone())].into_iter().collect();
        let backward: BTreeMap<u32, DischargeCurve> = [(100, b), (10, a.clone()), (2, a)].into_iter().collect();
        let x = extract_features(&CellRecord::new(protocol.clone(), forward, None).unwrap(), &GridConfig::default(), 1e-12).unwrap();
        let y = extract_features(&CellRecord::new(protocol, backward, None).unwrap(), &GridConfig::default(), 1e-12).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn average_crate_is_linear_in_rates(rates in prop::collection::vec(0.1f64..8.0, 1..6), k in 0.1f64..3.0) {
        let n = rates.len();
        let span = 1.0 / n as f64;
        let pairs: Vec<(f64, f64)> = rates.iter().map(|r| (*r, span)).collect();
        let scaled: Vec<(f64, f64)> = rates.iter().map(|r| (r * k, span)).collect();
        let base = average_charge_crate(&ChargeProtocol::from_pairs("p", &pairs).unwrap());
        let more = average_charge_crate(&ChargeProtocol::from_pairs("p", &scaled).unwrap());
        prop_assert!((more - k * base).abs() < 1e-9 * (1.0 + base.abs()));
    }
}
