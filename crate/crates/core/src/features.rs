//! Group-level feature `g` and individual features F1-F3.
//!
//! * `g`: SOC-averaged charging C-rate, `Σ c_rate_k · soc_span_k`.
//! * F1: `log10` of the variance of ΔQ(V) = Q₁₀₀(V) − Q₁₀(V) over the grid.
//! * F2: `log10` of `|min ΔQ(V)|`.
//! * F3: discharge capacity of cycle 2 (Ah).

use serde::{Deserialize, Serialize};

use crate::dataset::{CellRecord, ChargeProtocol, DischargeCurve};
use crate::stats::population_variance;

pub const DEFAULT_LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("cell {cell_id:?} has no cycle {cycle}")]
    MissingCycle { cell_id: String, cycle: u32 },
    #[error("cell {cell_id:?} cycle {cycle} spans {lo} V..{hi} V, which does not cover the grid {vmin} V..{vmax} V")]
    OutsideSupport { cell_id: String, cycle: u32, lo: f64, hi: f64, vmin: f64, vmax: f64 },
    #[error("invalid voltage grid: {0}")]
    InvalidGrid(String),
    #[error("log clamp must be positive, got {0}")]
    InvalidClamp(f64),
}

/// Uniform voltage grid, traversed from `vmax` down to `vmin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub vmin: f64,
    pub vmax: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { vmin: 2.0, vmax: 3.5, points: 1000 }
    }
}

impl GridConfig {
    pub fn voltages(&self) -> Result<Vec<f64>, FeatureError> {
        if self.points < 2 {
            return Err(FeatureError::InvalidGrid(format!("{} points, need at least 2", self.points)));
        }
        if !(self.vmax > self.vmin) || !self.vmin.is_finite() || !self.vmax.is_finite() {
            return Err(FeatureError::InvalidGrid(format!("vmax {} must exceed vmin {}", self.vmax, self.vmin)));
        }
        let step = (self.vmax - self.vmin) / (self.points - 1) as f64;
        let mut grid: Vec<f64> = (0..self.points).map(|i| self.vmax - step * i as f64).collect();
        grid[self.points - 1] = self.vmin;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaQCurve {
    pub voltage_grid: Vec<f64>,
    pub delta_q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub g: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

pub fn average_charge_crate(protocol: &ChargeProtocol) -> f64 {
    protocol.steps().iter().map(|s| s.c_rate * s.soc_span).sum()
}

/// Q(V) at voltage `v` by linear interpolation on a non-increasing voltage
/// axis. Where several samples share `v` the one with the largest capacity
/// wins. `None` outside the sampled voltage range.
fn capacity_at(curve: &DischargeCurve, v: f64) -> Option<f64> {
    let (vs, qs) = (curve.voltage(), curve.capacity_ah());
    if v > vs[0] || v < vs[vs.len() - 1] {
        return None;
    }
    // number of samples with voltage >= v; at least 1 given the range check
    let idx = vs.partition_point(|&s| s >= v);
    let hi = idx - 1;
    if vs[hi] == v || idx == vs.len() {
        return Some(qs[hi]);
    }
    let t = (vs[hi] - v) / (vs[hi] - vs[idx]);
    Some(qs[hi] + t * (qs[idx] - qs[hi]))
}

fn cycle(cell: &CellRecord, index: u32) -> Result<&DischargeCurve, FeatureError> {
    cell.cycles.get(&index).ok_or_else(|| FeatureError::MissingCycle { cell_id: cell.cell_id.clone(), cycle: index })
}

fn resample(cell: &CellRecord, index: u32, grid: &[f64], config: &GridConfig) -> Result<Vec<f64>, FeatureError> {
    let curve = cycle(cell, index)?;
    grid.iter()
        .map(|&v| capacity_at(curve, v))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| FeatureError::OutsideSupport {
            cell_id: cell.cell_id.clone(),
            cycle: index,
            lo: curve.voltage()[curve.voltage().len() - 1],
            hi: curve.voltage()[0],
            vmin: config.vmin,
            vmax: config.vmax,
        })
}

/// `Q_b(V) − Q_a(V)` on the grid.
pub fn delta_q_curve(cell: &CellRecord, cycle_a: u32, cycle_b: u32, grid: &GridConfig) -> Result<DeltaQCurve, FeatureError> {
    let voltage_grid = grid.voltages()?;
    let qa = resample(cell, cycle_a, &voltage_grid, grid)?;
    let qb = resample(cell, cycle_b, &voltage_grid, grid)?;
    let delta_q = qb.iter().zip(&qa).map(|(b, a)| b - a).collect();
    Ok(DeltaQCurve { voltage_grid, delta_q })
}

pub fn extract_features(cell: &CellRecord, grid: &GridConfig, log_clamp: f64) -> Result<FeatureVector, FeatureError> {
    if !(log_clamp > 0.0) {
        return Err(FeatureError::InvalidClamp(log_clamp));
    }
    let f3 = cycle(cell, 2)?.total_capacity();
    let dq = delta_q_curve(cell, 10, 100, grid)?;
    let var = population_variance(&dq.delta_q);
    let min = dq.delta_q.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FeatureVector {
        g: average_charge_crate(&cell.protocol),
        f1: var.abs().max(log_clamp).log10(),
        f2: min.abs().max(log_clamp).log10(),
        f3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn protocol(pairs: &[(f64, f64)]) -> ChargeProtocol {
        ChargeProtocol::from_pairs("c", pairs).unwrap()
    }

    fn linear_curve(q_at_vmax: f64, slope: f64) -> DischargeCurve {
        // capacity grows linearly as voltage falls from 3.6 V to 1.9 V
        let v: Vec<f64> = (0..=17).map(|i| 3.6 - 0.1 * i as f64).collect();
        let q = v.iter().map(|x| q_at_vmax + slope * (3.6 - x)).collect();
        DischargeCurve::new(v, q).unwrap()
    }

    fn cell(c2: DischargeCurve, c10: DischargeCurve, c100: DischargeCurve) -> CellRecord {
        let cycles = BTreeMap::from([(2, c2), (10, c10), (100, c100)]);
        CellRecord::new(protocol(&[(1.0, 1.0)]), cycles, Some(30.0)).unwrap()
    }

    #[test]
    fn average_crate_examples() {
        let p = protocol(&[(5.4, 0.40), (3.6, 0.40), (1.0, 0.20)]);
        assert!((average_charge_crate(&p) - 3.8).abs() < 1e-12);
        assert_eq!(average_charge_crate(&protocol(&[(1.0, 1.0)])), 1.0);
        let five = protocol(&[(8.0, 0.2), (6.0, 0.2), (4.0, 0.2), (2.0, 0.2), (1.0, 0.2)]);
        assert!((average_charge_crate(&five) - 4.2).abs() < 1e-12);
    }

    #[test]
    fn splitting_a_step_keeps_average() {
        let whole = protocol(&[(5.4, 0.4), (3.6, 0.4), (1.0, 0.2)]);
        let split = protocol(&[(5.4, 0.1), (5.4, 0.3), (3.6, 0.4), (1.0, 0.2)]);
        assert!((average_charge_crate(&whole) - average_charge_crate(&split)).abs() < 1e-12);
    }

    #[test]
    fn identical_curves_give_zero_delta() {
        let c = cell(linear_curve(0.0, 0.7), linear_curve(0.0, 0.7), linear_curve(0.0, 0.7));
        let dq = delta_q_curve(&c, 10, 100, &GridConfig::default()).unwrap();
        assert_eq!(dq.delta_q.len(), 1000);
        assert!(dq.delta_q.iter().all(|d| *d == 0.0));
        let f = extract_features(&c, &GridConfig::default(), 1e-12).unwrap();
        assert!((f.f1 + 12.0).abs() < 1e-12 && (f.f2 + 12.0).abs() < 1e-12);
        assert_eq!(f.f3, linear_curve(0.0, 0.7).total_capacity());
    }

    #[test]
    fn constant_offset() {
        let c = cell(linear_curve(0.0, 0.7), linear_curve(0.0, 0.7), linear_curve(0.05, 0.7));
        let dq = delta_q_curve(&c, 10, 100, &GridConfig::default()).unwrap();
        assert!(dq.delta_q.iter().all(|d| (d - 0.05).abs() < 1e-12));
    }

    #[test]
    fn constant_negative_offset_features() {
        let c = cell(linear_curve(0.0, 0.7), linear_curve(0.05, 0.7), linear_curve(0.0, 0.7));
        let f = extract_features(&c, &GridConfig::default(), 1e-12).unwrap();
        // variance is 0 up to rounding, clamped at 1e-12
        assert!(f.f1 <= -12.0 + 1e-9, "{}", f.f1);
        assert!((f.f2 - 0.05f64.log10()).abs() < 1e-9);
        assert!((f.f2 + 1.3010).abs() < 1e-4);
    }

    #[test]
    fn missing_cycle_and_support_errors() {
        let mut c = cell(linear_curve(0.0, 0.7), linear_curve(0.0, 0.7), linear_curve(0.0, 0.7));
        c.cycles.remove(&100);
        assert_eq!(
            delta_q_curve(&c, 10, 100, &GridConfig::default()).unwrap_err(),
            FeatureError::MissingCycle { cell_id: "c".into(), cycle: 100 }
        );
        let c = cell(linear_curve(0.0, 0.7), linear_curve(0.0, 0.7), linear_curve(0.0, 0.7));
        let wide = GridConfig { vmin: 1.5, vmax: 3.5, points: 100 };
        assert!(matches!(delta_q_curve(&c, 10, 100, &wide), Err(FeatureError::OutsideSupport { cycle: 10, .. })));
        assert!(GridConfig { points: 1, ..GridConfig::default() }.voltages().is_err());
        assert!(extract_features(&c, &GridConfig::default(), 0.0).is_err());
    }

    #[test]
    fn interpolation_handles_plateaus() {
        let curve = DischargeCurve::new(vec![3.5, 3.2, 3.2, 2.0], vec![0.0, 0.3, 0.6, 1.0]).unwrap();
        assert_eq!(capacity_at(&curve, 3.2), Some(0.6));
        assert!((capacity_at(&curve, 2.6).unwrap() - 0.8).abs() < 1e-12);
        assert!((capacity_at(&curve, 3.35).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(capacity_at(&curve, 2.0), Some(1.0));
        assert_eq!(capacity_at(&curve, 3.5), Some(0.0));
        assert_eq!(capacity_at(&curve, 3.6), None);
    }
}
