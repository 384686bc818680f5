//! Cell records, feature tables and the synthetic fleet generator.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub(crate) use io::fmt_num;
pub use io::{
    load_cycle_data, load_feature_table, read_feature_table, write_cycle_data, write_feature_table,
    FEATURE_CSV_HEADER,
};
pub use synthetic::{generate_synthetic, FeatureDistribution, SyntheticConfig, SyntheticTruth};

/// Cycles that must be present for full feature extraction.
pub const FEATURE_CYCLES: [u32; 3] = [2, 10, 100];

const SPAN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("unexpected header {found:?}, expected {expected:?}")]
    BadHeader { found: String, expected: String },
    #[error("duplicate cell_id {0:?}")]
    DuplicateCellId(String),
    #[error("protocol for {cell_id:?}: soc spans sum to {sum}, expected 1")]
    SpanSum { cell_id: String, sum: f64 },
    #[error("protocol for {cell_id:?}: {reason}")]
    InvalidProtocol { cell_id: String, reason: String },
    #[error("cell {cell_id:?} cycle {cycle}: {reason}")]
    InvalidCurve { cell_id: String, cycle: u32, reason: String },
    #[error("cell {cell_id:?}: label {label} cannot be log10-transformed")]
    NonPositiveLabel { cell_id: String, label: f64 },
    #[error("invalid value for {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeStep {
    pub c_rate: f64,
    pub soc_span: f64,
}

/// Multi-step fast-charge schedule: C-rate per SOC span, in charging order.
///
/// The datasets this targets all end with a 1C step over the last 20% SOC;
/// that convention is not enforced here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProtocol", into = "RawProtocol")]
pub struct ChargeProtocol {
    cell_id: String,
    steps: Vec<ChargeStep>,
}

#[derive(Serialize, Deserialize)]
struct RawProtocol {
    cell_id: String,
    steps: Vec<ChargeStep>,
}

impl TryFrom<RawProtocol> for ChargeProtocol {
    type Error = DatasetError;
    fn try_from(raw: RawProtocol) -> Result<Self, DatasetError> {
        ChargeProtocol::new(raw.cell_id, raw.steps)
    }
}

impl From<ChargeProtocol> for RawProtocol {
    fn from(p: ChargeProtocol) -> Self {
        RawProtocol { cell_id: p.cell_id, steps: p.steps }
    }
}

impl ChargeProtocol {
    pub fn new(cell_id: impl Into<String>, steps: Vec<ChargeStep>) -> Result<Self, DatasetError> {
        let cell_id = cell_id.into();
        if steps.is_empty() {
            return Err(DatasetError::InvalidProtocol { cell_id, reason: "no charge steps".into() });
        }
        for s in &steps {
            if !(s.c_rate > 0.0 && s.c_rate.is_finite()) {
                return Err(DatasetError::InvalidProtocol {
                    cell_id,
                    reason: format!("c_rate {} is not positive", s.c_rate),
                });
            }
            if !(s.soc_span > 0.0 && s.soc_span <= 1.0) {
                return Err(DatasetError::InvalidProtocol {
                    cell_id,
                    reason: format!("soc_span {} outside (0, 1]", s.soc_span),
                });
            }
        }
        let sum: f64 = steps.iter().map(|s| s.soc_span).sum();
        if (sum - 1.0).abs() > SPAN_TOLERANCE {
            return Err(DatasetError::SpanSum { cell_id, sum });
        }
        Ok(Self { cell_id, steps })
    }

    /// Convenience constructor from `(c_rate, soc_span)` pairs.
    pub fn from_pairs(cell_id: impl Into<String>, pairs: &[(f64, f64)]) -> Result<Self, DatasetError> {
        Self::new(cell_id, pairs.iter().map(|&(c_rate, soc_span)| ChargeStep { c_rate, soc_span }).collect())
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn steps(&self) -> &[ChargeStep] {
        &self.steps
    }
}

/// One discharge curve: voltage (non-increasing) against discharged capacity
/// in Ah (non-decreasing).
#[derive(Debug, Clone, PartialEq)]
pub struct DischargeCurve {
    voltage: Vec<f64>,
    capacity_ah: Vec<f64>,
}

impl DischargeCurve {
    pub fn new(voltage: Vec<f64>, capacity_ah: Vec<f64>) -> Result<Self, String> {
        if voltage.len() != capacity_ah.len() {
            return Err(format!("{} voltage samples but {} capacity samples", voltage.len(), capacity_ah.len()));
        }
        if voltage.len() < 2 {
            return Err("fewer than 2 points".into());
        }
        if voltage.iter().chain(&capacity_ah).any(|v| !v.is_finite()) {
            return Err("non-finite sample".into());
        }
        if let Some(i) = voltage.windows(2).position(|w| w[1] > w[0]) {
            return Err(format!("voltage not sorted descending at sample {}", i + 1));
        }
        if let Some(i) = capacity_ah.windows(2).position(|w| w[1] < w[0]) {
            return Err(format!("capacity decreases at sample {}", i + 1));
        }
        Ok(Self { voltage, capacity_ah })
    }

    pub fn voltage(&self) -> &[f64] {
        &self.voltage
    }

    pub fn capacity_ah(&self) -> &[f64] {
        &self.capacity_ah
    }

    /// Total discharged capacity over the curve.
    pub fn total_capacity(&self) -> f64 {
        self.capacity_ah[self.capacity_ah.len() - 1]
    }

    pub fn scaled_capacity(&self, s: f64) -> Self {
        Self { voltage: self.voltage.clone(), capacity_ah: self.capacity_ah.iter().map(|q| q * s).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: String,
    pub protocol: ChargeProtocol,
    pub cycles: BTreeMap<u32, DischargeCurve>,
    pub eol_days: Option<f64>,
}

impl CellRecord {
    pub fn new(
        protocol: ChargeProtocol,
        cycles: BTreeMap<u32, DischargeCurve>,
        eol_days: Option<f64>,
    ) -> Result<Self, DatasetError> {
        let cell_id = protocol.cell_id().to_string();
        if cycles.contains_key(&0) {
            return Err(DatasetError::InvalidCurve { cell_id, cycle: 0, reason: "cycle index must be positive".into() });
        }
        if let Some(d) = eol_days {
            if !(d > 0.0 && d.is_finite()) {
                return Err(DatasetError::InvalidProtocol { cell_id, reason: format!("eol_days {d} is not positive") });
            }
        }
        Ok(Self { cell_id, protocol, cycles, eol_days })
    }

    /// Feature cycles (2, 10, 100) absent from this record.
    pub fn missing_feature_cycles(&self) -> Vec<u32> {
        FEATURE_CYCLES.iter().copied().filter(|c| !self.cycles.contains_key(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTransform {
    Identity,
    #[default]
    Log10,
}

impl LabelTransform {
    pub fn forward(self, days: f64) -> f64 {
        match self {
            LabelTransform::Identity => days,
            LabelTransform::Log10 => days.log10(),
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            LabelTransform::Identity => y,
            LabelTransform::Log10 => 10f64.powf(y),
        }
    }
}

impl std::str::FromStr for LabelTransform {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(LabelTransform::Identity),
            "log10" => Ok(LabelTransform::Log10),
            other => Err(format!("unknown label transform {other:?} (expected identity or log10)")),
        }
    }
}

/// One row of the feature table. `label` is the end-of-life in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub cell_id: String,
    pub g: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub label: Option<f64>,
}

impl FeatureRow {
    pub fn individual(&self) -> [f64; 3] {
        [self.f1, self.f2, self.f3]
    }
}

/// Feature rows keyed by unique cell id. Labels are stored in days;
/// `label_transform` records the space the models regress in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    rows: Vec<FeatureRow>,
    label_transform: LabelTransform,
}

impl FeatureTable {
    pub fn new(rows: Vec<FeatureRow>, label_transform: LabelTransform) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.cell_id.as_str()) {
                return Err(DatasetError::DuplicateCellId(r.cell_id.clone()));
            }
            if [r.g, r.f1, r.f2, r.f3].iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::InvalidConfig {
                    field: "feature row",
                    reason: format!("non-finite feature for cell {:?}", r.cell_id),
                });
            }
            if let Some(label) = r.label {
                if !label.is_finite() || (label_transform == LabelTransform::Log10 && label <= 0.0) {
                    return Err(DatasetError::NonPositiveLabel { cell_id: r.cell_id.clone(), label });
                }
            }
        }
        Ok(Self { rows, label_transform })
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn label_transform(&self) -> LabelTransform {
        self.label_transform
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, cell_id: &str) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.cell_id == cell_id)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(|r| r.label.is_some())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.rows.iter().all(|r| r.label.is_some())
    }

    /// Sub-table with the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable { rows: indices.iter().map(|&i| self.rows[i].clone()).collect(), label_transform: self.label_transform }
    }

    pub fn with_transform(mut self, label_transform: LabelTransform) -> Result<Self, DatasetError> {
        let rows = std::mem::take(&mut self.rows);
        FeatureTable::new(rows, label_transform)
    }
}
