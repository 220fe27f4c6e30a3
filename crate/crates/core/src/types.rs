//! Shared domain vocabulary: the 34-column feature schema, labels, cycles and datasets.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of columns in every cycle matrix.
pub const FEATURE_COUNT: usize = 34;
/// Number of measured signal channels; the remaining columns repeat the setpoints.
pub const SIGNAL_COUNT: usize = 23;
/// Number of machine setpoints.
pub const SETPOINT_COUNT: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid setpoints: {0}")]
    InvalidSetpoints(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Signal,
    Setpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub unit: String,
    pub kind: FeatureKind,
}

const CANONICAL: [(&str, &str, FeatureKind); FEATURE_COUNT] = [
    ("screw_position_mm", "mm", FeatureKind::Signal),
    ("screw_velocity_mm_s", "mm/s", FeatureKind::Signal),
    ("injection_pressure_bar", "bar", FeatureKind::Signal),
    ("cavity_pressure_bar", "bar", FeatureKind::Signal),
    ("holding_pressure_actual_bar", "bar", FeatureKind::Signal),
    ("back_pressure_actual_bar", "bar", FeatureKind::Signal),
    ("melt_temp_C", "°C", FeatureKind::Signal),
    ("mold_temp_C", "°C", FeatureKind::Signal),
    ("barrel_zone1_C", "°C", FeatureKind::Signal),
    ("barrel_zone2_C", "°C", FeatureKind::Signal),
    ("barrel_zone3_C", "°C", FeatureKind::Signal),
    ("nozzle_temp_C", "°C", FeatureKind::Signal),
    ("screw_rpm_actual", "1/min", FeatureKind::Signal),
    ("fill_volume_cm3", "cm³", FeatureKind::Signal),
    ("flow_rate_cm3_s", "cm³/s", FeatureKind::Signal),
    ("clamp_force_kN", "kN", FeatureKind::Signal),
    ("ejector_position_mm", "mm", FeatureKind::Signal),
    ("ejector_speed_mm_s", "mm/s", FeatureKind::Signal),
    ("coolant_temp_C", "°C", FeatureKind::Signal),
    ("coolant_flow_l_min", "l/min", FeatureKind::Signal),
    ("cushion_mm", "mm", FeatureKind::Signal),
    ("phase_id", "-", FeatureKind::Signal),
    ("elapsed_time_s", "s", FeatureKind::Signal),
    ("set_injection_speed_mm_s", "mm/s", FeatureKind::Setpoint),
    ("set_changeover_point_mm", "mm", FeatureKind::Setpoint),
    ("set_holding_pressure_bar", "bar", FeatureKind::Setpoint),
    ("set_holding_time_s", "s", FeatureKind::Setpoint),
    ("set_back_pressure_bar", "bar", FeatureKind::Setpoint),
    ("set_screw_rpm", "1/min", FeatureKind::Setpoint),
    ("set_injection_volume_cm3", "cm³", FeatureKind::Setpoint),
    ("set_piston_stroke_mm", "mm", FeatureKind::Setpoint),
    ("set_mold_temp_C", "°C", FeatureKind::Setpoint),
    ("set_melt_temp_C", "°C", FeatureKind::Setpoint),
    ("set_cooling_time_s", "s", FeatureKind::Setpoint),
];

/// Column indices of the signal channels.
pub mod col {
    pub const SCREW_POSITION: usize = 0;
    pub const SCREW_VELOCITY: usize = 1;
    pub const INJECTION_PRESSURE: usize = 2;
    pub const CAVITY_PRESSURE: usize = 3;
    pub const HOLDING_PRESSURE: usize = 4;
    pub const BACK_PRESSURE: usize = 5;
    pub const MELT_TEMP: usize = 6;
    pub const MOLD_TEMP: usize = 7;
    pub const BARREL_ZONE1: usize = 8;
    pub const BARREL_ZONE2: usize = 9;
    pub const BARREL_ZONE3: usize = 10;
    pub const NOZZLE_TEMP: usize = 11;
    pub const SCREW_RPM: usize = 12;
    pub const FILL_VOLUME: usize = 13;
    pub const FLOW_RATE: usize = 14;
    pub const CLAMP_FORCE: usize = 15;
    pub const EJECTOR_POSITION: usize = 16;
    pub const EJECTOR_SPEED: usize = 17;
    pub const COOLANT_TEMP: usize = 18;
    pub const COOLANT_FLOW: usize = 19;
    pub const CUSHION: usize = 20;
    pub const PHASE_ID: usize = 21;
    pub const ELAPSED_TIME: usize = 22;
    /// First setpoint column; setpoints follow in [`super::ProcessSetpoints`] field order.
    pub const SETPOINTS: usize = 23;
}

/// Ordered description of the 34 input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl FeatureSchema {
    /// The canonical schema used throughout the toolkit.
    pub fn canonical() -> Self {
        Self {
            features: CANONICAL
                .iter()
                .map(|(name, unit, kind)| Feature {
                    name: (*name).to_string(),
                    unit: (*unit).to_string(),
                    kind: *kind,
                })
                .collect(),
        }
    }

    pub fn new(features: Vec<Feature>) -> Result<Self, TypeError> {
        if features.len() != FEATURE_COUNT {
            return Err(TypeError::InvalidSchema(format!(
                "expected {FEATURE_COUNT} features, got {}",
                features.len()
            )));
        }
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(TypeError::InvalidSchema(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Hex SHA-256 over `name|unit|kind` lines in column order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for f in &self.features {
            let kind = match f.kind {
                FeatureKind::Signal => "signal",
                FeatureKind::Setpoint => "setpoint",
            };
            hasher.update(format!("{}|{}|{}\n", f.name, f.unit, kind).as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Good,
    NotGood,
}

impl Label {
    /// Regression target: Good → 1.0, NotGood → 0.0.
    pub fn target(self) -> f64 {
        match self {
            Label::Good => 1.0,
            Label::NotGood => 0.0,
        }
    }

    pub fn is_good(self) -> bool {
        self == Label::Good
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Good => "Good",
            Label::NotGood => "NotGood",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Real,
    Synthetic,
}

/// Machine setting parameters for one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSetpoints {
    /// mm/s
    pub injection_speed: f64,
    /// mm, screw position at which injection switches to holding
    pub changeover_point: f64,
    /// bar
    pub holding_pressure: f64,
    /// s
    pub holding_time: f64,
    /// bar
    pub back_pressure: f64,
    /// 1/min, dosing (plastication) speed
    pub screw_rpm: f64,
    /// cm³
    pub injection_volume: f64,
    /// mm, screw position at the end of dosing
    pub piston_stroke: f64,
    /// °C
    pub mold_temp: f64,
    /// °C
    pub melt_temp: f64,
    /// s
    pub cooling_time: f64,
}

impl ProcessSetpoints {
    /// Nominal operating point of the built-in process model.
    pub fn nominal() -> Self {
        Self {
            injection_speed: 600.0,
            changeover_point: 42.5,
            holding_pressure: 600.0,
            holding_time: 0.2,
            back_pressure: 80.0,
            screw_rpm: 180.0,
            injection_volume: 52.0,
            piston_stroke: 285.0,
            mold_temp: 60.0,
            melt_temp: 230.0,
            cooling_time: 0.3,
        }
    }

    pub fn to_array(&self) -> [f64; SETPOINT_COUNT] {
        [
            self.injection_speed,
            self.changeover_point,
            self.holding_pressure,
            self.holding_time,
            self.back_pressure,
            self.screw_rpm,
            self.injection_volume,
            self.piston_stroke,
            self.mold_temp,
            self.melt_temp,
            self.cooling_time,
        ]
    }

    pub fn from_array(v: [f64; SETPOINT_COUNT]) -> Self {
        Self {
            injection_speed: v[0],
            changeover_point: v[1],
            holding_pressure: v[2],
            holding_time: v[3],
            back_pressure: v[4],
            screw_rpm: v[5],
            injection_volume: v[6],
            piston_stroke: v[7],
            mold_temp: v[8],
            melt_temp: v[9],
            cooling_time: v[10],
        }
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if let Some(bad) = self.to_array().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(TypeError::InvalidSetpoints(format!(
                "all setpoints must be finite and strictly positive, found {bad}"
            )));
        }
        if self.changeover_point >= self.piston_stroke {
            return Err(TypeError::InvalidSetpoints(format!(
                "changeover point {} must lie below piston stroke {}",
                self.changeover_point, self.piston_stroke
            )));
        }
        Ok(())
    }
}

/// Part-quality outcome of a simulated cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityIndicators {
    /// Filled fraction of the cavity volume, in [0, 1].
    pub fill_fraction: f64,
    /// bar
    pub peak_cavity_pressure: f64,
    /// mm
    pub min_cushion: f64,
}

/// One production cycle: a T×34 matrix sampled at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle_id: String,
    pub source: Source,
    pub label: Label,
    pub sample_period_ms: u32,
    pub samples: Array2<f64>,
    pub setpoints: ProcessSetpoints,
    pub quality: Option<QualityIndicators>,
}

impl CycleRecord {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ColumnCount { expected: usize, found: usize },
    TooShort { rows: usize },
    ZeroSamplePeriod,
    NonFinite { row: usize, col: usize },
    SetpointNotConstant { row: usize, col: usize },
    SetpointMismatch { col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ColumnCount { expected, found } => {
                write!(f, "column count: expected {expected}, found {found}")
            }
            Violation::TooShort { rows } => write!(f, "too short: {rows} rows, need at least 2"),
            Violation::ZeroSamplePeriod => write!(f, "sample period must be positive"),
            Violation::NonFinite { row, col } => write!(f, "non-finite value at row {row}, col {col}"),
            Violation::SetpointNotConstant { row, col } => {
                write!(f, "setpoint column {col} changes at row {row}")
            }
            Violation::SetpointMismatch { col } => {
                write!(f, "setpoint column {col} disagrees with record setpoints")
            }
        }
    }
}

/// Check a record against the schema. Returns every violation found; empty means valid.
pub fn validate_cycle(record: &CycleRecord, schema: &FeatureSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let (rows, cols) = record.samples.dim();
    if cols != schema.len() {
        out.push(Violation::ColumnCount {
            expected: schema.len(),
            found: cols,
        });
    }
    if rows < 2 {
        out.push(Violation::TooShort { rows });
    }
    if record.sample_period_ms == 0 {
        out.push(Violation::ZeroSamplePeriod);
    }
    for ((r, c), v) in record.samples.indexed_iter() {
        if !v.is_finite() {
            out.push(Violation::NonFinite { row: r, col: c });
        }
    }
    if cols == schema.len() && rows > 0 {
        let expected = record.setpoints.to_array();
        for (c, feature) in schema.features().iter().enumerate() {
            if feature.kind != FeatureKind::Setpoint {
                continue;
            }
            let first = record.samples[[0, c]];
            if let Some(r) = (1..rows).find(|&r| record.samples[[r, c]].to_bits() != first.to_bits())
            {
                out.push(Violation::SetpointNotConstant { row: r, col: c });
            }
            if c >= col::SETPOINTS
                && c - col::SETPOINTS < SETPOINT_COUNT
                && first.to_bits() != expected[c - col::SETPOINTS].to_bits()
            {
                out.push(Violation::SetpointMismatch { col: c });
            }
        }
    }
    out
}

/// A named collection of cycles sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: Arc<FeatureSchema>,
    pub records: Vec<CycleRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<CycleRecord>) -> Self {
        Self {
            name: name.into(),
            schema: Arc::new(FeatureSchema::canonical()),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn count_source(&self, source: Source) -> usize {
        self.records.iter().filter(|r| r.source == source).count()
    }

    /// Same records re-tagged with another source.
    pub fn with_source(mut self, source: Source) -> Self {
        for r in &mut self.records {
            r.source = source;
        }
        self
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// Fractions of Good and NotGood records.
pub fn class_balance(dataset: &Dataset) -> Result<(f64, f64), TypeError> {
    if dataset.is_empty() {
        return Err(TypeError::EmptyDataset);
    }
    let n = dataset.len() as f64;
    let good = dataset.count(Label::Good) as f64 / n;
    let not_good = dataset.count(Label::NotGood) as f64 / n;
    Ok((good, not_good))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A schema-conforming record with a simple deterministic signal pattern.
    pub fn record(id: &str, rows: usize, label: Label) -> CycleRecord {
        let setpoints = ProcessSetpoints::nominal();
        let sp = setpoints.to_array();
        let samples = Array2::from_shape_fn((rows, FEATURE_COUNT), |(r, c)| {
            if c >= col::SETPOINTS {
                sp[c - col::SETPOINTS]
            } else {
                (r * FEATURE_COUNT + c) as f64 * 0.25
            }
        });
        CycleRecord {
            cycle_id: id.to_string(),
            source: Source::Real,
            label,
            sample_period_ms: 10,
            samples,
            setpoints,
            quality: None,
        }
    }

    pub fn dataset(good: usize, not_good: usize) -> Dataset {
        let records = (0..good + not_good)
            .map(|i| {
                let label = if i < good { Label::Good } else { Label::NotGood };
                record(&format!("c{i:05}"), 8, label)
            })
            .collect();
        Dataset::new("fixture", records)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_schema_shape() {
        let s = FeatureSchema::canonical();
        assert_eq!(s.len(), FEATURE_COUNT);
        let signals = s.features().iter().filter(|f| f.kind == FeatureKind::Signal).count();
        assert_eq!(signals, SIGNAL_COUNT);
        let names: HashSet<&str> = s.names().collect();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(s.index_of("cushion_mm"), Some(col::CUSHION));
        assert_eq!(s.index_of("set_injection_speed_mm_s"), Some(col::SETPOINTS));
        assert!(FeatureSchema::new(s.features()[..33].to_vec()).is_err());
    }

    #[test]
    fn fingerprint_tracks_edits() {
        let a = FeatureSchema::canonical();
        let mut feats = a.features().to_vec();
        feats[3].unit = "MPa".into();
        let b = FeatureSchema::new(feats).unwrap();
        assert_eq!(a.fingerprint(), FeatureSchema::canonical().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn balance_reference_split() {
        let d = dataset(622, 478);
        let (g, n) = class_balance(&d).unwrap();
        assert_eq!(format!("{g:.3}"), "0.565");
        assert_eq!(format!("{n:.3}"), "0.435");
        assert!((g + n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balance_trivial_cases() {
        assert_eq!(class_balance(&dataset(10, 0)).unwrap(), (1.0, 0.0));
        assert_eq!(class_balance(&dataset(2, 2)).unwrap(), (0.5, 0.5));
        assert_eq!(class_balance(&dataset(0, 0)), Err(TypeError::EmptyDataset));
    }

    #[test]
    fn valid_record_has_no_violations() {
        let schema = FeatureSchema::canonical();
        assert!(validate_cycle(&record("a", 5, Label::Good), &schema).is_empty());
    }

    #[test]
    fn column_count_violation() {
        let schema = FeatureSchema::canonical();
        let mut r = record("a", 5, Label::Good);
        r.samples = r.samples.slice(ndarray::s![.., ..33]).to_owned();
        let v = validate_cycle(&r, &schema);
        assert_eq!(
            v,
            vec![Violation::ColumnCount {
                expected: 34,
                found: 33
            }]
        );
        assert!(v[0].to_string().contains("column count"));
    }

    #[test]
    fn nan_violation_names_cell() {
        let schema = FeatureSchema::canonical();
        let mut r = record("a", 5, Label::Good);
        r.samples[[3, 7]] = f64::NAN;
        let v = validate_cycle(&r, &schema);
        assert_eq!(v, vec![Violation::NonFinite { row: 3, col: 7 }]);
        assert!(v[0].to_string().contains("row 3"));
    }

    #[test]
    fn collects_every_violation() {
        let schema = FeatureSchema::canonical();
        let mut r = record("a", 1, Label::Good);
        r.sample_period_ms = 0;
        r.samples[[0, 0]] = f64::INFINITY;
        let v = validate_cycle(&r, &schema);
        assert!(v.contains(&Violation::TooShort { rows: 1 }));
        assert!(v.contains(&Violation::ZeroSamplePeriod));
        assert!(v.contains(&Violation::NonFinite { row: 0, col: 0 }));

        let mut r = record("b", 4, Label::Good);
        r.samples[[2, col::SETPOINTS + 1]] += 1.0;
        assert_eq!(
            validate_cycle(&r, &schema),
            vec![Violation::SetpointNotConstant {
                row: 2,
                col: col::SETPOINTS + 1
            }]
        );
    }

    #[test]
    fn setpoint_validation() {
        assert!(ProcessSetpoints::nominal().validate().is_ok());
        let mut s = ProcessSetpoints::nominal();
        s.changeover_point = s.piston_stroke;
        assert!(s.validate().is_err());
        let mut s = ProcessSetpoints::nominal();
        s.cooling_time = 0.0;
        assert!(s.validate().is_err());
        let s = ProcessSetpoints::nominal();
        assert_eq!(ProcessSetpoints::from_array(s.to_array()), s);
    }

    proptest! {
        #[test]
        fn balance_reconstructs_counts(good in 0usize..400, bad in 0usize..400) {
            prop_assume!(good + bad > 0);
            let d = dataset(good, bad);
            let (g, n) = class_balance(&d).unwrap();
            let total = d.len() as f64;
            prop_assert!((g * total - good as f64).abs() <= 1e-12 * total.max(1.0));
            prop_assert!((n * total - bad as f64).abs() <= 1e-12 * total.max(1.0));
            prop_assert!((g + n - 1.0).abs() <= 1e-12);
        }
    }
}
