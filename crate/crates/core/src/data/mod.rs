//! Telemetry traces: the per-second sample model, CSV interchange, feature
//! projection, normalization and sliding-window datasets.

mod csv_io;
mod features;
mod window;

pub use csv_io::{parse_trace_csv, read_trace, write_trace, write_trace_csv, COLUMNS};
pub use features::{project_features, Feature, FeatureMatrix, FeatureSet, Normalizer};
pub use window::{clamp_nonnegative, make_windows, window_count, WindowOrigin, WindowedDataset, WINDOW};

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::BandClass;

pub const RSRP_RANGE_DBM: (f64, f64) = (-156.0, -31.0);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema: missing column `{column}`")]
    MissingColumn { column: String },
    #[error("schema: unknown column `{column}`")]
    UnknownColumn { column: String },
    #[error("schema: trace has no `{field}` values needed by the {feature_set} feature set")]
    MissingField { field: &'static str, feature_set: FeatureSet },
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("feature `{0}` is constant in the fitting data")]
    ConstantFeature(String),
    #[error("dataset is empty: no trace is long enough for a {window}-sample window plus a {horizon}-step target")]
    EmptyDataset { window: usize, horizon: usize },
    #[error("feature set mismatch: expected {expected}, got {actual}")]
    FeatureSetMismatch { expected: FeatureSet, actual: FeatureSet },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One 1 Hz record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t: u32,
    pub rsrp_dbm: f64,
    pub rsrq_db: f64,
    pub sinr_db: f64,
    pub ssb_arfcn: u64,
    pub thpt_mbps: f64,
    pub rb_alloc: Option<u32>,
    pub sched_count: Option<u32>,
    pub pucch_tx_dbm: Option<f64>,
    pub bw_mhz: Option<f64>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub speed_kmh: Option<f64>,
}

impl TelemetrySample {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.rsrp_dbm, self.rsrq_db, self.sinr_db, self.thpt_mbps]
            .into_iter()
            .chain([self.pucch_tx_dbm, self.bw_mhz, self.lat, self.lon, self.speed_kmh].into_iter().flatten())
            .all(f64::is_finite);
        if !finite {
            return Err("non-finite measurement".into());
        }
        if self.thpt_mbps < 0.0 {
            return Err(format!("negative throughput {}", self.thpt_mbps));
        }
        let (lo, hi) = RSRP_RANGE_DBM;
        if !(lo..=hi).contains(&self.rsrp_dbm) {
            return Err(format!("RSRP {} dBm outside [{lo}, {hi}]", self.rsrp_dbm));
        }
        if let Some(bw) = self.bw_mhz {
            if bw <= 0.0 {
                return Err(format!("non-positive bandwidth {bw}"));
            }
        }
        if let Some(s) = self.speed_kmh {
            if s < 0.0 {
                return Err(format!("negative speed {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceRow {
    Sample(TelemetrySample),
    /// A missing second.
    Gap { t: u32 },
}

impl TraceRow {
    pub fn t(&self) -> u32 {
        match self {
            TraceRow::Sample(s) => s.t,
            TraceRow::Gap { t } => *t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// Stable identifier used in reports (file stem for parsed traces).
    pub id: String,
    pub scenario: Option<String>,
    pub band_lock: Option<BandClass>,
    pub source: Option<String>,
}

/// Ordered per-second samples with explicit gap markers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    rows: Vec<TraceRow>,
}

impl Trace {
    /// Validates every sample and the unit-step timeline.
    pub fn new(meta: TraceMeta, rows: Vec<TraceRow>) -> Result<Self, DataError> {
        for (i, r) in rows.iter().enumerate() {
            if let TraceRow::Sample(s) = r {
                s.validate().map_err(|m| DataError::Invalid(format!("t={}: {m}", s.t)))?;
            }
            if i > 0 {
                let prev = rows[i - 1].t();
                if r.t() != prev.wrapping_add(1) || r.t() <= prev {
                    return Err(DataError::Invalid(format!(
                        "timestamp {} follows {prev}; gaps must be explicit",
                        r.t()
                    )));
                }
            }
        }
        Ok(Trace { meta, rows })
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn samples(&self) -> impl Iterator<Item = &TelemetrySample> {
        self.rows.iter().filter_map(|r| match r {
            TraceRow::Sample(s) => Some(s),
            TraceRow::Gap { .. } => None,
        })
    }

    /// Number of real samples (gaps excluded).
    pub fn len(&self) -> usize {
        self.samples().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gap-free runs, as ranges into the sample sequence.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut idx = 0;
        for r in &self.rows {
            match r {
                TraceRow::Sample(_) => idx += 1,
                TraceRow::Gap { .. } => {
                    if idx > start {
                        out.push(start..idx);
                    }
                    start = idx;
                }
            }
        }
        if idx > start {
            out.push(start..idx);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(t: u32, thpt: f64) -> TelemetrySample {
        TelemetrySample {
            t,
            rsrp_dbm: -90.0,
            rsrq_db: -15.0,
            sinr_db: 10.0,
            ssb_arfcn: 368_410,
            thpt_mbps: thpt,
            rb_alloc: None,
            sched_count: None,
            pucch_tx_dbm: None,
            bw_mhz: None,
            lat: None,
            lon: None,
            speed_kmh: None,
        }
    }

    #[test]
    fn segments_split_on_gaps() {
        let rows = vec![
            TraceRow::Sample(sample(0, 1.0)),
            TraceRow::Sample(sample(1, 1.0)),
            TraceRow::Gap { t: 2 },
            TraceRow::Gap { t: 3 },
            TraceRow::Sample(sample(4, 1.0)),
        ];
        let tr = Trace::new(TraceMeta::default(), rows).unwrap();
        assert_eq!(tr.segments(), vec![0..2, 2..3]);
        assert_eq!(tr.len(), 3);
    }

    #[test]
    fn timeline_must_step_by_one() {
        let rows = vec![TraceRow::Sample(sample(0, 1.0)), TraceRow::Sample(sample(2, 1.0))];
        assert!(Trace::new(TraceMeta::default(), rows).is_err());
        let rows = vec![TraceRow::Sample(sample(3, 1.0)), TraceRow::Sample(sample(3, 1.0))];
        assert!(Trace::new(TraceMeta::default(), rows).is_err());
    }

    #[test]
    fn sample_invariants() {
        assert!(sample(0, -0.1).validate().is_err());
        let mut s = sample(0, 1.0);
        s.rsrp_dbm = -20.0;
        assert!(s.validate().is_err());
        s.rsrp_dbm = -156.0;
        assert!(s.validate().is_ok());
    }
}
