use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, TelemetrySample, Trace};
use crate::phy::arfcn_to_mhz;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Rsrp,
    Rsrq,
    Sinr,
    /// SSB carrier frequency in MHz, converted from the ARFCN.
    FrequencyMhz,
    Throughput,
    RbAlloc,
    SchedCount,
    PucchTx,
    Bandwidth,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::Rsrp => "rsrp_dbm",
            Feature::Rsrq => "rsrq_db",
            Feature::Sinr => "sinr_db",
            Feature::FrequencyMhz => "ssb_freq_mhz",
            Feature::Throughput => "thpt_mbps",
            Feature::RbAlloc => "rb_alloc",
            Feature::SchedCount => "sched_count",
            Feature::PucchTx => "pucch_tx_dbm",
            Feature::Bandwidth => "bw_mhz",
        }
    }

    /// The optional CSV column this feature depends on, if any.
    pub fn column(self) -> Option<&'static str> {
        match self {
            Feature::RbAlloc => Some("rb_alloc"),
            Feature::SchedCount => Some("sched_count"),
            Feature::PucchTx => Some("pucch_tx_dbm"),
            Feature::Bandwidth => Some("bw_mhz"),
            _ => None,
        }
    }

    pub fn extract(self, s: &TelemetrySample) -> Option<f64> {
        match self {
            Feature::Rsrp => Some(s.rsrp_dbm),
            Feature::Rsrq => Some(s.rsrq_db),
            Feature::Sinr => Some(s.sinr_db),
            Feature::FrequencyMhz => arfcn_to_mhz(s.ssb_arfcn).ok(),
            Feature::Throughput => Some(s.thpt_mbps),
            Feature::RbAlloc => s.rb_alloc.map(f64::from),
            Feature::SchedCount => s.sched_count.map(f64::from),
            Feature::PucchTx => s.pucch_tx_dbm,
            Feature::Bandwidth => s.bw_mhz,
        }
    }
}

/// Named projections of a sample into a model input row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    /// Measurements an app can read from the Android telephony API.
    AndroidApi,
    /// Android API fields plus modem-level scheduling and power data.
    Full,
    /// RSRP, RB allocation, PUCCH power and past throughput.
    Sure,
}

const ANDROID_API: [Feature; 5] = [
    Feature::Rsrp,
    Feature::Rsrq,
    Feature::Sinr,
    Feature::FrequencyMhz,
    Feature::Throughput,
];
const FULL: [Feature; 9] = [
    Feature::Rsrp,
    Feature::Rsrq,
    Feature::Sinr,
    Feature::FrequencyMhz,
    Feature::Throughput,
    Feature::RbAlloc,
    Feature::SchedCount,
    Feature::PucchTx,
    Feature::Bandwidth,
];
const SURE: [Feature; 4] = [Feature::Rsrp, Feature::RbAlloc, Feature::PucchTx, Feature::Throughput];

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::AndroidApi, FeatureSet::Full, FeatureSet::Sure];

    pub fn features(self) -> &'static [Feature] {
        match self {
            FeatureSet::AndroidApi => &ANDROID_API,
            FeatureSet::Full => &FULL,
            FeatureSet::Sure => &SURE,
        }
    }

    pub fn width(self) -> usize {
        self.features().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::AndroidApi => "android-api",
            FeatureSet::Full => "full",
            FeatureSet::Sure => "sure",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "android-api" | "android" | "androidapi" => Ok(FeatureSet::AndroidApi),
            "full" => Ok(FeatureSet::Full),
            "sure" => Ok(FeatureSet::Sure),
            other => Err(format!("unknown feature set {other:?} (android-api, full, sure)")),
        }
    }
}

/// A trace projected onto a feature set: `rows × width` values plus the
/// throughput target column and the gap-free segments.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub trace_id: String,
    pub feature_set: FeatureSet,
    pub times: Vec<u32>,
    pub values: Vec<f64>,
    pub target: Vec<f64>,
    pub segments: Vec<Range<usize>>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.target.len()
    }

    pub fn width(&self) -> usize {
        self.feature_set.width()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.width()).copied()
    }

    pub fn to_tensor(&self) -> Result<Tensor, crate::tensor::TensorError> {
        Tensor::new(vec![self.rows(), self.width()], self.values.clone())
    }
}

/// Projects every sample of `trace` onto `fs` in canonical column order.
pub fn project_features(trace: &Trace, fs: FeatureSet) -> Result<FeatureMatrix, DataError> {
    let feats = fs.features();
    let mut values = Vec::with_capacity(trace.len() * feats.len());
    let mut target = Vec::with_capacity(trace.len());
    let mut times = Vec::with_capacity(trace.len());
    for s in trace.samples() {
        for &f in feats {
            let v = f.extract(s).ok_or(DataError::MissingField {
                field: f.name(),
                feature_set: fs,
            })?;
            values.push(v);
        }
        target.push(s.thpt_mbps);
        times.push(s.t);
    }
    Ok(FeatureMatrix {
        trace_id: trace.meta.id.clone(),
        feature_set: fs,
        times,
        values,
        target,
        segments: trace.segments(),
    })
}

/// Per-feature z-score statistics (population standard deviation) and the
/// throughput target's statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_set: FeatureSet,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn moments(values: &[f64], name: &str) -> Result<(f64, f64), DataError> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let distinct = values.first().is_some_and(|f| values.iter().any(|v| v != f));
    if !distinct || var <= 0.0 {
        return Err(DataError::ConstantFeature(name.to_string()));
    }
    Ok((mean, var.sqrt()))
}

impl Normalizer {
    pub fn fit(mats: &[FeatureMatrix]) -> Result<Self, DataError> {
        let Some(first) = mats.first() else {
            return Err(DataError::Invalid("cannot fit a normalizer on no data".into()));
        };
        let fs = first.feature_set;
        if let Some(m) = mats.iter().find(|m| m.feature_set != fs) {
            return Err(DataError::FeatureSetMismatch { expected: fs, actual: m.feature_set });
        }
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (j, f) in fs.features().iter().enumerate() {
            let (m, s) = moments(&mats.iter().flat_map(|m| m.column(j)).collect::<Vec<_>>(), f.name())?;
            mean.push(m);
            std.push(s);
        }
        let (target_mean, target_std) = moments(&mats.iter().flat_map(|m| m.target.iter().copied()).collect::<Vec<_>>(), "target")?;
        Ok(Normalizer { feature_set: fs, mean, std, target_mean, target_std })
    }

    fn check(&self, m: &FeatureMatrix) -> Result<(), DataError> {
        if m.feature_set != self.feature_set {
            return Err(DataError::FeatureSetMismatch { expected: self.feature_set, actual: m.feature_set });
        }
        Ok(())
    }

    /// Z-scores features and target.
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, DataError> {
        self.check(m)?;
        let w = m.width();
        let mut out = m.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = (*v - self.mean[i % w]) / self.std[i % w];
        }
        for v in out.target.iter_mut() {
            *v = self.normalize_target(*v);
        }
        Ok(out)
    }

    pub fn invert(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, DataError> {
        self.check(m)?;
        let w = m.width();
        let mut out = m.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = *v * self.std[i % w] + self.mean[i % w];
        }
        for v in out.target.iter_mut() {
            *v = self.denormalize_target(*v);
        }
        Ok(out)
    }

    pub fn normalize_target(&self, mbps: f64) -> f64 {
        (mbps - self.target_mean) / self.target_std
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(fs: FeatureSet, rows: &[Vec<f64>]) -> FeatureMatrix {
        let w = fs.width();
        let thpt = fs.features().iter().position(|f| *f == Feature::Throughput).unwrap();
        FeatureMatrix {
            trace_id: "m".into(),
            feature_set: fs,
            times: (0..rows.len() as u32).collect(),
            values: rows.iter().flat_map(|r| {
                assert_eq!(r.len(), w);
                r.iter().copied()
            }).collect(),
            target: rows.iter().map(|r| r[thpt]).collect(),
            segments: vec![0..rows.len()],
        }
    }

    #[test]
    fn widths() {
        assert_eq!(FeatureSet::AndroidApi.width(), 5);
        assert_eq!(FeatureSet::Full.width(), 9);
        assert_eq!(FeatureSet::Sure.width(), 4);
        assert_eq!(&FeatureSet::Full.features()[..5], FeatureSet::AndroidApi.features());
    }

    #[test]
    fn hand_z_score() {
        // column [0, 2]: mean 1, population std 1
        let m = matrix(FeatureSet::Sure, &[vec![0.0, 0.0, 0.0, 0.0], vec![2.0, 2.0, 2.0, 2.0]]);
        let n = Normalizer::fit(std::slice::from_ref(&m)).unwrap();
        assert_eq!(n.mean, vec![1.0; 4]);
        assert_eq!(n.std, vec![1.0; 4]);
        let z = n.apply(&m).unwrap();
        assert_eq!(z.column(0).collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert_eq!(z.target, vec![-1.0, 1.0]);
    }

    #[test]
    fn standardized_data_is_fixed_point() {
        let m = matrix(FeatureSet::Sure, &[vec![-1.0, 1.0, -1.0, 1.0], vec![1.0, -1.0, 1.0, -1.0]]);
        let n = Normalizer::fit(std::slice::from_ref(&m)).unwrap();
        let z = n.apply(&m).unwrap();
        for (a, b) in z.values.iter().zip(&m.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_rejected() {
        let m = matrix(FeatureSet::Sure, &[vec![5.0, 1.0, 2.0, 3.0], vec![5.0, 2.0, 3.0, 4.0]]);
        match Normalizer::fit(&[m]) {
            Err(DataError::ConstantFeature(name)) => assert_eq!(name, "rsrp_dbm"),
            other => panic!("expected constant-feature error, got {other:?}"),
        }
    }

    #[test]
    fn parse_feature_set_names() {
        assert_eq!("android-api".parse::<FeatureSet>().unwrap(), FeatureSet::AndroidApi);
        assert_eq!("SURE".parse::<FeatureSet>().unwrap(), FeatureSet::Sure);
        assert!("lte".parse::<FeatureSet>().is_err());
    }
}
