//! Teacher-forced evaluation, the persistence baseline and the two metrics:
//! instantaneous RMSE and MAPE on cumulative transferred volume.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{clamp_nonnegative, make_windows, project_features, FeatureSet, Trace, WINDOW};
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec, TrainedModel};

/// Aligned per-second forecasts for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePrediction {
    pub trace_id: String,
    /// Timestamp of the predicted second.
    pub times: Vec<u32>,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
}

fn too_short(trace: &Trace) -> Error {
    Error::Eval(format!(
        "trace {:?} has no gap-free run longer than {WINDOW} samples",
        trace.meta.id
    ))
}

/// One-step forecasts from ground-truth history windows, clamped at zero.
/// A gap-free trace of length T yields T−5 predictions.
pub fn predict_trace(model: &TrainedModel, trace: &Trace) -> Result<TracePrediction> {
    let spec = model.spec();
    let raw = project_features(trace, spec.feature_set)?;
    let normed = model.normalizer().apply(&raw)?;
    let ds = make_windows(std::slice::from_ref(&normed), spec.window, 1).map_err(|_| too_short(trace))?;
    let mut pred = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, _) = ds.batch(chunk);
        pred.extend(model.predict_batch(&x)?);
    }
    let (times, truth) = ds
        .origins
        .iter()
        .map(|o| {
            let at = o.start + spec.window;
            (raw.times[at], raw.target[at])
        })
        .unzip();
    Ok(TracePrediction {
        trace_id: trace.meta.id.clone(),
        times,
        pred,
        truth,
    })
}

/// Repeats the last observed throughput; aligned with [`predict_trace`].
pub fn persistence_baseline(trace: &Trace) -> Result<TracePrediction> {
    let fs = FeatureSet::AndroidApi;
    let raw = project_features(trace, fs)?;
    let ds = make_windows(std::slice::from_ref(&raw), WINDOW, 1).map_err(|_| too_short(trace))?;
    let mut times = Vec::with_capacity(ds.len());
    let mut pred = Vec::with_capacity(ds.len());
    let mut truth = Vec::with_capacity(ds.len());
    for o in &ds.origins {
        let at = o.start + WINDOW;
        times.push(raw.times[at]);
        pred.push(raw.target[at - 1]);
        truth.push(raw.target[at]);
    }
    Ok(TracePrediction {
        trace_id: trace.meta.id.clone(),
        times,
        pred: clamp_nonnegative(&pred),
        truth,
    })
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Eval(format!(
            "length mismatch: {} predictions vs {} ground-truth values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Eval("metrics need at least one point".into()));
    }
    Ok(())
}

/// Root mean square error in Mbps.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Percentage error of the total transferred volume, `interval_s` seconds per
/// sample.
pub fn cumulative_mape(pred: &[f64], truth: &[f64], interval_s: f64) -> Result<f64> {
    check_lengths(pred, truth)?;
    let p: f64 = pred.iter().map(|v| v * interval_s).sum();
    let t: f64 = truth.iter().map(|v| v * interval_s).sum();
    if t <= 0.0 {
        return Err(Error::Eval("cumulative MAPE is undefined: ground truth carries no data".into()));
    }
    Ok(100.0 * (p - t).abs() / t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub trace_id: String,
    pub rmse_mbps: f64,
    pub cum_mape_pct: f64,
    pub accuracy_pct: f64,
    pub n_points: usize,
    pub persistence_rmse_mbps: f64,
}

impl TraceMetrics {
    pub fn new(trace_id: impl Into<String>, rmse_mbps: f64, cum_mape_pct: f64, n_points: usize, persistence_rmse_mbps: f64) -> Self {
        TraceMetrics {
            trace_id: trace_id.into(),
            rmse_mbps,
            cum_mape_pct,
            accuracy_pct: 100.0 - cum_mape_pct,
            n_points,
            persistence_rmse_mbps,
        }
    }
}

/// Point-weighted means of every metric. The result is labelled `label`.
pub fn aggregate(reports: &[TraceMetrics], label: &str) -> Result<TraceMetrics> {
    let n: usize = reports.iter().map(|r| r.n_points).sum();
    if reports.is_empty() || n == 0 {
        return Err(Error::Eval(format!("aggregate {label:?} has no points")));
    }
    let wmean = |f: fn(&TraceMetrics) -> f64| reports.iter().map(|r| f(r) * r.n_points as f64).sum::<f64>() / n as f64;
    if let [single] = reports {
        let mut out = single.clone();
        out.trace_id = label.to_string();
        return Ok(out);
    }
    Ok(TraceMetrics::new(
        label,
        wmean(|r| r.rmse_mbps),
        wmean(|r| r.cum_mape_pct),
        n,
        wmean(|r| r.persistence_rmse_mbps),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "seen" => Ok(Split::Seen),
            "unseen" => Ok(Split::Unseen),
            other => Err(format!("unknown split {other:?} (seen, unseen)")),
        }
    }
}

/// Named trace groupings for aggregation; a trace joins a group when its id
/// starts with any of the group's prefixes.
pub type Groups = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub feature_set: FeatureSet,
    pub split: Split,
    pub spec: ModelSpec,
    pub groups: Groups,
    pub traces: Vec<TraceMetrics>,
    pub aggregates: Vec<TraceMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    pub fn overall(&self) -> &TraceMetrics {
        &self.aggregates[0]
    }
}

/// Metrics for one trace, model versus persistence.
pub fn evaluate_trace(model: &TrainedModel, trace: &Trace) -> Result<TraceMetrics> {
    let p = predict_trace(model, trace)?;
    let base = persistence_baseline(trace)?;
    Ok(TraceMetrics::new(
        p.trace_id,
        rmse(&p.pred, &p.truth)?,
        cumulative_mape(&p.pred, &p.truth, 1.0)?,
        p.pred.len(),
        rmse(&base.pred, &base.truth)?,
    ))
}

/// Evaluates every trace and aggregates over all of them (`"all"`, first)
/// and over each non-empty group.
pub fn evaluate(model: &TrainedModel, traces: &[Trace], split: Split, groups: &Groups) -> Result<EvalReport> {
    let rows = traces.iter().map(|t| evaluate_trace(model, t)).collect::<Result<Vec<_>>>()?;
    let mut aggregates = vec![aggregate(&rows, "all")?];
    for (name, prefixes) in groups {
        let members: Vec<TraceMetrics> = rows
            .iter()
            .filter(|r| prefixes.iter().any(|p| r.trace_id.starts_with(p.as_str())))
            .cloned()
            .collect();
        if !members.is_empty() {
            aggregates.push(aggregate(&members, name)?);
        }
    }
    Ok(EvalReport {
        model: model.spec().kind,
        feature_set: model.spec().feature_set,
        split,
        spec: model.spec().clone(),
        groups: groups.clone(),
        traces: rows,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(approx(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5355, 1e-4));
        assert_eq!(rmse(&[5.0], &[3.0]).unwrap(), 2.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mape_examples() {
        assert_eq!(cumulative_mape(&[20.0, 20.0], &[10.0, 30.0], 1.0).unwrap(), 0.0);
        assert_eq!(cumulative_mape(&[10.0, 10.0], &[10.0, 30.0], 1.0).unwrap(), 50.0);
        assert!(cumulative_mape(&[1.0, 1.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = TraceMetrics::new("a", 1.0, 2.0, 10, 1.0);
        let b = TraceMetrics::new("b", 3.0, 4.0, 10, 1.0);
        assert_eq!(aggregate(std::slice::from_ref(&a), "a").unwrap(), a);
        assert_eq!(aggregate(&[a.clone(), b.clone()], "x").unwrap().rmse_mbps, 2.0);
        let b3 = TraceMetrics::new("b", 3.0, 4.0, 30, 1.0);
        let agg = aggregate(&[a, b3], "x").unwrap();
        assert_eq!(agg.rmse_mbps, 2.5);
        assert_eq!(agg.accuracy_pct, 100.0 - agg.cum_mape_pct);
    }
}
