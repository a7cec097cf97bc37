use serde::{Deserialize, Serialize};

use super::{DataError, FeatureMatrix, FeatureSet};
use crate::tensor::Tensor;

/// Input window length in seconds.
pub const WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    /// Index into [`WindowedDataset::trace_ids`].
    pub trace: usize,
    /// Row of the first window sample within its feature matrix.
    pub start: usize,
}

/// `N` windows of `W × F` inputs with the throughput `horizon` seconds past
/// the window end as target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub feature_set: FeatureSet,
    pub window: usize,
    pub horizon: usize,
    pub trace_ids: Vec<String>,
    pub origins: Vec<WindowOrigin>,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Windows available in one gap-free run of `len` samples.
pub fn window_count(len: usize, window: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(window + horizon)
}

/// Builds windows that never cross a trace boundary or a gap. Values are
/// taken as-is, so pass normalized matrices.
pub fn make_windows(mats: &[FeatureMatrix], window: usize, horizon: usize) -> Result<WindowedDataset, DataError> {
    if window == 0 || horizon == 0 {
        return Err(DataError::Invalid("window and horizon must be positive".into()));
    }
    let Some(first) = mats.first() else {
        return Err(DataError::EmptyDataset { window, horizon });
    };
    let fs = first.feature_set;
    let w = fs.width();
    let mut ds = WindowedDataset {
        feature_set: fs,
        window,
        horizon,
        trace_ids: Vec::with_capacity(mats.len()),
        origins: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    for (ti, m) in mats.iter().enumerate() {
        if m.feature_set != fs {
            return Err(DataError::FeatureSetMismatch { expected: fs, actual: m.feature_set });
        }
        ds.trace_ids.push(m.trace_id.clone());
        for seg in &m.segments {
            for k in 0..window_count(seg.len(), window, horizon) {
                let start = seg.start + k;
                ds.x.extend_from_slice(&m.values[start * w..(start + window) * w]);
                ds.y.push(m.target[start + window - 1 + horizon]);
                ds.origins.push(WindowOrigin { trace: ti, start });
            }
        }
    }
    if ds.y.is_empty() {
        return Err(DataError::EmptyDataset { window, horizon });
    }
    Ok(ds)
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_set.width()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let n = self.window * self.width();
        &self.x[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    /// Stacks the selected windows into `[B×W×F]` inputs and `[B]` targets.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let mut xs = Vec::with_capacity(indices.len() * self.window * self.width());
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.extend_from_slice(self.input(i));
            ys.push(self.y[i]);
        }
        let x = Tensor::new(vec![indices.len(), self.window, self.width()], xs).expect("non-empty batch");
        (x, Tensor::from_vec(ys))
    }

    /// Keeps only windows whose trace index satisfies `keep`.
    pub fn filter_traces(&self, keep: impl Fn(usize) -> bool) -> WindowedDataset {
        let mut out = WindowedDataset {
            feature_set: self.feature_set,
            window: self.window,
            horizon: self.horizon,
            trace_ids: self.trace_ids.clone(),
            origins: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        };
        for (i, o) in self.origins.iter().enumerate() {
            if keep(o.trace) {
                out.x.extend_from_slice(self.input(i));
                out.y.push(self.y[i]);
                out.origins.push(*o);
            }
        }
        out
    }
}

/// Negative throughput predictions become zero.
pub fn clamp_nonnegative(pred: &[f64]) -> Vec<f64> {
    pred.iter().map(|&p| p.max(0.0)).collect()
}
