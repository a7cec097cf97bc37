//! The four throughput predictors: ConvLSTM, stacked LSTM, CNN-LSTM and a
//! Transformer encoder, all mapping a `[B×W×F]` window batch to `[B]`
//! normalized next-second throughput.

mod cnn_lstm;
mod convlstm;
mod lstm;
mod params;
mod transformer;

pub use cnn_lstm::CnnLstmNet;
pub use convlstm::{ConvLstmCell, ConvLstmNet};
pub use lstm::{LstmLayer, LstmNet};
pub use params::ParamStore;
pub use transformer::TransformerNet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{clamp_nonnegative, FeatureSet, Normalizer, WINDOW};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "convlstm")]
    ConvLstm,
    Lstm,
    CnnLstm,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::ConvLstm, ModelKind::Lstm, ModelKind::CnnLstm, ModelKind::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConvLstm => "convlstm",
            ModelKind::Lstm => "lstm",
            ModelKind::CnnLstm => "cnn-lstm",
            ModelKind::Transformer => "transformer",
        }
    }

    /// Activation of the hidden fully connected / feed-forward layers.
    pub fn hidden_activation(self) -> Activation {
        match self {
            ModelKind::Transformer => Activation::Gelu,
            _ => Activation::Relu,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "convlstm" | "conv-lstm" => Ok(ModelKind::ConvLstm),
            "lstm" => Ok(ModelKind::Lstm),
            "cnn-lstm" | "cnnlstm" => Ok(ModelKind::CnnLstm),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(format!("unknown model {other:?} (convlstm, lstm, cnn-lstm, transformer)")),
        }
    }
}

/// Layer widths. Defaults are the documented desk-scale choices; none of
/// them is fixed by the training regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub convlstm_channels: usize,
    pub convlstm_kernel: usize,
    pub convlstm_fc: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub lstm_fc: usize,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub cnn_lstm_hidden: usize,
    pub tf_d_model: usize,
    pub tf_ff: usize,
    pub tf_heads: usize,
    pub tf_layers: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            convlstm_channels: 32,
            convlstm_kernel: 3,
            convlstm_fc: 64,
            lstm_hidden: 128,
            lstm_layers: 2,
            lstm_fc: 64,
            cnn_channels: 16,
            cnn_kernel: 3,
            cnn_lstm_hidden: 128,
            tf_d_model: 256,
            tf_ff: 512,
            tf_heads: 4,
            tf_layers: 2,
        }
    }
}

impl ArchConfig {
    /// Overrides one width by name, e.g. `("tf_d_model", "64")`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v: usize = value
            .parse()
            .map_err(|_| Error::Model(format!("{key}: expected a positive integer, got {value:?}")))?;
        let slot = match key {
            "convlstm_channels" => &mut self.convlstm_channels,
            "convlstm_kernel" => &mut self.convlstm_kernel,
            "convlstm_fc" => &mut self.convlstm_fc,
            "lstm_hidden" => &mut self.lstm_hidden,
            "lstm_layers" => &mut self.lstm_layers,
            "lstm_fc" => &mut self.lstm_fc,
            "cnn_channels" => &mut self.cnn_channels,
            "cnn_kernel" => &mut self.cnn_kernel,
            "cnn_lstm_hidden" => &mut self.cnn_lstm_hidden,
            "tf_d_model" => &mut self.tf_d_model,
            "tf_ff" => &mut self.tf_ff,
            "tf_heads" => &mut self.tf_heads,
            "tf_layers" => &mut self.tf_layers,
            other => return Err(Error::Model(format!("unknown architecture key {other:?}"))),
        };
        *slot = v;
        Ok(())
    }

    pub const KEYS: [&'static str; 13] = [
        "convlstm_channels",
        "convlstm_kernel",
        "convlstm_fc",
        "lstm_hidden",
        "lstm_layers",
        "lstm_fc",
        "cnn_channels",
        "cnn_kernel",
        "cnn_lstm_hidden",
        "tf_d_model",
        "tf_ff",
        "tf_heads",
        "tf_layers",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    pub window: usize,
    pub arch: ArchConfig,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, feature_set: FeatureSet) -> Self {
        ModelSpec {
            kind,
            feature_set,
            window: WINDOW,
            arch: ArchConfig::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_arch(mut self, arch: ArchConfig) -> Self {
        self.arch = arch;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window != WINDOW {
            return Err(Error::Model(format!("window must be {WINDOW} s, got {}", self.window)));
        }
        let a = &self.arch;
        let positive = match self.kind {
            ModelKind::ConvLstm => [a.convlstm_channels, a.convlstm_kernel, a.convlstm_fc].iter().all(|&v| v > 0),
            ModelKind::Lstm => [a.lstm_hidden, a.lstm_layers, a.lstm_fc].iter().all(|&v| v > 0),
            ModelKind::CnnLstm => [a.cnn_channels, a.cnn_kernel, a.cnn_lstm_hidden].iter().all(|&v| v > 0),
            ModelKind::Transformer => [a.tf_d_model, a.tf_ff, a.tf_heads, a.tf_layers].iter().all(|&v| v > 0),
        };
        if !positive {
            return Err(Error::Model(format!("{} widths must be positive", self.kind)));
        }
        match self.kind {
            ModelKind::ConvLstm if a.convlstm_kernel % 2 == 0 => {
                Err(Error::Model("ConvLSTM kernel width must be odd".into()))
            }
            ModelKind::CnnLstm if a.cnn_kernel % 2 == 0 => Err(Error::Model("CNN kernel width must be odd".into())),
            ModelKind::Transformer if a.tf_d_model % a.tf_heads != 0 => Err(Error::Model(format!(
                "model dim {} not divisible by {} heads",
                a.tf_d_model, a.tf_heads
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum Network {
    ConvLstm(ConvLstmNet),
    Lstm(LstmNet),
    CnnLstm(CnnLstmNet),
    Transformer(TransformerNet),
}

/// An architecture with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    net: Network,
}

impl Model {
    /// Allocates and Glorot-initializes parameters from `spec.seed`.
    pub fn build(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut store = ParamStore::new(spec.seed);
        let f = spec.feature_set.width();
        let net = match spec.kind {
            ModelKind::ConvLstm => Network::ConvLstm(ConvLstmNet::new(&mut store, &spec.arch, f)),
            ModelKind::Lstm => Network::Lstm(LstmNet::new(&mut store, &spec.arch, f)),
            ModelKind::CnnLstm => Network::CnnLstm(CnnLstmNet::new(&mut store, &spec.arch, f)),
            ModelKind::Transformer => Network::Transformer(TransformerNet::new(&mut store, &spec.arch, f, spec.window)),
        };
        Ok(Model { spec, params: store, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.tensors().iter().map(Tensor::numel).sum()
    }

    pub fn convlstm(&self) -> Option<&ConvLstmNet> {
        match &self.net {
            Network::ConvLstm(n) => Some(n),
            _ => None,
        }
    }

    /// Parameters as differentiable leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.tensors().iter().map(|t| g.param(t)).collect()
    }

    /// Parameters as constants (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.tensors().iter().map(|t| g.constant(t.clone())).collect()
    }

    /// `[B×W×F]` → `[B]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let want = [self.spec.window, self.spec.feature_set.width()];
        if shape.len() != 3 || shape[1..] != want {
            return Err(Error::Model(format!("input shape {shape:?} does not match [B, {}, {}]", want[0], want[1])));
        }
        let act = self.spec.kind.hidden_activation();
        let out = match &self.net {
            Network::ConvLstm(n) => n.forward(g, p, x, act)?,
            Network::Lstm(n) => n.forward(g, p, x, act)?,
            Network::CnnLstm(n) => n.forward(g, p, x, act)?,
            Network::Transformer(n) => n.forward(g, p, x, act)?,
        };
        Ok(out)
    }

    /// Normalized predictions for a `[B×W×F]` batch without recording gradients.
    pub fn predict_normalized(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv)?;
        Ok(g.value(out).data().to_vec())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub steps: usize,
}

/// A frozen model with the normalizer fitted on its training data.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    model: Model,
    normalizer: Normalizer,
    history: Vec<EpochStats>,
}

impl TrainedModel {
    pub fn new(model: Model, normalizer: Normalizer, history: Vec<EpochStats>) -> Result<Self> {
        if normalizer.feature_set != model.spec.feature_set {
            return Err(Error::Model(format!(
                "normalizer fitted for {} but model expects {}",
                normalizer.feature_set, model.spec.feature_set
            )));
        }
        Ok(TrainedModel { model, normalizer, history })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.model.spec
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    /// Mbps predictions (clamped at zero) for a normalized `[B×W×F]` batch.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<f64>> {
        let z = self.model.predict_normalized(x)?;
        let mbps: Vec<f64> = z.iter().map(|&v| self.normalizer.denormalize_target(v)).collect();
        Ok(clamp_nonnegative(&mbps))
    }

    /// Mbps prediction for one normalized `W×F` window (row-major).
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        let (w, f) = (self.model.spec.window, self.model.spec.feature_set.width());
        if window.len() != w * f {
            return Err(Error::Model(format!("window has {} values, expected {w}×{f}", window.len())));
        }
        let x = Tensor::new(vec![1, w, f], window.to_vec())?;
        Ok(self.predict_batch(&x)?[0])
    }
}

/// Mbps prediction for one normalized window.
pub fn predict(model: &TrainedModel, window: &[f64]) -> Result<f64> {
    model.predict(window)
}

// Shared building blocks.

pub(crate) fn dense(g: &mut Graph, p: &[Var], layer: (usize, usize), x: Var) -> Result<Var, TensorError> {
    g.matmul_bias(x, p[layer.0], p[layer.1])
}

/// `x[B×W×F]` at time step `t` as `[B×F]`.
pub(crate) fn time_step(g: &mut Graph, x: Var, t: usize) -> Result<Var, TensorError> {
    let s = g.shape(x).to_vec();
    let xt = g.narrow(x, 1, t, 1)?;
    g.reshape(xt, &[s[0], s[2]])
}

/// Final `[B×1]` → `[B]`.
pub(crate) fn squeeze_output(g: &mut Graph, y: Var) -> Result<Var, TensorError> {
    let b = g.shape(y)[0];
    g.reshape(y, &[b])
}
