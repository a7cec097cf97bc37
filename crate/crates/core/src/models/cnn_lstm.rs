use super::lstm::LstmLayer;
use super::{dense, squeeze_output, ArchConfig, ParamStore};
use crate::tensor::{Activation, Graph, TensorError, Var};

/// Per-timestep conv1d over the feature axis, ReLU, LSTM, FC(1).
#[derive(Debug, Clone)]
pub struct CnnLstmNet {
    pub channels: usize,
    pub kernel: usize,
    conv_w: usize,
    conv_b: usize,
    pub lstm: LstmLayer,
    fc: (usize, usize),
}

impl CnnLstmNet {
    pub(crate) fn new(store: &mut ParamStore, a: &ArchConfig, features: usize) -> Self {
        let (c, k) = (a.cnn_channels, a.cnn_kernel);
        let conv_w = store.glorot("conv.w", &[c, 1, k], k, c * k);
        let conv_b = store.constant("conv.b", &[c], 0.0);
        let lstm = LstmLayer::new(store, "lstm0", c * features, a.cnn_lstm_hidden);
        let fc = (
            store.glorot("fc.w", &[a.cnn_lstm_hidden, 1], a.cnn_lstm_hidden, 1),
            store.constant("fc.b", &[1], 0.0),
        );
        CnnLstmNet { channels: c, kernel: k, conv_w, conv_b, lstm, fc }
    }

    pub(crate) fn forward(&self, g: &mut Graph, p: &[Var], x: Var, act: Activation) -> Result<Var, TensorError> {
        let s = g.shape(x).to_vec();
        let (b, w, f) = (s[0], s[1], s[2]);
        // every (batch, time) pair becomes one single-channel sequence
        let seq = g.reshape(x, &[b * w, 1, f])?;
        let z = g.conv1d(seq, p[self.conv_w], self.kernel / 2)?;
        let z = g.add_channel_bias(z, p[self.conv_b])?;
        let z = g.activation(z, act)?;
        let z = g.reshape(z, &[b, w, self.channels * f])?;
        let hs = self.lstm.unroll(g, p, z)?;
        let y = dense(g, p, self.fc, *hs.last().expect("window is non-empty"))?;
        squeeze_output(g, y)
    }
}
