use super::{dense, squeeze_output, time_step, ArchConfig, ParamStore};
use crate::tensor::{Activation, Graph, TensorError, Var};

/// Gate bias vector `[i | f | g | o]` with the forget block set to one.
pub(crate) fn gate_bias(store: &mut ParamStore, name: &str, width: usize) -> usize {
    let mut b = vec![0.0; 4 * width];
    b[width..2 * width].fill(1.0);
    store.push(name, crate::tensor::Tensor::from_vec(b))
}

/// One ConvLSTM cell whose convolutions run along the feature axis.
///
/// Gate order in the stacked kernels is input, forget, candidate, output.
/// Peepholes are elementwise `[C×F]` weights on the cell state; the output
/// gate looks at the updated state.
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub channels: usize,
    pub kernel: usize,
    /// Input kernel `[4C×1×K]`.
    pub wx: usize,
    /// Recurrent kernel `[4C×C×K]`.
    pub wh: usize,
    /// Gate bias `[4C]`.
    pub b: usize,
    pub wci: usize,
    pub wcf: usize,
    pub wco: usize,
}

impl ConvLstmCell {
    pub(crate) fn new(store: &mut ParamStore, prefix: &str, channels: usize, kernel: usize, features: usize) -> Self {
        let c = channels;
        ConvLstmCell {
            channels,
            kernel,
            wx: store.glorot(&format!("{prefix}.wx"), &[4 * c, 1, kernel], kernel, 4 * c * kernel),
            wh: store.glorot(&format!("{prefix}.wh"), &[4 * c, c, kernel], c * kernel, 4 * c * kernel),
            b: gate_bias(store, &format!("{prefix}.b"), c),
            wci: store.constant(&format!("{prefix}.wci"), &[c, features], 0.0),
            wcf: store.constant(&format!("{prefix}.wcf"), &[c, features], 0.0),
            wco: store.constant(&format!("{prefix}.wco"), &[c, features], 0.0),
        }
    }

    /// `x[B×1×F]`, state `(h, c)` each `[B×C×F]` or `None` for zeros.
    pub fn step(&self, g: &mut Graph, p: &[Var], x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var), TensorError> {
        let pad = self.kernel / 2;
        let c = self.channels;
        let mut z = g.conv1d(x, p[self.wx], pad)?;
        if let Some((h, _)) = state {
            let zh = g.conv1d(h, p[self.wh], pad)?;
            z = g.add(z, zh)?;
        }
        let z = g.add_channel_bias(z, p[self.b])?;
        let zi = g.narrow(z, 1, 0, c)?;
        let zf = g.narrow(z, 1, c, c)?;
        let zg = g.narrow(z, 1, 2 * c, c)?;
        let zo = g.narrow(z, 1, 3 * c, c)?;
        let cand = g.tanh(zg)?;
        let c_next = match state {
            Some((_, c_prev)) => {
                let pi = g.mul(c_prev, p[self.wci])?;
                let zi = g.add(zi, pi)?;
                let i = g.sigmoid(zi)?;
                let pf = g.mul(c_prev, p[self.wcf])?;
                let zf = g.add(zf, pf)?;
                let f = g.sigmoid(zf)?;
                let keep = g.mul(f, c_prev)?;
                let write = g.mul(i, cand)?;
                g.add(keep, write)?
            }
            None => {
                let i = g.sigmoid(zi)?;
                g.mul(i, cand)?
            }
        };
        let po = g.mul(c_next, p[self.wco])?;
        let zo = g.add(zo, po)?;
        let o = g.sigmoid(zo)?;
        let tc = g.tanh(c_next)?;
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// ConvLSTM cell unrolled over the window, then flatten, FC, ReLU, FC(1).
#[derive(Debug, Clone)]
pub struct ConvLstmNet {
    pub cell: ConvLstmCell,
    pub features: usize,
    fc1: (usize, usize),
    fc2: (usize, usize),
}

impl ConvLstmNet {
    pub(crate) fn new(store: &mut ParamStore, a: &ArchConfig, features: usize) -> Self {
        let cell = ConvLstmCell::new(store, "convlstm", a.convlstm_channels, a.convlstm_kernel, features);
        let flat = a.convlstm_channels * features;
        let fc1 = (
            store.glorot("fc1.w", &[flat, a.convlstm_fc], flat, a.convlstm_fc),
            store.constant("fc1.b", &[a.convlstm_fc], 0.0),
        );
        let fc2 = (
            store.glorot("fc2.w", &[a.convlstm_fc, 1], a.convlstm_fc, 1),
            store.constant("fc2.b", &[1], 0.0),
        );
        ConvLstmNet { cell, features, fc1, fc2 }
    }

    pub(crate) fn forward(&self, g: &mut Graph, p: &[Var], x: Var, act: Activation) -> Result<Var, TensorError> {
        let s = g.shape(x).to_vec();
        let (b, w, f) = (s[0], s[1], s[2]);
        let mut state = None;
        for t in 0..w {
            let xt = time_step(g, x, t)?;
            let xt = g.reshape(xt, &[b, 1, f])?;
            state = Some(self.cell.step(g, p, xt, state)?);
        }
        let (h, _) = state.expect("window is non-empty");
        let flat = g.reshape(h, &[b, self.cell.channels * f])?;
        let z = dense(g, p, self.fc1, flat)?;
        let z = g.activation(z, act)?;
        let y = dense(g, p, self.fc2, z)?;
        squeeze_output(g, y)
    }
}
