use super::convlstm::gate_bias;
use super::{dense, squeeze_output, time_step, ArchConfig, ParamStore};
use crate::tensor::{Activation, Graph, TensorError, Var};

/// Standard LSTM layer with stacked `[i | f | g | o]` gate weights.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    /// `[in×4H]`
    pub wx: usize,
    /// `[H×4H]`
    pub wh: usize,
    /// `[4H]`
    pub b: usize,
}

impl LstmLayer {
    pub(crate) fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Self {
        LstmLayer {
            input,
            hidden,
            wx: store.glorot(&format!("{prefix}.wx"), &[input, 4 * hidden], input, 4 * hidden),
            wh: store.glorot(&format!("{prefix}.wh"), &[hidden, 4 * hidden], hidden, 4 * hidden),
            b: gate_bias(store, &format!("{prefix}.b"), hidden),
        }
    }

    /// `x[B×in]`, state `(h, c)` each `[B×H]` or `None` for zeros.
    pub fn step(&self, g: &mut Graph, p: &[Var], x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var), TensorError> {
        let h = self.hidden;
        let mut z = g.matmul_bias(x, p[self.wx], p[self.b])?;
        if let Some((h_prev, _)) = state {
            let zh = g.matmul(h_prev, p[self.wh])?;
            z = g.add(z, zh)?;
        }
        let zi = g.narrow(z, 1, 0, h)?;
        let i = g.sigmoid(zi)?;
        let zg = g.narrow(z, 1, 2 * h, h)?;
        let cand = g.tanh(zg)?;
        let write = g.mul(i, cand)?;
        let c_next = match state {
            Some((_, c_prev)) => {
                let zf = g.narrow(z, 1, h, h)?;
                let f = g.sigmoid(zf)?;
                let keep = g.mul(f, c_prev)?;
                g.add(keep, write)?
            }
            None => write,
        };
        let zo = g.narrow(z, 1, 3 * h, h)?;
        let o = g.sigmoid(zo)?;
        let tc = g.tanh(c_next)?;
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Runs over `x[B×W×in]`, returning every hidden state.
    pub(crate) fn unroll(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Vec<Var>, TensorError> {
        let w = g.shape(x)[1];
        let mut state = None;
        let mut out = Vec::with_capacity(w);
        for t in 0..w {
            let xt = time_step(g, x, t)?;
            let s = self.step(g, p, xt, state)?;
            out.push(s.0);
            state = Some(s);
        }
        Ok(out)
    }
}

/// Stacked LSTM, last hidden state, FC, ReLU, FC(1).
#[derive(Debug, Clone)]
pub struct LstmNet {
    pub layers: Vec<LstmLayer>,
    fc1: (usize, usize),
    fc2: (usize, usize),
}

impl LstmNet {
    pub(crate) fn new(store: &mut ParamStore, a: &ArchConfig, features: usize) -> Self {
        let layers = (0..a.lstm_layers)
            .map(|l| {
                let input = if l == 0 { features } else { a.lstm_hidden };
                LstmLayer::new(store, &format!("lstm{l}"), input, a.lstm_hidden)
            })
            .collect();
        let fc1 = (
            store.glorot("fc1.w", &[a.lstm_hidden, a.lstm_fc], a.lstm_hidden, a.lstm_fc),
            store.constant("fc1.b", &[a.lstm_fc], 0.0),
        );
        let fc2 = (
            store.glorot("fc2.w", &[a.lstm_fc, 1], a.lstm_fc, 1),
            store.constant("fc2.b", &[1], 0.0),
        );
        LstmNet { layers, fc1, fc2 }
    }

    pub(crate) fn forward(&self, g: &mut Graph, p: &[Var], x: Var, act: Activation) -> Result<Var, TensorError> {
        let w = g.shape(x)[1];
        let mut inputs: Vec<Var> = (0..w).map(|t| time_step(g, x, t)).collect::<Result<_, _>>()?;
        for layer in &self.layers {
            let mut state = None;
            let mut outs = Vec::with_capacity(w);
            for &xt in &inputs {
                let s = layer.step(g, p, xt, state)?;
                outs.push(s.0);
                state = Some(s);
            }
            inputs = outs;
        }
        let last = *inputs.last().expect("window is non-empty");
        let z = dense(g, p, self.fc1, last)?;
        let z = g.activation(z, act)?;
        let y = dense(g, p, self.fc2, z)?;
        squeeze_output(g, y)
    }
}
