use super::{dense, squeeze_output, ArchConfig, ParamStore};
use crate::tensor::{Activation, Graph, TensorError, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct EncoderLayer {
    q: (usize, usize),
    /// Key projection has no bias: softmax is invariant to it.
    k: usize,
    v: (usize, usize),
    o: (usize, usize),
    ln1: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
    ln2: (usize, usize),
}

fn linear(store: &mut ParamStore, name: &str, i: usize, o: usize) -> (usize, usize) {
    (
        store.glorot(&format!("{name}.w"), &[i, o], i, o),
        store.constant(&format!("{name}.b"), &[o], 0.0),
    )
}

fn norm(store: &mut ParamStore, name: &str, d: usize) -> (usize, usize) {
    (
        store.constant(&format!("{name}.gamma"), &[d], 1.0),
        store.constant(&format!("{name}.beta"), &[d], 0.0),
    )
}

/// Encoder-only Transformer: input projection plus learned positional
/// embedding, post-norm encoder layers, mean pooling over time, FC(1).
#[derive(Debug, Clone)]
pub struct TransformerNet {
    pub d_model: usize,
    pub heads: usize,
    embed: (usize, usize),
    pos: usize,
    layers: Vec<EncoderLayer>,
    head: (usize, usize),
}

impl TransformerNet {
    pub(crate) fn new(store: &mut ParamStore, a: &ArchConfig, features: usize, window: usize) -> Self {
        let d = a.tf_d_model;
        let embed = linear(store, "embed", features, d);
        let pos = store.glorot("pos", &[window, d], window, d);
        let layers = (0..a.tf_layers)
            .map(|l| EncoderLayer {
                q: linear(store, &format!("enc{l}.q"), d, d),
                k: store.glorot(&format!("enc{l}.k.w"), &[d, d], d, d),
                v: linear(store, &format!("enc{l}.v"), d, d),
                o: linear(store, &format!("enc{l}.o"), d, d),
                ln1: norm(store, &format!("enc{l}.ln1"), d),
                ff1: linear(store, &format!("enc{l}.ff1"), d, a.tf_ff),
                ff2: linear(store, &format!("enc{l}.ff2"), a.tf_ff, d),
                ln2: norm(store, &format!("enc{l}.ln2"), d),
            })
            .collect();
        let head = linear(store, "head", d, 1);
        TransformerNet {
            d_model: d,
            heads: a.tf_heads,
            embed,
            pos,
            layers,
            head,
        }
    }

    /// `[B·W×D]` → `[B×H×W×D/H]`
    fn split_heads(&self, g: &mut Graph, x: Var, b: usize, w: usize) -> Result<Var, TensorError> {
        let x = g.reshape(x, &[b, w, self.heads, self.d_model / self.heads])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    pub(crate) fn forward(&self, g: &mut Graph, p: &[Var], x: Var, act: Activation) -> Result<Var, TensorError> {
        let s = g.shape(x).to_vec();
        let (b, w, f) = (s[0], s[1], s[2]);
        let d = self.d_model;
        let flat = g.reshape(x, &[b * w, f])?;
        let e = dense(g, p, self.embed, flat)?;
        let e = g.reshape(e, &[b, w, d])?;
        let e = g.add(e, p[self.pos])?;
        let mut h = g.reshape(e, &[b * w, d])?;
        for layer in &self.layers {
            let q = dense(g, p, layer.q, h)?;
            let q = self.split_heads(g, q, b, w)?;
            let k = g.matmul(h, p[layer.k])?;
            let k = self.split_heads(g, k, b, w)?;
            let v = dense(g, p, layer.v, h)?;
            let v = self.split_heads(g, v, b, w)?;
            let a = g.softmax_attention(q, k, v)?;
            let a = g.permute(a, &[0, 2, 1, 3])?;
            let a = g.reshape(a, &[b * w, d])?;
            let a = dense(g, p, layer.o, a)?;
            let r = g.add(h, a)?;
            h = g.layer_norm(r, p[layer.ln1.0], p[layer.ln1.1], LN_EPS)?;
            let z = dense(g, p, layer.ff1, h)?;
            let z = g.activation(z, act)?;
            let z = dense(g, p, layer.ff2, z)?;
            let r = g.add(h, z)?;
            h = g.layer_norm(r, p[layer.ln2.0], p[layer.ln2.1], LN_EPS)?;
        }
        let h = g.reshape(h, &[b, w, d])?;
        let pooled = g.mean_axis(h, 1)?;
        let y = dense(g, p, self.head, pooled)?;
        squeeze_output(g, y)
    }
}
