//! Helpers shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulcast::data::FeatureSet;
use ulcast::models::{ArchConfig, Model, ModelKind, ModelSpec};
use ulcast::tensor::{gradient_check, Graph, Tensor};

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        convlstm_channels: 2,
        convlstm_kernel: 3,
        convlstm_fc: 3,
        lstm_hidden: 3,
        lstm_layers: 2,
        lstm_fc: 3,
        cnn_channels: 2,
        cnn_kernel: 3,
        cnn_lstm_hidden: 3,
        tf_d_model: 4,
        tf_ff: 6,
        tf_heads: 2,
        tf_layers: 1,
    }
}

pub fn randomize(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Element-by-element ConvLSTM cell with zero-padded 1-D cross-correlation.
#[allow(clippy::too_many_arguments)]
pub fn reference_cell(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    wx: &[f64],
    wh: &[f64],
    bias: &[f64],
    peep: [&[f64]; 3],
    b: usize,
    ch: usize,
    f: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let pad = k / 2;
    let mut h_out = vec![0.0; b * ch * f];
    let mut c_out = vec![0.0; b * ch * f];
    for n in 0..b {
        for o in 0..ch {
            for p in 0..f {
                let pre = |gate: usize| {
                    let row = gate * ch + o;
                    let mut s = bias[row];
                    for j in 0..k {
                        let pos = p as isize + j as isize - pad as isize;
                        if pos < 0 || pos >= f as isize {
                            continue;
                        }
                        let pos = pos as usize;
                        s += wx[row * k + j] * x[n * f + pos];
                        for ci in 0..ch {
                            s += wh[(row * ch + ci) * k + j] * h[(n * ch + ci) * f + pos];
                        }
                    }
                    s
                };
                let at = (n * ch + o) * f + p;
                let cp = c[at];
                let i = sig(pre(0) + peep[0][o * f + p] * cp);
                let fg = sig(pre(1) + peep[1][o * f + p] * cp);
                let g = pre(2).tanh();
                let cn = fg * cp + i * g;
                let og = sig(pre(3) + peep[2][o * f + p] * cn);
                c_out[at] = cn;
                h_out[at] = og * cn.tanh();
            }
        }
    }
    (h_out, c_out)
}

/// Worst finite-difference relative error of a whole network's loss over
/// `seeds` random instances at tiny widths.
pub fn model_gradcheck_worst(kind: ModelKind, seeds: u64) -> f64 {
    // The stacked LSTM has recurrent-weight gradients near 1e-7, where
    // roundoff at the smaller step dominates. The CNN front-end has ~100
    // ReLU units per sample, which the larger step would push across the kink.
    let epsilon = if kind == ModelKind::Lstm { 1e-4 } else { 1e-5 };
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let fs = FeatureSet::ALL[seed as usize % 3];
        let spec = ModelSpec::new(kind, fs).with_arch(tiny_arch()).with_seed(seed);
        let mut model = Model::build(spec.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        randomize(&mut model, &mut rng, 0.7);
        let x = rand_tensor(&mut rng, &[2, spec.window, fs.width()]);
        let y = rand_tensor(&mut rng, &[2]);
        let mut params = model.params().tensors().to_vec();
        let err = gradient_check(
            |g, p| {
                let xv = g.constant(x.clone());
                let yv = g.constant(y.clone());
                let out = model.forward(g, p, xv).map_err(|e| match e {
                    ulcast::Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                g.mse_loss(out, yv)
            },
            &mut params,
            epsilon,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

pub fn convlstm_model(seed: u64, fs: FeatureSet, channels: usize, kernel: usize) -> Model {
    let mut arch = tiny_arch();
    arch.convlstm_channels = channels;
    arch.convlstm_kernel = kernel;
    Model::build(ModelSpec::new(ModelKind::ConvLstm, fs).with_arch(arch).with_seed(seed)).unwrap()
}

/// Largest absolute deviation between the graph ConvLSTM cell and
/// [`reference_cell`] over `instances` random shapes and weights.
pub fn convlstm_oracle_worst(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = FeatureSet::ALL[seed as usize % 3];
        let f = fs.width();
        let ch = rng.gen_range(1..4);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let b = rng.gen_range(1..4);
        let mut model = convlstm_model(seed, fs, ch, k);
        randomize(&mut model, &mut rng, 0.8);
        let cell = model.convlstm().unwrap().cell.clone();

        let x = rand_tensor(&mut rng, &[b, 1, f]);
        let h = rand_tensor(&mut rng, &[b, ch, f]);
        let c = rand_tensor(&mut rng, &[b, ch, f]);
        let mut g = Graph::new();
        let p = model.bind_frozen(&mut g);
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let (h_out, c_out) = cell.step(&mut g, &p, xv, Some((hv, cv))).unwrap();

        let ps = model.params().tensors();
        let (rh, rc) = reference_cell(
            x.data(),
            h.data(),
            c.data(),
            ps[cell.wx].data(),
            ps[cell.wh].data(),
            ps[cell.b].data(),
            [ps[cell.wci].data(), ps[cell.wcf].data(), ps[cell.wco].data()],
            b,
            ch,
            f,
            k,
        );
        for (a, r) in g.value(h_out).data().iter().zip(&rh).chain(g.value(c_out).data().iter().zip(&rc)) {
            worst = worst.max((a - r).abs());
        }
    }
    worst
}
