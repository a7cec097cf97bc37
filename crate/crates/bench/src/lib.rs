//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulcast::models::ArchConfig;
use ulcast::synth::{preset, synth_trace};
use ulcast::{Tensor, Trace};

pub fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("positive shape")
}

/// Narrow widths, as used for the small synthetic corpora.
pub fn compact_arch() -> ArchConfig {
    ArchConfig {
        convlstm_channels: 4,
        convlstm_fc: 16,
        lstm_hidden: 8,
        lstm_layers: 1,
        lstm_fc: 16,
        cnn_channels: 4,
        cnn_lstm_hidden: 8,
        tf_d_model: 8,
        tf_ff: 16,
        tf_heads: 2,
        tf_layers: 1,
        ..ArchConfig::default()
    }
}

pub fn corpus(seeds: u64, duration_s: u32) -> Vec<Trace> {
    ["train", "walk", "drive"]
        .iter()
        .flat_map(|p| (0..seeds).map(move |s| synth_trace(&preset(p).unwrap().with_seed(s).with_duration(duration_s)).unwrap()))
        .collect()
}
