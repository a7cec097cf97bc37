use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulcast::data::{FeatureSet, Normalizer};
use ulcast::models::{Model, ModelKind, ModelSpec, TrainedModel};
use ulcast::tensor::{Activation, Graph, Tensor};

mod common;
use common::*;

#[test]
fn convlstm_cell_matches_scalar_reference() {
    let worst = convlstm_oracle_worst(50);
    assert!(worst <= 1e-12, "max deviation {worst}");
}

#[test]
fn convlstm_cell_zero_weights_and_inputs_give_zero_state() {
    let mut model = convlstm_model(0, FeatureSet::AndroidApi, 3, 3);
    for t in model.params_mut().tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let cell = model.convlstm().unwrap().cell.clone();
    let mut g = Graph::new();
    let p = model.bind_frozen(&mut g);
    let x = g.constant(Tensor::zeros(vec![2, 1, 5]));
    let h = g.constant(Tensor::zeros(vec![2, 3, 5]));
    let c = g.constant(Tensor::zeros(vec![2, 3, 5]));
    let (h1, c1) = cell.step(&mut g, &p, x, Some((h, c))).unwrap();
    assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
    assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
}

#[test]
fn convlstm_cell_saturated_gates_keep_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = convlstm_model(1, FeatureSet::Full, 2, 3);
    randomize(&mut model, &mut rng, 0.1);
    let cell = model.convlstm().unwrap().cell.clone();
    let ch = 2;
    let bias = &mut model.params_mut().tensors_mut()[cell.b];
    for o in 0..ch {
        bias.data_mut()[o] = -60.0; // input gate closed
        bias.data_mut()[ch + o] = 60.0; // forget gate open
    }
    let c_prev = rand_tensor(&mut rng, &[1, ch, 9]);
    let mut g = Graph::new();
    let p = model.bind_frozen(&mut g);
    let x = g.constant(rand_tensor(&mut rng, &[1, 1, 9]));
    let h = g.constant(rand_tensor(&mut rng, &[1, ch, 9]));
    let c = g.constant(c_prev.clone());
    let (_, c1) = cell.step(&mut g, &p, x, Some((h, c))).unwrap();
    for (a, b) in g.value(c1).data().iter().zip(c_prev.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn all_architectures_pass_gradient_check() {
    for kind in ModelKind::ALL {
        let worst = model_gradcheck_worst(kind, 20);
        assert!(worst < 1e-4, "{kind}: max relative error {worst}");
    }
}

#[test]
fn builds_are_deterministic_and_seeded() {
    for kind in ModelKind::ALL {
        let spec = ModelSpec::new(kind, FeatureSet::Sure).with_arch(tiny_arch()).with_seed(4);
        let a = Model::build(spec.clone()).unwrap();
        let b = Model::build(spec.clone()).unwrap();
        assert_eq!(a.params().tensors(), b.params().tensors());
        let c = Model::build(spec.with_seed(5)).unwrap();
        assert_ne!(a.params().tensors(), c.params().tensors());
    }
}

#[test]
fn convlstm_feature_width_only_touches_feature_sized_tensors() {
    let a = Model::build(ModelSpec::new(ModelKind::ConvLstm, FeatureSet::AndroidApi)).unwrap();
    let b = Model::build(ModelSpec::new(ModelKind::ConvLstm, FeatureSet::Full)).unwrap();
    assert_eq!(a.params().names(), b.params().names());
    let mut differing = Vec::new();
    for ((name, ta), (_, tb)) in a.params().iter().zip(b.params().iter()) {
        if ta.shape() != tb.shape() {
            differing.push(name.to_string());
        }
    }
    assert_eq!(differing, ["convlstm.wci", "convlstm.wcf", "convlstm.wco", "fc1.w"]);
    assert_eq!(a.params().get("convlstm.wci").unwrap().shape(), &[32, 5]);
    assert_eq!(b.params().get("convlstm.wci").unwrap().shape(), &[32, 9]);
    assert_eq!(a.params().get("fc1.w").unwrap().shape(), &[32 * 5, 64]);
}

#[test]
fn default_transformer_dimensions() {
    let m = Model::build(ModelSpec::new(ModelKind::Transformer, FeatureSet::AndroidApi)).unwrap();
    assert_eq!(m.params().get("embed.w").unwrap().shape(), &[5, 256]);
    assert_eq!(m.params().get("pos").unwrap().shape(), &[5, 256]);
    assert_eq!(m.params().get("enc0.ff1.w").unwrap().shape(), &[256, 512]);
    assert_eq!(m.params().get("enc1.ff2.w").unwrap().shape(), &[512, 256]);
    assert!(m.params().get("enc2.q.w").is_none());
    assert_eq!(m.spec().arch.tf_heads, 4);
    assert!(m.parameter_count() > 1_000_000);
}

#[test]
fn hidden_activations() {
    assert_eq!(ModelKind::Transformer.hidden_activation(), Activation::Gelu);
    for k in [ModelKind::ConvLstm, ModelKind::Lstm, ModelKind::CnnLstm] {
        assert_eq!(k.hidden_activation(), Activation::Relu);
    }
}

#[test]
fn batch_order_does_not_leak_between_samples() {
    for kind in ModelKind::ALL {
        let spec = ModelSpec::new(kind, FeatureSet::Full).with_arch(tiny_arch()).with_seed(3);
        let model = Model::build(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = rand_tensor(&mut rng, &[4, 5, 9]);
        let base = model.predict_normalized(&x).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut xs = Vec::new();
        for &i in &perm {
            xs.extend_from_slice(&x.data()[i * 45..(i + 1) * 45]);
        }
        let permuted = model.predict_normalized(&Tensor::new(vec![4, 5, 9], xs).unwrap()).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((permuted[j] - base[i]).abs() <= 1e-12, "{kind}");
        }
    }
}

fn normalizer(fs: FeatureSet) -> Normalizer {
    Normalizer {
        feature_set: fs,
        mean: vec![0.0; fs.width()],
        std: vec![1.0; fs.width()],
        target_mean: 12.0,
        target_std: 5.0,
    }
}

#[test]
fn predict_is_pure_and_non_negative() {
    for kind in ModelKind::ALL {
        let fs = FeatureSet::AndroidApi;
        let mut model = Model::build(ModelSpec::new(kind, fs).with_arch(tiny_arch()).with_seed(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        randomize(&mut model, &mut rng, 1.5);
        // A large negative output bias forces raw predictions below zero.
        let last = model.params().len() - 1;
        model.params_mut().tensors_mut()[last].data_mut()[0] = -50.0;
        let trained = TrainedModel::new(model, normalizer(fs), Vec::new()).unwrap();
        for _ in 0..5 {
            let w: Vec<f64> = (0..25).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = trained.predict(&w).unwrap();
            assert_eq!(a, 0.0);
            assert_eq!(trained.predict(&w).unwrap(), a);
        }
        assert!(trained.predict(&[0.0; 24]).is_err());
    }
}

#[test]
fn untrained_model_on_zero_window_is_finite_and_repeatable() {
    for kind in ModelKind::ALL {
        let fs = FeatureSet::Sure;
        let model = Model::build(ModelSpec::new(kind, fs).with_arch(tiny_arch()).with_seed(6)).unwrap();
        let trained = TrainedModel::new(model, normalizer(fs), Vec::new()).unwrap();
        let a = trained.predict(&[0.0; 20]).unwrap();
        assert!(a.is_finite() && a >= 0.0);
        assert_eq!(a, trained.predict(&[0.0; 20]).unwrap());
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = ModelSpec::new(ModelKind::Transformer, FeatureSet::Sure);
    spec.arch.tf_heads = 3;
    assert!(Model::build(spec).is_err());
    let mut spec = ModelSpec::new(ModelKind::ConvLstm, FeatureSet::Sure);
    spec.window = 6;
    assert!(Model::build(spec).is_err());
    let mut spec = ModelSpec::new(ModelKind::CnnLstm, FeatureSet::Sure);
    spec.arch.cnn_kernel = 4;
    assert!(Model::build(spec).is_err());
    let model = Model::build(ModelSpec::new(ModelKind::Lstm, FeatureSet::Sure)).unwrap();
    assert!(TrainedModel::new(model, normalizer(FeatureSet::Full), Vec::new()).is_err());
}
