use proptest::prelude::*;
use ulcast::checkpoint;
use ulcast::data::{make_windows, project_features, FeatureSet, Normalizer, TelemetrySample, Trace, TraceMeta, TraceRow};
use ulcast::eval::{aggregate, cumulative_mape, evaluate, persistence_baseline, predict_trace, rmse, Groups, Split, TraceMetrics};
use ulcast::models::{ArchConfig, Model, ModelKind, ModelSpec, TrainedModel};
use ulcast::synth::{preset, synth_trace};
use ulcast::train::{fit, train, TrainConfig};
use ulcast::Error;

fn small_arch() -> ArchConfig {
    ArchConfig {
        convlstm_channels: 2,
        convlstm_fc: 4,
        lstm_hidden: 4,
        lstm_layers: 1,
        lstm_fc: 4,
        cnn_channels: 2,
        cnn_lstm_hidden: 4,
        tf_d_model: 4,
        tf_ff: 8,
        tf_heads: 2,
        tf_layers: 1,
        ..ArchConfig::default()
    }
}

fn sample(t: u32, thpt: f64) -> TelemetrySample {
    TelemetrySample {
        t,
        rsrp_dbm: -90.0 + (t % 7) as f64,
        rsrq_db: -12.0 - (t % 3) as f64,
        sinr_db: 10.0 + (t % 5) as f64,
        ssb_arfcn: if t % 2 == 0 { 368410 } else { 368450 },
        thpt_mbps: thpt,
        rb_alloc: None,
        sched_count: None,
        pucch_tx_dbm: None,
        bw_mhz: None,
        lat: None,
        lon: None,
        speed_kmh: None,
    }
}

fn trace_of(id: &str, thpt: &[f64]) -> Trace {
    let rows = thpt.iter().enumerate().map(|(t, &v)| TraceRow::Sample(sample(t as u32, v))).collect();
    Trace::new(TraceMeta { id: id.into(), ..TraceMeta::default() }, rows).unwrap()
}

// statistics come from a long synthetic corpus so short traces with a
// constant channel still normalize
fn corpus_normalizer(fs: FeatureSet) -> Normalizer {
    let mats: Vec<_> = (50..53).map(|s| project_features(&synth("drive", s, 600), fs).unwrap()).collect();
    Normalizer::fit(&mats).unwrap()
}

fn dataset(trace: &Trace, fs: FeatureSet) -> (ulcast::WindowedDataset, Normalizer) {
    let m = project_features(trace, fs).unwrap();
    let norm = corpus_normalizer(fs);
    let ds = make_windows(&[norm.apply(&m).unwrap()], 5, 1).unwrap();
    (ds, norm)
}

fn synth(name: &str, seed: u64, duration: u32) -> Trace {
    synth_trace(&preset(name).unwrap().with_seed(seed).with_duration(duration)).unwrap()
}

fn untrained(kind: ModelKind, trace: &Trace) -> TrainedModel {
    let spec = ModelSpec::new(kind, FeatureSet::AndroidApi).with_arch(small_arch());
    let (_, norm) = dataset(trace, FeatureSet::AndroidApi);
    TrainedModel::new(Model::build(spec).unwrap(), norm, Vec::new()).unwrap()
}

#[test]
fn one_epoch_on_64_windows_takes_two_steps() {
    let trace = synth("walk", 1, 69);
    let (ds, norm) = dataset(&trace, FeatureSet::AndroidApi);
    assert_eq!(ds.len(), 64);
    for kind in ModelKind::ALL {
        let mut cfg = TrainConfig::for_kind(kind);
        cfg.epochs = 1;
        let model = Model::build(ModelSpec::new(kind, FeatureSet::AndroidApi).with_arch(small_arch())).unwrap();
        let trained = train(model, &ds, norm.clone(), &cfg).unwrap();
        assert_eq!(trained.history().len(), 1);
        assert_eq!(trained.history()[0].steps, 2);
    }
}

#[test]
fn history_length_and_determinism() {
    let trace = synth("drive", 2, 120);
    let (ds, norm) = dataset(&trace, FeatureSet::Sure);
    let mut cfg = TrainConfig::for_kind(ModelKind::Lstm);
    cfg.epochs = 3;
    let spec = ModelSpec::new(ModelKind::Lstm, FeatureSet::Sure).with_arch(small_arch()).with_seed(9);
    let a = train(Model::build(spec.clone()).unwrap(), &ds, norm.clone(), &cfg).unwrap();
    let b = train(Model::build(spec.clone()).unwrap(), &ds, norm.clone(), &cfg).unwrap();
    assert_eq!(a.history().len(), 3);
    assert_eq!(a.history(), b.history());
    assert_eq!(a.model().params().tensors(), b.model().params().tensors());
    assert!(a.history().iter().all(|h| h.train_loss.is_finite()));

    cfg.shuffle_seed = 1;
    let c = train(Model::build(spec).unwrap(), &ds, norm, &cfg).unwrap();
    assert_ne!(a.history(), c.history());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let trace = trace_of("huge", &(0..40).map(|i| 1e200 * (1.0 + (i % 4) as f64)).collect::<Vec<_>>());
    let m = project_features(&trace, FeatureSet::AndroidApi).unwrap();
    let mut norm = corpus_normalizer(FeatureSet::AndroidApi);
    // leave targets unscaled so the squared error overflows
    norm.target_mean = 0.0;
    norm.target_std = 1.0;
    let ds = make_windows(&[norm.apply(&m).unwrap()], 5, 1).unwrap();
    let model = Model::build(ModelSpec::new(ModelKind::Lstm, FeatureSet::AndroidApi).with_arch(small_arch())).unwrap();
    let err = train(model, &ds, norm, &TrainConfig::for_kind(ModelKind::Lstm)).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, step: 0, .. }), "{err}");
    assert!(err.is_numeric());
}

#[test]
fn empty_dataset_is_rejected() {
    let trace = trace_of("short", &[1.0, 2.0, 3.0, 4.0, 5.0]);
    let spec = ModelSpec::new(ModelKind::Lstm, FeatureSet::AndroidApi).with_arch(small_arch());
    assert!(fit(spec, &[trace], &TrainConfig::for_kind(ModelKind::Lstm)).is_err());
}

#[test]
fn predict_trace_counts_and_clamps() {
    let trace = trace_of("t10", &[5.0, 6.0, 7.0, 5.0, 4.0, 6.0, 8.0, 9.0, 5.0, 6.0]);
    for kind in ModelKind::ALL {
        let model = untrained(kind, &trace);
        let p = predict_trace(&model, &trace).unwrap();
        assert_eq!(p.pred.len(), 5);
        assert_eq!(p.times, vec![5, 6, 7, 8, 9]);
        assert_eq!(p.truth, vec![6.0, 8.0, 9.0, 5.0, 6.0]);
        assert!(p.pred.iter().all(|&v| v >= 0.0));
        assert_eq!(predict_trace(&model, &trace).unwrap(), p);
    }
    let model = untrained(ModelKind::Lstm, &trace);
    let short = trace_of("t5", &[1.0, 2.0, 3.0, 4.0, 5.0]);
    assert!(predict_trace(&model, &short).is_err());
}

#[test]
fn predictions_clamp_negative_outputs() {
    let trace = synth("train", 3, 80);
    let mut model = Model::build(ModelSpec::new(ModelKind::ConvLstm, FeatureSet::AndroidApi).with_arch(small_arch())).unwrap();
    let last = model.params().len() - 1;
    model.params_mut().tensors_mut()[last].data_mut()[0] = -100.0;
    let (_, norm) = dataset(&trace, FeatureSet::AndroidApi);
    let trained = TrainedModel::new(model, norm, Vec::new()).unwrap();
    let p = predict_trace(&trained, &trace).unwrap();
    assert!(p.pred.iter().all(|&v| v == 0.0));
}

#[test]
fn persistence_examples() {
    let flat = trace_of("flat", &[7.0; 12]);
    let p = persistence_baseline(&flat).unwrap();
    assert_eq!(rmse(&p.pred, &p.truth).unwrap(), 0.0);

    let alt: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 }).collect();
    let alt = trace_of("alt", &alt);
    let p = persistence_baseline(&alt).unwrap();
    assert_eq!(rmse(&p.pred, &p.truth).unwrap(), 10.0);

    let model = untrained(ModelKind::Lstm, &alt);
    let m = predict_trace(&model, &alt).unwrap();
    assert_eq!(m.pred.len(), p.pred.len());
    assert_eq!(m.times, p.times);
    assert!(persistence_baseline(&trace_of("t5", &[1.0; 5])).is_err());
}

#[test]
fn metric_examples() {
    assert_eq!(rmse(&[4.0, 1.0], &[4.0, 1.0]).unwrap(), 0.0);
    assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5355).abs() < 5e-5);
    assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), (12.5f64).sqrt());
    assert_eq!(rmse(&[1.0], &[3.0]).unwrap(), 2.0);
    assert!(rmse(&[1.0, 2.0], &[1.0]).is_err());

    assert_eq!(cumulative_mape(&[5.0, 15.0], &[15.0, 5.0], 1.0).unwrap(), 0.0);
    assert_eq!(cumulative_mape(&[10.0, 10.0], &[10.0, 30.0], 1.0).unwrap(), 50.0);
    assert!(matches!(cumulative_mape(&[1.0, 2.0], &[0.0, 0.0], 1.0), Err(Error::Eval(_))));
    assert!(cumulative_mape(&[1.0], &[1.0, 2.0], 1.0).is_err());

    let one = TraceMetrics::new("x", 1.7, 3.0, 40, 2.0);
    assert_eq!(aggregate(std::slice::from_ref(&one), "x").unwrap(), one);
    let a = TraceMetrics::new("a", 1.0, 0.0, 10, 1.0);
    let b = TraceMetrics::new("b", 3.0, 0.0, 10, 1.0);
    assert_eq!(aggregate(&[a.clone(), b], "ab").unwrap().rmse_mbps, 2.0);
    let b3 = TraceMetrics::new("b", 3.0, 0.0, 30, 1.0);
    assert_eq!(aggregate(&[a, b3], "ab").unwrap().rmse_mbps, 2.5);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn rmse_symmetric_and_non_negative(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..40)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = rmse(&p, &t).unwrap();
        prop_assert_eq!(a, rmse(&t, &p).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert_eq!(rmse(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(a == 0.0, p == t);
    }

    #[test]
    fn mape_depends_only_on_the_sums(pairs in prop::collection::vec((0.0f64..100.0, 0.1f64..100.0), 1..40), rot in 0usize..40) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = cumulative_mape(&p, &t, 1.0).unwrap();
        // reversing the predictions breaks the pairing but keeps both sums
        let mut rev = p.clone();
        rev.reverse();
        let mut rt = t.clone();
        rt.rotate_left(rot % t.len());
        prop_assert!((cumulative_mape(&rev, &rt, 1.0).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn equal_weight_aggregate_is_plain_mean(vals in prop::collection::vec((0.0f64..20.0, 0.0f64..50.0), 1..10), n in 1usize..100) {
        let reports: Vec<_> = vals.iter().enumerate().map(|(i, &(r, m))| TraceMetrics::new(format!("t{i}"), r, m, n, r)).collect();
        let agg = aggregate(&reports, "all").unwrap();
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / vals.len() as f64;
        prop_assert!((agg.rmse_mbps - mean).abs() <= 1e-9);
        prop_assert_eq!(agg.accuracy_pct, 100.0 - agg.cum_mape_pct);
        prop_assert_eq!(agg.n_points, n * vals.len());
    }
}

fn quick_model(fs: FeatureSet) -> (TrainedModel, Vec<Trace>) {
    let traces: Vec<Trace> = (0..3).map(|s| synth("walk", s, 90)).collect();
    let mut cfg = TrainConfig::for_kind(ModelKind::ConvLstm);
    cfg.epochs = 2;
    let spec = ModelSpec::new(ModelKind::ConvLstm, fs).with_arch(small_arch()).with_seed(1);
    (fit(spec, &traces, &cfg).unwrap(), traces)
}

#[test]
fn report_invariants_and_groups() {
    let (model, traces) = quick_model(FeatureSet::AndroidApi);
    let mut groups = Groups::new();
    groups.insert("first-two".into(), vec!["walk-s0".into(), "walk-s1".into()]);
    groups.insert("none".into(), vec!["metro".into()]);
    let r = evaluate(&model, &traces, Split::Seen, &groups).unwrap();
    assert_eq!(r.traces.len(), 3);
    assert_eq!(r.aggregates.len(), 2);
    assert_eq!(r.overall().trace_id, "all");
    assert_eq!(r.aggregates[1].n_points, r.traces[0].n_points + r.traces[1].n_points);
    for m in r.traces.iter().chain(&r.aggregates) {
        assert_eq!(m.accuracy_pct, 100.0 - m.cum_mape_pct);
        assert!(((m.accuracy_pct + m.cum_mape_pct) - 100.0).abs() <= 1e-12);
    }
    let json = r.to_json();
    for key in ["\"model\"", "\"feature_set\"", "\"split\"", "\"spec\"", "\"traces\"", "\"aggregates\"", "\"rmse_mbps\"", "\"cum_mape_pct\"", "\"accuracy_pct\"", "\"n_points\""] {
        assert!(json.contains(key), "missing {key}");
    }
    assert_eq!(json, evaluate(&model, &traces, Split::Seen, &groups).unwrap().to_json());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (model, traces) = quick_model(FeatureSet::Full);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.spec(), model.spec());
    assert_eq!(back.normalizer(), model.normalizer());
    assert_eq!(back.history(), model.history());
    assert_eq!(back.model().params().tensors(), model.model().params().tensors());
    assert_eq!(
        predict_trace(&back, &traces[0]).unwrap(),
        predict_trace(&model, &traces[0]).unwrap()
    );
    assert_eq!(checkpoint::to_json(&back), checkpoint::to_json(&model));
}

#[test]
fn checkpoint_rejects_tampering() {
    let (model, _) = quick_model(FeatureSet::Sure);
    let json = checkpoint::to_json(&model);
    assert!(checkpoint::from_json(&json.replacen("\"version\":1", "\"version\":2", 1)).is_err());
    assert!(checkpoint::from_json(&json.replacen("\"ulcast-checkpoint\"", "\"other\"", 1)).is_err());
    assert!(checkpoint::from_json(&json.replacen("\"name\":\"fc2.w\"", "\"name\":\"fc9.w\"", 1)).is_err());
    assert!(checkpoint::from_json("{").is_err());
    let missing = checkpoint::load("/nonexistent/m.ckpt").unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn all_feature_sets_train_and_evaluate() {
    for (fs, width) in [(FeatureSet::AndroidApi, 5), (FeatureSet::Full, 9), (FeatureSet::Sure, 4)] {
        assert_eq!(fs.width(), width);
        let (model, traces) = quick_model(fs);
        let r = evaluate(&model, &traces, Split::Unseen, &Groups::new()).unwrap();
        assert!(r.overall().rmse_mbps.is_finite());
    }
}
