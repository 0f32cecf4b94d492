use ets_core::model::*;
use ets_core::mtlr::{SurvivalLabel, TimeGrid};
use ets_core::nn::{Dense, Module, StateRef};
use ets_core::rng::rng_for;
use ets_core::synth::Cohort;
use ets_core::training::*;
use ets_core::{CheckpointError, Error, Tensor};
use proptest::prelude::*;
use rand::Rng as _;

fn strided() -> EncoderConfig {
    EncoderConfig {
        stem_channels: 3,
        stem_stride: 8,
        blocks: vec![BlockPlan { channels: 3, stride: 4 }; 4],
        kernel: 4,
        dropout: 0.0,
        dense_units: 4,
    }
}

/// Patients whose lead-I amplitude encodes the label; every label is set.
fn toy_cohort(n: usize, seed: u64, all_positive: bool) -> Cohort {
    let mut rng = rng_for(seed, &[]);
    let records = (0..n)
        .map(|i| {
            let positive = all_positive || i % 2 == 0;
            let mut v = vec![0.0; LEADS * INPUT_LEN];
            for (t, x) in v.iter_mut().enumerate() {
                *x = 0.05 * rng.random_range(-1.0..1.0);
                if positive && t < INPUT_LEN {
                    *x += (t as f64 * 0.05).sin();
                }
            }
            let meta = RecordMeta {
                patient_id: format!("p{i}"),
                episode_id: format!("p{i}-e0"),
                acquisition_index: 0,
                age: 40.0 + (i % 40) as f64,
                sex: (i % 3 == 0) as u8,
                label_covid: Some(positive),
                survival: Some(SurvivalLabel::new(if positive { 10.0 } else { 200.0 } + i as f64, i % 5 == 0).unwrap()),
                source_labels: Some(vec![positive, i % 2 == 1, i % 4 == 0]),
            };
            EcgRecord::new(meta, Tensor::new(vec![LEADS, INPUT_LEN], v).unwrap()).unwrap()
        })
        .collect();
    Cohort::from_records(records).unwrap()
}

fn quick(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        initial_lr: 1e-2,
        batch_size: 8,
        max_epochs,
        seed: 3,
        ..Default::default()
    }
}

fn frozen_bytes(model: &EcgModel) -> Vec<(String, Vec<u64>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, s| {
        let t = match s {
            StateRef::Param(p) if p.frozen => &p.value,
            StateRef::Buffer(b) => b,
            _ => return,
        };
        out.push((name.to_string(), t.data().iter().map(|v| v.to_bits()).collect()));
    });
    out
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut rng = rng_for(1, &[]);
    let mut layer = Dense::new(3, 2, &mut rng);
    let before = layer.weight.value.clone();
    let mut adam = Adam::new();
    adam.step(&mut layer, 1e-3).unwrap();
    assert!(layer.weight.value.bit_eq(&before));
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let (mut w, g, mut m, mut v) = ([0.0], [1.0], [0.0], [0.0]);
    adam_update(&mut w, &g, &mut m, &mut v, 1, 1e-3);
    // bias-corrected: m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    assert!((w[0] + 1e-3).abs() < 1e-6, "{}", w[0]);
    assert!((w[0] + 1e-3 / (1.0 + EPS)).abs() < 1e-18);
}

#[test]
fn adam_skips_frozen_parameters() {
    let mut rng = rng_for(2, &[]);
    let mut layer = Dense::new(3, 2, &mut rng);
    layer.weight.grad.fill(1.0);
    layer.weight.frozen = true;
    layer.bias.grad.fill(1.0);
    let before = layer.weight.value.clone();
    Adam::new().step(&mut layer, 1e-3).unwrap();
    assert!(layer.weight.value.bit_eq(&before));
    assert!(layer.bias.value.data().iter().all(|&b| (b + 1e-3).abs() < 1e-6));
}

#[test]
fn adam_rejects_changed_shapes() {
    let mut rng = rng_for(3, &[]);
    let mut adam = Adam::new();
    adam.step(&mut Dense::new(3, 2, &mut rng), 1e-3).unwrap();
    assert!(matches!(adam.step(&mut Dense::new(4, 2, &mut rng), 1e-3), Err(Error::Shape(_))));
}

/// Independent statement of the schedule: scan for the first run of
/// `patience_lr` non-improving epochs, then for `patience_stop` more.
fn schedule_oracle(losses: &[f64], p_lr: usize, p_stop: usize) -> (f64, bool) {
    let mut best = f64::INFINITY;
    let flags: Vec<bool> = losses
        .iter()
        .map(|&l| {
            let improved = l < best;
            best = best.min(l);
            improved
        })
        .collect();
    let mut run = 0;
    let mut drop_at = None;
    for (i, &imp) in flags.iter().enumerate() {
        run = if imp { 0 } else { run + 1 };
        if run == p_lr {
            drop_at = Some(i);
            break;
        }
    }
    let Some(d) = drop_at else { return (1e-3, false) };
    let mut run = 0;
    for &imp in &flags[d + 1..] {
        run = if imp { 0 } else { run + 1 };
        if run == p_stop {
            return (1e-6, true);
        }
    }
    (1e-6, false)
}

#[test]
fn schedule_table() {
    let decreasing: Vec<f64> = (0..30).map(|i| 1.0 / (i + 1) as f64).collect();
    let plateau9: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(1.0, 9)).collect();
    let plateau8: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(1.5, 8)).collect();
    let plateau18: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(2.0, 18)).collect();
    let plateau17: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(2.0, 17)).collect();
    let mut recover = plateau9.clone();
    recover.push(0.5);
    recover.extend(std::iter::repeat_n(0.7, 8));
    let alternate: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 - i as f64 * 0.01 } else { 5.0 }).collect();
    let cases: Vec<(&str, Vec<f64>, f64, bool)> = vec![
        ("decreasing", decreasing, 1e-3, false),
        ("nine flat epochs drop", plateau9, 1e-6, false),
        ("eight flat epochs keep", plateau8, 1e-3, false),
        ("nine more after drop stop", plateau18, 1e-6, true),
        ("eight more after drop continue", plateau17, 1e-6, false),
        ("improvement after drop resets", recover, 1e-6, false),
        ("alternating improvements", alternate, 1e-3, false),
    ];
    for (name, losses, lr, stop) in cases {
        assert_eq!(lr_schedule_update(&losses, 1e-3, 1e-6, 9, 9), (lr, stop), "{name}");
        assert_eq!(schedule_oracle(&losses, 9, 9), (lr, stop), "{name} (oracle)");
    }
}

proptest! {
    #[test]
    fn schedule_matches_oracle(pattern in prop::collection::vec(0u8..3, 1..60), p_lr in 1usize..6, p_stop in 1usize..6) {
        // 0 improves, 1 repeats the best, 2 worsens
        let mut best = 10.0;
        let losses: Vec<f64> = pattern.iter().map(|&p| match p {
            0 => { best -= 0.1; best }
            1 => best,
            _ => best + 1.0,
        }).collect();
        let mut s = PlateauSchedule::new(1e-3, 1e-6, p_lr, p_stop);
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            if s.update(l).stop { stopped_at = Some(i); break; }
        }
        let upto = stopped_at.map_or(losses.len(), |i| i + 1);
        let (lr, stop) = schedule_oracle(&losses[..upto], p_lr, p_stop);
        prop_assert_eq!((s.lr, stopped_at.is_some()), (lr, stop));
    }
}

#[test]
fn separable_labels_are_learned() {
    let cohort = toy_cohort(40, 1, false);
    let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 1).unwrap();
    let ck = train(&mut model, &cohort, &quick(50)).unwrap();
    let best = ck.history.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.1, "best training loss {best}");
}

#[test]
fn training_is_deterministic() {
    let cohort = toy_cohort(30, 2, false);
    let run = || {
        let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 4).unwrap();
        train(&mut model, &cohort, &quick(4)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn best_tuning_epoch_is_kept() {
    let cohort = toy_cohort(30, 3, false);
    let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 5).unwrap();
    let ck = train(&mut model, &cohort, &quick(8)).unwrap();
    let h = &ck.history;
    assert_eq!(h.epochs.len(), 8);
    let best = h.best_epoch.unwrap();
    let min = h.epochs.iter().map(|e| e.tuning_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[best].tuning_loss, min);
}

#[test]
fn single_class_converges_to_prior() {
    let cohort = toy_cohort(30, 4, true);
    let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 6).unwrap();
    train(&mut model, &cohort, &quick(20)).unwrap();
    let recs = cohort.records(&[0, 1, 2]).unwrap();
    let refs: Vec<_> = recs.iter().collect();
    for p in model.classify(&refs).unwrap() {
        assert!(p > 0.9, "{p}");
    }
}

#[test]
fn single_label_multilabel_loss_equals_bce() {
    let cohort = toy_cohort(24, 5, false);
    let run = |loss| {
        let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 7).unwrap();
        train(&mut model, &cohort, &TrainConfig { loss, ..quick(3) }).unwrap()
    };
    assert_eq!(run(None).history, run(Some(LossKind::MultilabelBce)).history);
    let logits = Tensor::new(vec![2, 1], vec![0.3, -1.2]).unwrap();
    let y = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
    let (l, _) = bce_with_logits(&logits, &y).unwrap();
    let oracle = -(((1.0 / (1.0 + (-0.3f64).exp())).ln()) + (1.0 - 1.0 / (1.0 + 1.2f64.exp())).ln()) / 2.0;
    assert!((l - oracle).abs() < 1e-14);
}

#[test]
fn incompatible_loss_is_rejected() {
    let cohort = toy_cohort(10, 6, false);
    let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 7).unwrap();
    let cfg = TrainConfig { loss: Some(LossKind::MtlrNll), ..quick(1) };
    assert!(train(&mut model, &cohort, &cfg).is_err());
}

#[test]
fn pretrained_codes_head_has_k_outputs() {
    let cohort = toy_cohort(20, 7, false);
    let (model, ck) = pretrain_source(&cohort, SourceTask::MultilabelCodes, &strided(), &quick(2), &mut |_| {}).unwrap();
    assert_eq!(model.kind, ModelKind::SourceCodes { labels: 3 });
    assert_eq!(ck.tensor("head.out.weight").unwrap().shape(), &[3, model.trunk.width()]);
}

#[test]
fn missing_labels_are_an_error() {
    let mut cohort_records = Vec::new();
    for i in 0..4 {
        let mut r = toy_cohort(4, 8, false).record(i).unwrap();
        r.meta.source_labels = None;
        cohort_records.push(r);
    }
    let cohort = Cohort::from_records(cohort_records).unwrap();
    assert!(pretrain_source(&cohort, SourceTask::MultilabelCodes, &strided(), &quick(1), &mut |_| {}).is_err());
}

#[test]
fn classification_transfer_trains_only_new_head_and_keeps_trunk() {
    let source = toy_cohort(24, 9, false);
    let (_, ck) = pretrain_source(&source, SourceTask::MultilabelCodes, &strided(), &quick(2), &mut |_| {}).unwrap();
    let mut model = freeze_for_transfer(&ck, ModelKind::Diagnosis, None, 1).unwrap();
    let f = model.trunk.width();
    assert_eq!(model.trainable_count(), f * 32 + 32 + 32 + 1);
    assert!(model.trunk.all_frozen());
    let before = frozen_bytes(&model);
    let target = toy_cohort(24, 10, false);
    train(&mut model, &target, &quick(5)).unwrap();
    assert_eq!(frozen_bytes(&model), before);

    // re-heading is deterministic under seed
    let again = freeze_for_transfer(&ck, ModelKind::Diagnosis, None, 1).unwrap();
    let other = freeze_for_transfer(&ck, ModelKind::Diagnosis, None, 2).unwrap();
    let a = Checkpoint::from_model(&again, History::default());
    let b = Checkpoint::from_model(&freeze_for_transfer(&ck, ModelKind::Diagnosis, None, 1).unwrap(), History::default());
    assert_eq!(a, b);
    assert_ne!(a, Checkpoint::from_model(&other, History::default()));
}

#[test]
fn isd_transfer_trains_only_mtlr() {
    let source = toy_cohort(30, 11, false);
    let (_, ck) = pretrain_source(&source, SourceTask::AllcauseSurvival, &strided(), &quick(2), &mut |_| {}).unwrap();
    let grid = TimeGrid::new(vec![20.0, 100.0, 250.0]).unwrap();
    let mut model = freeze_for_transfer(&ck, ModelKind::Isd, Some(grid), 0).unwrap();
    let head = model.isd_head().unwrap();
    assert_eq!(model.trainable_count(), 3 * (head.hidden() + 1));
    assert!(head.mtlr.value.data().iter().all(|&v| v == 0.0));
    let before = frozen_bytes(&model);
    train(&mut model, &toy_cohort(30, 12, false), &quick(5)).unwrap();
    assert_eq!(frozen_bytes(&model), before);
    assert!(model.isd_head().unwrap().mtlr.value.data().iter().any(|&v| v != 0.0));
}

#[test]
fn incompatible_transfers_are_rejected() {
    let source = toy_cohort(20, 13, false);
    let (_, codes) = pretrain_source(&source, SourceTask::MultilabelCodes, &strided(), &quick(1), &mut |_| {}).unwrap();
    assert!(freeze_for_transfer(&codes, ModelKind::Isd, None, 0).is_err());
    assert!(freeze_for_transfer(&codes, ModelKind::SourceMortality, None, 0).is_err());
}

fn sample_checkpoint() -> Checkpoint {
    let cohort = toy_cohort(12, 14, false);
    let mut model = build_model(ModelKind::Diagnosis, &strided(), None, 8).unwrap();
    train(&mut model, &cohort, &quick(2)).unwrap()
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ck = sample_checkpoint();
    let p1 = dir.path().join("a.etsv");
    let p2 = dir.path().join("b.etsv");
    save_checkpoint(&ck, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded, ck);
    let sum = |c: &Checkpoint| c.tensors.iter().map(|t| t.tensor.sum()).sum::<f64>();
    assert_eq!(sum(&ck).to_bits(), sum(&loaded).to_bits());

    let model = loaded.to_model().unwrap();
    assert_eq!(Checkpoint::from_model(&model, ck.history.clone()), ck);
}

#[test]
fn checkpoint_corruption_gives_distinct_errors() {
    let bytes = sample_checkpoint().to_bytes().unwrap();
    let truncated = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]);
    assert!(matches!(truncated, Err(Error::Checkpoint(CheckpointError::Truncated(_)))), "{truncated:?}");

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Checkpoint(CheckpointError::BadMagic { .. }))));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&version),
        Err(Error::Checkpoint(CheckpointError::Version { found: 7, .. }))
    ));

    let mut header = bytes.clone();
    header[12] = b'#';
    assert!(matches!(Checkpoint::from_bytes(&header), Err(Error::Checkpoint(CheckpointError::Header(_)))));

    let mut ck = sample_checkpoint();
    ck.tensors[0].tensor = Tensor::zeros(&[1]);
    assert!(matches!(ck.to_model(), Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))));
    let mut ck = sample_checkpoint();
    ck.tensors.pop();
    assert!(matches!(ck.to_model(), Err(Error::Checkpoint(CheckpointError::MissingTensor(_)))));
}
