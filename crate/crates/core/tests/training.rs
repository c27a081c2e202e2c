mod common;

use csab::augment::AugmentConfig;
use csab::dataset::{LoadedSet, SplitSpec};
use csab::model::{forward, init_params};
use csab::train::{
    compare_models, decode, encode, evaluate, evaluate_set, fit, history_csv, load_checkpoint, save_checkpoint, saliency_map, saliency_with,
    train, Checkpoint, ConfusionMatrix, TrainData,
};
use csab::{CheckpointError, Error, HeadKind, LabelMap, ModelSpec, ParamSet, Tensor, TrainConfig};
use proptest::prelude::*;

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 0.015,
        ..Default::default()
    }
}

fn bits(p: &ParamSet<f32>) -> Vec<u32> {
    p.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
}

fn probe_batch() -> Tensor<f32> {
    Tensor::from_fn([3, 32, 32, 3], |i| ((i * 2654435761) % 1000) as f32 / 1000.0)
}

fn checkpoint(head: HeadKind) -> Checkpoint {
    let spec = ModelSpec::tiny(head);
    Checkpoint {
        params: init_params(&spec, 21).unwrap(),
        spec,
        label_map: LabelMap::default(),
        train_config: TrainConfig::default(),
        split: None,
        history: vec![],
    }
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let (_dir, m) = common::synthetic_manifest(1);
    let set = LoadedSet::from_records(&m.records[..16], (32, 32)).unwrap();
    for head in [HeadKind::Csab, HeadKind::Plain] {
        let spec = ModelSpec::tiny(head);
        let mut params = init_params(&spec, 3).unwrap();
        let before = bits(&params);
        let cfg = TrainConfig { learning_rate: 0.0, ..quick_cfg(2) };
        fit(&spec, &mut params, &TrainData { train: set.clone(), val: LoadedSet::default() }, &cfg).unwrap();
        assert_eq!(bits(&params), before, "{head:?}");
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let (_dir, m) = common::synthetic_manifest(2);
    let split = SplitSpec::hold_out(&m, 4).unwrap();
    let cfg = TrainConfig { augment: AugmentConfig::default(), val_fraction: 0.2, ..quick_cfg(2) };
    let a = train(&ModelSpec::tiny(HeadKind::Plain), &m, &split, &cfg).unwrap();
    let b = train(&ModelSpec::tiny(HeadKind::Plain), &m, &split, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.history.len(), 2);
    assert!(a.history.iter().all(|h| h.val_acc.is_some()));
    let csv = history_csv(&a.history);
    assert!(csv.starts_with("epoch,train_loss,train_acc,val_acc\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn empty_train_split_is_an_error() {
    let (_dir, m) = common::synthetic_manifest(3);
    let one_env = csab::DatasetManifest::new(m.records.iter().filter(|r| r.environment == 0).cloned().collect(), m.label_map.clone()).unwrap();
    let split = SplitSpec::hold_out(&one_env, 0).unwrap();
    let err = train(&ModelSpec::tiny(HeadKind::Csab), &one_env, &split, &quick_cfg(1)).unwrap_err();
    assert!(matches!(err, Error::EmptyTrainSplit), "{err}");
}

#[test]
fn divergence_reports_coordinates() {
    let (_dir, m) = common::synthetic_manifest(4);
    let set = LoadedSet::from_records(&m.records, (32, 32)).unwrap();
    let spec = ModelSpec::tiny(HeadKind::Plain);
    let mut params = init_params(&spec, 1).unwrap();
    let cfg = TrainConfig { learning_rate: 1e30, augment: AugmentConfig::identity(0), ..quick_cfg(3) };
    let err = fit(&spec, &mut params, &TrainData { train: set, val: LoadedSet::default() }, &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for head in [HeadKind::Csab, HeadKind::Plain] {
        let mut cp = checkpoint(head);
        cp.history.push(csab::EpochStats { epoch: 1, train_loss: 1.25, train_acc: 0.5, val_acc: None });
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&cp, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(bits(&back.params), bits(&cp.params));
        assert_eq!(back, cp);
        let (a, b) = (forward(&cp.spec, &cp.params, &probe_batch()).unwrap(), forward(&back.spec, &back.params, &probe_batch()).unwrap());
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn corrupt_checkpoints_fail_with_distinct_errors() {
    let bytes = encode(&checkpoint(HeadKind::Csab)).unwrap();
    let ck = |b: &[u8]| match decode(b) {
        Err(e) => e,
        Ok(_) => panic!("corrupt checkpoint decoded"),
    };

    assert!(matches!(ck(&bytes[..bytes.len() - 1]), CheckpointError::Truncated(_)));
    assert!(matches!(ck(&bytes[..2]), CheckpointError::Truncated("magic")));

    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"NOPE");
    assert!(matches!(ck(&magic), CheckpointError::BadMagic(m) if &m == b"NOPE"));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&9u32.to_le_bytes());
    assert!(matches!(ck(&version), CheckpointError::VersionMismatch { found: 9, expected: 1 }));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(ck(&trailing), CheckpointError::TrailingBytes(1)));

    // Same-length header edit: the spec now wants 7 classes.
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text.find("\"num_classes\":6").unwrap() + "\"num_classes\":".len();
    let mut resized = bytes.clone();
    resized[at] = b'7';
    assert!(matches!(ck(&resized), CheckpointError::TensorSizeMismatch { ref name, .. } if name == "head.bilinear.weights"));

    let mut header = bytes.clone();
    header[12] = b'!';
    assert!(matches!(ck(&header), CheckpointError::Header(_)));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cut.ckpt");
    std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(CheckpointError::Truncated(_)))));
}

#[test]
fn random_weights_score_chance_on_balanced_noise() {
    let spec = ModelSpec::tiny(HeadKind::Csab);
    let params = init_params(&spec, 77).unwrap();
    let mut rng = common::Lcg(13);
    let set = LoadedSet {
        images: (0..600).map(|_| Tensor::new([32, 32, 3], rng.vec(32 * 32 * 3, 0.0, 1.0).iter().map(|&v| v as f32).collect()).unwrap()).collect(),
        labels: (0..600).map(|i| i % 6).collect(),
    };
    let (acc, cm) = evaluate_set(&spec, &params, &set).unwrap();
    assert!((acc - 1.0 / 6.0).abs() <= 0.1, "{acc}");
    assert_eq!(cm.row_sums(), vec![100; 6]);
}

#[test]
fn evaluate_single_sample_and_label_check() {
    let (_dir, m) = common::synthetic_manifest(5);
    let cp = checkpoint(HeadKind::Plain);
    let set = LoadedSet::from_records(&m.records[..1], (32, 32)).unwrap();
    let pred = csab::model::argmax(forward(&cp.spec, &cp.params, &set.batch(&[0]).unwrap().0).unwrap().data());
    let mut record = m.records[0].clone();
    record.mapped_class = Some(pred);
    let (acc, cm) = evaluate(&cp, &[record.clone()]).unwrap();
    assert_eq!(acc, 1.0);
    assert_eq!((cm.total(), cm.trace(), cm.get(pred, pred)), (1, 1, 1));
    record.mapped_class = Some(6);
    assert!(matches!(evaluate(&cp, &[record]), Err(Error::LabelOutOfRange { label: 6, .. })));
    assert!(evaluate(&cp, &[]).is_err());
}

#[test]
fn saliency_of_an_input_independent_model_is_zero() {
    let mut cp = checkpoint(HeadKind::Csab);
    {
        let name = "backbone.block0.conv0.kernel";
        cp.params.by_name_mut(name).unwrap().value.data_mut().fill(0.0);
    }
    let img = Tensor::from_fn([32, 32, 3], |i| (i % 7) as f32 / 7.0);
    let map = saliency_map(&cp.spec, &cp.params, &img, 2).unwrap();
    assert_eq!(map.shape(), &[32, 32]);
    assert!(map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn saliency_contract_on_trained_shape() {
    let cp = checkpoint(HeadKind::Plain);
    let img = Tensor::from_fn([32, 32, 3], |i| (i % 11) as f32 / 11.0);
    let map = saliency_map(&cp.spec, &cp.params, &img, 5).unwrap();
    assert_eq!(map.shape(), &[32, 32]);
    assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(map.data().iter().copied().fold(0.0f32, f32::max), 1.0);
    assert!(matches!(saliency_map(&cp.spec, &cp.params, &img, 6), Err(Error::LabelOutOfRange { .. })));
}

#[test]
fn saliency_of_a_linear_model_is_its_weights() {
    let (h, w, k) = (4, 5, 3);
    let mut rng = common::Lcg(8);
    let weights: Vec<f32> = rng.vec(h * w * 3 * k, -1.0, 1.0).iter().map(|&v| v as f32).collect();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new([h * w * 3, k], weights.clone()).unwrap()).unwrap();
    ps.insert("b", Tensor::zeros([k])).unwrap();
    let img = Tensor::from_fn([h, w, 3], |i| (i % 5) as f32 / 5.0);
    let class = 1;
    let map = saliency_with(&img, class, |tape, x| {
        let flat = tape.reshape(x, [1, h * w * 3])?;
        let wv = tape.param_named(&ps, "w")?;
        let bv = tape.param_named(&ps, "b")?;
        tape.dense(flat, wv, bv)
    })
    .unwrap();
    // analytic: max over channels of |W[pixel, c, class]|, then min-max scaled
    let raw: Vec<f32> = (0..h * w).map(|p| (0..3).map(|c| weights[(p * 3 + c) * k + class].abs()).fold(0.0, f32::max)).collect();
    let (lo, hi) = (raw.iter().copied().fold(f32::INFINITY, f32::min), raw.iter().copied().fold(0.0, f32::max));
    for (got, r) in map.data().iter().zip(&raw) {
        assert!((got - (r - lo) / (hi - lo)).abs() < 1e-6);
    }
}

#[test]
fn compare_emits_one_row_per_head_deterministically() {
    let (_dir, m) = common::synthetic_manifest(6);
    let split = SplitSpec::hold_out(&m, 2).unwrap();
    let cfg = TrainConfig { val_fraction: 0.2, ..quick_cfg(1) };
    let (table, cps) = compare_models(&m, &split, &ModelSpec::tiny(HeadKind::Csab), &cfg).unwrap();
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,attention,backbone,epoch,batch,train_acc,val_acc,test_acc");
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split(',').count() == 8));
    assert!(lines[1].starts_with("1,yes,tiny,1,8,"));
    assert!(lines[2].starts_with("2,no,tiny,1,8,"));
    assert_eq!(cps.len(), 2);
    assert_eq!(table.to_text().lines().count(), 3);
    let (again, _) = compare_models(&m, &split, &ModelSpec::tiny(HeadKind::Plain), &cfg).unwrap();
    assert_eq!(again.to_csv(), csv);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn confusion_matrix_integrity(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200)) {
        let mut cm = ConfusionMatrix::new(6);
        for &(t, p) in &pairs {
            cm.add(t, p).unwrap();
        }
        let mut per_class = [0u64; 6];
        for &(t, _) in &pairs {
            per_class[t] += 1;
        }
        prop_assert_eq!(cm.row_sums(), per_class.to_vec());
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        prop_assert_eq!(cm.accuracy(), correct as f64 / pairs.len() as f64);
        prop_assert_eq!(cm.trace() as f64 / cm.total() as f64, cm.accuracy());
    }
}
