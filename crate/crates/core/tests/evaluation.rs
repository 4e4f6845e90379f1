use chipseg_core::eval::{
    confusion, cross_validate, ensemble_predict, evaluate, fold_partition, metrics, Combine,
    ConfusionMatrix, EvalOptions,
};
use chipseg_core::grid::rotate_tensor;
use chipseg_core::pipeline::{prepare_eval_set, PreprocessConfig};
use chipseg_core::train::{TrainConfig, TrainObserver};
use chipseg_core::wafergen::{generate_dataset, WaferGenConfig};
use chipseg_core::{
    build_model, predict_classes, Error, LabelMap, ModelConfig, ParamKind, Shape, Tensor, Variant,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model(seed: u64) -> chipseg_core::Model<f32> {
    build_model(
        &ModelConfig {
            width_divisor: 16,
            decoder_width: 4,
            ..ModelConfig::new(Variant::Vaughan)
        },
        seed,
        None,
    )
    .unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMap {
    LabelMap::from_vec(h, w, (0..h * w).map(|_| rng.random_range(0..3)).collect()).unwrap()
}

#[test]
fn identical_maps_are_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_map(&mut rng, 9, 7);
    let cm = confusion(&x, &x).unwrap();
    let hist = x.class_histogram();
    for j in 0..3 {
        for i in 0..3 {
            assert_eq!(cm.counts[j][i], if i == j { hist[j] as u64 } else { 0 });
        }
    }
    let m = metrics(&cm).unwrap();
    assert_eq!(
        (
            m.pixel_accuracy,
            m.mean_pixel_accuracy,
            m.mean_iou,
            m.defect_class_accuracy
        ),
        (1.0, 1.0, 1.0, Some(1.0))
    );
}

#[test]
fn all_background_prediction_fills_column_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = random_map(&mut rng, 6, 6);
    let cm = confusion(&LabelMap::filled(6, 6, 0), &truth).unwrap();
    assert!(cm.counts.iter().all(|row| row[1] == 0 && row[2] == 0));
    assert_eq!(cm.total(), 36);
}

#[test]
fn confusion_matches_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (p, t) = (random_map(&mut rng, 8, 8), random_map(&mut rng, 8, 8));
        let cm = confusion(&p, &t).unwrap();
        let mut tally = [[0u64; 3]; 3];
        for k in 0..64 {
            tally[t.data()[k] as usize][p.data()[k] as usize] += 1;
        }
        assert_eq!(cm.counts, tally);
    }
}

#[test]
fn confusion_rejects_bad_input() {
    let a = LabelMap::filled(3, 3, 0);
    assert!(confusion(&a, &LabelMap::filled(3, 4, 0)).is_err());
    assert!(matches!(
        confusion(&LabelMap::filled(3, 3, 3), &a),
        Err(Error::LabelRange { .. })
    ));
}

fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
    proptest::array::uniform3(proptest::array::uniform3(0u64..50))
        .prop_filter("non-empty", |c| c.iter().flatten().sum::<u64>() > 0)
        .prop_map(ConfusionMatrix::from_counts)
}

proptest! {
    #[test]
    fn miou_never_exceeds_mpa(cm in arb_matrix()) {
        let m = metrics(&cm).unwrap();
        prop_assert!(m.mean_iou <= m.mean_pixel_accuracy + 1e-12);
        for v in [m.pixel_accuracy, m.mean_pixel_accuracy, m.mean_iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn metrics_survive_relabeling(cm in arb_matrix(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let mut permuted = ConfusionMatrix::new();
        for j in 0..3 {
            for i in 0..3 {
                permuted.counts[perm[j]][perm[i]] = cm.counts[j][i];
            }
        }
        let (a, b) = (metrics(&cm).unwrap(), metrics(&permuted).unwrap());
        prop_assert!((a.pixel_accuracy - b.pixel_accuracy).abs() < 1e-12);
        prop_assert!((a.mean_pixel_accuracy - b.mean_pixel_accuracy).abs() < 1e-12);
        prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
    }
}

#[test]
fn single_angle_ensemble_is_plain_prediction() {
    let model = tiny_model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = Tensor::from_fn(Shape::new(1, 1, 40, 40), |_, _, _, _| {
        rng.random_range(-1.0f32..1.0)
    });
    let plain = predict_classes(&model.predict_proba(&image).unwrap());
    for combine in [Combine::Mean, Combine::Vote] {
        assert_eq!(
            ensemble_predict(&model, &image, &[0], combine).unwrap(),
            plain
        );
    }
}

#[test]
fn symmetric_model_and_input_ignore_half_turns() {
    let mut model = tiny_model(2);
    for (_, p) in model.params_mut().iter_mut() {
        if p.kind == ParamKind::ConvWeight {
            let turned = rotate_tensor(&p.value, 180).unwrap();
            for (a, b) in p.value.data_mut().iter_mut().zip(turned.data()) {
                *a = (*a + *b) / 2.0;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, _, _| {
        rng.random_range(-1.0f32..1.0)
    });
    let turned = rotate_tensor(&raw, 180).unwrap();
    let image = Tensor::from_fn(raw.shape(), |_, _, r, c| {
        (raw.at(0, 0, r, c) + turned.at(0, 0, r, c)) / 2.0
    });
    assert_eq!(
        ensemble_predict(&model, &image, &[0, 180], Combine::Mean).unwrap(),
        ensemble_predict(&model, &image, &[0], Combine::Mean).unwrap()
    );
}

#[test]
fn non_square_quarter_turn_is_rejected() {
    let model = tiny_model(3);
    let image = Tensor::zeros(Shape::new(1, 1, 40, 36));
    assert!(matches!(
        ensemble_predict(&model, &image, &[0, 90], Combine::Mean),
        Err(Error::NonSquare { .. })
    ));
    assert!(ensemble_predict(&model, &image, &[0, 180], Combine::Vote).is_ok());
    assert!(matches!(
        ensemble_predict(&model, &image, &[45], Combine::Mean),
        Err(Error::Angle(45))
    ));
}

#[test]
fn evaluation_pools_wafers() {
    let cfg = WaferGenConfig {
        height: 48,
        width: 48,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg, 4, 0.5, 1, Some(2)).unwrap();
    let set = prepare_eval_set::<f32>(&ds.samples, &PreprocessConfig::default()).unwrap();
    let summary = evaluate(&tiny_model(4), &set, &EvalOptions::default()).unwrap();
    assert_eq!(summary.per_wafer.len(), 4);
    let mut pooled = ConfusionMatrix::new();
    summary.per_wafer.iter().for_each(|c| pooled.merge(c));
    assert_eq!(pooled, summary.confusion);
    assert_eq!(summary.confusion.total(), 4 * 48 * 48);
}

#[test]
fn folds_partition_the_dataset() {
    let flags = vec![false; 40];
    let folds = fold_partition(&flags, 4, false, 1).unwrap();
    assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![10; 4]);
    let mut all: Vec<usize> = folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..40).collect::<Vec<_>>());

    let flags: Vec<bool> = (0..40).map(|i| i % 5 == 0).collect();
    let folds = fold_partition(&flags, 4, true, 2).unwrap();
    for f in &folds {
        assert_eq!(f.len(), 10);
        assert_eq!(f.iter().filter(|&&i| flags[i]).count(), 2);
    }
    let few: Vec<bool> = (0..40).map(|i| i < 3).collect();
    assert!(matches!(
        fold_partition(&few, 4, true, 0),
        Err(Error::Stratification(_))
    ));
    assert!(fold_partition(&few, 4, false, 0).is_ok());
    assert!(fold_partition(&flags, 1, false, 0).is_err());
}

#[test]
fn cross_validation_reports_every_fold() {
    let cfg = WaferGenConfig {
        height: 48,
        width: 48,
        ..Default::default()
    };
    let ds = generate_dataset(&cfg, 6, 0.5, 3, None).unwrap();
    let model_cfg = ModelConfig {
        width_divisor: 16,
        decoder_width: 4,
        ..ModelConfig::new(Variant::Vaughan)
    };
    let train_cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let pre = PreprocessConfig {
        rotations: vec![],
        ..PreprocessConfig::default()
    };
    let mut factory = |_| Box::new(()) as Box<dyn TrainObserver<f32>>;
    let report = cross_validate::<f32>(
        &ds.samples,
        3,
        true,
        4,
        &model_cfg,
        &train_cfg,
        &pre,
        None,
        &mut factory,
    )
    .unwrap();
    assert_eq!(report.folds.len(), 3);
    for (k, f) in report.folds.iter().enumerate() {
        assert_eq!(f.fold, k);
        assert_eq!(f.validation.len(), 2);
        assert_eq!(f.confusion.total(), 2 * 48 * 48);
        assert_eq!(f.history.len(), 1);
    }
    assert_eq!(report.pixel_accuracy.count, 3);
}
