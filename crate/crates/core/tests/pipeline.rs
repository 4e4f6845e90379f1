use std::collections::HashSet;

use chipseg_core::grid::CLASS_DEFECT;
use chipseg_core::pipeline::{
    augment_rotations, pad_to_square, prepare_training_set, preprocess, rotate_sample,
    shuffle_epoch, PreprocessConfig,
};
use chipseg_core::wafergen::{generate_wafer, WaferGenConfig};
use chipseg_core::{Error, Grid, WaferSample};

fn wafer(seed: u64, h: usize, w: usize) -> WaferSample {
    generate_wafer(&WaferGenConfig {
        seed,
        height: h,
        width: w,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn constant_image_normalizes_to_zero() {
    let mut s = wafer(0, 32, 32);
    s.image = Grid::filled(32, 32, 0.4);
    let p = preprocess::<f64>(&s, &PreprocessConfig::default()).unwrap();
    assert!(p.image.data().iter().all(|&v| v == 0.0));
}

#[test]
fn normalized_image_is_standardized_and_restorable() {
    let s = wafer(1, 48, 48);
    let cfg = PreprocessConfig {
        mean_value: 0.25,
        ..PreprocessConfig::default()
    };
    let p = preprocess::<f64>(&s, &cfg).unwrap();
    let n = p.image.data().len() as f64;
    let mean = p.image.data().iter().sum::<f64>() / n;
    let var = p
        .image
        .data()
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    assert!((mean + 0.25).abs() < 1e-9);
    assert!((var - 1.0).abs() < 1e-4);
    let back = p.stats.restore(&p.image).unwrap();
    for (a, b) in back.data().iter().zip(s.image.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn one_hot_matches_labels() {
    let s = wafer(2, 40, 40);
    let p = preprocess::<f32>(&s, &PreprocessConfig::default()).unwrap();
    let plane = 40 * 40;
    let oh = p.one_hot.data();
    for i in 0..plane {
        let sum: f32 = (0..3).map(|c| oh[c * plane + i]).sum();
        assert_eq!(sum, 1.0);
        if s.labels.data()[i] == CLASS_DEFECT {
            assert_eq!((oh[i], oh[plane + i], oh[2 * plane + i]), (0.0, 0.0, 1.0));
        }
    }
}

#[test]
fn preprocessing_twice_is_rejected() {
    let s = wafer(3, 32, 32);
    let p = preprocess::<f32>(&s, &PreprocessConfig::default()).unwrap();
    let mut again = s.clone();
    again.image = Grid::from_vec(32, 32, p.image.data().to_vec()).unwrap();
    assert!(matches!(
        preprocess::<f32>(&again, &PreprocessConfig::default()),
        Err(Error::Other(_))
    ));
}

#[test]
fn three_rotations_quadruple_the_set() {
    let samples: Vec<_> = (0..106).map(|i| wafer(i, 48, 48)).collect();
    let out = augment_rotations(&samples, &[90, 180, 270]).unwrap();
    assert_eq!(out.len(), 424);
    for (k, s) in out.iter().enumerate() {
        assert_eq!(
            s.labels.class_histogram(),
            samples[k / 4].labels.class_histogram()
        );
    }
}

#[test]
fn rotation_preserves_histograms_and_inverts() {
    let s = wafer(4, 36, 36);
    for angle in [90, 180, 270] {
        let r = rotate_sample(&s, angle).unwrap();
        assert_eq!(r.labels.class_histogram(), s.labels.class_histogram());
        let back = rotate_sample(&r, 360 - angle).unwrap();
        assert_eq!(back.labels, s.labels);
        assert_eq!(back.image, s.image);
        assert_eq!(back.meta.defects, s.meta.defects);
    }
    let mut four = s.clone();
    for _ in 0..4 {
        four = rotate_sample(&four, 90).unwrap();
    }
    assert_eq!(four.image, s.image);
    assert_eq!(four.labels, s.labels);
}

#[test]
fn quarter_turn_moves_defect_pixel() {
    let s = wafer(5, 40, 40);
    let h = 40;
    let r = rotate_sample(&s, 90).unwrap();
    for row in 0..h {
        for col in 0..h {
            assert_eq!(r.labels.get(col, h - 1 - row), s.labels.get(row, col));
            assert_eq!(r.image.get(col, h - 1 - row), s.image.get(row, col));
        }
    }
    // Stored geometry follows the labels.
    let mut union = vec![false; h * h];
    for d in &r.meta.defects {
        for &p in &d.label {
            union[p as usize] = true;
        }
    }
    assert!(r
        .labels
        .data()
        .iter()
        .zip(&union)
        .all(|(&l, &u)| (l == CLASS_DEFECT) == u));
}

#[test]
fn non_square_quarter_turn_needs_padding() {
    let s = wafer(6, 44, 40);
    assert!(matches!(
        rotate_sample(&s, 90),
        Err(Error::NonSquare { .. })
    ));
    assert!(rotate_sample(&s, 180).is_ok());
    let padded = pad_to_square(&s);
    assert_eq!(padded.labels.dims(), (44, 44));
    assert_eq!(
        padded.labels.class_histogram()[2],
        s.labels.class_histogram()[2]
    );
    assert!(rotate_sample(&padded, 90).is_ok());
    let cfg = PreprocessConfig {
        pad_to_square: true,
        ..PreprocessConfig::default()
    };
    assert_eq!(prepare_training_set::<f32>(&[s], &cfg).unwrap().len(), 4);
}

#[test]
fn shuffle_is_a_seeded_bijection() {
    assert_eq!(shuffle_epoch(50, 7), shuffle_epoch(50, 7));
    let mut order = shuffle_epoch(50, 8);
    order.sort_unstable();
    assert_eq!(order, (0..50).collect::<Vec<_>>());
    let seen: HashSet<Vec<usize>> = (0..1000).map(|seed| shuffle_epoch(4, seed)).collect();
    assert_eq!(seen.len(), 24);
}
