//! Binary PPM (P6) and PGM (P5) images of wafers and predictions.

use chipseg_core::grid::{CLASS_DEFECT, NUM_CLASSES};
use chipseg_core::{Image, LabelMap};

/// Background and markers, in-spec chips, defects.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [[20, 30, 110], [64, 200, 200], [250, 220, 40]];

const CORRECT: [u8; 3] = [90, 90, 90];
const MISSED_DEFECT: [u8; 3] = [230, 40, 40];
const FALSE_DEFECT: [u8; 3] = [240, 150, 30];
const OTHER_ERROR: [u8; 3] = [240, 240, 240];

fn ppm(h: usize, w: usize, rgb: impl Iterator<Item = [u8; 3]>) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    rgb.for_each(|p| out.extend_from_slice(&p));
    out
}

pub fn classes_ppm(labels: &LabelMap) -> Vec<u8> {
    let (h, w) = labels.dims();
    ppm(
        h,
        w,
        labels
            .data()
            .iter()
            .map(|&c| PALETTE[(c as usize).min(NUM_CLASSES - 1)]),
    )
}

/// Grey where prediction and truth agree; red for missed defects, orange for false
/// defects, white for other confusions.
pub fn difference_ppm(predicted: &LabelMap, truth: &LabelMap) -> Vec<u8> {
    let (h, w) = truth.dims();
    ppm(
        h,
        w,
        predicted.data().iter().zip(truth.data()).map(|(&p, &t)| {
            match (p == t, t == CLASS_DEFECT, p == CLASS_DEFECT) {
                (true, _, _) => CORRECT,
                (false, true, _) => MISSED_DEFECT,
                (false, _, true) => FALSE_DEFECT,
                _ => OTHER_ERROR,
            }
        }),
    )
}

/// Brightness clipped to `[0, 1]` as 8-bit grey.
pub fn brightness_pgm(image: &Image) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Raw class indices as grey levels with maximum value 2.
pub fn labels_pgm(labels: &LabelMap) -> Vec<u8> {
    let (h, w) = labels.dims();
    let mut out = format!("P5\n{w} {h}\n{}\n", NUM_CLASSES - 1).into_bytes();
    out.extend_from_slice(labels.data());
    out
}
