//! Pixel accuracy, confusion counts, masking and de-identification leakage.
//!
//! Foreground (cone) is the positive class. Set-level accuracy is the
//! unweighted mean of per-image accuracies.

use crate::error::{Error, Result};
use crate::maskgen::BinaryMask;
use crate::sequence_io::Frame;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Intersection over union of the foreground class.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::dims(a, b));
    }
    Ok(())
}

pub fn confusion_counts(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    same_dims(pred.dims(), truth.dims())?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(TP + TN) / pixels`.
pub fn pixel_accuracy(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(confusion_counts(pred, truth)?.accuracy())
}

/// Accuracy at the truth's resolution; `pred` is resampled nearest-neighbour
/// when the sizes differ.
pub fn pixel_accuracy_at_truth(pred: &BinaryMask, truth: &BinaryMask) -> f64 {
    let pred = pred.resize_nearest(truth.width(), truth.height());
    confusion_counts(&pred, truth)
        .expect("resized to truth dimensions")
        .accuracy()
}

/// Unweighted mean of per-image accuracies; `None` for an empty set.
pub fn set_accuracy(per_image: &[f64]) -> Option<f64> {
    if per_image.is_empty() {
        None
    } else {
        Some(per_image.iter().sum::<f64>() / per_image.len() as f64)
    }
}

/// Keeps foreground pixels, zeroes the rest.
pub fn apply_mask(frame: &Frame, mask: &BinaryMask) -> Result<Frame> {
    same_dims(frame.dims(), mask.dims())?;
    let px = frame
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    Ok(Frame::new(frame.width(), frame.height(), px, frame.scale())
        .expect("masking keeps values in range"))
}

/// Fraction of `sensitive` pixels that survive `mask`; 0 when nothing is
/// sensitive.
pub fn deid_leakage(mask: &BinaryMask, sensitive: &BinaryMask) -> Result<f64> {
    same_dims(mask.dims(), sensitive.dims())?;
    let total = sensitive.count();
    if total == 0 {
        return Ok(0.0);
    }
    let leaked = mask
        .bits()
        .iter()
        .zip(sensitive.bits())
        .filter(|(&m, &s)| m && s)
        .count();
    Ok(leaked as f64 / total as f64)
}

/// A frame passes de-identification when nothing sensitive leaks.
pub fn deid_passes(mask: &BinaryMask, sensitive: &BinaryMask) -> Result<bool> {
    Ok(deid_leakage(mask, sensitive)? == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence_io::PixelScale;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
        BinaryMask::new(w, h, (0..w * h).map(|_| rng.gen_bool(0.5)).collect()).unwrap()
    }

    #[test]
    fn counts_for_identical_and_complement() {
        let full = BinaryMask::full(4, 4);
        let c = confusion_counts(&full, &full).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 16, tn: 0, fp: 0, fn_: 0 });
        let m = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let c = confusion_counts(&m.complement(), &m).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(c.total(), 16);
    }

    #[test]
    fn counts_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_mask(&mut rng, 32, 32), random_mask(&mut rng, 32, 32));
        let c = confusion_counts(&a, &b).unwrap();
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for y in 0..32 {
            for x in 0..32 {
                match (a.get(x, y), b.get(x, y)) {
                    (true, true) => tp += 1,
                    (false, false) => tn += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                }
            }
        }
        assert_eq!(c, ConfusionCounts { tp, tn, fp, fn_ });
    }

    #[test]
    fn accuracy_edge_values() {
        let m = BinaryMask::from_fn(16, 16, |x, y| (x + y) % 3 == 0);
        assert_eq!(pixel_accuracy(&m, &m).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&m, &m.complement()).unwrap(), 0.0);
        assert!(pixel_accuracy(&m, &BinaryMask::empty(3, 3)).is_err());
    }

    #[test]
    fn accuracy_with_known_mismatch_count() {
        let truth = BinaryMask::empty(256, 256);
        let pred = BinaryMask::from_fn(256, 256, |x, y| y * 256 + x < 5243);
        let acc = pixel_accuracy(&pred, &truth).unwrap();
        assert!((acc - (1.0 - 5243.0 / 65536.0)).abs() < 1e-15);
        assert!((acc - 0.92000).abs() < 5e-6);
    }

    #[test]
    fn apply_mask_cases() {
        let f = Frame::filled(4, 2, 100.0, PixelScale::Byte);
        assert_eq!(apply_mask(&f, &BinaryMask::full(4, 2)).unwrap(), f);
        assert!(apply_mask(&f, &BinaryMask::empty(4, 2))
            .unwrap()
            .pixels()
            .iter()
            .all(|&v| v == 0.0));
        let half = BinaryMask::from_fn(4, 2, |x, _| x < 2);
        let out = apply_mask(&f, &half).unwrap();
        assert_eq!(out.pixels(), &[100.0, 100.0, 0.0, 0.0, 100.0, 100.0, 0.0, 0.0]);
        assert_eq!(apply_mask(&out, &half).unwrap(), out);
    }

    #[test]
    fn leakage_cases() {
        let sensitive = BinaryMask::from_fn(6, 6, |x, y| x < 2 && y < 2);
        let disjoint = BinaryMask::from_fn(6, 6, |x, _| x >= 3);
        assert_eq!(deid_leakage(&disjoint, &sensitive).unwrap(), 0.0);
        assert!(deid_passes(&disjoint, &sensitive).unwrap());
        assert_eq!(deid_leakage(&BinaryMask::full(6, 6), &sensitive).unwrap(), 1.0);
        let partial = BinaryMask::from_fn(6, 6, |x, _| x == 0);
        assert_eq!(deid_leakage(&partial, &sensitive).unwrap(), 0.5);
        assert_eq!(deid_leakage(&partial, &BinaryMask::empty(6, 6)).unwrap(), 0.0);
    }

    #[test]
    fn resampled_accuracy_and_set_mean() {
        let truth = BinaryMask::from_fn(8, 8, |x, _| x < 4);
        let pred = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        assert_eq!(pixel_accuracy_at_truth(&pred, &truth), 1.0);
        assert_eq!(set_accuracy(&[1.0, 0.5]), Some(0.75));
        assert_eq!(set_accuracy(&[]), None);
    }

    proptest::proptest! {
        #[test]
        fn accuracy_symmetry_and_complement(seed in proptest::num::u64::ANY, w in 1usize..20, h in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_mask(&mut rng, w, h), random_mask(&mut rng, w, h));
            let ab = pixel_accuracy(&a, &b).unwrap();
            proptest::prop_assert_eq!(ab, pixel_accuracy(&b, &a).unwrap());
            proptest::prop_assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
            let sum = ab + pixel_accuracy(&a, &b.complement()).unwrap();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
