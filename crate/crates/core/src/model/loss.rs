use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-pixel class labels of one sample at score-map resolution, plus the
/// mask of pixels that contribute to the loss.
///
/// Classes `0..K*M` are joint (mixture) channels; `K*M` is the background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTensor {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub class: Vec<u16>,
    pub mask: Vec<bool>,
}

impl LabelTensor {
    /// All background, all supervised.
    pub fn background(height: usize, width: usize, num_classes: usize) -> Self {
        LabelTensor {
            height,
            width,
            num_classes,
            class: vec![(num_classes - 1) as u16; height * width],
            mask: vec![true; height * width],
        }
    }

    pub fn background_class(&self) -> u16 {
        (self.num_classes - 1) as u16
    }

    pub fn is_positive(&self, pixel: usize) -> bool {
        self.class[pixel] != self.background_class()
    }

    pub fn positive_count(&self) -> usize {
        (0..self.class.len()).filter(|&i| self.is_positive(i)).count()
    }

    pub fn supervised_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Keeps every positive pixel and each background pixel independently with
/// probability `keep_ratio`.
pub fn sample_negative_mask(labels: &LabelTensor, keep_ratio: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep ratio must be in (0, 1], got {keep_ratio}"
        )));
    }
    Ok((0..labels.class.len())
        .map(|i| labels.is_positive(i) || keep_ratio >= 1.0 || rng.random::<f64>() < keep_ratio)
        .collect())
}

/// Softmax cross-entropy over classes at every supervised pixel, averaged over
/// the supervised pixels of the whole batch.
///
/// Returns the loss and its gradient with respect to `scores`, which is
/// `(softmax - onehot) / count` on supervised pixels and zero elsewhere.
pub fn masked_loss<T: Real>(scores: &Tensor<T>, labels: &[LabelTensor]) -> Result<(f64, Tensor<T>)> {
    let [n, c, h, w] = scores.dims4()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} label tensors for batch of {n}", labels.len())));
    }
    for l in labels {
        if (l.height, l.width, l.num_classes) != (h, w, c) {
            return Err(Error::Shape(format!(
                "labels {}x{} over {} classes do not match scores {h}x{w} over {c}",
                l.height, l.width, l.num_classes
            )));
        }
    }
    let count: usize = labels.iter().map(LabelTensor::supervised_count).sum();
    if count == 0 {
        return Err(Error::InvalidArgument("no supervised pixels in batch".into()));
    }
    let plane = h * w;
    let data = scores.data();
    let mut grad = Tensor::zeros(scores.shape());
    let g = grad.data_mut();
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    let mut probs = vec![0.0f64; c];
    for (b, label) in labels.iter().enumerate() {
        let base = b * c * plane;
        for px in 0..plane {
            if !label.mask[px] {
                continue;
            }
            let at = |k: usize| base + k * plane + px;
            let max = (0..c).map(|k| data[at(k)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, p) in probs.iter_mut().enumerate() {
                *p = (data[at(k)].as_f64() - max).exp();
                z += *p;
            }
            let truth = label.class[px] as usize;
            total += z.ln() + max - data[at(truth)].as_f64();
            for (k, p) in probs.iter().enumerate() {
                let onehot = if k == truth { 1.0 } else { 0.0 };
                g[at(k)] = T::from_f64((p / z - onehot) * inv);
            }
        }
    }
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_scores_give_log_c() {
        let scores = Tensor::<f64>::full(&[1, 5, 3, 3], 0.7);
        let labels = LabelTensor::background(3, 3, 5);
        let (loss, _) = masked_loss(&scores, &[labels]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_scores_give_zero_loss() {
        let mut scores = Tensor::<f64>::zeros(&[1, 3, 1, 1]);
        scores.data_mut()[2] = 1e3;
        let labels = LabelTensor::background(1, 1, 3);
        let (loss, grad) = masked_loss(&scores, &[labels]).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn two_class_hand_computation() {
        // 2 classes on a 2x2 map; pixels 0 and 3 supervised.
        let scores = Tensor::<f64>::from_vec(&[1, 2, 2, 2], vec![0.5, -1.0, 2.0, 0.0, 1.5, 0.3, -0.2, 0.4]).unwrap();
        let labels = LabelTensor {
            height: 2,
            width: 2,
            num_classes: 2,
            class: vec![0, 1, 1, 1],
            mask: vec![true, false, false, true],
        };
        let (loss, grad) = masked_loss(&scores, &[labels]).unwrap();
        // pixel 0: truth 0, scores (0.5, 1.5); pixel 3: truth 1, scores (0.0, 0.4)
        let ce0 = -(0.5f64.exp() / (0.5f64.exp() + 1.5f64.exp())).ln();
        let ce3 = -(0.4f64.exp() / (0.0f64.exp() + 0.4f64.exp())).ln();
        assert!((loss - (ce0 + ce3) / 2.0).abs() < 1e-12);
        let p0 = 0.5f64.exp() / (0.5f64.exp() + 1.5f64.exp());
        assert!((grad.data()[0] - (p0 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad.data()[4] - (1.0 - p0) / 2.0).abs() < 1e-12);
        assert_eq!(grad.data()[1], 0.0);
        assert_eq!(grad.data()[5], 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let scores = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let mut labels = LabelTensor::background(1, 1, 2);
        labels.mask[0] = false;
        assert!(masked_loss(&scores, &[labels]).is_err());
    }

    #[test]
    fn negative_mask_keeps_positives() {
        let mut labels = LabelTensor::background(16, 16, 3);
        labels.class[10] = 0;
        labels.class[20] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_negative_mask(&labels, 0.0005, &mut rng).unwrap();
        assert!(m[10] && m[20]);
        assert!(sample_negative_mask(&labels, 1.0, &mut rng).unwrap().iter().all(|&k| k));
        assert!(sample_negative_mask(&labels, 0.0, &mut rng).is_err());
    }

    #[test]
    fn negative_mask_rate_within_binomial_bounds() {
        let mut labels = LabelTensor::background(16, 16, 3);
        for i in 0..6 {
            labels.class[i * 17] = 0;
        }
        let negatives = (256 - 6) as f64;
        let (p, seeds) = (0.25, 100);
        let mut kept = 0usize;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = sample_negative_mask(&labels, p, &mut rng).unwrap();
            kept += (0..256).filter(|&i| m[i] && !labels.is_positive(i)).count();
        }
        // Sum of 100 independent Binomial(250, 0.25) draws.
        let trials = negatives * seeds as f64;
        let sigma = (trials * p * (1.0 - p)).sqrt();
        assert!((kept as f64 - p * trials).abs() <= 3.0 * sigma, "kept {kept}");
    }
}
