use super::render::PoseSample;
use crate::error::{Error, Result};
use crate::model::{LabelTensor, ModelConfig, TrainSample};
use crate::tensor::Tensor;

/// Joint position in score-map units (cell `(i, j)` spans `[j, j+1) x [i, i+1)`).
pub fn to_map_coords(p: [f64; 2], downsample: usize) -> [f64; 2] {
    [p[0] / downsample as f64, p[1] / downsample as f64]
}

/// Per-pixel classes at score-map resolution. Every cell whose center lies
/// within `label_radius` cells of a visible joint takes that joint's class
/// (`joint * M + mixture`); when several joints qualify the nearest wins,
/// then the lowest joint index. Everything else is background. The mask is
/// all true; negative sampling happens during training.
pub fn label_tensor(sample: &PoseSample, config: &ModelConfig) -> Result<LabelTensor> {
    let k = config.joint_tree()?.len();
    sample.validate(k)?;
    if sample.size != config.input_size {
        return Err(Error::Shape(format!(
            "sample is {}px, model expects {}px",
            sample.size, config.input_size
        )));
    }
    let m = config.map_size();
    let mixtures = config.mixtures;
    let mut labels = LabelTensor::background(m, m, k * mixtures + 1);
    let mut best = vec![f64::INFINITY; m * m];
    let r = config.label_radius;
    for j in 0..k {
        if !sample.visible[j] {
            continue;
        }
        let mix = sample.mixture[j] as usize;
        if mix >= mixtures {
            return Err(Error::Data(format!(
                "joint {j} has mixture {mix} but the model has {mixtures}"
            )));
        }
        let [x, y] = to_map_coords(sample.joints[j], config.downsample);
        let lo = |v: f64| ((v - r - 0.5).floor().max(0.0)) as usize;
        let hi = |v: f64| ((v + r + 0.5).ceil().max(0.0) as usize).min(m);
        for i in lo(y)..hi(y) {
            for c in lo(x)..hi(x) {
                let d = (c as f64 + 0.5 - x).hypot(i as f64 + 0.5 - y);
                let px = i * m + c;
                if d <= r && d < best[px] {
                    best[px] = d;
                    labels.class[px] = (j * mixtures + mix) as u16;
                }
            }
        }
    }
    Ok(labels)
}

/// `[1, 1, S, S]` input with intensities mapped to `[-0.5, 0.5]`.
pub fn image_tensor(sample: &PoseSample) -> Tensor<f32> {
    let data = sample.image.iter().map(|&v| v as f32 / 255.0 - 0.5).collect();
    Tensor::from_vec(&[1, 1, sample.size, sample.size], data).expect("size matches")
}

pub fn to_train_samples(samples: &[PoseSample], config: &ModelConfig) -> Result<Vec<TrainSample>> {
    samples
        .iter()
        .map(|s| Ok(TrainSample { image: image_tensor(s), labels: label_tensor(s, config)? }))
        .collect()
}
