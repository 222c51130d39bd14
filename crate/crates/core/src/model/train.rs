use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{masked_loss, sample_negative_mask, LabelTensor};
use super::net::{PoseNet, GROUP_BACKBONE, GROUP_NEW};
use crate::error::{Error, Result};
use crate::tensor::{LrGroups, Mode, Sgd, Tensor};

/// One training example: a `[1, C, S, S]` image and its score-map labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Tensor<f32>,
    pub labels: LabelTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_new: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr_backbone: 0.001,
            lr_new: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, v) in [("lr_backbone", self.lr_backbone), ("lr_new", self.lr_new)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn lr_groups(&self) -> LrGroups {
        LrGroups::new().with(GROUP_BACKBONE, self.lr_backbone).with(GROUP_NEW, self.lr_new)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_pcp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss of the first minibatch before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,train_loss,val_pcp` with epoch 0 holding the initial loss.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_pcp\n");
        let _ = writeln!(out, "0,{},", self.initial_loss);
        for e in &self.epochs {
            let pcp = e.val_pcp.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, pcp);
        }
        out
    }
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((epoch as u128) << 40);
    rng
}

/// Minibatch SGD over `data`. Negative masks and sample order are redrawn
/// every epoch from `cfg.seed`, so a run is a pure function of its inputs.
///
/// `validate`, when given, is called after every epoch and its value recorded
/// as that epoch's validation PCP.
pub fn train(
    model: &mut PoseNet<f32>,
    data: &[TrainSample],
    cfg: &TrainConfig,
    mut validate: Option<&mut dyn FnMut(&PoseNet<f32>) -> Result<f64>>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let keep = model.config().negative_keep;
    let rates = cfg.lr_groups();
    let mut sgd = Sgd::<f32>::new(cfg.momentum);
    model.zero_grad();
    let mut initial_loss = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut mask_rng = epoch_rng(cfg.seed, epoch, 1);
        let mut drop_rng = epoch_rng(cfg.seed, epoch, 2);
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 3));
        let (mut sum, mut batches) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<Tensor<f32>> = chunk.iter().map(|&i| data[i].image.clone()).collect();
            let labels = chunk
                .iter()
                .map(|&i| {
                    let mut l = data[i].labels.clone();
                    l.mask = sample_negative_mask(&l, keep, &mut mask_rng)?;
                    Ok(l)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = Tensor::stack(&images)?;
            let (scores, cache) = model.forward(&batch, Mode::Train, &mut drop_rng)?;
            let (loss, grad) = match masked_loss(&scores, &labels) {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, step, loss: f64::NAN }),
                r => r?,
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            initial_loss.get_or_insert(loss);
            model.backward(cache, &grad)?;
            sgd.step(model.params_mut(), &rates)?;
            sum += loss;
            batches += 1;
        }
        let val_pcp = match validate.as_mut() {
            Some(f) => Some(f(model)?),
            None => None,
        };
        let record = EpochRecord { epoch, train_loss: sum / batches as f64, val_pcp };
        progress(&record);
        epochs.push(record);
    }
    let initial_loss = match initial_loss {
        Some(l) => l,
        None => evaluate_loss(model, data, cfg.batch_size)?,
    };
    Ok(TrainReport { initial_loss, epochs })
}

/// Mean loss over `data` in eval mode with every pixel supervised.
pub fn evaluate_loss(model: &PoseNet<f32>, data: &[TrainSample], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in data.chunks(batch_size.max(1)) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(|s| s.image.clone()).collect();
        let labels: Vec<LabelTensor> = chunk
            .iter()
            .map(|s| LabelTensor { mask: vec![true; s.labels.class.len()], ..s.labels.clone() })
            .collect();
        let scores = model.predict(&Tensor::stack(&images)?)?;
        let (loss, _) = masked_loss(&scores, &labels)?;
        let px: usize = labels.iter().map(LabelTensor::supervised_count).sum();
        sum += loss * px as f64;
        count += px;
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_backbone, ModelConfig, Variant};
    use rand::Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            backbone: parse_backbone("c3:4 p c3:4 p c3:6").unwrap(),
            joint_channels: 2,
            kernel_size: 3,
            tree: "chain3".into(),
            negative_keep: 0.3,
            variant: Variant::BiDirection,
            ..ModelConfig::default()
        }
    }

    fn samples(n: usize) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| {
                let image = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|_| rng.random()).collect()).unwrap();
                let mut labels = LabelTensor::background(4, 4, 4);
                for k in 0..3 {
                    labels.class[rng.random_range(0..16)] = k;
                }
                TrainSample { image, labels }
            })
            .collect()
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let mut net = PoseNet::new(&config(), 1).unwrap();
        let before = net.clone();
        let cfg = TrainConfig { epochs: 1, lr_backbone: 0.0, lr_new: 0.0, ..TrainConfig::default() };
        train(&mut net, &samples(1), &cfg, None, |_| {}).unwrap();
        for ((n, _, a), (_, _, b)) in before.named_params().iter().zip(net.named_params()) {
            assert_eq!(a.data(), b.data(), "{n}");
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let data = samples(10);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 5, ..TrainConfig::default() };
        let run = || {
            let mut net = PoseNet::new(&config(), 1).unwrap();
            let report = train(&mut net, &data, &cfg, None, |_| {}).unwrap();
            (net, report)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn initial_loss_is_log_classes() {
        let mut net = PoseNet::new(&config(), 1).unwrap();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let report = train(&mut net, &samples(4), &cfg, None, |_| {}).unwrap();
        assert!((report.initial_loss - 4f64.ln()).abs() < 1e-6);
        assert!(report.to_csv().starts_with("epoch,train_loss,val_pcp\n0,"));
    }

    #[test]
    fn validation_is_recorded_and_empty_set_rejected() {
        let mut net = PoseNet::new(&config(), 1).unwrap();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let mut calls = 0;
        let mut val = |_: &PoseNet<f32>| {
            calls += 1;
            Ok(50.0)
        };
        let report = train(&mut net, &samples(2), &cfg, Some(&mut val), |_| {}).unwrap();
        assert_eq!(calls, 2);
        assert!(report.epochs.iter().all(|e| e.val_pcp == Some(50.0)));
        assert!(matches!(train(&mut net, &[], &cfg, None, |_| {}), Err(Error::Data(_))));
    }

    #[test]
    fn huge_rate_reports_divergence() {
        let mut net = PoseNet::new(&config(), 1).unwrap();
        let cfg = TrainConfig { epochs: 50, lr_backbone: 1e12, lr_new: 1e12, momentum: 0.0, ..TrainConfig::default() };
        let err = train(&mut net, &samples(4), &cfg, None, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_)), "{err}");
    }
}
