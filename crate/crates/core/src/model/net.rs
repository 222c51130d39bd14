use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BackboneLayer, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::structured::{
    concat_branches, pass_messages, pass_messages_backward, per_joint_features,
    per_joint_features_backward, predict_score_maps, predict_score_maps_backward, split_branches,
    BranchStacks, Direction, JointTree, PassCache,
};
use crate::tensor::{
    channel_dropout_backward, channel_dropout_forward, conv2d_backward, conv2d_forward,
    hash_signs, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, ConvParams,
    DropoutMask, Mode, ParamRef, PoolCache, Real, Tensor,
};

/// Parameter group of the shared trunk.
pub const GROUP_BACKBONE: &str = "backbone";
/// Parameter group of everything above the trunk.
pub const GROUP_NEW: &str = "new";

/// The full pose network: shared trunk, per-joint banks for two branches,
/// optional message passing, and per-joint score prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseNet<T: Real = f32> {
    config: ModelConfig,
    tree: JointTree,
    backbone: Vec<ConvParams<T>>,
    up_banks: Vec<ConvParams<T>>,
    down_banks: Vec<ConvParams<T>>,
    up_stacks: Option<BranchStacks<T>>,
    down_stacks: Option<BranchStacks<T>>,
    pred: Vec<ConvParams<T>>,
    background: ConvParams<T>,
}

enum TrunkStep<T: Real> {
    Conv { input: Tensor<T>, pre: Tensor<T> },
    Pool(PoolCache),
}

/// Intermediate activations of one forward pass.
pub struct ForwardCache<T: Real> {
    trunk: Vec<TrunkStep<T>>,
    dropout: DropoutMask<T>,
    shared: Tensor<T>,
    up_pre: Vec<Tensor<T>>,
    down_pre: Vec<Tensor<T>>,
    up_pass: Option<PassCache<T>>,
    down_pass: Option<PassCache<T>>,
    feats: Vec<Tensor<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Hash of every relu sign pattern and pooling winner in the pass. Two
    /// inputs with equal fingerprints lie in the same linear region.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for step in &self.trunk {
            match step {
                TrunkStep::Conv { pre, .. } => hash_signs(pre, &mut h),
                TrunkStep::Pool(c) => c.argmax().iter().for_each(|&i| h.write_usize(i)),
            }
        }
        for pre in self.up_pre.iter().chain(&self.down_pre) {
            hash_signs(pre, &mut h);
        }
        for pass in self.up_pass.iter().chain(&self.down_pass) {
            pass.hash_pattern(&mut h);
        }
        h.finish()
    }

    /// Shared trunk output (after dropout).
    pub fn shared(&self) -> &Tensor<T> {
        &self.shared
    }

    /// Per-joint concatenated branch features.
    pub fn joint_features(&self) -> &[Tensor<T>] {
        &self.feats
    }
}

impl PoseNet<f32> {
    /// Builds a model with trunk and per-joint banks drawn from `seed`,
    /// prediction banks at zero (so initial scores are uniform), and transform
    /// stacks whose last kernel is zero (so every message starts at zero and
    /// training starts from the baseline). The earlier kernels of a stack are
    /// random: an all-zero stack of depth two or more has zero gradient.
    ///
    /// The non-transform weights depend only on the seed and on the config
    /// fields other than `variant`, so models of different variants built with
    /// the same seed share them exactly.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<T: Real> PoseNet<T> {
    pub fn with_rng(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let tree = config.joint_tree()?;
        let k = tree.len();
        let mut backbone = Vec::new();
        let mut channels = config.in_channels;
        for layer in &config.backbone {
            if let BackboneLayer::Conv { kernel, out } = *layer {
                let mut p = ConvParams::same(out, channels, kernel);
                p.init_uniform(rng);
                backbone.push(p);
                channels = out;
            }
        }
        let shared = config.shared_channels();
        let c7 = config.joint_channels;
        let mut bank = || {
            let mut p = ConvParams::zeros(c7, shared, 1, 1, 0);
            p.init_uniform(rng);
            p
        };
        let up_banks: Vec<_> = (0..k).map(|_| bank()).collect();
        let down_banks: Vec<_> = (0..k).map(|_| bank()).collect();
        let pred = (0..k).map(|_| ConvParams::zeros(config.mixtures, 2 * c7, 1, 1, 0)).collect();
        let background = ConvParams::zeros(1, shared, 1, 1, 0);

        let mut stacks = |dir| {
            let mut s = BranchStacks::zeros(&tree, dir, c7, config.kernel_size, config.stack_depth);
            s.set_final_relu(config.final_relu);
            for stack in s.iter_mut() {
                let last = stack.kernels.len() - 1;
                stack.kernels[..last].iter_mut().for_each(|k| k.init_uniform(rng));
            }
            s
        };
        let (up_stacks, down_stacks) = match config.variant {
            Variant::Baseline => (None, None),
            Variant::SingleDirection => (Some(stacks(Direction::Upward)), None),
            Variant::BiDirection => (Some(stacks(Direction::Upward)), Some(stacks(Direction::Downward))),
        };
        Ok(PoseNet {
            config: config.clone(),
            tree,
            backbone,
            up_banks,
            down_banks,
            up_stacks,
            down_stacks,
            pred,
            background,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tree(&self) -> &JointTree {
        &self.tree
    }

    pub fn cast<U: Real>(&self) -> PoseNet<U> {
        let convs = |v: &[ConvParams<T>]| v.iter().map(ConvParams::cast).collect();
        PoseNet {
            config: self.config.clone(),
            tree: self.tree.clone(),
            backbone: convs(&self.backbone),
            up_banks: convs(&self.up_banks),
            down_banks: convs(&self.down_banks),
            up_stacks: self.up_stacks.as_ref().map(BranchStacks::cast),
            down_stacks: self.down_stacks.as_ref().map(BranchStacks::cast),
            pred: convs(&self.pred),
            background: self.background.cast(),
        }
    }

    /// Mutable access to the transform stacks of each active branch.
    pub fn stacks_mut(&mut self) -> impl Iterator<Item = &mut BranchStacks<T>> {
        self.up_stacks.iter_mut().chain(self.down_stacks.iter_mut())
    }

    pub fn prediction_banks_mut(&mut self) -> (&mut [ConvParams<T>], &mut ConvParams<T>) {
        (&mut self.pred, &mut self.background)
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &'static str, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, group, t| out.push((name, group, t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        self.visit_mut(&mut |name, group, tensor| out.push(ParamRef { name, group, tensor }));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'static str, &'a Tensor<T>)) {
        let tree = &self.tree;
        let mut conv = |prefix: String, group, p: &'a ConvParams<T>| {
            f(format!("{prefix}.weight"), group, &p.weight);
            f(format!("{prefix}.bias"), group, &p.bias);
        };
        for (i, p) in self.backbone.iter().enumerate() {
            conv(format!("backbone.{i}"), GROUP_BACKBONE, p);
        }
        for (j, p) in self.up_banks.iter().enumerate() {
            conv(format!("bank.up.{}", tree.name(j)), GROUP_NEW, p);
        }
        for (j, p) in self.down_banks.iter().enumerate() {
            conv(format!("bank.down.{}", tree.name(j)), GROUP_NEW, p);
        }
        for (branch, stacks) in [("up", &self.up_stacks), ("down", &self.down_stacks)] {
            for s in stacks.iter().flat_map(|s| s.iter()) {
                for (t, p) in s.kernels.iter().enumerate() {
                    let name = format!("msp.{branch}.{}-{}.{t}", tree.name(s.from), tree.name(s.to));
                    conv(name, GROUP_NEW, p);
                }
            }
        }
        for (j, p) in self.pred.iter().enumerate() {
            conv(format!("pred.{}", tree.name(j)), GROUP_NEW, p);
        }
        conv("pred.background".into(), GROUP_NEW, &self.background);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'static str, &'a mut Tensor<T>)) {
        let tree = &self.tree;
        let mut conv = |prefix: String, group, p: &'a mut ConvParams<T>| {
            f(format!("{prefix}.weight"), group, &mut p.weight);
            f(format!("{prefix}.bias"), group, &mut p.bias);
        };
        for (i, p) in self.backbone.iter_mut().enumerate() {
            conv(format!("backbone.{i}"), GROUP_BACKBONE, p);
        }
        for (j, p) in self.up_banks.iter_mut().enumerate() {
            conv(format!("bank.up.{}", tree.name(j)), GROUP_NEW, p);
        }
        for (j, p) in self.down_banks.iter_mut().enumerate() {
            conv(format!("bank.down.{}", tree.name(j)), GROUP_NEW, p);
        }
        for (branch, stacks) in [("up", &mut self.up_stacks), ("down", &mut self.down_stacks)] {
            for s in stacks.iter_mut().flat_map(|s| s.iter_mut()) {
                let (from, to) = (s.from, s.to);
                for (t, p) in s.kernels.iter_mut().enumerate() {
                    let name = format!("msp.{branch}.{}-{}.{t}", tree.name(from), tree.name(to));
                    conv(name, GROUP_NEW, p);
                }
            }
        }
        for (j, p) in self.pred.iter_mut().enumerate() {
            conv(format!("pred.{}", tree.name(j)), GROUP_NEW, p);
        }
        conv("pred.background".into(), GROUP_NEW, &mut self.background);
    }

    /// Runs the network on a `[n, in_channels, size, size]` batch and returns
    /// `[n, K*M + 1, size/ds, size/ds]` scores. Dropout draws from `rng` in
    /// [`Mode::Train`] only.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let [_, c, h, w] = input.dims4()?;
        let s = self.config.input_size;
        if c != self.config.in_channels || h != s || w != s {
            return Err(Error::Shape(format!(
                "model expects {}x{s}x{s} input, got {c}x{h}x{w}",
                self.config.in_channels
            )));
        }
        input.check_finite("model input")?;
        let mut trunk = Vec::with_capacity(self.config.backbone.len());
        let mut x = input.clone();
        let mut convs = self.backbone.iter();
        for layer in &self.config.backbone {
            match layer {
                BackboneLayer::Conv { .. } => {
                    let p = convs.next().expect("one conv per descriptor");
                    let pre = conv2d_forward(&x, p)?;
                    let out = relu_forward(&pre);
                    trunk.push(TrunkStep::Conv { input: x, pre });
                    x = out;
                }
                BackboneLayer::Pool => {
                    let (out, cache) = maxpool2_forward(&x)?;
                    trunk.push(TrunkStep::Pool(cache));
                    x = out;
                }
            }
        }
        let (shared, dropout) = channel_dropout_forward(&x, self.config.dropout, mode, rng)?;

        let (up, up_pre) = per_joint_features(&shared, &self.up_banks)?;
        let (down, down_pre) = per_joint_features(&shared, &self.down_banks)?;
        let (up, up_pass) = match &self.up_stacks {
            Some(stacks) => {
                let (f, cache) = pass_messages(&up, &self.tree, stacks)?;
                (f.refined, Some(cache))
            }
            None => (up, None),
        };
        let (down, down_pass) = match &self.down_stacks {
            Some(stacks) => {
                let (f, cache) = pass_messages(&down, &self.tree, stacks)?;
                (f.refined, Some(cache))
            }
            None => (down, None),
        };
        let feats = concat_branches(&up, &down)?;
        let scores = predict_score_maps(&feats, &self.pred, &shared, &self.background)?;
        scores.check_finite("score maps")?;
        Ok((
            scores,
            ForwardCache {
                trunk,
                dropout,
                shared,
                up_pre,
                down_pre,
                up_pass,
                down_pass,
                feats,
            },
        ))
    }

    /// Inference-mode scores.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        // Eval mode never draws from the rng.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(input, Mode::Eval, &mut rng)?.0)
    }

    /// Accumulates parameter gradients for `grad_scores` and returns the
    /// gradient with respect to the input batch.
    pub fn backward(&mut self, cache: ForwardCache<T>, grad_scores: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grad_shared = Tensor::zeros(cache.shared.shape());
        let grad_feats = predict_score_maps_backward(
            &cache.feats,
            &mut self.pred,
            &cache.shared,
            &mut self.background,
            grad_scores,
            &mut grad_shared,
        )?;
        let c7 = self.config.joint_channels;
        let (g_up, g_down) = split_branches(&grad_feats, c7, c7)?;
        let g_up = match (&mut self.up_stacks, &cache.up_pass) {
            (Some(stacks), Some(pass)) => pass_messages_backward(stacks, pass, g_up)?,
            _ => g_up,
        };
        let g_down = match (&mut self.down_stacks, &cache.down_pass) {
            (Some(stacks), Some(pass)) => pass_messages_backward(stacks, pass, g_down)?,
            _ => g_down,
        };
        per_joint_features_backward(&cache.shared, &mut self.up_banks, &cache.up_pre, &g_up, &mut grad_shared)?;
        per_joint_features_backward(
            &cache.shared,
            &mut self.down_banks,
            &cache.down_pre,
            &g_down,
            &mut grad_shared,
        )?;
        let mut g = channel_dropout_backward(&cache.dropout, &grad_shared)?;
        let mut convs = self.backbone.iter_mut().rev();
        for step in cache.trunk.iter().rev() {
            g = match step {
                TrunkStep::Conv { input, pre } => {
                    let p = convs.next().expect("one conv per step");
                    let g = relu_backward(pre, &g)?;
                    conv2d_backward(input, p, &g)?
                }
                TrunkStep::Pool(c) => maxpool2_backward(c, &g)?,
            };
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            input_size: 16,
            backbone: super::super::config::parse_backbone("c3:4 p c3:6 p c3:8").unwrap(),
            joint_channels: 3,
            kernel_size: 3,
            variant,
            ..ModelConfig::default()
        }
    }

    fn image(seed: u64, size: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[2, 1, size, size], (0..2 * size * size).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn output_shape() {
        let cfg = small_config(Variant::BiDirection);
        let net = PoseNet::new(&cfg, 1).unwrap();
        let out = net.predict(&image(0, 16)).unwrap();
        assert_eq!(out.shape(), &[2, 15, 4, 4]);
    }

    #[test]
    fn default_config_maps_64_to_16() {
        let net = PoseNet::new(&ModelConfig::default(), 1).unwrap();
        let out = net.predict(&image(0, 64)).unwrap();
        assert_eq!(out.shape(), &[2, 15, 16, 16]);
    }

    #[test]
    fn variants_share_non_transform_weights() {
        let base = PoseNet::new(&small_config(Variant::Baseline), 7).unwrap();
        let bi = PoseNet::new(&small_config(Variant::BiDirection), 7).unwrap();
        let bi_params = bi.named_params();
        for (name, _, t) in base.named_params() {
            let (_, _, other) = bi_params.iter().find(|(n, _, _)| *n == name).unwrap();
            assert_eq!(t, *other, "{name}");
        }
        assert!(bi.param_count() > base.param_count());
    }

    #[test]
    fn fresh_structured_model_scores_like_baseline() {
        let x = image(2, 16);
        let base = PoseNet::new(&small_config(Variant::Baseline), 9).unwrap();
        let mut bi = PoseNet::new(&small_config(Variant::BiDirection), 9).unwrap();
        // Non-zero scores, so the comparison is not trivially 0 == 0.
        for p in bi.prediction_banks_mut().0.iter_mut() {
            p.weight.data_mut().iter_mut().for_each(|w| *w = 0.1);
        }
        let mut base = base;
        for p in base.prediction_banks_mut().0.iter_mut() {
            p.weight.data_mut().iter_mut().for_each(|w| *w = 0.1);
        }
        assert_eq!(base.predict(&x).unwrap(), bi.predict(&x).unwrap());
        let first = &bi.named_params().into_iter().find(|(n, _, _)| n.ends_with(".0.weight") && n.starts_with("msp")).unwrap().2;
        assert!(first.data().iter().any(|&w| w != 0.0));
    }

    #[test]
    fn param_names_are_unique() {
        let net = PoseNet::new(&small_config(Variant::BiDirection), 1).unwrap();
        let mut names: Vec<_> = net.named_params().into_iter().map(|(n, _, _)| n).collect();
        let len = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), len);
        assert!(names.iter().any(|n| n == "msp.up.r_wrist-r_elbow.1.weight"));
        assert!(names.iter().any(|n| n == "msp.down.r_elbow-r_wrist.0.bias"));
    }

    #[test]
    fn eval_is_deterministic() {
        let net = PoseNet::new(&small_config(Variant::BiDirection), 3).unwrap();
        let x = image(5, 16);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn rejects_wrong_input_size() {
        let net = PoseNet::new(&small_config(Variant::Baseline), 3).unwrap();
        assert!(matches!(net.predict(&image(0, 8)), Err(Error::Shape(_))));
    }
}
