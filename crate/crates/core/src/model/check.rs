//! Finite-difference verification of the whole network in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::config::ModelConfig;
use super::loss::{masked_loss, LabelTensor};
use super::net::PoseNet;
use crate::error::Result;
use crate::structured::{
    apply_kernel_stack, kernel_stack_backward, pass_messages, pass_messages_backward, predict_score_maps,
    predict_score_maps_backward, BranchStacks, Direction, JointTree, TransformKernelStack,
};
use crate::tensor::{
    channel_dropout_backward, channel_dropout_forward, conv2d_backward, conv2d_forward, grad_check, hash_signs,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, ConvParams, GradCheckConfig, GradCheckReport,
    Mode, Tensor,
};

/// Gradient-check reports for the parameters and for the input image.
#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub params: GradCheckReport,
    pub input: GradCheckReport,
}

impl ModelGradCheck {
    pub fn passed(&self) -> bool {
        self.params.passed && self.input.passed
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.max_rel_error.max(self.input.max_rel_error)
    }
}

fn flatten(net: &PoseNet<f64>) -> Vec<f64> {
    net.named_params().iter().flat_map(|(_, _, t)| t.data().to_vec()).collect()
}

fn load_flat(net: &mut PoseNet<f64>, flat: &[f64]) {
    let mut at = 0;
    for p in net.params_mut() {
        let n = p.tensor.len();
        p.tensor.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

/// Builds a model from `config` with every parameter (transform kernels and
/// prediction banks included) drawn at random, random labels over the whole
/// map, and checks backward against central differences of the loss.
///
/// Dropout must be configured off; the check runs in train mode anyway so
/// that the training code path is the one verified.
pub fn check_model_gradients(config: &ModelConfig, seed: u64, cfg: &GradCheckConfig) -> Result<ModelGradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PoseNet::<f64>::with_rng(config, &mut rng)?;
    for p in net.params_mut() {
        for v in p.tensor.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let s = config.input_size;
    let input = Tensor::from_vec(
        &[1, config.in_channels, s, s],
        (0..config.in_channels * s * s).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let m = config.map_size();
    let classes = config.num_classes()?;
    let labels = vec![LabelTensor {
        height: m,
        width: m,
        num_classes: classes,
        class: (0..m * m).map(|_| rng.random_range(0..classes) as u16).collect(),
        mask: (0..m * m).map(|_| rng.random_bool(0.8)).collect(),
    }];

    let eval = |net: &PoseNet<f64>, x: &Tensor<f64>| -> Result<(f64, u64)> {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (scores, cache) = net.forward(x, Mode::Train, &mut r)?;
        Ok((masked_loss(&scores, &labels)?.0, cache.fingerprint()))
    };

    net.zero_grad();
    let (scores, cache) = net.forward(&input, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))?;
    let (_, grad) = masked_loss(&scores, &labels)?;
    let grad_input = net.backward(cache, &grad)?;
    let analytic: Vec<f64> = net
        .named_params()
        .iter()
        .flat_map(|(_, _, t)| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let point = flatten(&net);
    let mut probe = net.clone();
    let params = grad_check(&point, &analytic, cfg, |flat| {
        load_flat(&mut probe, flat);
        eval(&probe, &input)
    })?;
    let input_report = grad_check(input.data(), grad_input.data(), cfg, |flat| {
        let x = Tensor::from_vec(input.shape(), flat.to_vec())?;
        eval(&net, &x)
    })?;
    Ok(ModelGradCheck { params, input: input_report })
}

/// One entry of [`check_layer_gradients`].
#[derive(Clone, Debug)]
pub struct LayerGradCheck {
    pub name: String,
    pub report: GradCheckReport,
}

type Flat = Vec<f64>;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Flat {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_flat(ps: &[&ConvParams<f64>]) -> Flat {
    ps.iter().flat_map(|p| p.weight.data().iter().chain(p.bias.data()).copied()).collect()
}

fn conv_load(ps: &mut [&mut ConvParams<f64>], flat: &[f64]) {
    let mut at = 0;
    for p in ps.iter_mut() {
        for t in [&mut p.weight, &mut p.bias] {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }
}

fn conv_grads(ps: &[&ConvParams<f64>]) -> Flat {
    ps.iter()
        .flat_map(|p| {
            [&p.weight, &p.bias]
                .into_iter()
                .flat_map(|t| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn conv_zero_grad(ps: &mut [&mut ConvParams<f64>]) {
    ps.iter_mut().for_each(|p| p.zero_grad());
}

/// Checks one layer through the scalar `sum_i r_i * out_i` for a random `r`.
///
/// `eval(params, input)` returns the flattened outputs and an activation
/// fingerprint; `grads(params, input, r)` returns the analytic gradients of
/// the functional with respect to the parameters and to the input.
fn check_layer(
    name: &str,
    params: Flat,
    input: Flat,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    eval: impl Fn(&[f64], &[f64]) -> Result<(Flat, u64)>,
    grads: impl Fn(&[f64], &[f64], &[f64]) -> Result<(Flat, Flat)>,
    out: &mut Vec<LayerGradCheck>,
) -> Result<()> {
    let r = random_vec(eval(&params, &input)?.0.len(), rng);
    let (gp, gx) = grads(&params, &input, &r)?;
    let functional = |p: &[f64], x: &[f64]| eval(p, x).map(|(y, f)| (dot(&y, &r), f));
    if !params.is_empty() {
        let report = grad_check(&params, &gp, cfg, |p| functional(p, &input))?;
        out.push(LayerGradCheck { name: format!("{name} (parameters)"), report });
    }
    let report = grad_check(&input, &gx, cfg, |x| functional(&params, x))?;
    out.push(LayerGradCheck { name: format!("{name} (input)"), report });
    Ok(())
}

fn conv_layer(
    name: &str,
    template: ConvParams<f64>,
    input_shape: [usize; 4],
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<LayerGradCheck>,
) -> Result<()> {
    let mut p0 = template;
    let params = random_vec(conv_flat(&[&p0]).len(), rng);
    conv_load(&mut [&mut p0], &params);
    let input = random_vec(input_shape.iter().product(), rng);
    let build = |p: &[f64]| {
        let mut q = p0.clone();
        conv_load(&mut [&mut q], p);
        q
    };
    check_layer(
        name,
        params,
        input,
        cfg,
        rng,
        |p, x| Ok((conv2d_forward(&Tensor::from_vec(&input_shape, x.to_vec())?, &build(p))?.into_data(), 0)),
        |p, x, r| {
            let mut q = build(p);
            q.zero_grad();
            let x = Tensor::from_vec(&input_shape, x.to_vec())?;
            let y = conv2d_forward(&x, &q)?;
            let gx = conv2d_backward(&x, &mut q, &Tensor::from_vec(y.shape(), r.to_vec())?)?;
            Ok((conv_grads(&[&q]), gx.into_data()))
        },
        out,
    )
}

fn stack_flat(stacks: &BranchStacks<f64>) -> Flat {
    stacks.iter().flat_map(|s| conv_flat(&s.kernels.iter().collect::<Vec<_>>())).collect()
}

fn stack_load(stacks: &mut BranchStacks<f64>, flat: &[f64]) {
    let mut at = 0;
    for s in stacks.iter_mut() {
        let n = conv_flat(&s.kernels.iter().collect::<Vec<_>>()).len();
        conv_load(&mut s.kernels.iter_mut().collect::<Vec<_>>(), &flat[at..at + n]);
        at += n;
    }
}

/// Finite-difference checks of every layer's backward pass in isolation:
/// convolutions (same-padded, strided, pointwise), relu, max pooling,
/// channel dropout, transform-kernel stacks, tree message passing in both
/// directions, score prediction and the masked softmax loss.
pub fn check_layer_gradients(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<LayerGradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    conv_layer("conv 3x3 same", ConvParams::same(3, 2, 3), [2, 2, 5, 5], cfg, rng, &mut out)?;
    conv_layer("conv 3x3 stride 2", ConvParams::zeros(2, 2, 3, 2, 1), [1, 2, 6, 5], cfg, rng, &mut out)?;
    conv_layer("conv 1x1", ConvParams::zeros(3, 4, 1, 1, 0), [2, 4, 3, 3], cfg, rng, &mut out)?;

    let shape = [2, 2, 4, 4];
    let input = random_vec(32 * 2, rng);
    check_layer(
        "relu",
        Vec::new(),
        input,
        cfg,
        rng,
        |_, x| {
            let x = Tensor::from_vec(&shape, x.to_vec())?;
            let mut h = DefaultHasher::new();
            hash_signs(&x, &mut h);
            Ok((relu_forward(&x).into_data(), h.finish()))
        },
        |_, x, r| {
            let x = Tensor::from_vec(&shape, x.to_vec())?;
            Ok((Vec::new(), relu_backward(&x, &Tensor::from_vec(&shape, r.to_vec())?)?.into_data()))
        },
        &mut out,
    )?;

    let shape = [1, 2, 5, 5];
    let input = random_vec(50, rng);
    check_layer(
        "maxpool 2x2",
        Vec::new(),
        input,
        cfg,
        rng,
        |_, x| {
            let (y, c) = maxpool2_forward(&Tensor::from_vec(&shape, x.to_vec())?)?;
            let mut h = DefaultHasher::new();
            c.argmax().iter().for_each(|&i| h.write_usize(i));
            Ok((y.into_data(), h.finish()))
        },
        |_, x, r| {
            let (y, c) = maxpool2_forward(&Tensor::from_vec(&shape, x.to_vec())?)?;
            Ok((Vec::new(), maxpool2_backward(&c, &Tensor::from_vec(y.shape(), r.to_vec())?)?.into_data()))
        },
        &mut out,
    )?;

    let shape = [2, 4, 3, 3];
    let input = random_vec(72, rng);
    let mask_seed = rng.random::<u64>();
    let dropout = |x: &[f64]| {
        let x = Tensor::from_vec(&shape, x.to_vec())?;
        channel_dropout_forward(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
    };
    check_layer(
        "channel dropout",
        Vec::new(),
        input,
        cfg,
        rng,
        |_, x| Ok((dropout(x)?.0.into_data(), 0)),
        |_, x, r| {
            let (_, mask) = dropout(x)?;
            Ok((Vec::new(), channel_dropout_backward(&mask, &Tensor::from_vec(&shape, r.to_vec())?)?.into_data()))
        },
        &mut out,
    )?;

    for final_relu in [false, true] {
        let mut stack = TransformKernelStack::<f64>::zeros(0, 1, 2, 3, 2);
        stack.final_relu = final_relu;
        let params = random_vec(conv_flat(&stack.kernels.iter().collect::<Vec<_>>()).len(), rng);
        let shape = [1, 2, 5, 5];
        let input = random_vec(50, rng);
        let build = |p: &[f64]| {
            let mut s = stack.clone();
            conv_load(&mut s.kernels.iter_mut().collect::<Vec<_>>(), p);
            s
        };
        let name = if final_relu { "transform stack, final relu" } else { "transform stack" };
        check_layer(
            name,
            params,
            input,
            cfg,
            rng,
            |p, x| {
                let (y, c) = apply_kernel_stack(&Tensor::from_vec(&shape, x.to_vec())?, &build(p))?;
                let mut h = DefaultHasher::new();
                c.hash_pattern(&mut h);
                Ok((y.into_data(), h.finish()))
            },
            |p, x, r| {
                let mut s = build(p);
                conv_zero_grad(&mut s.kernels.iter_mut().collect::<Vec<_>>());
                let (y, c) = apply_kernel_stack(&Tensor::from_vec(&shape, x.to_vec())?, &s)?;
                let gx = kernel_stack_backward(&mut s, &c, &Tensor::from_vec(y.shape(), r.to_vec())?)?;
                Ok((conv_grads(&s.kernels.iter().collect::<Vec<_>>()), gx.into_data()))
            },
            &mut out,
        )?;
    }

    let tree = JointTree::chain(3)?;
    for direction in [Direction::Upward, Direction::Downward] {
        let stacks = BranchStacks::<f64>::zeros(&tree, direction, 2, 3, 2);
        let params = random_vec(stack_flat(&stacks).len(), rng);
        let shape = [1, 2, 4, 4];
        let input = random_vec(3 * 32, rng);
        let build = |p: &[f64]| {
            let mut s = stacks.clone();
            stack_load(&mut s, p);
            s
        };
        let split = |x: &[f64]| -> Result<Vec<Tensor<f64>>> {
            x.chunks(32).map(|c| Tensor::from_vec(&shape, c.to_vec())).collect()
        };
        let name = match direction {
            Direction::Upward => "message passing, upward",
            Direction::Downward => "message passing, downward",
        };
        check_layer(
            name,
            params,
            input,
            cfg,
            rng,
            |p, x| {
                let (f, c) = pass_messages(&split(x)?, &tree, &build(p))?;
                let mut h = DefaultHasher::new();
                c.hash_pattern(&mut h);
                Ok((f.refined.iter().flat_map(|t| t.data().to_vec()).collect(), h.finish()))
            },
            |p, x, r| {
                let mut s = build(p);
                for st in s.iter_mut() {
                    conv_zero_grad(&mut st.kernels.iter_mut().collect::<Vec<_>>());
                }
                let (_, c) = pass_messages(&split(x)?, &tree, &s)?;
                let gx = pass_messages_backward(&mut s, &c, split(r)?)?;
                let gp = s.iter().flat_map(|st| conv_grads(&st.kernels.iter().collect::<Vec<_>>())).collect();
                Ok((gp, gx.iter().flat_map(|t| t.data().to_vec()).collect()))
            },
            &mut out,
        )?;
    }

    // Score prediction: two joints with four feature channels, two
    // mixtures, background from three shared channels.
    let banks = vec![ConvParams::<f64>::zeros(2, 4, 1, 1, 0); 2];
    let background = ConvParams::<f64>::zeros(1, 3, 1, 1, 0);
    let n_banks = conv_flat(&banks.iter().collect::<Vec<_>>()).len();
    let params = random_vec(n_banks + conv_flat(&[&background]).len(), rng);
    let input = random_vec(2 * 4 * 9 + 3 * 9, rng);
    let build = |p: &[f64]| {
        let (mut b, mut bg) = (banks.clone(), background.clone());
        conv_load(&mut b.iter_mut().collect::<Vec<_>>(), &p[..n_banks]);
        conv_load(&mut [&mut bg], &p[n_banks..]);
        (b, bg)
    };
    let inputs = |x: &[f64]| -> Result<(Vec<Tensor<f64>>, Tensor<f64>)> {
        let feats = x[..72].chunks(36).map(|c| Tensor::from_vec(&[1, 4, 3, 3], c.to_vec())).collect::<Result<_>>()?;
        Ok((feats, Tensor::from_vec(&[1, 3, 3, 3], x[72..].to_vec())?))
    };
    check_layer(
        "score prediction",
        params,
        input,
        cfg,
        rng,
        |p, x| {
            let (b, bg) = build(p);
            let (f, sh) = inputs(x)?;
            Ok((predict_score_maps(&f, &b, &sh, &bg)?.into_data(), 0))
        },
        |p, x, r| {
            let (mut b, mut bg) = build(p);
            conv_zero_grad(&mut b.iter_mut().collect::<Vec<_>>());
            bg.zero_grad();
            let (f, sh) = inputs(x)?;
            let mut g_shared = Tensor::zeros(sh.shape());
            let g = Tensor::from_vec(&[1, 5, 3, 3], r.to_vec())?;
            let gf = predict_score_maps_backward(&f, &mut b, &sh, &mut bg, &g, &mut g_shared)?;
            let mut gp = conv_grads(&b.iter().collect::<Vec<_>>());
            gp.extend(conv_grads(&[&bg]));
            let mut gx: Flat = gf.iter().flat_map(|t| t.data().to_vec()).collect();
            gx.extend_from_slice(g_shared.data());
            Ok((gp, gx))
        },
        &mut out,
    )?;

    // The loss is already a scalar; check it directly.
    let (n, c, m) = (2, 4, 3);
    let labels: Vec<LabelTensor> = (0..n)
        .map(|_| LabelTensor {
            height: m,
            width: m,
            num_classes: c,
            class: (0..m * m).map(|_| rng.random_range(0..c) as u16).collect(),
            mask: (0..m * m).map(|_| rng.random_bool(0.7)).collect(),
        })
        .collect();
    let scores = Tensor::from_vec(&[n, c, m, m], random_vec(n * c * m * m, rng).iter().map(|v| 3.0 * v).collect())?;
    let (_, g) = masked_loss(&scores, &labels)?;
    let report = grad_check(scores.data(), g.data(), cfg, |x| {
        Ok((masked_loss(&Tensor::from_vec(scores.shape(), x.to_vec())?, &labels)?.0, 0))
    })?;
    out.push(LayerGradCheck { name: "masked softmax loss (scores)".into(), report });
    Ok(out)
}
