//! Per-joint feature banks and message passing between them.
//!
//! A message from joint `a` to joint `b` is `a`'s refined feature tensor
//! pushed through a stack of same-size convolutions (the transform kernels
//! for the directed edge `a -> b`). A receiving joint adds all incoming
//! messages to its own unrefined features and applies a relu.

use super::tree::{Direction, JointTree};
use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, hash_signs, conv2d_backward, conv2d_forward, relu_backward, relu_forward, split_channels,
    ConvParams, Real, Tensor,
};

/// The transform kernels realizing one directed message-passing hop.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformKernelStack<T: Real = f32> {
    pub from: usize,
    pub to: usize,
    pub kernels: Vec<ConvParams<T>>,
    /// Apply a relu after the last kernel too. Off by default, so messages can
    /// be signed and a one-kernel stack is exactly a single linear transform.
    pub final_relu: bool,
}

impl<T: Real> TransformKernelStack<T> {
    /// `depth` zero-initialized `channels x channels x kernel x kernel`
    /// convolutions with same-size padding.
    pub fn zeros(from: usize, to: usize, channels: usize, kernel: usize, depth: usize) -> Self {
        assert!(depth >= 1, "a transform stack needs at least one kernel");
        TransformKernelStack {
            from,
            to,
            kernels: (0..depth).map(|_| ConvParams::same(channels, channels, kernel)).collect(),
            final_relu: false,
        }
    }

    pub fn cast<U: Real>(&self) -> TransformKernelStack<U> {
        TransformKernelStack {
            from: self.from,
            to: self.to,
            kernels: self.kernels.iter().map(ConvParams::cast).collect(),
            final_relu: self.final_relu,
        }
    }

    fn relu_after(&self, t: usize) -> bool {
        t + 1 < self.kernels.len() || self.final_relu
    }
}

/// Activations kept by [`apply_kernel_stack`] for its backward pass.
#[derive(Clone, Debug)]
pub struct StackCache<T: Real> {
    /// Input to each kernel.
    inputs: Vec<Tensor<T>>,
    /// Pre-activation output of each kernel that is followed by a relu.
    pre_relu: Vec<Option<Tensor<T>>>,
}

impl<T: Real> StackCache<T> {
    pub(crate) fn hash_pattern(&self, h: &mut impl std::hash::Hasher) {
        for pre in self.pre_relu.iter().flatten() {
            hash_signs(pre, h);
        }
    }
}

/// Runs `msg` through the stack: conv -> relu for all but the last kernel,
/// then a final conv (followed by a relu only if `final_relu` is set).
pub fn apply_kernel_stack<T: Real>(
    msg: &Tensor<T>,
    stack: &TransformKernelStack<T>,
) -> Result<(Tensor<T>, StackCache<T>)> {
    let mut cache = StackCache {
        inputs: Vec::with_capacity(stack.kernels.len()),
        pre_relu: Vec::with_capacity(stack.kernels.len()),
    };
    let mut x = msg.clone();
    for (t, kernel) in stack.kernels.iter().enumerate() {
        let y = conv2d_forward(&x, kernel)?;
        cache.inputs.push(x);
        x = if stack.relu_after(t) {
            let activated = relu_forward(&y);
            cache.pre_relu.push(Some(y));
            activated
        } else {
            cache.pre_relu.push(None);
            y
        };
    }
    if x.shape() != msg.shape() {
        return Err(Error::Shape(format!(
            "transform stack {}->{} changed shape {:?} to {:?}",
            stack.from,
            stack.to,
            msg.shape(),
            x.shape()
        )));
    }
    Ok((x, cache))
}

/// Backward pass of [`apply_kernel_stack`]; accumulates kernel gradients and
/// returns the gradient with respect to the incoming message.
pub fn kernel_stack_backward<T: Real>(
    stack: &mut TransformKernelStack<T>,
    cache: &StackCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = grad_out.clone();
    for t in (0..stack.kernels.len()).rev() {
        if let Some(pre) = &cache.pre_relu[t] {
            g = relu_backward(pre, &g)?;
        }
        g = conv2d_backward(&cache.inputs[t], &mut stack.kernels[t], &g)?;
    }
    Ok(g)
}

/// Transform stacks for every edge of one branch, indexed by the non-root
/// endpoint of the edge.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchStacks<T: Real = f32> {
    pub direction: Direction,
    stacks: Vec<Option<TransformKernelStack<T>>>,
}

impl<T: Real> BranchStacks<T> {
    /// Zero-initialized stacks on every edge of `tree` in `direction`.
    pub fn zeros(tree: &JointTree, direction: Direction, channels: usize, kernel: usize, depth: usize) -> Self {
        let stacks = (0..tree.len())
            .map(|c| {
                tree.parent(c).map(|p| {
                    let (from, to) = match direction {
                        Direction::Upward => (c, p),
                        Direction::Downward => (p, c),
                    };
                    TransformKernelStack::zeros(from, to, channels, kernel, depth)
                })
            })
            .collect();
        BranchStacks { direction, stacks }
    }

    /// No stacks at all; passing messages with this fails on the first edge.
    pub fn empty(tree: &JointTree, direction: Direction) -> Self {
        BranchStacks {
            direction,
            stacks: vec![None; tree.len()],
        }
    }

    fn slot(&self, from: usize, to: usize) -> usize {
        match self.direction {
            Direction::Upward => from,
            Direction::Downward => to,
        }
    }

    pub fn get(&self, from: usize, to: usize) -> Option<&TransformKernelStack<T>> {
        self.stacks
            .get(self.slot(from, to))?
            .as_ref()
            .filter(|s| s.from == from && s.to == to)
    }

    pub fn get_mut(&mut self, from: usize, to: usize) -> Option<&mut TransformKernelStack<T>> {
        let slot = self.slot(from, to);
        self.stacks
            .get_mut(slot)?
            .as_mut()
            .filter(|s| s.from == from && s.to == to)
    }

    pub fn set(&mut self, stack: TransformKernelStack<T>) {
        let slot = self.slot(stack.from, stack.to);
        self.stacks[slot] = Some(stack);
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransformKernelStack<T>> {
        self.stacks.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut TransformKernelStack<T>> {
        self.stacks.iter_mut().flatten()
    }

    pub fn set_final_relu(&mut self, on: bool) {
        self.iter_mut().for_each(|s| s.final_relu = on);
    }

    pub fn cast<U: Real>(&self) -> BranchStacks<U> {
        BranchStacks {
            direction: self.direction,
            stacks: self
                .stacks
                .iter()
                .map(|s| s.as_ref().map(TransformKernelStack::cast))
                .collect(),
        }
    }
}

/// Unrefined and refined per-joint features of one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchFeatures<T: Real = f32> {
    pub original: Vec<Tensor<T>>,
    pub refined: Vec<Tensor<T>>,
}

/// Per-joint 1x1 banks: `A_k = relu(conv(shared, bank_k))`.
///
/// Returns the features and, for backward, each bank's pre-activation.
pub fn per_joint_features<T: Real>(
    shared: &Tensor<T>,
    banks: &[ConvParams<T>],
) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
    let mut feats = Vec::with_capacity(banks.len());
    let mut pre = Vec::with_capacity(banks.len());
    for bank in banks {
        let y = conv2d_forward(shared, bank)?;
        feats.push(relu_forward(&y));
        pre.push(y);
    }
    Ok((feats, pre))
}

/// Backward pass of [`per_joint_features`]. Adds into `grad_shared`.
pub fn per_joint_features_backward<T: Real>(
    shared: &Tensor<T>,
    banks: &mut [ConvParams<T>],
    pre: &[Tensor<T>],
    grad_feats: &[Tensor<T>],
    grad_shared: &mut Tensor<T>,
) -> Result<()> {
    for ((bank, pre), g) in banks.iter_mut().zip(pre).zip(grad_feats) {
        let g = relu_backward(pre, g)?;
        let gx = conv2d_backward(shared, bank, &g)?;
        grad_shared.add_assign(&gx)?;
    }
    Ok(())
}

/// Everything [`pass_messages`] needs to run backward.
#[derive(Clone, Debug)]
pub struct PassCache<T: Real> {
    order: Vec<usize>,
    /// Per joint: the pre-relu sum, or `None` for joints with no senders.
    sums: Vec<Option<Tensor<T>>>,
    /// Per joint: `(sender, cache)` for each incoming message.
    messages: Vec<Vec<(usize, StackCache<T>)>>,
}

impl<T: Real> PassCache<T> {
    pub(crate) fn hash_pattern(&self, h: &mut impl std::hash::Hasher) {
        for sum in self.sums.iter().flatten() {
            hash_signs(sum, h);
        }
        for (_, cache) in self.messages.iter().flatten() {
            cache.hash_pattern(h);
        }
    }
}

/// Refines `original` by passing messages over `tree` in `stacks.direction`.
///
/// Joints with no senders keep their features. Every other joint `k` becomes
/// `relu(A_k + sum_n stack_{n->k}(A'_n))` over its senders `n`.
pub fn pass_messages<T: Real>(
    original: &[Tensor<T>],
    tree: &JointTree,
    stacks: &BranchStacks<T>,
) -> Result<(BranchFeatures<T>, PassCache<T>)> {
    let k = tree.len();
    if original.len() != k {
        return Err(Error::Shape(format!(
            "{} feature tensors for a {k}-joint tree",
            original.len()
        )));
    }
    let direction = stacks.direction;
    let order = tree.order(direction);
    let mut refined: Vec<Option<Tensor<T>>> = vec![None; k];
    let mut sums = vec![None; k];
    let mut messages: Vec<Vec<(usize, StackCache<T>)>> = (0..k).map(|_| Vec::new()).collect();
    for &j in &order {
        let senders = tree.senders(j, direction);
        if senders.is_empty() {
            refined[j] = Some(original[j].clone());
            continue;
        }
        let mut sum = original[j].clone();
        for n in senders {
            let stack = stacks.get(n, j).ok_or_else(|| {
                Error::Config(format!(
                    "no transform stack for edge {} -> {}",
                    tree.name(n),
                    tree.name(j)
                ))
            })?;
            let source = refined[n].as_ref().expect("senders precede receivers");
            let (msg, cache) = apply_kernel_stack(source, stack)?;
            sum.add_assign(&msg)?;
            messages[j].push((n, cache));
        }
        refined[j] = Some(relu_forward(&sum));
        sums[j] = Some(sum);
    }
    Ok((
        BranchFeatures {
            original: original.to_vec(),
            refined: refined.into_iter().map(|t| t.expect("every joint visited")).collect(),
        },
        PassCache {
            order,
            sums,
            messages,
        },
    ))
}

/// Backward pass of [`pass_messages`].
///
/// Takes the gradient with respect to each refined tensor and returns the
/// gradient with respect to each original tensor.
pub fn pass_messages_backward<T: Real>(
    stacks: &mut BranchStacks<T>,
    cache: &PassCache<T>,
    grad_refined: Vec<Tensor<T>>,
) -> Result<Vec<Tensor<T>>> {
    let mut grad_refined = grad_refined;
    let mut grad_original: Vec<Option<Tensor<T>>> = vec![None; grad_refined.len()];
    for &j in cache.order.iter().rev() {
        let g = std::mem::replace(&mut grad_refined[j], Tensor::zeros(&[1]));
        let Some(sum) = &cache.sums[j] else {
            grad_original[j] = Some(g);
            continue;
        };
        let g_sum = relu_backward(sum, &g)?;
        for (n, msg_cache) in &cache.messages[j] {
            let stack = stacks
                .get_mut(*n, j)
                .ok_or_else(|| Error::Config(format!("no transform stack for edge {n} -> {j}")))?;
            let g_msg = kernel_stack_backward(stack, msg_cache, &g_sum)?;
            grad_refined[*n].add_assign(&g_msg)?;
        }
        grad_original[j] = Some(g_sum);
    }
    Ok(grad_original.into_iter().map(|g| g.expect("every joint visited")).collect())
}

/// Per-joint channel concatenation `[A'_k, B'_k]`.
pub fn concat_branches<T: Real>(up: &[Tensor<T>], down: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if up.len() != down.len() {
        return Err(Error::Shape(format!(
            "branches cover {} and {} joints",
            up.len(),
            down.len()
        )));
    }
    up.iter().zip(down).map(|(a, b)| concat_channels(&[a, b])).collect()
}

/// Splits per-joint gradients of [`concat_branches`] back into both branches.
pub fn split_branches<T: Real>(
    grad: &[Tensor<T>],
    up_channels: usize,
    down_channels: usize,
) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
    let mut up = Vec::with_capacity(grad.len());
    let mut down = Vec::with_capacity(grad.len());
    for g in grad {
        let mut parts = split_channels(g, &[up_channels, down_channels])?;
        down.push(parts.pop().expect("two parts"));
        up.push(parts.pop().expect("two parts"));
    }
    Ok((up, down))
}

/// Score maps from per-joint features plus a background map from the shared
/// trunk.
///
/// Channel `k * M + m` is mixture `m` of joint `k`; the last channel is the
/// background.
pub fn predict_score_maps<T: Real>(
    feats: &[Tensor<T>],
    pred_banks: &[ConvParams<T>],
    shared: &Tensor<T>,
    background: &ConvParams<T>,
) -> Result<Tensor<T>> {
    if feats.len() != pred_banks.len() {
        return Err(Error::Shape(format!(
            "{} feature tensors but {} prediction banks",
            feats.len(),
            pred_banks.len()
        )));
    }
    let mut maps = Vec::with_capacity(feats.len() + 1);
    for (f, bank) in feats.iter().zip(pred_banks) {
        maps.push(conv2d_forward(f, bank)?);
    }
    maps.push(conv2d_forward(shared, background)?);
    let refs: Vec<&Tensor<T>> = maps.iter().collect();
    concat_channels(&refs)
}

/// Backward pass of [`predict_score_maps`]. Returns per-joint feature
/// gradients and adds the background bank's input gradient into `grad_shared`.
pub fn predict_score_maps_backward<T: Real>(
    feats: &[Tensor<T>],
    pred_banks: &mut [ConvParams<T>],
    shared: &Tensor<T>,
    background: &mut ConvParams<T>,
    grad_scores: &Tensor<T>,
    grad_shared: &mut Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let mut sizes: Vec<usize> = pred_banks.iter().map(|b| b.out_channels()).collect();
    sizes.push(background.out_channels());
    let mut parts = split_channels(grad_scores, &sizes)?;
    let g_background = parts.pop().expect("background part");
    grad_shared.add_assign(&conv2d_backward(shared, background, &g_background)?)?;
    feats
        .iter()
        .zip(pred_banks.iter_mut())
        .zip(&parts)
        .map(|((f, bank), g)| conv2d_backward(f, bank, g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Channel-diagonal kernel with a single one at offset `(dx, dy)` from the
    /// centre, so that output(y, x) = input(y - dy, x - dx).
    fn delta_kernel(channels: usize, k: usize, dx: isize, dy: isize) -> ConvParams<f64> {
        let mut p = ConvParams::same(channels, channels, k);
        let c = (k / 2) as isize;
        let (i, j) = ((c - dy) as usize, (c - dx) as usize);
        for ch in 0..channels {
            p.weight.data_mut()[((ch * channels + ch) * k + i) * k + j] = 1.0;
        }
        p
    }

    fn shift(x: &Tensor<f64>, dx: isize, dy: isize) -> Tensor<f64> {
        let [n, c, h, w] = x.dims4().unwrap();
        let mut out = Tensor::zeros(x.shape());
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let (sy, sx) = (y - dy, xx - dx);
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                            let dst = ((b * c + ch) * h + y as usize) * w + xx as usize;
                            let src = ((b * c + ch) * h + sy as usize) * w + sx as usize;
                            out.data_mut()[dst] = x.data()[src];
                        }
                    }
                }
            }
        }
        out
    }

    fn single(kernel: ConvParams<f64>) -> TransformKernelStack<f64> {
        TransformKernelStack {
            from: 0,
            to: 1,
            kernels: vec![kernel],
            final_relu: false,
        }
    }

    #[test]
    fn centred_delta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[1, 3, 8, 8], &mut rng, -1.0, 1.0);
        let (y, _) = apply_kernel_stack(&x, &single(delta_kernel(3, 7, 0, 0))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn offset_delta_translates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&[1, 2, 10, 10], &mut rng, -1.0, 1.0);
        let (y, _) = apply_kernel_stack(&x, &single(delta_kernel(2, 7, 2, 0))).unwrap();
        assert_eq!(y, shift(&x, 2, 0));
    }

    #[test]
    fn two_kernel_stack_composes_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[1, 2, 10, 10], &mut rng, 0.0, 1.0);
        let stack = TransformKernelStack {
            from: 0,
            to: 1,
            kernels: vec![delta_kernel(2, 3, 1, 0), delta_kernel(2, 3, 1, 0)],
            final_relu: false,
        };
        let (y, _) = apply_kernel_stack(&x, &stack).unwrap();
        assert_eq!(y, shift(&shift(&x, 1, 0), 1, 0));
        assert_eq!(y, shift(&x, 2, 0));
    }

    fn chain_features(rng: &mut ChaCha8Rng, k: usize) -> Vec<Tensor<f64>> {
        (0..k).map(|_| rand_tensor(&[1, 2, 5, 5], rng, 0.0, 1.0)).collect()
    }

    #[test]
    fn zero_stacks_are_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = JointTree::desk14();
        let feats: Vec<_> = (0..14).map(|_| rand_tensor(&[1, 2, 4, 4], &mut rng, 0.0, 1.0)).collect();
        for dir in [Direction::Upward, Direction::Downward] {
            let stacks = BranchStacks::zeros(&tree, dir, 2, 3, 2);
            let (out, _) = pass_messages(&feats, &tree, &stacks).unwrap();
            assert_eq!(out.refined, feats);
        }
    }

    #[test]
    fn chain_update_sequence() {
        // Joints 0 <- 1 <- 2 (root 0). Upward: 2 is the leaf.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = JointTree::chain(3).unwrap();
        let feats = chain_features(&mut rng, 3);
        let mut stacks = BranchStacks::zeros(&tree, Direction::Upward, 2, 3, 1);
        stacks.set(TransformKernelStack { from: 2, to: 1, ..single(delta_kernel(2, 3, 0, 0)) });
        stacks.set(TransformKernelStack { from: 1, to: 0, ..single(delta_kernel(2, 3, 0, 0)) });
        let (out, _) = pass_messages(&feats, &tree, &stacks).unwrap();
        assert_eq!(out.refined[2], feats[2]);
        let a1 = relu_forward(&feats[1].add(&feats[2]).unwrap());
        assert_eq!(out.refined[1], a1);
        assert_eq!(out.refined[0], relu_forward(&feats[0].add(&a1).unwrap()));
    }

    #[test]
    fn missing_stack_is_an_error() {
        let tree = JointTree::chain(2).unwrap();
        let feats = vec![Tensor::<f64>::zeros(&[1, 1, 2, 2]); 2];
        let stacks = BranchStacks::empty(&tree, Direction::Downward);
        assert!(matches!(pass_messages(&feats, &tree, &stacks), Err(Error::Config(_))));
    }

    #[test]
    fn two_joint_hand_evaluation() {
        // Root 0, child 1; downward message 0 -> 1 through one 1x1 kernel of
        // weight -0.5 and bias 0.25 on 2x2 single-channel maps.
        let tree = JointTree::chain(2).unwrap();
        let a0 = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 2.0, 0.5]).unwrap();
        let a1 = Tensor::from_vec(&[1, 1, 2, 2], vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let mut stacks = BranchStacks::zeros(&tree, Direction::Downward, 1, 1, 1);
        let k = stacks.get_mut(0, 1).unwrap();
        k.kernels[0].weight.data_mut()[0] = -0.5;
        k.kernels[0].bias.data_mut()[0] = 0.25;
        let (out, _) = pass_messages(&[a0.clone(), a1], &tree, &stacks).unwrap();
        assert_eq!(out.refined[0], a0);
        // relu(0.2 - 0.5 + 0.25), relu(0.4 + 0 + 0.25), relu(0.6 - 1 + 0.25), relu(0.8 - 0.25 + 0.25)
        let expect: [f64; 4] = [0.0, 0.65, 0.0, 0.8];
        for (a, b) in out.refined[1].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn refined_features_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tree = JointTree::desk14();
        let feats: Vec<_> = (0..14).map(|_| rand_tensor(&[1, 2, 4, 4], &mut rng, 0.0, 1.0)).collect();
        let mut stacks = BranchStacks::zeros(&tree, Direction::Downward, 2, 3, 2);
        for s in stacks.iter_mut() {
            for k in &mut s.kernels {
                k.init_uniform(&mut rng);
            }
        }
        let (out, _) = pass_messages(&feats, &tree, &stacks).unwrap();
        assert!(out.refined.iter().all(|t| t.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tree = JointTree::desk14();
        let feats: Vec<_> = (0..14).map(|_| rand_tensor(&[1, 2, 4, 4], &mut rng, 0.0, 1.0)).collect();
        let mut stacks = BranchStacks::zeros(&tree, Direction::Upward, 2, 3, 1);
        for s in stacks.iter_mut() {
            s.kernels[0].init_uniform(&mut rng);
        }
        let (a, _) = pass_messages(&feats, &tree, &stacks).unwrap();
        // Depth-first leaves-first order instead of reverse breadth-first.
        let order = vec![0, 4, 3, 2, 7, 6, 5, 10, 9, 8, 13, 12, 11, 1];
        let other = tree.clone().with_upward_order(order).unwrap();
        let (b, _) = pass_messages(&feats, &other, &stacks).unwrap();
        assert_eq!(a.refined, b.refined);
    }

    #[test]
    fn concat_widths() {
        let up = vec![Tensor::<f32>::full(&[1, 16, 2, 2], 1.0); 3];
        let down = vec![Tensor::<f32>::zeros(&[1, 16, 2, 2]); 3];
        let cat = concat_branches(&up, &down).unwrap();
        assert_eq!(cat[0].shape(), &[1, 32, 2, 2]);
        assert!(cat[0].data()[64..].iter().all(|&v| v == 0.0));
        let (u, d) = split_branches(&cat, 16, 16).unwrap();
        assert_eq!(u, up);
        assert_eq!(d, down);
    }

    #[test]
    fn per_joint_features_of_zero_input() {
        let shared = Tensor::<f64>::zeros(&[1, 4, 3, 3]);
        let mut bank = ConvParams::zeros(2, 4, 1, 1, 0);
        bank.bias.data_mut().copy_from_slice(&[0.5, -0.5]);
        let (f, _) = per_joint_features(&shared, &[bank]).unwrap();
        assert!(f[0].data()[..9].iter().all(|&v| v == 0.5));
        assert!(f[0].data()[9..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_joint_bank_selects_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shared = rand_tensor(&[1, 4, 3, 3], &mut rng, 0.0, 1.0);
        // Bank picking shared channels 3 and 1.
        let mut bank = ConvParams::zeros(2, 4, 1, 1, 0);
        bank.weight.data_mut()[3] = 1.0;
        bank.weight.data_mut()[4 + 1] = 1.0;
        let (f, _) = per_joint_features(&shared, &[bank]).unwrap();
        assert_eq!(&f[0].data()[..9], &shared.data()[27..36]);
        assert_eq!(&f[0].data()[9..], &shared.data()[9..18]);
    }

    #[test]
    fn score_is_pixel_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = vec![rand_tensor(&[1, 6, 3, 3], &mut rng, 0.0, 1.0)];
        let shared = rand_tensor(&[1, 4, 3, 3], &mut rng, 0.0, 1.0);
        let mut bank = ConvParams::zeros(1, 6, 1, 1, 0);
        bank.weight = rand_tensor(&[1, 6, 1, 1], &mut rng, -1.0, 1.0);
        let bg = ConvParams::zeros(1, 4, 1, 1, 0);
        let z = predict_score_maps(&feats, &[bank.clone()], &shared, &bg).unwrap();
        assert_eq!(z.shape(), &[1, 2, 3, 3]);
        let pixel = 4;
        let dot: f64 = (0..6).map(|c| feats[0].data()[c * 9 + pixel] * bank.weight.data()[c]).sum();
        assert!((z.data()[pixel] - dot).abs() < 1e-12);
        assert!(z.data()[9..].iter().all(|&v| v == 0.0));
    }
}
