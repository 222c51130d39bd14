use rand::Rng;

use super::{offset4, Real, Tensor};
use crate::error::{Error, Result};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu given its *input* `x`. The subgradient at zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu gradient {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Flat input index of the maximum chosen for each pooled output.
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2 max pooling with stride 2.
///
/// Odd extents are handled by replicating the last row/column, so the output
/// is `ceil(h / 2) x ceil(w / 2)`. The first maximum in row-major window order
/// wins ties.
pub fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let dims @ [n, c, h, w] = x.dims4()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = offset4(dims, b, ch, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let y = (2 * oy + dy).min(h - 1);
                        let xx = (2 * ox + dx).min(w - 1);
                        let idx = offset4(dims, b, ch, y, xx);
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    argmax.push(best);
                }
            }
        }
    }
    for (o, &i) in out.data_mut().iter_mut().zip(&argmax) {
        *o = data[i];
    }
    Ok((
        out,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "pool gradient has {} values, expected {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(&cache.input_shape);
    let g = grad.data_mut();
    for (&i, &v) in cache.argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(grad)
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let [n, _, h, w] = first.dims4()?;
    let mut total = 0;
    for x in xs {
        let [xn, xc, xh, xw] = x.dims4()?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "cannot concat {:?} with {:?}",
                x.shape(),
                first.shape()
            )));
        }
        total += xc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for x in xs {
            let c = x.shape()[1];
            data.extend_from_slice(&x.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Tensor::from_vec(&[n, total, h, w], data)
}

/// Inverse of [`concat_channels`]: splits `x` into consecutive channel ranges.
pub fn split_channels<T: Real>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = x.dims4()?;
    if sizes.iter().sum::<usize>() != c || sizes.contains(&0) {
        return Err(Error::Shape(format!(
            "cannot split {c} channels into {sizes:?}"
        )));
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = sizes.iter().map(|s| Vec::with_capacity(n * s * plane)).collect();
    for b in 0..n {
        let mut start = b * c * plane;
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&x.data()[start..start + s * plane]);
            start += s * plane;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::from_vec(&[n, s, h, w], d))
        .collect()
}

/// Per-(batch, channel) multiplier drawn by channel dropout.
#[derive(Clone, Debug)]
pub struct DropoutMask<T: Real> {
    scale: Vec<T>,
    plane: usize,
}

impl<T: Real> DropoutMask<T> {
    pub fn identity(x: &Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = x.dims4()?;
        Ok(DropoutMask {
            scale: vec![T::one(); n * c],
            plane: h * w,
        })
    }

    pub fn scales(&self) -> &[T] {
        &self.scale
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.len() != self.scale.len() * self.plane {
            return Err(Error::Shape("dropout mask does not fit tensor".into()));
        }
        let mut out = x.clone();
        out.clear_grad();
        for (chunk, &s) in out.data_mut().chunks_mut(self.plane).zip(&self.scale) {
            if s != T::one() {
                chunk.iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok(out)
    }
}

/// Zeroes whole channels with probability `p` and rescales survivors by
/// `1 / (1 - p)`. In [`Mode::Eval`] the input is returned unchanged.
pub fn channel_dropout_forward<T: Real>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    let mut mask = DropoutMask::identity(x)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), mask));
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    for s in mask.scale.iter_mut() {
        *s = if rng.random::<f64>() < p { T::zero() } else { keep };
    }
    Ok((mask.apply(x)?, mask))
}

pub fn channel_dropout_backward<T: Real>(
    mask: &DropoutMask<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    mask.apply(grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::from_vec(&[3], vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_is_identity_on_positive_input() {
        let x = Tensor::<f32>::from_vec(&[4], vec![0.1, 1.0, 3.0, 7.5]).unwrap();
        assert_eq!(relu_forward(&x), x);
        let g = Tensor::from_vec(&[4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap(), g);
    }

    #[test]
    fn maxpool_basic() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(cache.argmax(), &[3]);
    }

    #[test]
    fn maxpool_tie_breaks_to_first_element() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.5);
        let (y, cache) = maxpool2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
        let g = maxpool2_backward(&cache, &Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(g.data(), &expect);
    }

    #[test]
    fn maxpool_matches_window_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::from_vec(
            &[2, 3, 4, 4],
            (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (y, _) = maxpool2_forward(&x).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let window = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .map(|(dy, dx)| x.data()[offset4([2, 3, 4, 4], b, c, 2 * oy + dy, 2 * ox + dx)]);
                        let oracle = window.iter().copied().fold(f64::MIN, f64::max);
                        assert_eq!(y.data()[offset4([2, 3, 2, 2], b, c, oy, ox)], oracle);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_odd_extent_replicates_edge() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 3, 3], vec![1., 2., 9., 3., 4., 5., 6., 7., 8.]).unwrap();
        let (y, _) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 9.0, 7.0, 8.0]);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::<f32>::full(&[2, 16, 3, 3], 1.0);
        let b = Tensor::<f32>::full(&[2, 16, 3, 3], 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 32, 3, 3]);
        let parts = split_channels(&c, &[16, 16]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let d = Tensor::<f32>::zeros(&[2, 1, 4, 3]);
        assert!(concat_channels(&[&a, &d]).is_err());
    }

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::from_vec(&[1, 2, 1, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let (y, _) = channel_dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        let (y, _) = channel_dropout_forward(&x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(channel_dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let draws = 10_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let (y, _) = channel_dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
            total += y.data().iter().sum::<f64>() / 4.0;
        }
        let mean = total / draws as f64;
        // Each channel contributes v * Bernoulli(0.5) * 2; the mean of 4 such has
        // std sqrt(sum v^2) / 4 = 1.369 per draw.
        let sigma = (30.0f64).sqrt() / 4.0 / (draws as f64).sqrt();
        assert!((mean - 2.5).abs() < 4.0 * sigma, "mean {mean}");
    }

    #[test]
    fn dropout_backward_uses_same_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::full(&[2, 8, 2, 2], 1.0);
        let (y, mask) = channel_dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let g = channel_dropout_backward(&mask, &x).unwrap();
        assert_eq!(y, g);
    }
}
