use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Weights and bias of one 2-D convolution (cross-correlation) layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Real = f32> {
    /// `[out_channels, in_channels, kernel_h, kernel_w]`
    pub weight: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [out_ch, _, _, _] = weight.dims4()?;
        if bias.shape() != [out_ch] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {out_ch} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    /// Stride-1 convolution with `(k - 1) / 2` zero padding, so the spatial
    /// extent is preserved. `kernel` must be odd.
    pub fn same(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same-size kernels must be odd, got {kernel}");
        Self::zeros(out_ch, in_ch, kernel, 1, (kernel - 1) / 2)
    }

    /// He-style uniform initialization, `U(-b, b)` with `b = sqrt(6 / fan_in)`,
    /// and zero bias.
    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        let [_, in_ch, kh, kw] = self.dims();
        let bound = (6.0 / (in_ch * kh * kw) as f64).sqrt();
        for w in self.weight.data_mut() {
            *w = T::from_f64(rng.random_range(-bound..bound));
        }
        self.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn dims(&self) -> [usize; 4] {
        self.weight.dims4().expect("conv weight is rank 4")
    }

    pub fn out_channels(&self) -> usize {
        self.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.dims()[1]
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn is_pointwise(&self) -> bool {
        let [_, _, kh, kw] = self.dims();
        kh == 1 && kw == 1 && self.stride == 1 && self.padding == 0
    }
}

struct Geometry {
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn of<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<(usize, usize, Self)> {
        let [n, c, h, w] = x.dims4()?;
        let [out_ch, in_ch, kh, kw] = p.dims();
        if c != in_ch {
            return Err(Error::Shape(format!(
                "conv expects {in_ch} input channels, got {c}"
            )));
        }
        let (out_h, out_w) = match (p.out_extent(h, kh), p.out_extent(w, kw)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::Shape(format!(
                    "{kh}x{kw} kernel with padding {} does not fit a {h}x{w} input",
                    p.padding
                )))
            }
        };
        Ok((
            n,
            out_ch,
            Geometry {
                in_ch,
                in_h: h,
                in_w: w,
                kh,
                kw,
                out_h,
                out_w,
                stride: p.stride,
                pad: p.padding,
            },
        ))
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `ox` whose input column `ox * stride + j - pad` lies
    /// inside the image.
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let first = self.pad.saturating_sub(j).div_ceil(self.stride);
        let last = (self.in_w + self.pad).checked_sub(j + 1).map(|v| v / self.stride + 1).unwrap_or(0);
        let last = last.min(self.out_w);
        (first.min(last), last)
    }

    /// Unfolds one image `[c, h, w]` into a `[c*kh*kw, out_h*out_w]` matrix.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let hw = self.out_len();
        for c in 0..self.in_ch {
            let plane = &image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let (lo, hi) = self.valid_cols(j);
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize || lo == hi {
                            dst_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        dst_row[..lo].fill(T::zero());
                        dst_row[hi..].fill(T::zero());
                        let start = lo * self.stride + j - self.pad;
                        if self.stride == 1 {
                            dst_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (k, v) in dst_row[lo..hi].iter_mut().enumerate() {
                                *v = src[start + k * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters-and-adds columns back into an image.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let hw = self.out_len();
        for c in 0..self.in_ch {
            let plane = &mut image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let (lo, hi) = self.valid_cols(j);
                    if lo == hi {
                        continue;
                    }
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let start = lo * self.stride + j - self.pad;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let src_row = &src[oy * self.out_w + lo..oy * self.out_w + hi];
                        if self.stride == 1 {
                            for (d, s) in dst[start..start + hi - lo].iter_mut().zip(src_row) {
                                *d += *s;
                            }
                        } else {
                            for (k, s) in src_row.iter().enumerate() {
                                dst[start + k * self.stride] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` with `p.weight`, plus bias, with zero padding.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, out_ch, g) = Geometry::of(x, p)?;
    let (k, hw) = (g.patch_len(), g.out_len());
    let in_plane = g.in_ch * g.in_h * g.in_w;
    let mut out = Tensor::zeros(&[n, out_ch, g.out_h, g.out_w]);
    let pointwise = p.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * hw] };
    let bias = p.bias.data();
    for b in 0..n {
        let image = &x.data()[b * in_plane..(b + 1) * in_plane];
        let dst = &mut out.data_mut()[b * out_ch * hw..(b + 1) * out_ch * hw];
        for (co, chunk) in dst.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        let src = if pointwise {
            image
        } else {
            g.im2col(image, &mut cols);
            &cols
        };
        // SAFETY: weight is out_ch x k, src is k x hw, dst is out_ch x hw,
        // all contiguous row-major.
        unsafe {
            T::gemm(
                out_ch,
                k,
                hw,
                T::one(),
                p.weight.data().as_ptr(),
                k as isize,
                1,
                src.as_ptr(),
                hw as isize,
                1,
                T::one(),
                dst.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
    }
    out.check_finite("conv2d forward")?;
    Ok(out)
}

/// Backward pass of [`conv2d_forward`].
///
/// Accumulates the weight and bias gradients into `p` and returns the
/// gradient with respect to `x`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    p: &mut ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, out_ch, g) = Geometry::of(x, p)?;
    if grad_out.shape() != [n, out_ch, g.out_h, g.out_w] {
        return Err(Error::Shape(format!(
            "conv gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, out_ch, g.out_h, g.out_w]
        )));
    }
    let (k, hw) = (g.patch_len(), g.out_len());
    let in_plane = g.in_ch * g.in_h * g.in_w;
    let pointwise = p.is_pointwise();
    let mut grad_x = Tensor::zeros(x.shape());
    let mut cols = vec![T::zero(); k * hw];
    let mut grad_cols = if pointwise { Vec::new() } else { vec![T::zero(); k * hw] };

    let weight = p.weight.data().to_vec();
    let grad_w = p.weight.grad_mut();
    for b in 0..n {
        let image = &x.data()[b * in_plane..(b + 1) * in_plane];
        let gout = &grad_out.data()[b * out_ch * hw..(b + 1) * out_ch * hw];
        let src: &[T] = if pointwise {
            image
        } else {
            g.im2col(image, &mut cols);
            &cols
        };
        // dW (out_ch x k) += gout (out_ch x hw) * src^T (hw x k)
        unsafe {
            T::gemm(
                out_ch,
                hw,
                k,
                T::one(),
                gout.as_ptr(),
                hw as isize,
                1,
                src.as_ptr(),
                1,
                hw as isize,
                T::one(),
                grad_w.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        let gx = &mut grad_x.data_mut()[b * in_plane..(b + 1) * in_plane];
        let dst: &mut [T] = if pointwise { gx } else { &mut grad_cols };
        // dcols (k x hw) = W^T (k x out_ch) * gout (out_ch x hw)
        unsafe {
            T::gemm(
                k,
                out_ch,
                hw,
                T::one(),
                weight.as_ptr(),
                1,
                k as isize,
                gout.as_ptr(),
                hw as isize,
                1,
                T::zero(),
                dst.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        if !pointwise {
            let gx = &mut grad_x.data_mut()[b * in_plane..(b + 1) * in_plane];
            g.col2im(&grad_cols, gx);
        }
    }
    let grad_b = p.bias.grad_mut();
    for b in 0..n {
        let gout = &grad_out.data()[b * out_ch * hw..(b + 1) * out_ch * hw];
        for (co, chunk) in gout.chunks(hw).enumerate() {
            grad_b[co] += chunk.iter().copied().sum::<T>();
        }
    }
    grad_x.check_finite("conv2d backward")?;
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::offset4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct quadruple-loop summation over the padded input.
    fn naive_conv(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let [n, c, h, w] = x.dims4().unwrap();
        let [oc, _, kh, kw] = p.dims();
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (w + 2 * p.padding - kw) / p.stride + 1;
        let mut out = Tensor::zeros(&[n, oc, oh, ow]);
        let od = [n, oc, oh, ow];
        for b in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = p.bias.data()[o];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * p.stride + i) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + j) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[offset4([n, c, h, w], b, ci, iy as usize, ix as usize)]
                                        * p.weight.data()[offset4([oc, c, kh, kw], o, ci, i, j)];
                                }
                            }
                        }
                        out.data_mut()[offset4(od, b, o, oy, ox)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[2, 1, 5, 4], &mut rng);
        let mut p = ConvParams::zeros(1, 1, 1, 1, 0);
        p.weight.data_mut()[0] = 1.0;
        assert_eq!(conv2d_forward(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[1, 3, 6, 6], &mut rng);
        let mut p = ConvParams::<f64>::same(2, 3, 3);
        p.bias.data_mut().copy_from_slice(&[0.25, -1.5]);
        let y = conv2d_forward(&x, &p).unwrap();
        assert!(y.data()[..36].iter().all(|&v| v == 0.25));
        assert!(y.data()[36..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn two_by_two_kernel_on_three_by_three_input() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4, 1.1, 0.9, -2.2])
            .unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let p = ConvParams::new(w, Tensor::from_vec(&[1], vec![0.0]).unwrap(), 1, 0).unwrap();
        let y = conv2d_forward(&x, &p).unwrap();
        // Four-term sums written out by hand.
        let expect: [f64; 4] = [
            0.3 * 0.5 + -1.2 * -1.0 + 2.0 * 2.0 + 0.1 * 0.25,
            -1.2 * 0.5 + 0.7 * -1.0 + 0.1 * 2.0 + -0.4 * 0.25,
            2.0 * 0.5 + 0.1 * -1.0 + 1.1 * 2.0 + 0.9 * 0.25,
            0.1 * 0.5 + -0.4 * -1.0 + 0.9 * 2.0 + -2.2 * 0.25,
        ];
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(y, naive_conv(&x, &p));
    }

    #[test]
    fn matches_naive_oracle_on_small_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in 1..=4 {
            for size in [1usize, 3, 5, 8] {
                for (k, stride, pad) in [(1, 1, 0), (3, 1, 1), (3, 2, 1), (2, 2, 0), (5, 1, 2)] {
                    if size + 2 * pad < k {
                        continue;
                    }
                    let x = random_tensor(&[2, c, size, size], &mut rng);
                    let mut p = ConvParams::zeros(3, c, k, stride, pad);
                    p.weight = random_tensor(&[3, c, k, k], &mut rng);
                    p.bias = random_tensor(&[3], &mut rng);
                    let fast = conv2d_forward(&x, &p).unwrap();
                    let slow = naive_conv(&x, &p);
                    assert_eq!(fast.shape(), slow.shape());
                    for (a, b) in fast.data().iter().zip(slow.data()) {
                        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_oversized_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let p = ConvParams::<f32>::zeros(1, 3, 3, 1, 1);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape(_))));
        let p = ConvParams::<f32>::zeros(1, 2, 7, 1, 0);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[1, 2, 4, 4], &mut rng);
        let mut p = ConvParams::<f64>::same(2, 2, 3);
        p.weight = random_tensor(&[2, 2, 3, 3], &mut rng);
        let g = random_tensor(&[1, 2, 4, 4], &mut rng);
        conv2d_backward(&x, &mut p, &g).unwrap();
        let once = p.weight.grad().unwrap().to_vec();
        conv2d_backward(&x, &mut p, &g).unwrap();
        for (a, b) in p.weight.grad().unwrap().iter().zip(&once) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        let bias_grad: f64 = g.data()[..16].iter().sum();
        assert!((p.bias.grad().unwrap()[0] - 2.0 * bias_grad).abs() < 1e-12);
    }
}
