//! Layers with hand-written backward passes. Each forward returns whatever
//! the matching backward needs; parameter gradients accumulate into the
//! layer's [`Param`]s until [`Param::zero_grad`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::real::{matmul, Op, Real};
use crate::tensor::Tensor;

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    /// Truncated normal (cut at two standard deviations) with He scaling
    /// `std = sqrt(2 / fan_in)`.
    pub fn he_truncated<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        let std = (2.0 / fan_in as f64).sqrt();
        for v in p.value.iter_mut() {
            let z = loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z;
                }
            };
            *v = T::of(z * std);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// 2-D convolution, square kernel, zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::he_truncated(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = oh * ow;
        let mut cols = vec![T::zero(); self.in_channels * k * k * p];
        for ci in 0..self.in_channels {
            let plane = x.channel(ci);
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - pad;
                            if ix >= 0 && (ix as usize) < x.width {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = oh * ow;
        let mut dx = Tensor::zeros(self.in_channels, h, w);
        for ci in 0..self.in_channels {
            let plane = &mut dx.data[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s + kj) as isize - pad;
                            if ix >= 0 && (ix as usize) < w {
                                drow[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.in_channels, "{}: input channels", self.weight.name);
        let (oh, ow) = self.output_size(x.height, x.width);
        let cols = self.im2col(x, oh, ow);
        let q = self.in_channels * self.kernel * self.kernel;
        let p = oh * ow;
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for (oc, chunk) in out.data.chunks_mut(p).enumerate() {
            chunk.iter_mut().for_each(|v| *v = self.bias.value[oc]);
        }
        matmul(self.out_channels, q, p, &self.weight.value, Op::N, &cols, Op::N, T::one(), &mut out.data);
        out
    }

    /// Accumulates parameter gradients from `dy`; returns `dL/dx` when
    /// asked for.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (oh, ow) = (dy.height, dy.width);
        let cols = self.im2col(x, oh, ow);
        let q = self.in_channels * self.kernel * self.kernel;
        let p = oh * ow;
        matmul(self.out_channels, p, q, &dy.data, Op::N, &cols, Op::T, T::one(), &mut self.weight.grad);
        for (oc, chunk) in dy.data.chunks(p).enumerate() {
            self.bias.grad[oc] += chunk.iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); q * p];
        matmul(q, self.out_channels, p, &self.weight.value, Op::T, &dy.data, Op::N, T::zero(), &mut dcols);
        Some(self.col2im(&dcols, x.height, x.width, oh, ow))
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer on a flattened input.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::he_truncated(format!("{name}.weight"), vec![outputs, inputs], inputs, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.inputs, "{}: input width", self.weight.name);
        let mut y = self.bias.value.clone();
        matmul(self.outputs, self.inputs, 1, &self.weight.value, Op::N, x, Op::N, T::one(), &mut y);
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T]) -> Vec<T> {
        matmul(self.outputs, 1, self.inputs, dy, Op::N, x, Op::N, T::one(), &mut self.weight.grad);
        for (g, &d) in self.bias.grad.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![T::zero(); self.inputs];
        matmul(self.inputs, self.outputs, 1, &self.weight.value, Op::T, dy, Op::N, T::zero(), &mut dx);
        dx
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// 2×2 transposed convolution with stride 2: every input pixel expands
/// into its own 2×2 output block, doubling the resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2<T> {
    /// Shape `[in, out, 2, 2]`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl<T: Real> ConvTranspose2<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::he_truncated(
                format!("{name}.weight"),
                vec![in_channels, out_channels, 2, 2],
                in_channels,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.in_channels, "{}: input channels", self.weight.name);
        let (h, w, p) = (x.height, x.width, x.plane());
        let q = self.out_channels * 4;
        let mut z = vec![T::zero(); q * p];
        matmul(q, self.in_channels, p, &self.weight.value, Op::T, &x.data, Op::N, T::zero(), &mut z);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            let b = self.bias.value[o];
            for ab in 0..4 {
                let (a, bb) = (ab / 2, ab % 2);
                let src = &z[(o * 4 + ab) * p..(o * 4 + ab + 1) * p];
                for i in 0..h {
                    for j in 0..w {
                        out.data[(o * oh + 2 * i + a) * ow + 2 * j + bb] = src[i * w + j] + b;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (h, w, p) = (x.height, x.width, x.plane());
        let (oh, ow) = (2 * h, 2 * w);
        let q = self.out_channels * 4;
        let mut dz = vec![T::zero(); q * p];
        for o in 0..self.out_channels {
            let mut bsum = T::zero();
            for ab in 0..4 {
                let (a, bb) = (ab / 2, ab % 2);
                let dst = &mut dz[(o * 4 + ab) * p..(o * 4 + ab + 1) * p];
                for i in 0..h {
                    for j in 0..w {
                        let v = dy.data[(o * oh + 2 * i + a) * ow + 2 * j + bb];
                        dst[i * w + j] = v;
                        bsum += v;
                    }
                }
            }
            self.bias.grad[o] += bsum;
        }
        matmul(self.in_channels, p, q, &x.data, Op::N, &dz, Op::T, T::one(), &mut self.weight.grad);
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(self.in_channels, h, w);
        matmul(self.in_channels, q, p, &self.weight.value, Op::N, &dz, Op::N, T::zero(), &mut dx.data);
        Some(dx)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Masks `dy` by the ReLU output: gradient passes where `y > 0`.
pub fn relu_backward<T: Real>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn sigmoid_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
}

pub fn sigmoid_backward<T: Real>(y: &[T], dy: &mut [T]) {
    for (d, &s) in dy.iter_mut().zip(y) {
        *d *= s * (T::one() - s);
    }
}

/// 2×2 max pooling with stride 2; also returns the flat argmax per output.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    let mut arg = vec![0usize; x.channels * oh * ow];
    for c in 0..x.channels {
        let base = c * x.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * x.width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * x.width + 2 * ox + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(
    dy: &Tensor<T>,
    argmax: &[usize],
    in_shape: (usize, usize, usize),
) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape.0, in_shape.1, in_shape.2);
    for (&i, &d) in argmax.iter().zip(&dy.data) {
        dx.data[i] += d;
    }
    dx
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let srow = &src[(y / 2) * x.width..(y / 2 + 1) * x.width];
            for (xx, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Tensor::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        for y in 0..dy.height {
            for x in 0..dy.width {
                dx.data[(c * h + y / 2) * w + x / 2] += dy.data[(c * dy.height + y) * dy.width + x];
            }
        }
    }
    dx
}

/// Inverted dropout: surviving units are scaled by `1 / keep`. Returns the
/// multiplier applied to each unit (0 or `1/keep`).
pub fn dropout<T: Real, R: Rng + ?Sized>(x: &mut [T], keep: f64, rng: &mut R) -> Vec<T> {
    let scale = T::of(1.0 / keep);
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random_bool(keep) { scale } else { T::zero() })
        .collect();
    for (v, &m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height, x.width);
        let k = conv.kernel;
        let mut out = Tensor::zeros(conv.out_channels, oh, ow);
        for oc in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.value[oc];
                    for ic in 0..conv.in_channels {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.height && (ix as usize) < x.width {
                                    acc += conv.weight.value[((oc * conv.in_channels + ic) * k + ki) * k + kj]
                                        * x.data[(ic * x.height + iy as usize) * x.width + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let mut conv = Conv2d::<f64>::new("c", 3, 4, 3, stride, &mut rng);
            conv.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x = random_tensor(&mut rng, 3, 7, 6);
            let got = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, 2, &mut rng);
        let x = random_tensor(&mut rng, 2, 6, 5);
        let (oh, ow) = conv.output_size(6, 5);
        let r = random_tensor(&mut rng, 3, oh, ow);
        // loss = <r, conv(x)>
        let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
            c.forward(x).data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let dx = conv.backward(&x, &r, true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
        for i in 0..conv.weight.len() {
            let mut cp = conv.clone();
            cp.weight.value[i] += h;
            let mut cm = conv.clone();
            cm.weight.value[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - conv.weight.grad[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::<f64>::new("fc", 5, 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = [0.3, -1.2, 0.7];
        let loss = |l: &Linear<f64>, x: &[f64]| -> f64 {
            l.forward(x).iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let dx = lin.backward(&x, &r);
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            assert!(((loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
        assert_eq!(lin.bias.grad, r.to_vec());
    }

    #[test]
    fn transposed_conv_matches_block_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut up = ConvTranspose2::<f64>::new("up", 2, 3, &mut rng);
        up.bias.value = vec![0.5, -0.25, 1.0];
        let x = random_tensor(&mut rng, 2, 3, 4);
        let y = up.forward(&x);
        assert_eq!(y.shape(), (3, 6, 8));
        for o in 0..3 {
            for oy in 0..6 {
                for ox in 0..8 {
                    let (i, j, a, b) = (oy / 2, ox / 2, oy % 2, ox % 2);
                    let mut want = up.bias.value[o];
                    for c in 0..2 {
                        want += up.weight.value[((c * 3 + o) * 2 + a) * 2 + b] * x.data[(c * 3 + i) * 4 + j];
                    }
                    assert!((y.data[(o * 6 + oy) * 8 + ox] - want).abs() < 1e-12);
                }
            }
        }
        let r = random_tensor(&mut rng, 3, 6, 8);
        let loss = |u: &ConvTranspose2<f64>, x: &Tensor<f64>| -> f64 {
            u.forward(x).data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let dx = up.backward(&x, &r, true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[i] += h;
            xm.data[i] -= h;
            assert!(((loss(&up, &xp) - loss(&up, &xm)) / (2.0 * h) - dx.data[i]).abs() < 1e-7);
        }
        for i in 0..up.weight.len() {
            let (mut p, mut m) = (up.clone(), up.clone());
            p.weight.value[i] += h;
            m.weight.value[i] -= h;
            assert!(((loss(&p, &x) - loss(&m, &x)) / (2.0 * h) - up.weight.grad[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0f64, 4.0, 3.0, 2.0]);
        let (p, arg) = maxpool2(&x);
        assert_eq!(p.data, vec![4.0]);
        let back = maxpool2_backward(&Tensor::from_vec(1, 1, 1, vec![1.0]), &arg, x.shape());
        assert_eq!(back.data, vec![0.0, 1.0, 0.0, 0.0]);
        let u = upsample2(&x);
        assert_eq!(u.shape(), (1, 4, 4));
        assert_eq!(upsample2_backward(&u).data, vec![4.0, 16.0, 12.0, 8.0]);
    }

    #[test]
    fn init_is_truncated_and_seeded() {
        let a = Param::<f32>::he_truncated("w", vec![64, 9], 9, &mut ChaCha8Rng::seed_from_u64(4));
        let b = Param::<f32>::he_truncated("w", vec![64, 9], 9, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        let bound = 2.0 * (2.0f32 / 9.0).sqrt();
        assert!(a.value.iter().all(|v| v.abs() <= bound));
    }
}
