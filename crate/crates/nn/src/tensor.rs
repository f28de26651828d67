use crate::real::Real;

/// A single feature map stack, `channels × height × width`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn reshape(mut self, channels: usize, height: usize, width: usize) -> Self {
        assert_eq!(self.data.len(), channels * height * width, "reshape size");
        self.channels = channels;
        self.height = height;
        self.width = width;
        self
    }
}

/// Channel-wise concatenation `[a; b]`.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial dims");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.height, a.width, data)
}

/// Splits a gradient of `concat(a, b)` back into its two parts.
pub fn split_channels<T: Real>(g: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let p = g.plane();
    let (x, y) = g.data.split_at(first * p);
    (
        Tensor::from_vec(first, g.height, g.width, x.to_vec()),
        Tensor::from_vec(g.channels - first, g.height, g.width, y.to_vec()),
    )
}
