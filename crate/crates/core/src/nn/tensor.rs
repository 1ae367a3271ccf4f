use super::real::Real;

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor payload does not match shape");
        Self { n, c, h, w, data }
    }

    /// Elements per spatial plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shape mismatch");
        let mut out = Self::zeros(a.n, a.c + b.c, a.h, a.w);
        let (la, lb) = (a.sample_len(), b.sample_len());
        for i in 0..a.n {
            let dst = &mut out.data[i * (la + lb)..(i + 1) * (la + lb)];
            dst[..la].copy_from_slice(a.sample(i));
            dst[la..].copy_from_slice(b.sample(i));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`]: first `c_first` channels, then the rest.
    pub fn split_channels(&self, c_first: usize) -> (Self, Self) {
        let mut a = Self::zeros(self.n, c_first, self.h, self.w);
        let mut b = Self::zeros(self.n, self.c - c_first, self.h, self.w);
        let (la, lb) = (a.sample_len(), b.sample_len());
        for i in 0..self.n {
            let src = self.sample(i);
            a.data[i * la..(i + 1) * la].copy_from_slice(&src[..la]);
            b.data[i * lb..(i + 1) * lb].copy_from_slice(&src[la..]);
        }
        (a, b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x = *x + *y;
        }
    }
}
