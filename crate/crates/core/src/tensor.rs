//! Dense 4D storage in row-major `(n, c, h, w)` order.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of a [`Tensor4`] as `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Element count, or an error if any dimension is zero or the product
    /// overflows.
    pub fn checked_len(&self) -> Result<usize> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "all dimensions must be >= 1, got {self}"
            )));
        }
        self.dims()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("element count of {self} overflows")))
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.c + j) * self.h + k) * self.w + l
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(n: usize, c: usize, h: usize, w: usize, fill: T) -> Result<Self> {
        Self::filled(Shape4::new(n, c, h, w), fill)
    }

    pub fn filled(shape: Shape4, fill: T) -> Result<Self> {
        let len = shape.checked_len()?;
        Ok(Tensor4 {
            shape,
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    /// Wraps existing row-major data.
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        let len = shape.checked_len()?;
        if data.len() != len {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros_like(&self) -> Self {
        Tensor4 {
            shape: self.shape,
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn checked_offset(&self, i: usize, j: usize, k: usize, l: usize) -> Result<usize> {
        let s = self.shape;
        if i >= s.n || j >= s.c || k >= s.h || l >= s.w {
            return Err(Error::OutOfBounds {
                index: [i, j, k, l],
                shape: s.dims(),
            });
        }
        Ok(s.offset(i, j, k, l))
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> Result<T> {
        Ok(self.data[self.checked_offset(i, j, k, l)?])
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: T) -> Result<()> {
        let off = self.checked_offset(i, j, k, l)?;
        self.data[off] = value;
        Ok(())
    }

    /// Unchecked-by-`Result` indexing for hot loops; panics on out-of-range.
    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.data[self.shape.offset(i, j, k, l)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut T {
        let off = self.shape.offset(i, j, k, l);
        &mut self.data[off]
    }

    /// The contiguous slice holding sample `i`.
    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.shape.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Same data viewed under another shape with equal element count.
    pub fn reshaped(self, shape: Shape4) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Copies the listed samples, in order, into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let shape = Shape4 {
            n: indices.len(),
            ..self.shape
        };
        let mut data = Vec::with_capacity(shape.checked_len()?);
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::OutOfBounds {
                    index: [i, 0, 0, 0],
                    shape: self.shape.dims(),
                });
            }
            data.extend_from_slice(self.sample(i));
        }
        Self::from_vec(shape, data)
    }

    /// Stacks single-sample-compatible tensors along `n`.
    pub fn stack(parts: &[Tensor4<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("cannot stack zero tensors".into()))?;
        let per = Shape4 { n: 1, ..first.shape };
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (per.c, per.h, per.w) {
                return Err(Error::mismatch(per, s));
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(Shape4 { n, ..per }, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fill_and_length() {
        let t = Tensor4::new(1, 1, 2, 2, 0.0f64).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor4::new(2, 3, 4, 5, 1.0f64).unwrap();
        assert_eq!(t.len(), 120);
        assert!(t.data().iter().all(|&x| x == 1.0));
        let t = Tensor4::new(1, 3, 224, 224, 0.0f32).unwrap();
        assert_eq!(t.len(), 150_528);
    }

    #[test]
    fn zero_or_overflowing_dimension_rejected() {
        assert!(matches!(
            Tensor4::new(0, 1, 1, 1, 0.0f64),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Tensor4::new(usize::MAX, 2, 1, 1, 0.0f64),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn get_set_and_offset() {
        let mut t = Tensor4::new(1, 1, 1, 1, 0.0f64).unwrap();
        assert_eq!(t.get(0, 0, 0, 0).unwrap(), 0.0);
        t.set(0, 0, 0, 0, 7.5).unwrap();
        assert_eq!(t.get(0, 0, 0, 0).unwrap(), 7.5);

        let mut t = Tensor4::new(1, 2, 2, 2, 0.0f64).unwrap();
        t.set(0, 1, 0, 1, 3.0).unwrap();
        assert_eq!(t.data()[5], 3.0);
        assert_eq!(t.data().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn out_of_range_is_bounds_error() {
        let t = Tensor4::new(1, 2, 2, 2, 0.0f64).unwrap();
        assert!(matches!(t.get(0, 2, 0, 0), Err(Error::OutOfBounds { .. })));
    }

    proptest! {
        #[test]
        fn set_then_get_round_trips(
            dims in (1usize..4, 1usize..4, 1usize..5, 1usize..5),
            seed in any::<(usize, usize, usize, usize)>(),
            value in -1e6f64..1e6,
        ) {
            let (n, c, h, w) = dims;
            let (i, j, k, l) = (seed.0 % n, seed.1 % c, seed.2 % h, seed.3 % w);
            let mut t = Tensor4::new(n, c, h, w, 0.25f64).unwrap();
            t.set(i, j, k, l, value).unwrap();
            prop_assert_eq!(t.get(i, j, k, l).unwrap(), value);
            let off = t.shape().offset(i, j, k, l);
            for (o, &x) in t.data().iter().enumerate() {
                if o != off {
                    prop_assert_eq!(x, 0.25);
                }
            }
        }

        #[test]
        fn offset_is_a_bijection(n in 1usize..4, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
            let s = Shape4::new(n, c, h, w);
            let mut seen = vec![false; s.len()];
            for i in 0..n { for j in 0..c { for k in 0..h { for l in 0..w {
                let o = s.offset(i, j, k, l);
                prop_assert!(o < s.len());
                prop_assert!(!seen[o]);
                seen[o] = true;
            }}}}
            prop_assert!(seen.iter().all(|&b| b));
        }
    }
}
