//! Dense row-major tensors and the handful of kernels the rest of the crate
//! is built on.
//!
//! Storage is generic over [`Scalar`] so the same layer code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks. Matrix
//! products always accumulate in `f64` and narrow once per output element.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn widen(self) -> f64;
    fn narrow(v: f64) -> Self;
    fn abs(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    fn total_cmp(&self, other: &Self) -> Ordering;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn widen(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn narrow(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn total_cmp(&self, other: &Self) -> Ordering {
                <$t>::total_cmp(self, other)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Tensor extents. Every extent is at least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::Shape("shape needs at least one dimension".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero extent in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor over `data`.
    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Self { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::ZERO)
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::ONE)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::narrow(v.widen())).collect(),
        }
    }

    fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.rank() {
            return Err(Error::Bounds(format!(
                "index {idx:?} has wrong rank for shape {}",
                self.shape
            )));
        }
        let mut flat = 0;
        for (&i, &d) in idx.iter().zip(self.dims()) {
            if i >= d {
                return Err(Error::Bounds(format!(
                    "index {idx:?} outside shape {}",
                    self.shape
                )));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    pub fn get(&self, idx: &[usize]) -> Result<T> {
        Ok(self.data[self.flat_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: T) -> Result<()> {
        let flat = self.flat_index(idx)?;
        self.data[flat] = value;
        Ok(())
    }

    /// Contiguous block for leading index `i` (row of a matrix, slice of a
    /// task-indexed kernel).
    pub fn slab(&self, i: usize) -> &[T] {
        let per = self.data.len() / self.dims()[0];
        &self.data[i * per..(i + 1) * per]
    }

    pub fn slab_mut(&mut self, i: usize) -> &mut [T] {
        let per = self.data.len() / self.dims()[0];
        &mut self.data[i * per..(i + 1) * per]
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.as_matrix("transpose")?;
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.dims() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Dimension {
                op,
                left: other.to_vec(),
                right: vec![],
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Rows processed per parallel work item in [`gemm`].
const GEMM_ROW_BLOCK: usize = 16;

/// `out[m×n] = a[m×k] · b[k×n]`, accumulated in `T` in increasing `k`
/// order, so results do not depend on thread count.
///
/// Zero entries of `a` are skipped. The accumulator starts at `+0.0` and so
/// can never hold `-0.0`, which makes the skip bit-exact.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::ZERO; m * n];
    let work = |(block, chunk): (usize, &mut [T])| {
        for (r, out_row) in chunk.chunks_mut(n).enumerate() {
            let i = block * GEMM_ROW_BLOCK + r;
            let a_row = &a[i * k..(i + 1) * k];
            for (kk, &aik) in a_row.iter().enumerate() {
                if aik == T::ZERO {
                    continue;
                }
                let b_row = &b[kk * n..(kk + 1) * n];
                for (s, &bv) in out_row.iter_mut().zip(b_row) {
                    *s = *s + aik * bv;
                }
            }
        }
    };
    if n == 0 {
        return out;
    }
    if m * k * n >= 1 << 18 {
        out.par_chunks_mut(GEMM_ROW_BLOCK * n)
            .enumerate()
            .for_each(work);
    } else {
        out.chunks_mut(GEMM_ROW_BLOCK * n).enumerate().for_each(work);
    }
    out
}

/// Standard matrix product of 2-D tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.as_matrix("matmul")?;
    let (k2, n) = b.as_matrix("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.dims().to_vec(),
            right: b.dims().to_vec(),
        });
    }
    Tensor::new(vec![m, n], gemm(a.data(), b.data(), m, k, n))
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(&a.transpose()?, b)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(a, &b.transpose()?)
}

pub fn elementwise_mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op: "elementwise_mul",
            left: a.dims().to_vec(),
            right: b.dims().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.dims().to_vec(), data)
}

/// Indices of the `k` largest entries of `values`, returned in ascending
/// index order. Equal values rank the smaller index first, so the result is
/// exactly the first `k` positions of a stable descending sort.
pub fn top_k_indices<T: Scalar>(values: &[T], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::Bounds(format!(
            "cannot select {k} of {} values",
            values.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let rank = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Fan-in and fan-out of a kernel shape: the last two extents scaled by the
/// receptive field (product of the leading extents).
pub fn fans(dims: &[usize]) -> Result<(usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!(
            "fan-in/fan-out undefined for rank-{} shape {dims:?}",
            dims.len()
        )));
    }
    let receptive: usize = dims[..dims.len() - 2].iter().product();
    Ok((
        receptive * dims[dims.len() - 2],
        receptive * dims[dims.len() - 1],
    ))
}

/// Glorot (Xavier) uniform initialization on `[-L, L]`,
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform_init<T: Scalar>(dims: &[usize], rng: &mut Rng) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(dims)?;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let shape = Shape::new(dims.to_vec())?;
    let data = (0..shape.numel())
        .map(|_| T::narrow(rng.uniform(-limit, limit)))
        .collect();
    Tensor::new(dims.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn t(dims: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
        assert_eq!(Shape::new(vec![2, 3, 4]).unwrap().numel(), 24);
    }

    #[test]
    fn matmul_identity_column() {
        let a = t(&[2, 2], &[1., 0., 0., 1.]);
        let b = t(&[2, 1], &[3., 4.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3., 4.]);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[1., 1.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3., 7.]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = Rng::new(4);
        let a: Tensor<f64> = glorot_uniform_init(&[5, 3], &mut rng).unwrap();
        let b: Tensor<f64> = glorot_uniform_init(&[5, 4], &mut rng).unwrap();
        let tn = matmul_tn(&a, &b).unwrap();
        let direct = matmul(&a.transpose().unwrap(), &b).unwrap();
        assert_eq!(tn, direct);
        let c: Tensor<f64> = glorot_uniform_init(&[3, 4], &mut rng).unwrap();
        let nt = matmul_nt(&b, &c).unwrap();
        assert_eq!(nt.dims(), &[5, 3]);
    }

    #[test]
    fn elementwise_mul_cases() {
        let a = t(&[3], &[1., 2., 3.]);
        assert_eq!(elementwise_mul(&a, &t(&[3], &[1., 1., 1.])).unwrap(), a);
        assert_eq!(
            elementwise_mul(&a, &t(&[3], &[0., 1., 0.])).unwrap().data(),
            &[0., 2., 0.]
        );
        let b = t(&[2], &[0.5, -2.]);
        assert_eq!(elementwise_mul(&b, &b).unwrap().data(), &[0.25, 4.]);
        assert!(elementwise_mul(&a, &b).is_err());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[0.9f32, 0.1, 0.5, 0.3], 2).unwrap(), vec![0, 2]);
        assert_eq!(top_k_indices(&[5f32, 5., 5.], 2).unwrap(), vec![0, 1]);
        assert!(top_k_indices(&[1f32, 2.], 0).unwrap().is_empty());
        assert!(matches!(
            top_k_indices(&[1f32], 2),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let lim = (6.0f64 / 4.0).sqrt() as f32;
        let a: Tensor = glorot_uniform_init(&[2, 2], &mut Rng::new(9)).unwrap();
        assert!(a.data().iter().all(|v| v.abs() <= lim));
        let b: Tensor = glorot_uniform_init(&[2, 2], &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(glorot_uniform_init::<f32>(&[4], &mut Rng::new(1)).is_err());
    }

    #[test]
    fn glorot_sample_mean_near_zero() {
        let a: Tensor = glorot_uniform_init(&[100, 100], &mut Rng::new(7)).unwrap();
        let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn conv_fans_follow_receptive_field() {
        assert_eq!(fans(&[3, 3, 2, 8]).unwrap(), (18, 72));
    }

    proptest! {
        #[test]
        fn top_k_matches_stable_sort(values in proptest::collection::vec(-3i32..3, 1..40), k_frac in 0.0f64..=1.0) {
            let values: Vec<f32> = values.into_iter().map(|v| v as f32 * 0.5).collect();
            let k = ((values.len() as f64) * k_frac).floor() as usize;
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
            let mut expected = order[..k].to_vec();
            expected.sort_unstable();
            prop_assert_eq!(top_k_indices(&values, k).unwrap(), expected);
        }

        #[test]
        fn identity_matmul_is_exact(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let x: Tensor = glorot_uniform_init(&[rows, cols], &mut Rng::new(seed)).unwrap();
            let mut eye = Tensor::<f32>::zeros(vec![rows, rows]).unwrap();
            for i in 0..rows { eye.set(&[i, i], 1.0).unwrap(); }
            prop_assert_eq!(matmul(&eye, &x).unwrap(), x);
        }

        #[test]
        fn ones_and_zeros_masks(data in proptest::collection::vec(-10.0f32..10.0, 1..30)) {
            let a = Tensor::vector(data.clone()).unwrap();
            let ones = Tensor::<f32>::ones(vec![data.len()]).unwrap();
            let zeros = Tensor::<f32>::zeros(vec![data.len()]).unwrap();
            prop_assert_eq!(elementwise_mul(&a, &ones).unwrap(), a.clone());
            prop_assert!(elementwise_mul(&a, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        }

        #[test]
        fn glorot_within_bound(r in 2usize..20, c in 2usize..20, seed in 0u64..500) {
            let lim = (6.0 / (r + c) as f64).sqrt();
            let a: Tensor<f64> = glorot_uniform_init(&[r, c], &mut Rng::new(seed)).unwrap();
            prop_assert!(a.data().iter().all(|v| v.abs() <= lim));
        }
    }
}
