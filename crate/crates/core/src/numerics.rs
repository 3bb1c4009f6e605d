//! Dense kernels and seeded initialization shared by every other module.
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` and
//! `f64`. Training and gradient checking use `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Deref, DerefMut};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating-point element type accepted by matrices, vectors and networks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Deterministic generator used for all seeded randomness in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector<T>(pub Vec<T>);

impl<T: Scalar> Vector<T> {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![T::zero(); dim])
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Vector(values.iter().map(|&v| lit(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for Vector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for Vector<T> {
    fn from(v: Vec<T>) -> Self {
        Vector(v)
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged matrix rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| lit(v))).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    /// Checked matrix-vector product.
    pub fn matvec(&self, v: &[T]) -> Result<Vector<T>> {
        if self.cols != v.len() {
            return Err(Error::shape(
                "matvec",
                format!("vector of dim {}", self.cols),
                format!("dim {}", v.len()),
            ));
        }
        let mut out = vec![T::zero(); self.rows];
        gemv_acc(self, v, &mut out);
        Ok(Vector(out))
    }
}

/// `matvec(m, v)` as a free function.
pub fn matvec<T: Scalar>(m: &Matrix<T>, v: &Vector<T>) -> Result<Vector<T>> {
    m.matvec(v)
}

/// `y += M x`. Shapes are the caller's responsibility.
#[inline]
pub fn gemv_acc<T: Scalar>(m: &Matrix<T>, x: &[T], y: &mut [T]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, y.len());
    for (yi, row) in y.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *yi = *yi + dot(row, x);
    }
}

/// `y += Mᵀ v`.
#[inline]
pub fn gemv_t_acc<T: Scalar>(m: &Matrix<T>, v: &[T], y: &mut [T]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, y.len());
    for (&vi, row) in v.iter().zip(m.data.chunks_exact(m.cols.max(1))) {
        if vi != T::zero() {
            axpy(vi, row, y);
        }
    }
}

/// `M += a bᵀ`.
#[inline]
pub fn outer_acc<T: Scalar>(m: &mut Matrix<T>, a: &[T], b: &[T]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    let cols = m.cols.max(1);
    for (&ai, row) in a.iter().zip(m.data.chunks_exact_mut(cols)) {
        if ai != T::zero() {
            axpy(ai, b, row);
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha x`.
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Numerically stable softmax: subtracts the maximum before exponentiating.
pub fn softmax_stable<T: Scalar>(v: &[T]) -> Result<Vector<T>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax_stable"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(Vector(out))
}

/// In-place variant of [`softmax_stable`]; `v` must be non-empty.
pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in v.iter_mut() {
        *x = *x / total;
    }
}

pub fn relu<T: Scalar>(v: &[T]) -> Vector<T> {
    Vector(v.iter().map(|&x| relu_scalar(x)).collect())
}

/// Elementwise derivative of ReLU; the derivative at exactly zero is zero.
pub fn relu_grad<T: Scalar>(v: &[T]) -> Vector<T> {
    Vector(
        v.iter()
            .map(|&x| if x > T::zero() { T::one() } else { T::zero() })
            .collect(),
    )
}

#[inline]
pub(crate) fn relu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Uniform draws in `[-s, s]` with `s = scale * sqrt(1 / cols)`.
pub fn seeded_init<T: Scalar>(rows: usize, cols: usize, seed: u64, scale: f64) -> Result<Matrix<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "seeded_init needs nonzero shape, got {rows}x{cols}"
        )));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "seeded_init scale must be positive, got {scale}"
        )));
    }
    let bound = scale * (1.0 / cols as f64).sqrt();
    let mut rng = rng_from_seed(seed);
    let data = (0..rows * cols)
        .map(|_| lit(rng.gen_range(-bound..=bound)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}
