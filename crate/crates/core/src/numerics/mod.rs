//! Fixed-shape dense array arithmetic, generic over the scalar type.
//!
//! Everything downstream (matcher, attack, retrieval) uses the `f64`
//! instantiation exported at the crate root; the operations themselves only
//! require [`Scalar`], so `f32` works too. Values are validated to stay
//! finite: constructors reject NaN/Inf and the few operations that can
//! manufacture non-finite values from finite inputs check their output.

mod gradcheck;

pub use gradcheck::{finite_diff_grad, grad_check, GradCheckReport};

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar usable by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for constants like `255` or tolerances.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating length and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor construction",
                format!("{numel} elements for shape {shape:?}"),
                format!("{}", data.len()),
            ));
        }
        let t = Tensor { shape, data };
        t.ensure_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..numel).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, row: usize, col: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// Element of a rank-3 tensor (images use `[H, W, C]`).
    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub(crate) fn set3(&mut self, i: usize, j: usize, k: usize, v: T) {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Applies `f` element-wise; the result is checked for finiteness.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, factor: T) -> Result<Self> {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    fn zip_with(&self, context: &'static str, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                context,
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Tensor::from_vec(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Sum of squared differences to `other`, accumulated left to right.
    pub fn squared_distance(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "squared_distance",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            let d = a - b;
            acc = acc + d * d;
        }
        Ok(acc)
    }

    fn ensure_finite(&self, context: &'static str) -> Result<()> {
        for &v in &self.data {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("{context}: non-finite value {v}")));
            }
        }
        Ok(())
    }
}

/// Matrix product of rank-2 tensors; accumulation order over `k` is fixed
/// ascending for bit reproducibility.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(
            "matmul",
            "two rank-2 tensors",
            format!("ranks {} and {}", a.rank(), b.rank()),
        ));
    }
    let (m, ka) = (a.shape[0], a.shape[1]);
    let (kb, n) = (b.shape[0], b.shape[1]);
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner dims equal ({ka})"),
            format!("{kb}"),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkn) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + aik * bkn;
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// Dot product of rank-1 tensors of equal length.
pub fn dot<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Result<T> {
    if u.rank() != 1 || v.rank() != 1 || u.numel() != v.numel() {
        return Err(Error::shape(
            "dot",
            "two rank-1 tensors of equal length",
            format!("{:?} and {:?}", u.shape, v.shape),
        ));
    }
    let mut acc = T::zero();
    for (&a, &b) in u.data.iter().zip(v.data.iter()) {
        acc = acc + a * b;
    }
    Ok(acc)
}

/// Euclidean norm of a rank-1 tensor.
pub fn norm<T: Scalar>(v: &Tensor<T>) -> T {
    let mut acc = T::zero();
    for &x in &v.data {
        acc = acc + x * x;
    }
    acc.sqrt()
}

/// Rescales a rank-1 tensor to unit norm; the zero vector is rejected.
pub fn l2_normalize<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    if v.rank() != 1 {
        return Err(Error::shape("l2_normalize", "rank-1 tensor", format!("{:?}", v.shape)));
    }
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::Numeric(format!("l2_normalize: non-finite norm {n}")));
    }
    if n < T::min_positive_value() {
        return Err(Error::DegenerateInput("l2_normalize of a zero vector"));
    }
    v.scale(n.recip())
}

/// Cosine similarity of two nonzero rank-1 tensors, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Result<T> {
    let nu = norm(u);
    let nv = norm(v);
    if nu < T::min_positive_value() || nv < T::min_positive_value() {
        return Err(Error::DegenerateInput("cosine of a zero vector"));
    }
    let c = dot(u, v)? / (nu * nv);
    if !c.is_finite() {
        return Err(Error::Numeric(format!("cosine: non-finite value {c}")));
    }
    Ok(c.max(-T::one()).min(T::one()))
}
