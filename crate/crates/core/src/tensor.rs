//! Dense row-major tensors and the handful of kernels the retention operators need.
//!
//! `f64` is the element type for every correctness path; `f32` exists so the
//! benchmark harness can measure the cheaper element type.

use std::fmt;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::accounting;
use crate::rng::{check_range, Rng};
use crate::{Error, Result};

pub const DEFAULT_LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

pub trait Element: Float + Default + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn put_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

/// Dense row-major array. Creation and drop are reported to [`accounting`].
pub struct Tensor<T: Element = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_extents(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("from_vec", &shape, &[data.len()]));
        }
        accounting::register(data.len());
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        accounting::register(len);
        Self {
            shape,
            data: vec![value; len],
        }
    }

    /// Like [`Tensor::zeros`] but reports allocation failure instead of aborting.
    pub fn try_zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::OutOfMemory { elements: usize::MAX })?;
        let mut data = Vec::new();
        data.try_reserve_exact(len)
            .map_err(|_| Error::OutOfMemory { elements: len })?;
        data.resize(len, T::zero());
        accounting::register(len);
        Ok(Self { shape, data })
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a 2D tensor from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        accounting::register(data.len());
        Self {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn into_data(mut self) -> Vec<T> {
        accounting::release(self.data.len());
        std::mem::take(&mut self.data)
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, &self.shape, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            self.data.len()
        } else {
            self.data.len() / self.shape[0]
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_extents(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = Self::zeros([c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Copy of rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2("slice_rows")?;
        if start > end || end > r {
            return Err(Error::shape("slice_rows", &self.shape, &[start, end]));
        }
        Self::from_vec([end - start, c], self.data[start * c..end * c].to_vec())
    }

    /// Copy of columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2("slice_cols")?;
        if start > end || end > c {
            return Err(Error::shape("slice_cols", &self.shape, &[start, end]));
        }
        let w = end - start;
        let mut out = Self::zeros([r, w]);
        for i in 0..r {
            out.data[i * w..(i + 1) * w].copy_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data: Vec<T> = self.data.iter().map(|&x| f(x)).collect();
        accounting::register(data.len());
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data: Vec<U> = self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect();
        accounting::register(data.len());
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Largest absolute elementwise difference, computed in f64.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Parameter(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        accounting::register(self.data.len());
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
        }
    }
}

impl<T: Element> Drop for Tensor<T> {
    fn drop(&mut self) {
        accounting::release(self.data.len());
    }
}

impl<T: Element> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..self.data.len().min(PREVIEW)])
            .finish()
    }
}

/// `c = a·b` for rank-2 operands. Each output element accumulates over the
/// inner index in increasing order, so results are bit-identical to a naive
/// triple loop.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut c = Tensor::try_zeros([m, n])?;
    matmul_into(&a.data, &b.data, &mut c.data, m, k, n);
    Ok(c)
}

/// Row-major `c[m×n] = a[m×k]·b[k×n]`, overwriting `c`.
pub fn matmul_into<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        c_row.fill(T::zero());
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(a_ip, &b[p * n..(p + 1) * n], c_row);
        }
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn hadamard<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    hadamard_assign(&mut out, b)?;
    Ok(out)
}

/// `a ⊙= b`
pub fn hadamard_assign<T: Element>(a: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape("hadamard", &a.shape, &b.shape));
    }
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x = *x * y;
    }
    Ok(())
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    add_assign(&mut out, b)?;
    Ok(out)
}

pub fn add_assign<T: Element>(a: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape("add", &a.shape, &b.shape));
    }
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x = *x + y;
    }
    Ok(())
}

/// Adds a length-`cols` vector to every row.
pub fn add_row_bias<T: Element>(a: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let cols = a.cols();
    if bias.len() != cols {
        return Err(Error::shape("add_row_bias", &a.shape, &bias.shape));
    }
    for row in a.data.chunks_exact_mut(cols) {
        for (x, &b) in row.iter_mut().zip(&bias.data) {
            *x = *x + b;
        }
    }
    Ok(())
}

/// Row-wise LayerNorm with biased variance.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape("layer_norm", &x.shape, &gain.shape));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut out = x.clone();
    for row in out.data.chunks_exact_mut(d) {
        layer_norm_row(row, &gain.data, &bias.data, T::from_f64(eps));
    }
    Ok(out)
}

/// In-place LayerNorm of one row.
pub fn layer_norm_row<T: Element>(row: &mut [T], gain: &[T], bias: &[T], eps: T) {
    let n = T::from_f64(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = (var + eps).sqrt().recip();
    for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
        *v = (*v - mean) * inv * g + b;
    }
}

/// Exact GELU, `x·Φ(x)` with Φ from `erf`.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

#[inline]
pub fn gelu_scalar<T: Element>(x: T) -> T {
    let v = x.to_f64();
    T::from_f64(0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)))
}

/// Row-major fill from the rng stream, one draw per element.
pub fn fill_uniform<T: Element>(rng: &mut Rng, shape: impl Into<Vec<usize>>, lo: f64, hi: f64) -> Result<Tensor<T>> {
    check_range(lo, hi)?;
    let shape = shape.into();
    check_extents(&shape)?;
    let len: usize = shape.iter().product();
    let (tlo, thi) = (T::from_f64(lo), T::from_f64(hi));
    let data = (0..len)
        .map(|_| {
            let v = T::from_f64(rng.uniform_unchecked(lo, hi));
            // narrowing to f32 can round onto either bound
            if v >= thi {
                largest_below(thi).max(tlo)
            } else if v < tlo {
                tlo
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn largest_below<T: Element>(x: T) -> T {
    match T::DTYPE {
        DType::F64 => T::from_f64(x.to_f64().next_down()),
        DType::F32 => T::from_f64((x.to_f64() as f32).next_down() as f64),
    }
}
