//! Dense row-major tensors.
//!
//! A [`Tensor`] is an immutable value: a shape and a flat row-major buffer.
//! Every constructor checks that the buffer length matches the shape and
//! that all elements are finite, so downstream code never sees NaN or Inf.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Code stored in the tensor file header.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Element width a tensor can be instantiated with.
pub trait Element: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` holds exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_finite<T: Element>(op: &'static str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        Self::checked("Tensor::new", shape.into(), data)
    }

    fn checked(op: &'static str, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ElementCount {
                op,
                shape,
                len: data.len(),
            });
        }
        check_finite(op, &data)?;
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    /// Rank-0 tensor holding one element.
    pub fn scalar(v: T) -> Result<Self> {
        Self::new(Vec::new(), vec![v])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a matrix from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::checked("Tensor::from_fn", vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::from_rows", &[cols], &[bad.len()]));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape("dims2", &self.shape, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.data.len()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor { shape, data: self.data })
    }

    /// Standard matrix product. Each output element sums over the inner
    /// dimension strictly left to right, so results are reproducible and a
    /// single-row product matches the corresponding row of a batched one.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &rhs.shape));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data, m, k, &rhs.data, n, &mut out);
        Self::checked("matmul", vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        Self::checked("map", self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, rhs: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != rhs.shape {
            return Err(Error::shape(op, &self.shape, &rhs.shape));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Self::checked(op, self.shape.clone(), data)
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Result<Tensor<T>> {
        self.map(|v| v * s)
    }

    /// Adds `bias` to every row of a matrix.
    pub fn add_row(&self, bias: &[T]) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if bias.len() != c {
            return Err(Error::shape("add_row", &self.shape, &[bias.len()]));
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(c.max(1)).take(r) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
        Self::checked("add_row", self.shape.clone(), data)
    }

    /// Concatenates two matrices with equal row counts along columns.
    pub fn concat_cols(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (r1, c1) = self.dims2()?;
        let (r2, c2) = rhs.dims2()?;
        if r1 != r2 {
            return Err(Error::shape("concat_cols", &self.shape, &rhs.shape));
        }
        let mut data = Vec::with_capacity(r1 * (c1 + c2));
        for i in 0..r1 {
            data.extend_from_slice(&self.data[i * c1..(i + 1) * c1]);
            data.extend_from_slice(&rhs.data[i * c2..(i + 1) * c2]);
        }
        Ok(Tensor {
            shape: vec![r1, c1 + c2],
            data,
        })
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if start > end || end > c {
            return Err(Error::shape("slice_cols", &self.shape, &[start, end]));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(Tensor {
            shape: vec![r, end - start],
            data,
        })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if start > end || end > r {
            return Err(Error::shape("slice_rows", &self.shape, &[start, end]));
        }
        Ok(Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        })
    }

    pub fn concat_rows(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (r1, c1) = self.dims2()?;
        let (r2, c2) = rhs.dims2()?;
        if c1 != c2 {
            return Err(Error::shape("concat_rows", &self.shape, &rhs.shape));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&rhs.data);
        Ok(Tensor {
            shape: vec![r1 + r2, c1],
            data,
        })
    }

    /// Row `i` of the result is row `index[i]` of `self`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(index.len() * c);
        for &src in index {
            if src >= r {
                return Err(Error::shape("gather_rows", &self.shape, &[src]));
            }
            data.extend_from_slice(&self.data[src * c..(src + 1) * c]);
        }
        Ok(Tensor {
            shape: vec![index.len(), c],
            data,
        })
    }

    /// Cast to another element width.
    pub fn cast<U: Element>(&self) -> Result<Tensor<U>> {
        Tensor::<U>::checked(
            "cast",
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn max_abs_diff(&self, rhs: &Tensor<T>) -> Result<T> {
        if self.shape != rhs.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &rhs.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, accumulating over k in order for every
/// output element.
pub(crate) fn matmul_into<T: Element>(a: &[T], m: usize, k: usize, b: &[T], n: usize, out: &mut [T]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}
