//! Dense row-major tensors over `f64` and the matrix products every layer is
//! built from.
//!
//! Tensors are mostly used as 2-d matrices with one column per sample; higher
//! rank shapes only appear as flattened parameter blocks. All arithmetic is
//! 64-bit and single-threaded, so results are bit-reproducible.

use crate::error::{Error, Result};
use rand_core::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape accounts for every value.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    /// Uniform i.i.d. entries in `[lo, hi)`.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| crate::rng::uniform(rng, lo, hi)).collect();
        Self {
            shape: shape.to_vec(),
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

    /// Row count of a 2-d tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Column count of a 2-d tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dim(format!(
                "cannot reshape {} values into {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Componentwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for x in &mut self.data {
            *x *= alpha;
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Self, alpha: f64) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (x, &y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += alpha * y;
        }
        Ok(())
    }

    /// Inner product of the flattened values.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Euclidean (Frobenius) norm of the flattened values.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// 2-d transpose.
    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Appends an all-ones row; turns activations `a` into `[a; 1]` so the
    /// bias column of an augmented parameter matrix acts like a weight.
    pub fn with_ones_row(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity((r + 1) * c);
        data.extend_from_slice(&self.data);
        data.extend(std::iter::repeat(1.0).take(c));
        Self {
            shape: vec![r + 1, c],
            data,
        }
    }

    /// Copy of columns `0..keep` of a 2-d tensor.
    pub fn left_columns(&self, keep: usize) -> Self {
        let (r, c) = (self.rows(), self.cols());
        debug_assert!(keep <= c);
        let mut out = Self::zeros(&[r, keep]);
        for i in 0..r {
            out.data[i * keep..(i + 1) * keep]
                .copy_from_slice(&self.data[i * c..i * c + keep]);
        }
        out
    }

    /// Gathers columns by index into a new matrix.
    pub fn gather_columns(&self, idx: &[usize]) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let b = idx.len();
        let mut out = Self::zeros(&[r, b]);
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let dst = &mut out.data[i * b..(i + 1) * b];
            for (jj, &j) in idx.iter().enumerate() {
                dst[jj] = row[j];
            }
        }
        out
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Tensor {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.shape[1] + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Tensor {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.shape[1] + j]
    }
}

fn mat_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dim(format!("{what}: expected a matrix, got {s:?}"))),
    }
}

/// `C = A * B`.
pub fn gemm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = mat_dims(a, "gemm lhs")?;
    let (kb, n) = mat_dims(b, "gemm rhs")?;
    if ka != kb {
        return Err(Error::Dim(format!(
            "gemm: inner dimensions {ka} and {kb} differ"
        )));
    }
    let mut c = Tensor::zeros(&[m, n]);
    if m == 0 || n == 0 || ka == 0 {
        return Ok(c);
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            1.0,
            a.data().as_ptr(),
            ka as isize,
            1,
            b.data().as_ptr(),
            n as isize,
            1,
            0.0,
            c.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}

/// `C = A * B^T` without materializing the transpose.
pub fn gemm_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = mat_dims(a, "gemm_nt lhs")?;
    let (n, kb) = mat_dims(b, "gemm_nt rhs")?;
    if ka != kb {
        return Err(Error::Dim(format!(
            "gemm_nt: inner dimensions {ka} and {kb} differ"
        )));
    }
    let mut c = Tensor::zeros(&[m, n]);
    if m == 0 || n == 0 || ka == 0 {
        return Ok(c);
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            1.0,
            a.data().as_ptr(),
            ka as isize,
            1,
            b.data().as_ptr(),
            1,
            kb as isize,
            0.0,
            c.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}

/// `C = A^T * B` without materializing the transpose.
pub fn gemm_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ka, m) = mat_dims(a, "gemm_tn lhs")?;
    let (kb, n) = mat_dims(b, "gemm_tn rhs")?;
    if ka != kb {
        return Err(Error::Dim(format!(
            "gemm_tn: inner dimensions {ka} and {kb} differ"
        )));
    }
    let mut c = Tensor::zeros(&[m, n]);
    if m == 0 || n == 0 || ka == 0 {
        return Ok(c);
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            1.0,
            a.data().as_ptr(),
            1,
            m as isize,
            b.data().as_ptr(),
            n as isize,
            1,
            0.0,
            c.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}
