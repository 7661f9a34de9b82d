//! Dense row-major arrays of rank 0, 1 or 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// Builds an `rows × cols` matrix; panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { shape: vec![rows.len(), cols], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count when viewed as a matrix (vectors and scalars are one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!("expected {:?}, got {:?}", shape, self.shape)));
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, d| if d > m || d.is_nan() { d } else { m })
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { shape: vec![idx.len(), c], data }
    }

    /// Copies column `col` into a vector.
    pub fn column(&self, col: usize) -> Vec<T> {
        (0..self.rows()).map(|r| self.at(r, col)).collect()
    }

    /// Matrix transpose of a rank-2 array.
    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data }
    }

    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// `a · b` for `a: n×k`, `b: k×m`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a: n×m`, `b: k×m`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `aᵀ · b` for `a: n×k`, `b: n×m`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * m];
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Array::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let a = Array::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((a.rows(), a.cols()), (2, 3));
        assert_eq!(Array::scalar(1.0f64).len(), 1);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
        let bt = Array::<f64>::matrix(3, 2, b.to_vec()).unwrap().transpose();
        assert_eq!(matmul_nt(&a, bt.data(), 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
        let at = Array::<f64>::matrix(2, 3, a.to_vec()).unwrap().transpose();
        assert_eq!(matmul_tn(at.data(), &b, 3, 2, 2), vec![4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn select_rows_and_columns() {
        let a = Array::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let s = a.select_rows(&[2, 0]);
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(a.column(1), vec![2.0, 4.0, 6.0]);
    }
}
