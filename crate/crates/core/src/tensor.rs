//! Dense row-major tensors of 64-bit reals.
//!
//! Only what the supported layer and loss set needs: elementwise maps,
//! matrix products with optional transposes, and row/column reductions on
//! rank-2 data. Scalars have an empty shape.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Network parameters in list format, one tensor per weight or bias.
pub type ParamList = Vec<Tensor>;

impl Tensor {
    /// Builds a tensor from user data, rejecting shape mismatches and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(
                "tensor shape",
                "positive extents",
                format!("{shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor data", numel, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by arithmetic on valid tensors.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; numel])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Columns of a rank-2 tensor (length for vectors).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim("reshape", self.data.len(), numel));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_parts(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `[n, m] -> [m]`, summing over rows.
    pub fn sum_rows(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, x) in out.iter_mut().zip(&self.data[i * m..(i + 1) * m]) {
                *o += x;
            }
        }
        Self::vector(out)
    }

    /// `[n, m] -> [n]`, summing within each row.
    pub fn row_sums(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        Self::vector(
            (0..n)
                .map(|i| self.data[i * m..(i + 1) * m].iter().sum())
                .collect(),
        )
    }

    /// `[m] -> [n, m]`, repeating the vector as every row.
    pub fn broadcast_rows(&self, n: usize) -> Self {
        let m = self.len();
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Self::from_parts(vec![n, m], data)
    }

    /// `[n] -> [n, m]`, repeating entry `i` across row `i`.
    pub fn broadcast_cols(&self, m: usize) -> Self {
        let n = self.len();
        let mut data = Vec::with_capacity(n * m);
        for &x in &self.data {
            data.extend(std::iter::repeat_n(x, m));
        }
        Self::from_parts(vec![n, m], data)
    }

    /// `[n, m] + [m]` with the vector added to every row.
    pub fn add_row_vector(&self, b: &Tensor) -> Self {
        let m = self.cols();
        assert_eq!(b.len(), m, "bias length mismatch");
        let mut out = self.data.clone();
        for row in out.chunks_mut(m) {
            for (o, x) in row.iter_mut().zip(&b.data) {
                *o += x;
            }
        }
        Self::from_parts(self.shape.clone(), out)
    }

    pub fn transpose(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Self::from_parts(vec![m, n], out)
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&self) -> Self {
        let m = self.cols();
        let mut out = self.data.clone();
        for row in out.chunks_mut(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        Self::from_parts(self.shape.clone(), out)
    }

    /// Row-wise log-sum-exp, `[n, m] -> [n]`.
    pub fn logsumexp_rows(&self) -> Self {
        let m = self.cols();
        let out = self
            .data
            .chunks(m)
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
            })
            .collect();
        Self::vector(out)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Self {
        let (ar, ac) = (a.rows(), a.cols());
        let (br, bc) = (b.rows(), b.cols());
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let (ad, bd) = (&a.data, &b.data);
        let mut out = vec![0.0; m * n];
        match (ta, tb) {
            (false, false) => {
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * ac + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, x) in orow.iter_mut().zip(&bd[p * bc..(p + 1) * bc]) {
                            *o += aip * x;
                        }
                    }
                }
            }
            (false, true) => {
                for i in 0..m {
                    let arow = &ad[i * ac..(i + 1) * ac];
                    for j in 0..n {
                        let brow = &bd[j * bc..(j + 1) * bc];
                        out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
            }
            (true, false) => {
                for p in 0..k {
                    let arow = &ad[p * ac..(p + 1) * ac];
                    let brow = &bd[p * bc..(p + 1) * bc];
                    for i in 0..m {
                        let api = arow[i];
                        if api == 0.0 {
                            continue;
                        }
                        for (o, x) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                            *o += api * x;
                        }
                    }
                }
            }
            (true, true) => {
                for i in 0..m {
                    for j in 0..n {
                        let mut s = 0.0;
                        for p in 0..k {
                            s += ad[p * ac + i] * bd[j * bc + p];
                        }
                        out[i * n + j] = s;
                    }
                }
            }
        }
        Self::from_parts(vec![m, n], out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Flattened length of a parameter list.
pub fn numel(params: &[Tensor]) -> usize {
    params.iter().map(Tensor::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let a = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = m(3, 2, &[7., 8., 9., 10., 11., 12.]);
        let ab = Tensor::matmul(&a, &b, false, false);
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);
        let at = a.transpose();
        let bt = b.transpose();
        assert_eq!(Tensor::matmul(&at, &b, true, false), ab);
        assert_eq!(Tensor::matmul(&a, &bt, false, true), ab);
        assert_eq!(Tensor::matmul(&at, &bt, true, true), ab);
    }

    #[test]
    fn reductions_and_broadcasts() {
        let a = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(a.sum_rows().data(), &[5., 7., 9.]);
        assert_eq!(a.row_sums().data(), &[6., 15.]);
        assert_eq!(
            Tensor::vector(vec![1., 2.]).broadcast_cols(2).data(),
            &[1., 1., 2., 2.]
        );
        assert_eq!(
            Tensor::vector(vec![1., 2.]).broadcast_rows(2).data(),
            &[1., 2., 1., 2.]
        );
    }

    #[test]
    fn softmax_is_stable() {
        let a = m(1, 2, &[1000., 1000.]);
        assert_eq!(a.softmax_rows().data(), &[0.5, 0.5]);
        assert!((a.logsumexp_rows().data()[0] - (1000. + 2f64.ln())).abs() < 1e-12);
    }
}
