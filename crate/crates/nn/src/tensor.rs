use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major array. Data length always equals the product of the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape("Tensor::from_vec", &[len], &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::lit(x)).collect())
    }

    /// Row vector of shape `[1, n]`.
    pub fn row_vector(data: &[f64]) -> Self {
        Self::from_f64(&[1, data.len()], data).expect("length matches")
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows of a 2-D tensor (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor (product of the trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Column-concatenate 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[&Tensor<T>]) -> Tensor<T> {
        let rows = parts[0].rows();
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                debug_assert_eq!(p.rows(), rows);
                out.extend_from_slice(p.row(r));
            }
        }
        Tensor {
            shape: vec![rows, total],
            data: out,
        }
    }

    /// Split the columns of a 2-D tensor into consecutive blocks of the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Vec<Tensor<T>> {
        debug_assert_eq!(widths.iter().sum::<usize>(), self.cols());
        let rows = self.rows();
        let mut outs: Vec<Tensor<T>> = widths.iter().map(|&w| Tensor::zeros(&[rows, w])).collect();
        for r in 0..rows {
            let src = self.row(r);
            let mut off = 0;
            for (o, &w) in outs.iter_mut().zip(widths) {
                o.row_mut(r).copy_from_slice(&src[off..off + w]);
                off += w;
            }
        }
        outs
    }
}

/// `out = op(a) · op(b)` (or `out += ...` when `accumulate`), where `a` and
/// `b` are row-major matrices with the given `[rows, cols]` and `op` is an
/// optional transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    a: &[T],
    a_shape: [usize; 2],
    trans_a: bool,
    b: &[T],
    b_shape: [usize; 2],
    trans_b: bool,
    out: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), a_shape[0] * a_shape[1], "gemm: a length");
    assert_eq!(b.len(), b_shape[0] * b_shape[1], "gemm: b length");
    let (m, k, rsa, csa) = if trans_a {
        (a_shape[1], a_shape[0], 1isize, a_shape[1] as isize)
    } else {
        (a_shape[0], a_shape[1], a_shape[1] as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b_shape[1], b_shape[0], 1isize, b_shape[1] as isize)
    } else {
        (b_shape[0], b_shape[1], b_shape[1] as isize, 1isize)
    };
    assert_eq!(k, kb, "gemm: inner dimensions");
    assert_eq!(out.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|x| *x = T::zero());
        }
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths were checked above against the row-major layouts that
    // the strides describe.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
