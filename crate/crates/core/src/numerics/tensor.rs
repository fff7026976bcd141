use crate::error::{Error, Result};
use crate::exec;

/// Row-major 2-D array of `f64`. Vectors are `1 × d`, batches are `n × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot form a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    /// Stacks equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Scalar value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut t = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

/// `c[rows × n] += a[rows × k] · b[k × n]`, where `c` is a contiguous
/// row-major block and `a`, `b` are strided.
fn gemm_block(rows: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, c: &mut [f64]) {
    if rows == 0 || n == 0 {
        return;
    }
    debug_assert_eq!(c.len(), rows * n);
    if k == 0 {
        return;
    }
    // Safety: the views were built by the callers below from tensors whose
    // shapes were checked, so every (i, p) / (p, j) offset is inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x · wᵀ`: each output row is `w` applied to the matching row of `x`.
pub fn matmul_nt(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.cols != w.cols {
        return Err(Error::Shape(format!(
            "cannot apply a {}x{} matrix to rows of length {}",
            w.rows, w.cols, x.cols
        )));
    }
    let (n, k, m) = (x.rows, x.cols, w.rows);
    let mut out = Tensor::zeros(n, m);
    exec::for_each_row_block(&mut out.data, m, |first, block| {
        let rows = block.len() / m;
        let a = View {
            data: &x.data[first * k..],
            rs: k as isize,
            cs: 1,
        };
        let b = View {
            data: &w.data,
            rs: 1,
            cs: k as isize,
        };
        gemm_block(rows, k, m, a, b, block);
    });
    Ok(out)
}

/// `a · b` for plain row-major operands.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, m);
    exec::for_each_row_block(&mut out.data, m, |first, block| {
        let rows = block.len() / m;
        let av = View {
            data: &a.data[first * k..],
            rs: k as isize,
            cs: 1,
        };
        let bv = View {
            data: &b.data,
            rs: m as isize,
            cs: 1,
        };
        gemm_block(rows, k, m, av, bv, block);
    });
    Ok(out)
}

/// `aᵀ · b` where `a` is `n × m` and `b` is `n × k`; result is `m × k`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows != b.rows {
        return Err(Error::Shape(format!(
            "cannot contract {}x{} with {}x{} over rows",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, m, k) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(m, k);
    exec::for_each_row_block(&mut out.data, k, |first, block| {
        let rows = block.len() / k;
        let av = View {
            data: &a.data[first..],
            rs: 1,
            cs: m as isize,
        };
        let bv = View {
            data: &b.data,
            rs: k as isize,
            cs: 1,
        };
        gemm_block(rows, n, k, av, bv, block);
    });
    Ok(out)
}
