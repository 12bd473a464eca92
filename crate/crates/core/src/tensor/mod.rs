//! Dense 64-bit float tensors and the reverse-mode differentiation tape.
//!
//! Everything the reasoning network computes is built from the primitive
//! ops recorded on a [`Tape`]; `tape.backward(loss)` then yields gradients
//! for every reachable leaf. 64-bit floats keep finite-difference checks
//! tight, and a fresh tape per forward pass lets the op sequence follow
//! the subgraph at hand.

mod checkpoint;
mod store;
mod tape;

pub use store::{AdamConfig, ParamInit, ParamSpec, Parameter, ParameterStore};
pub use tape::{BoundParams, Gradients, Tape, Var};

/// A dense row-major tensor of `f64` values. Rank 1 and 2 cover the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len() != product(shape)`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows of a rank-2 tensor (or the length of a vector).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[1],
            r => panic!("cols: expected rank 1 or 2, got rank {r}"),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item: tensor has {} elements", self.numel());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

// ── Raw kernels shared by forward and backward passes ────────────────

/// C[m,n] = A[m,k] @ B[k,n]
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
    c
}

/// C[m,k] = A[m,n] @ B[k,n]^T
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += a_row[j] * b_row[j];
            }
            c[i * k + p] = s;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T @ B[m,n]
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
    c
}

/// Numerically stable softmax over each row of an `[rows, cols]` block.
pub(crate) fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (oj, &xj) in o.iter_mut().zip(row) {
            let e = (xj - max).exp();
            *oj = e;
            sum += e;
        }
        for oj in o.iter_mut() {
            *oj /= sum;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_enforced() {
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    #[should_panic(expected = "implies 6 elements")]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::new(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    fn matmul_kernels_agree() {
        // A: 2x3, B: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul_nn(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        // A @ B == A @ (B^T)^T via matmul_nt
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // 2x3
        let c2 = matmul_nt(&a, &bt, 2, 3, 2);
        assert_eq!(c, c2);

        // (A^T)^T @ B via matmul_tn
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2
        let c3 = matmul_tn(&at, &b, 3, 2, 2);
        assert_eq!(c, c3);
    }

    #[test]
    fn softmax_row_is_stable() {
        let out = softmax_rows(&[1000.0, 1000.0, 1001.0], 1, 3);
        assert!(out.iter().all(|p| p.is_finite() && *p >= 0.0));
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
