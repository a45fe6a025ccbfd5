//! Dense row-major matrices, the only tensor shape the reference model needs.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::num::{real, Real};

/// Row-major matrix of scalars. Vectors are (n, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    /// Gaussian init with the given standard deviation (Box–Muller over the
    /// seeded stream, so layouts are reproducible across runs).
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut ChaCha12Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                real::<F>(g * std)
            })
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = self · x for a column vector x of length `cols`.
    pub fn matvec(&self, x: &[F], y: &mut [F]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let row = self.row(r);
            *out = row.iter().zip(x).map(|(&w, &v)| w * v).sum();
        }
    }

    /// x += selfᵀ · dy, the input gradient of `matvec`.
    pub fn matvec_backward_input(&self, dy: &[F], dx: &mut [F]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(dx.len(), self.cols);
        for (r, &d) in dy.iter().enumerate() {
            let row = self.row(r);
            for (xi, &w) in dx.iter_mut().zip(row) {
                *xi += d * w;
            }
        }
    }

    /// SHA-256 of the shape and the exact bit pattern of every element.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.rows.to_le_bytes());
        hasher.update(self.cols.to_le_bytes());
        for &v in &self.data {
            hasher.update(v.to_f64().to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// dW += dy ⊗ x, the weight gradient of `matvec`.
pub fn accumulate_outer<F: Real>(dw: &mut Tensor<F>, dy: &[F], x: &[F]) {
    debug_assert_eq!(dy.len(), dw.rows);
    debug_assert_eq!(x.len(), dw.cols);
    for (r, &d) in dy.iter().enumerate() {
        let row = dw.row_mut(r);
        for (wi, &v) in row.iter_mut().zip(x) {
            *wi += d * v;
        }
    }
}
