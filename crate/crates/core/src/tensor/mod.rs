//! Dense row-major matrices and the handful of kernels the model needs.
//!
//! Shape mismatches are contract violations and panic with both shapes.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;

use std::fmt::{self, Debug};
use std::iter::Sum;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamError, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader, TensorEntry, MAGIC,
    VERSION,
};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use tape::{Grads, Tape, Var};

/// Runs `f` with subnormal floats flushed to zero (x86-64 only; elsewhere a
/// plain call). Late in training, softmax tails and gradients underflow into
/// the subnormal range, where x86 arithmetic is many times slower.
pub fn with_flush_to_zero<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    #[allow(deprecated)]
    {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        const FTZ_DAZ: u32 = 0x8040;
        struct Restore(u32);
        impl Drop for Restore {
            fn drop(&mut self) {
                // SAFETY: restores the control word read below.
                unsafe { _mm_setcsr(self.0) }
            }
        }
        // SAFETY: only the flush-to-zero and denormals-are-zero bits change.
        let _restore = unsafe {
            let old = _mm_getcsr();
            _mm_setcsr(old | FTZ_DAZ);
            Restore(old)
        };
        f()
    }
    #[cfg(not(target_arch = "x86_64"))]
    f()
}

/// A fixed, ordered collection of named tensors (model parameters or their gradients).
pub trait ParamSet<T> {
    fn tensors(&self) -> Vec<(String, &Matrix<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)>;
}

/// Scalar types the kernels run on: `f32` for training, `f64` for checks.
pub trait Scalar: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix<T>", bound(deserialize = "T: Deserialize<'de>"))]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[derive(Deserialize)]
struct RawMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> TryFrom<RawMatrix<T>> for Matrix<T> {
    type Error = String;

    fn try_from(raw: RawMatrix<T>) -> Result<Self, String> {
        if raw.rows * raw.cols != raw.data.len() {
            return Err(format!("{}x{} matrix with {} entries", raw.rows, raw.cols, raw.data.len()));
        }
        Ok(Matrix { rows: raw.rows, cols: raw.cols, data: raw.data })
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length vs {rows}x{cols}");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Matrix { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Matrix { rows, cols, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(Scalar::to_f64(*v))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn scale_in_place(&mut self, c: T) {
        for v in &mut self.data {
            *v = *v * c;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        matmul(self, other)
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols.max(1)) {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

/// `A · B`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(
        a.cols, b.rows,
        "matmul: {}x{} times {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o = *o + aik * bkj;
            }
        }
    }
    out
}

/// `A · Bᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(
        a.cols, b.cols,
        "matmul_nt: {}x{} times transpose of {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ai.iter().zip(b.row(j)).map(|(x, y)| *x * *y).sum();
        }
    }
    out
}

/// `Aᵀ · B`.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(
        a.rows, b.rows,
        "matmul_tn: transpose of {}x{} times {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Matrix::zeros(a.cols, b.cols);
    let n = b.cols;
    for k in 0..a.rows {
        let bk = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(bk) {
                *o = *o + aki * bkj;
            }
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(s: &Matrix<T>) -> Matrix<T> {
    let mut out = s.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Backward of row softmax: `dS = P ⊙ (dP − rowdot(dP, P))`.
pub fn softmax_rows_backward<T: Scalar>(p: &Matrix<T>, dp: &Matrix<T>) -> Matrix<T> {
    assert_eq!(p.shape(), dp.shape(), "softmax backward: shape mismatch");
    let mut ds = Matrix::zeros(p.rows, p.cols);
    for i in 0..p.rows {
        let (pr, dpr) = (p.row(i), dp.row(i));
        let dot: T = pr.iter().zip(dpr).map(|(a, b)| *a * *b).sum();
        for ((d, &pv), &dv) in ds.row_mut(i).iter_mut().zip(pr).zip(dpr) {
            *d = pv * (dv - dot);
        }
    }
    ds
}

/// Cross-entropy of `logits` against class `target`, with its gradient
/// `softmax(logits) − one_hot(target)`.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    assert!(target < logits.len(), "cross_entropy: target {target} of {} classes", logits.len());
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let max = logits.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let log_z = max + logits.iter().map(|v| (*v - max).exp()).sum::<T>().ln();
    let loss = log_z - logits[target];
    let mut grad = probs;
    grad[target] = grad[target] - T::one();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_product(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    fn max_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::<f64>::random_normal(3, 4, 1.0, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &m), m);
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b), Matrix::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn kernels_match_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::<f64>::random_normal(5, 4, 1.0, &mut rng);
        let b = Matrix::<f64>::random_normal(4, 3, 1.0, &mut rng);
        assert!(max_diff(&matmul(&a, &b), &naive_product(&a, &b)) < 1e-12);
        let bt = b.transpose();
        assert!(max_diff(&matmul_nt(&a, &bt), &naive_product(&a, &b)) < 1e-12);
        let at = a.transpose();
        assert!(max_diff(&matmul_tn(&at, &b), &naive_product(&a, &b)) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "matmul: 2x3 times 2x3")]
    fn matmul_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        matmul(&a, &a);
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_rows(&Matrix::<f64>::zeros(1, 4));
        assert!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        for c in [-7.0, 0.0, 3.5, 100.0] {
            let p = softmax_rows(&Matrix::from_rows(&[&[c, c + 3f64.ln()]]));
            assert!((p[(0, 0)] - 0.25).abs() < 1e-12 && (p[(0, 1)] - 0.75).abs() < 1e-12);
        }
        let p = softmax_rows(&Matrix::from_rows(&[&[1000.0f32, 0.0]]));
        assert!(p.is_finite());
        assert!((p[(0, 0)] - 1.0).abs() < 1e-6 && p[(0, 1)] < 1e-6);
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, _) = cross_entropy(&[0.0f64; 36], 4);
        assert!((loss - 36f64.ln()).abs() < 1e-12);
        let mut sat = vec![0.0f64; 36];
        sat[7] = 1e6;
        let (loss, grad) = cross_entropy(&sat, 7);
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..36).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (_, grad) = cross_entropy(&logits, 11);
        let h = 1e-5;
        for k in 0..36 {
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (cross_entropy(&up, 11).0 - cross_entropy(&dn, 11).0) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(rel < 1e-6, "coordinate {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Matrix::<f64>::random_normal(3, 5, 1.0, &mut rng);
        let w = Matrix::<f64>::random_normal(3, 5, 1.0, &mut rng);
        // loss = Σ w ⊙ softmax(s)
        let loss = |s: &Matrix<f64>| {
            softmax_rows(s).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let ds = softmax_rows_backward(&softmax_rows(&s), &w);
        let h = 1e-5;
        for idx in 0..15 {
            let mut up = s.clone();
            let mut dn = s.clone();
            up.data_mut()[idx] += h;
            dn.data_mut()[idx] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - ds.data()[idx]).abs() < 1e-8);
        }
    }
}
