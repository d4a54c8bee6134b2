//! Dense row-major `f64` matrices with the handful of operations the
//! initializer needs: products, Gram matrices, Frobenius norms, and a
//! cyclic-Jacobi symmetric eigendecomposition.
//!
//! Everything here is a pure function of its inputs and deterministic:
//! identical inputs produce bit-identical outputs.

use crate::error::{Error, Result};

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Symmetric eigendecomposition `M = V diag(l) Vᵀ`.
///
/// Eigenvalues are sorted descending; the columns of `eigenvectors` are the
/// matching unit-norm eigenvectors, sign-fixed so that the first component
/// of each column with magnitude above 1e-12 is non-negative.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows. Panics on ragged input; intended for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `X Xᵀ`. Symmetric PSD by construction; the upper triangle
    /// is computed once and mirrored so the result is exactly symmetric.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            let ri = self.row(i);
            for j in i..self.rows {
                let rj = self.row(j);
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += ri[k] * rj[k];
                }
                out.data[i * self.rows + j] = s;
                out.data[j * self.rows + i] = s;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations.
    ///
    /// The input is symmetrized as `(M + Mᵀ)/2` before factoring. Sweeps stop
    /// once the off-diagonal Frobenius norm drops below `1e-12 ‖M‖_F`
    /// (at most 100 sweeps).
    pub fn sym_eig(&self) -> Result<SymEig> {
        if self.rows != self.cols {
            return Err(Error::Shape(format!(
                "sym_eig requires a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;

        // Symmetrized working copy.
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }

        let threshold = 1e-12 * a.frobenius_norm();
        let mut v = Matrix::identity(n);

        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let x = a.data[i * n + j];
                        off += x * x;
                    }
                }
            }
            if off.sqrt() <= threshold {
                break;
            }

            for p in 0..n.saturating_sub(1) {
                for q in (p + 1)..n {
                    let apq = a.data[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a.data[p * n + p];
                    let aqq = a.data[q * n + q];
                    let theta = 0.5 * (aqq - app) / apq;
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;

                    a.data[p * n + p] = app - t * apq;
                    a.data[q * n + q] = aqq + t * apq;
                    a.data[p * n + q] = 0.0;
                    a.data[q * n + p] = 0.0;
                    for k in 0..n {
                        if k == p || k == q {
                            continue;
                        }
                        let akp = a.data[k * n + p];
                        let akq = a.data[k * n + q];
                        let new_kp = c * akp - s * akq;
                        let new_kq = s * akp + c * akq;
                        a.data[k * n + p] = new_kp;
                        a.data[p * n + k] = new_kp;
                        a.data[k * n + q] = new_kq;
                        a.data[q * n + k] = new_kq;
                    }
                    for k in 0..n {
                        let vkp = v.data[k * n + p];
                        let vkq = v.data[k * n + q];
                        v.data[k * n + p] = c * vkp - s * vkq;
                        v.data[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }

        // Sort eigenpairs by eigenvalue, descending; stable for ties.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a.data[j * n + j].total_cmp(&a.data[i * n + i]));

        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = Matrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            eigenvalues.push(a.data[src * n + src]);
            for k in 0..n {
                eigenvectors.data[k * n + col] = v.data[k * n + src];
            }
        }

        // Sign convention: first component with |x| > 1e-12 is non-negative.
        for col in 0..n {
            for k in 0..n {
                let x = eigenvectors.data[k * n + col];
                if x.abs() > 1e-12 {
                    if x < 0.0 {
                        for r in 0..n {
                            eigenvectors.data[r * n + col] = -eigenvectors.data[r * n + col];
                        }
                    }
                    break;
                }
            }
        }

        Ok(SymEig {
            eigenvalues,
            eigenvectors,
        })
    }
}

impl SymEig {
    /// Reconstruct `V diag(l) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let v = &self.eigenvectors;
        let n = v.rows();
        let mut vl = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                vl.set(i, j, v.get(i, j) * self.eigenvalues[j]);
            }
        }
        vl.matmul(&v.transpose()).expect("square product")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 3, 5);
        let i3 = Matrix::identity(3);
        assert_eq!(i3.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 5, 7);
        let b = random_matrix(&mut rng, 7, 3);
        let c = a.matmul(&b).unwrap();
        // Independent naive oracle.
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "message was: {msg}");
    }

    #[test]
    fn gram_trivial_cases() {
        let i2 = Matrix::identity(2);
        assert_eq!(i2.gram(), i2);
        let m = Matrix::from_rows(&[&[1.0, 1.0]]);
        assert_eq!(m.gram().data(), &[2.0]);
    }

    #[test]
    fn gram_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 4, 9);
        let g = x.gram();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let eig = g.sym_eig().unwrap();
        let trace: f64 = (0..4).map(|i| g.get(i, i)).sum();
        for &l in &eig.eigenvalues {
            assert!(l >= -1e-10 * trace, "eigenvalue {l} below PSD tolerance");
        }
    }

    #[test]
    fn sym_eig_identity() {
        let eig = Matrix::identity(3).sym_eig().unwrap();
        for &l in &eig.eigenvalues {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sym_eig_diagonal() {
        let m = Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]);
        let eig = m.sym_eig().unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-14);
        // Eigenvectors are a permutation-signed identity; the sign convention
        // makes them exactly the identity here.
        assert_eq!(eig.eigenvectors, Matrix::identity(2));
    }

    #[test]
    fn sym_eig_reconstruction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_matrix(&mut rng, 8, 8);
        let m = base.add(&base.transpose()).unwrap().scale(0.5);
        let eig = m.sym_eig().unwrap();
        let rec = eig.reconstruct();
        let err = rec.sub(&m).unwrap().frobenius_norm();
        assert!(err <= 1e-9 * m.frobenius_norm().max(1e-300));
    }

    #[test]
    fn sym_eig_rejects_non_square() {
        assert!(matches!(
            Matrix::zeros(2, 3).sym_eig(),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sym_eig_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 2, 5, 12] {
            let base = random_matrix(&mut rng, n, n);
            let m = base.add(&base.transpose()).unwrap();
            let eig = m.sym_eig().unwrap();
            let v = &eig.eigenvectors;
            let vtv = v.transpose().matmul(v).unwrap();
            let err = vtv.sub(&Matrix::identity(n)).unwrap().frobenius_norm();
            assert!(err <= 1e-10, "VtV deviation {err} for n={n}");
        }
    }

    #[test]
    fn sym_eig_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = random_matrix(&mut rng, 6, 6);
        let m = base.add(&base.transpose()).unwrap();
        let e1 = m.sym_eig().unwrap();
        let e2 = m.sym_eig().unwrap();
        assert_eq!(e1.eigenvalues, e2.eigenvalues);
        assert_eq!(e1.eigenvectors, e2.eigenvectors);
    }

    #[test]
    fn frobenius_norm_values() {
        assert_eq!(Matrix::zeros(3, 2).frobenius_norm(), 0.0);
        assert_eq!(Matrix::identity(4).frobenius_norm(), 2.0);
        assert_eq!(Matrix::from_rows(&[&[3.0, 4.0]]).frobenius_norm(), 5.0);
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Parameter(_))
        ));
    }

    proptest! {
        #[test]
        fn matmul_associative(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(1..6);
            let k = rng.random_range(1..6);
            let l = rng.random_range(1..6);
            let n = rng.random_range(1..6);
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, l);
            let c = random_matrix(&mut rng, l, n);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.frobenius_norm().max(1.0);
            prop_assert!(left.sub(&right).unwrap().frobenius_norm() <= 1e-9 * scale);
        }

        #[test]
        fn sym_eig_invariants(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..10);
            let base = random_matrix(&mut rng, n, n);
            let m = base.add(&base.transpose()).unwrap();
            let eig = m.sym_eig().unwrap();
            let v = &eig.eigenvectors;
            let vtv = v.transpose().matmul(v).unwrap();
            prop_assert!(vtv.sub(&Matrix::identity(n)).unwrap().frobenius_norm() <= 1e-10);
            let rec_err = eig.reconstruct().sub(&m).unwrap().frobenius_norm();
            prop_assert!(rec_err <= 1e-9 * m.frobenius_norm().max(1e-300));
            // Descending order.
            for w in eig.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn gram_psd(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..8);
            let c = rng.random_range(1..12);
            let x = random_matrix(&mut rng, r, c);
            let g = x.gram();
            let trace: f64 = (0..r).map(|i| g.get(i, i)).sum();
            let eig = g.sym_eig().unwrap();
            for &l in &eig.eigenvalues {
                prop_assert!(l >= -1e-10 * trace.max(1e-300));
            }
        }
    }
}
