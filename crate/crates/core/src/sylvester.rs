//! Encode/decode objective and its gradient-free minimizer.
//!
//! A layer's weights `W` minimize
//!
//! ```text
//! ‖X − WᵀS‖_F² + λ‖WX − S‖_F²
//! ```
//!
//! whose stationarity condition is the Sylvester equation
//! `A W + W B = C` with `A = SSᵀ`, `B = λXXᵀ`, `C = (1+λ)SXᵀ`.
//! Because `A` and `B` are symmetric PSD by construction, the equation is
//! solved spectrally: factor both, divide in the eigenbasis, transform back.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Operands of the stationarity equation `A W + W B = C`.
#[derive(Debug, Clone)]
pub struct SylvesterOperands {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    lambda: f64,
}

/// Solve quality report.
#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    /// `‖AW + WB − C‖_F / max(‖C‖_F, 1)`.
    pub residual: f64,
    /// Number of eigenvalue-sum denominators clipped up to `eps`.
    pub clipped_denominators: usize,
    /// Wall time of the solve itself, in seconds.
    pub wall_time: f64,
}

impl SylvesterOperands {
    /// Assemble operands directly. `a` and `b` must be square and `c` must
    /// bridge them; symmetry of `a`/`b` is the caller's responsibility.
    pub fn from_parts(a: Matrix, b: Matrix, c: Matrix, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
        }
        if a.rows() != a.cols() || b.rows() != b.cols() {
            return Err(Error::Shape(format!(
                "A and B must be square, got {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if a.rows() != c.rows() || b.rows() != c.cols() {
            return Err(Error::Shape(format!(
                "C must be {}x{}, got {}x{}",
                a.rows(),
                b.rows(),
                c.rows(),
                c.cols()
            )));
        }
        Ok(SylvesterOperands { a, b, c, lambda })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Build `A = SSᵀ`, `B = λXXᵀ`, `C = (1+λ)SXᵀ` from activations `x`
/// (`d_i×n`) and latent code `s` (`d_o×n`).
pub fn build_operands(x: &Matrix, s: &Matrix, lambda: f64) -> Result<SylvesterOperands> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    if x.cols() != s.cols() {
        return Err(Error::Shape(format!(
            "activation and code sample counts differ: {} vs {}",
            x.cols(),
            s.cols()
        )));
    }
    let a = s.gram();
    let b = x.gram().scale(lambda);
    let c = s.matmul(&x.transpose())?.scale(1.0 + lambda);
    Ok(SylvesterOperands { a, b, c, lambda })
}

/// Value of the encode/decode objective
/// `‖X − WᵀS‖_F² + λ‖WX − S‖_F²`.
pub fn objective(w: &Matrix, x: &Matrix, s: &Matrix, lambda: f64) -> Result<f64> {
    if w.rows() != s.rows() || w.cols() != x.rows() || x.cols() != s.cols() {
        return Err(Error::Shape(format!(
            "inconsistent shapes: W {}x{}, X {}x{}, S {}x{}",
            w.rows(),
            w.cols(),
            x.rows(),
            x.cols(),
            s.rows(),
            s.cols()
        )));
    }
    let decode = x.sub(&w.transpose().matmul(s)?)?.frobenius_norm();
    let encode = w.matmul(x)?.sub(s)?.frobenius_norm();
    Ok(decode * decode + lambda * encode * encode)
}

/// Analytic gradient of the objective at `w`:
/// `∇ = 2(AW + WB − C)`.
pub fn objective_gradient(w: &Matrix, ops: &SylvesterOperands) -> Result<Matrix> {
    residual_matrix(w, ops).map(|r| r.scale(2.0))
}

fn residual_matrix(w: &Matrix, ops: &SylvesterOperands) -> Result<Matrix> {
    ops.a.matmul(w)?.add(&w.matmul(&ops.b)?)?.sub(&ops.c)
}

/// Solve `A W + W B = C` spectrally, clipping eigenvalue-sum denominators
/// below `eps` up to `eps`.
///
/// With `A = UΛUᵀ` and `B = VMVᵀ`, the transformed solution is
/// `W̃_ij = (UᵀCV)_ij / (λ_i + μ_j)` and `W = U W̃ Vᵀ`.
pub fn solve(ops: &SylvesterOperands, eps: f64) -> Result<(Matrix, SolveDiagnostics)> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    solve_inner(ops, Some(eps))
}

/// Like [`solve`], with the clip threshold defaulted to
/// `1e-8 · (λ_max + μ_max)` from the computed spectra. Falls back to a tiny
/// absolute floor when both operands are numerically zero.
pub fn solve_auto(ops: &SylvesterOperands) -> Result<(Matrix, SolveDiagnostics)> {
    solve_inner(ops, None)
}

fn solve_inner(ops: &SylvesterOperands, eps: Option<f64>) -> Result<(Matrix, SolveDiagnostics)> {
    let start = Instant::now();

    let ea = ops.a.sym_eig()?;
    let eb = ops.b.sym_eig()?;
    let u = &ea.eigenvectors;
    let v = &eb.eigenvectors;

    let eps = match eps {
        Some(e) => e,
        None => {
            // Eigenvalues are sorted descending.
            let lmax = ea.eigenvalues.first().copied().unwrap_or(0.0);
            let mmax = eb.eigenvalues.first().copied().unwrap_or(0.0);
            let scale = lmax + mmax;
            if scale > 0.0 {
                1e-8 * scale
            } else {
                f64::MIN_POSITIVE
            }
        }
    };

    let ct = u.transpose().matmul(&ops.c)?.matmul(v)?;
    let d_o = ct.rows();
    let d_i = ct.cols();
    let mut wt = Matrix::zeros(d_o, d_i);
    let mut clipped = 0usize;
    for i in 0..d_o {
        for j in 0..d_i {
            let mut denom = ea.eigenvalues[i] + eb.eigenvalues[j];
            if denom < eps {
                denom = eps;
                clipped += 1;
            }
            wt.set(i, j, ct.get(i, j) / denom);
        }
    }
    let w = u.matmul(&wt)?.matmul(&v.transpose())?;

    let residual = residual_matrix(&w, ops)?.frobenius_norm() / ops.c.frobenius_norm().max(1.0);
    Ok((
        w,
        SolveDiagnostics {
            residual,
            clipped_denominators: clipped,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn build_operands_identity_case() {
        let i2 = Matrix::identity(2);
        let ops = build_operands(&i2, &i2, 1.0).unwrap();
        assert_eq!(*ops.a(), Matrix::identity(2));
        assert_eq!(*ops.b(), Matrix::identity(2));
        assert_eq!(*ops.c(), Matrix::identity(2).scale(2.0));
    }

    #[test]
    fn build_operands_shapes_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_matrix(&mut rng, 3, 6);
        let s = random_matrix(&mut rng, 2, 6);
        let ops = build_operands(&x, &s, 10.0).unwrap();
        assert_eq!((ops.a().rows(), ops.a().cols()), (2, 2));
        assert_eq!((ops.b().rows(), ops.b().cols()), (3, 3));
        assert_eq!((ops.c().rows(), ops.c().cols()), (2, 3));
        for m in [ops.a(), ops.b()] {
            let trace: f64 = (0..m.rows()).map(|i| m.get(i, i)).sum();
            let eig = m.sym_eig().unwrap();
            for &l in &eig.eigenvalues {
                assert!(l >= -1e-10 * trace.max(1.0));
            }
        }
    }

    #[test]
    fn build_operands_rejects_bad_input() {
        let x = Matrix::zeros(2, 3);
        let s = Matrix::zeros(2, 4);
        assert!(matches!(build_operands(&x, &s, 1.0), Err(Error::Shape(_))));
        let s2 = Matrix::zeros(2, 3);
        assert!(matches!(
            build_operands(&x, &s2, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            build_operands(&x, &s2, -3.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn objective_perfect_encode_decode_is_zero() {
        let i3 = Matrix::identity(3);
        let v = objective(&i3, &i3, &i3, 7.5).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn objective_pure_decoding_term() {
        let w = Matrix::zeros(2, 2);
        let x = Matrix::identity(2);
        let s = Matrix::zeros(2, 2);
        let v = objective(&w, &x, &s, 5.0).unwrap();
        assert!((v - 2.0).abs() <= 1e-12, "objective {v}");
    }

    #[test]
    fn objective_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_matrix(&mut rng, 3, 4);
        let x = random_matrix(&mut rng, 4, 7);
        let s = random_matrix(&mut rng, 3, 7);
        let lambda = 2.5;
        let got = objective(&w, &x, &s, lambda).unwrap();

        // Direct entry-wise summation, independent of the Matrix helpers.
        let mut decode = 0.0;
        for i in 0..4 {
            for j in 0..7 {
                let mut wts = 0.0;
                for k in 0..3 {
                    wts += w.get(k, i) * s.get(k, j);
                }
                let d = x.get(i, j) - wts;
                decode += d * d;
            }
        }
        let mut encode = 0.0;
        for i in 0..3 {
            for j in 0..7 {
                let mut wx = 0.0;
                for k in 0..4 {
                    wx += w.get(i, k) * x.get(k, j);
                }
                let d = wx - s.get(i, j);
                encode += d * d;
            }
        }
        let oracle = decode + lambda * encode;
        assert!((got - oracle).abs() <= 1e-10 * oracle.max(1.0));
    }

    #[test]
    fn solve_identity_operands() {
        let ops = SylvesterOperands::from_parts(
            Matrix::identity(3),
            Matrix::identity(3),
            Matrix::identity(3).scale(2.0),
            1.0,
        )
        .unwrap();
        let (w, diag) = solve(&ops, 1e-12).unwrap();
        assert!(w.sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-12);
        assert_eq!(diag.clipped_denominators, 0);
        assert!(diag.residual < 1e-12);
    }

    #[test]
    fn solve_diagonal_operands_elementwise() {
        let a = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let b = Matrix::from_rows(&[&[3.0]]);
        let c = Matrix::from_rows(&[&[4.0], &[5.0]]);
        let ops = SylvesterOperands::from_parts(a, b, c, 1.0).unwrap();
        let (w, _) = solve(&ops, 1e-12).unwrap();
        assert!((w.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((w.get(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solve_rejects_nonpositive_eps() {
        let ops = SylvesterOperands::from_parts(
            Matrix::identity(2),
            Matrix::identity(2),
            Matrix::identity(2),
            1.0,
        )
        .unwrap();
        assert!(matches!(solve(&ops, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(solve(&ops, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn solve_matches_gradient_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_matrix(&mut rng, 6, 20);
        let s = random_matrix(&mut rng, 4, 20);
        let lambda = 10.0;
        let ops = build_operands(&x, &s, lambda).unwrap();
        let (w, diag) = solve_auto(&ops).unwrap();
        assert!(diag.residual <= 1e-8);

        // Plain gradient descent on the objective, step 1e-3.
        let mut wg = Matrix::zeros(4, 6);
        for _ in 0..200_000 {
            let g = objective_gradient(&wg, &ops).unwrap();
            if g.frobenius_norm() <= 1e-10 {
                break;
            }
            wg = wg.sub(&g.scale(1e-3)).unwrap();
        }
        let dist = wg.sub(&w).unwrap().frobenius_norm();
        assert!(dist <= 1e-4, "GD solution distance {dist}");
    }

    #[test]
    fn solve_stationarity_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_matrix(&mut rng, 5, 24);
        let s = random_matrix(&mut rng, 3, 24);
        let lambda = 1.0;
        let ops = build_operands(&x, &s, lambda).unwrap();
        let (w, _) = solve_auto(&ops).unwrap();

        let scale = ops.c().frobenius_norm().max(1.0);
        let grad = objective_gradient(&w, &ops).unwrap();
        assert!(grad.frobenius_norm() <= 1e-7 * scale);

        let at_min = objective(&w, &x, &s, lambda).unwrap();
        for _ in 0..100 {
            let mut delta = random_matrix(&mut rng, 3, 5);
            let norm = delta.frobenius_norm();
            delta = delta.scale(1e-3 / norm);
            let perturbed = objective(&w.add(&delta).unwrap(), &x, &s, lambda).unwrap();
            assert!(at_min <= perturbed + 1e-12);
        }
    }

    #[test]
    fn solve_orthogonal_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_matrix(&mut rng, 5, 30);
        let s = random_matrix(&mut rng, 4, 30);
        let ops = build_operands(&x, &s, 2.0).unwrap();
        let (w, _) = solve_auto(&ops).unwrap();

        // Orthogonal Q from the eigenvectors of a random symmetric matrix.
        let base = random_matrix(&mut rng, 4, 4);
        let q = base
            .add(&base.transpose())
            .unwrap()
            .sym_eig()
            .unwrap()
            .eigenvectors;
        let qa = q.matmul(ops.a()).unwrap().matmul(&q.transpose()).unwrap();
        let qc = q.matmul(ops.c()).unwrap();
        let rotated =
            SylvesterOperands::from_parts(qa, ops.b().clone(), qc, ops.lambda()).unwrap();
        let (w_rot, _) = solve_auto(&rotated).unwrap();
        let expected = q.matmul(&w).unwrap();
        let err = w_rot.sub(&expected).unwrap().frobenius_norm();
        assert!(err <= 1e-9, "equivariance error {err}");
    }

    #[test]
    fn solve_clips_degenerate_directions() {
        // S and X both rank-deficient: null directions shared, denominators
        // clip instead of exploding.
        let x = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let s = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let ops = build_operands(&x, &s, 1.0).unwrap();
        let (w, diag) = solve_auto(&ops).unwrap();
        assert!(diag.clipped_denominators > 0);
        assert!(w.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn solver_time_independent_of_sample_count() {
        // Coarse check: operand shapes fix the solve cost, so quadrupling n
        // must not move the solver-phase time by more than 2x (median of 5).
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let time_for = |n: usize, rng: &mut ChaCha8Rng| -> f64 {
            let x = random_matrix(rng, 24, n);
            let s = random_matrix(rng, 12, n);
            let ops = build_operands(&x, &s, 10.0).unwrap();
            let mut times: Vec<f64> = (0..5)
                .map(|_| solve_auto(&ops).unwrap().1.wall_time)
                .collect();
            times.sort_by(f64::total_cmp);
            times[2]
        };
        let t1 = time_for(64, &mut rng);
        let t4 = time_for(256, &mut rng);
        let ratio = t4.max(t1) / t1.min(t4).max(1e-9);
        assert!(ratio <= 2.0, "solver-phase timing ratio {ratio}");
    }
}
