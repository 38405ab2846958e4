//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{ComplexMatrix, RealMatrix};

/// Relative diagonal threshold below which a triangular factor is treated as
/// rank deficient and we fall back to a ridge solve.
const RANK_TOL: f64 = 1e-12;

/// Least-squares solve of `A X = B` for dense complex `A`.
///
/// Tall or square systems use a QR factorization of `A`; wide systems use a
/// QR factorization of `A^H`, which yields the minimum-norm solution. Rank
/// deficiency (essentially impossible for the Gaussian designs used here)
/// falls back to a lightly regularized normal-equation solve.
pub(crate) fn lstsq(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (rows, cols) = a.shape();
    assert_eq!(rows, b.nrows(), "lstsq shape mismatch");
    if cols == 0 {
        return ComplexMatrix::zeros(0, b.ncols());
    }

    if rows >= cols {
        let qr = a.clone().qr();
        let r = qr.r();
        if triangular_ok(&r) {
            let qtb = qr.q().ad_mul(b);
            if let Some(x) = r.solve_upper_triangular(&qtb) {
                return x;
            }
        }
        ridge_tall(a, b)
    } else {
        let qr = a.adjoint().qr();
        let r = qr.r();
        if triangular_ok(&r) {
            if let Some(w) = r.adjoint().solve_lower_triangular(b) {
                return qr.q() * w;
            }
        }
        ridge_wide(a, b)
    }
}

/// Residual `‖B - A X‖_F` for a candidate solution.
pub(crate) fn residual_fro(a: &ComplexMatrix, b: &ComplexMatrix, x: &ComplexMatrix) -> f64 {
    let r = b - a * x;
    r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn triangular_ok(r: &ComplexMatrix) -> bool {
    let k = r.nrows().min(r.ncols());
    let mut max_d = 0.0f64;
    let mut min_d = f64::INFINITY;
    for i in 0..k {
        let d = r[(i, i)].norm();
        max_d = max_d.max(d);
        min_d = min_d.min(d);
    }
    k > 0 && min_d > RANK_TOL * max_d.max(1e-300)
}

fn ridge_tall(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let n = a.ncols();
    let mut g = a.ad_mul(a);
    let tau = 1e-12 * (g.diagonal().iter().map(|z| z.re).sum::<f64>() / n as f64).max(1e-300);
    for i in 0..n {
        g[(i, i)] += Complex64::new(tau, 0.0);
    }
    let rhs = a.ad_mul(b);
    match g.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => ComplexMatrix::zeros(n, b.ncols()),
    }
}

fn ridge_wide(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let l = a.nrows();
    let mut g = a * a.adjoint();
    let tau = 1e-12 * (g.diagonal().iter().map(|z| z.re).sum::<f64>() / l as f64).max(1e-300);
    for i in 0..l {
        g[(i, i)] += Complex64::new(tau, 0.0);
    }
    match g.cholesky() {
        Some(ch) => a.adjoint() * ch.solve(b),
        None => ComplexMatrix::zeros(a.ncols(), b.ncols()),
    }
}

/// Squared spectral norm of a real matrix, estimated by 30 rounds of power
/// iteration from a fixed seeded start and inflated slightly so that the
/// derived gradient step stays safe even if the estimate is a hair low.
pub(crate) fn spectral_norm_sq(d: &RealMatrix) -> f64 {
    let n = d.ncols();
    if n == 0 || d.nrows() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let mut v = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut norm = v.norm();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;
    let mut sigma_sq = 0.0;
    for _ in 0..30 {
        let w = d.tr_mul(&(d * &v));
        norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        sigma_sq = norm; // ‖DᵀD v‖ → σ² for unit v
        v = w / norm;
    }
    sigma_sq * 1.05
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComplexMatrix;

    fn random_complex(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, c, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    #[test]
    fn tall_consistent_system_recovers_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_complex(&mut rng, 8, 5);
            let x_true = random_complex(&mut rng, 5, 2);
            let b = &a * &x_true;
            let x = lstsq(&a, &b);
            assert!((&x - &x_true).norm() < 1e-10);
            assert!(residual_fro(&a, &b, &x) < 1e-10);
        }
    }

    #[test]
    fn wide_solution_is_minimum_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_complex(&mut rng, 4, 9);
            let b = random_complex(&mut rng, 4, 2);
            let x = lstsq(&a, &b);
            assert!(residual_fro(&a, &b, &x) < 1e-10, "wide systems interpolate");
            // Minimum-norm solutions live in range(A^H): projecting out that
            // range leaves nothing behind.
            let w = lstsq(&a.adjoint(), &x);
            let back = a.adjoint() * w;
            assert!((&back - &x).norm() < 1e-8);
        }
    }

    #[test]
    fn overdetermined_residual_matches_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_complex(&mut rng, 10, 3);
        let b = random_complex(&mut rng, 10, 1);
        let x = lstsq(&a, &b);
        // Normal equations hold at the minimizer.
        let grad = a.ad_mul(&(&b - &a * &x));
        assert!(grad.norm() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = RealMatrix::from_fn(12, 9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let est = spectral_norm_sq(&d);
        let gram = d.transpose() * &d;
        let exact = gram
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v));
        assert!(est >= exact * 0.999, "estimate {est} below exact {exact}");
        assert!(est <= exact * 1.10, "estimate {est} too far above {exact}");
    }

    #[test]
    fn zero_matrix_norm_is_zero() {
        assert_eq!(spectral_norm_sq(&RealMatrix::zeros(4, 3)), 0.0);
    }
}
