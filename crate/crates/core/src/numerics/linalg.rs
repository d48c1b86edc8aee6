//! Dense complex LU with partial pivoting.
//!
//! The matrices here are at most a few dozen rows (the loaded internal-port
//! block), so a straightforward right-looking factorization is enough.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::NumericsError;

pub type ComplexMatrix = DMatrix<Complex64>;

/// Reciprocal pivot-growth threshold below which a factorization is
/// reported as singular.
pub const DEFAULT_RCOND_THRESHOLD: f64 = 1e-13;

/// Packed LU factors of a square matrix, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: ComplexMatrix,
    perm: Vec<usize>,
    rcond: f64,
}

impl LuFactors {
    pub fn factor(a: &ComplexMatrix) -> Result<Self, NumericsError> {
        Self::factor_with_threshold(a, DEFAULT_RCOND_THRESHOLD)
    }

    pub fn factor_with_threshold(a: &ComplexMatrix, threshold: f64) -> Result<Self, NumericsError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(NumericsError::Shape(format!(
                "LU needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].norm();
            for i in k + 1..n {
                let v = lu[(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            if best == 0.0 || !best.is_finite() {
                return Err(NumericsError::Singular { rcond: 0.0 });
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in k + 1..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= factor * u;
                }
            }
        }
        let rcond = if n == 0 { 1.0 } else { min_pivot / max_pivot.max(scale) };
        if rcond < threshold {
            return Err(NumericsError::Singular { rcond });
        }
        Ok(Self { lu, perm, rcond })
    }

    /// Cheap conditioning estimate: smallest pivot over the largest entry seen.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix, NumericsError> {
        let n = self.lu.nrows();
        if b.nrows() != n {
            return Err(NumericsError::Shape(format!(
                "right-hand side has {} rows, system has {}",
                b.nrows(),
                n
            )));
        }
        let mut x = ComplexMatrix::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            for i in 0..n {
                x[(i, c)] = b[(self.perm[i], c)];
            }
            for i in 0..n {
                let mut acc = x[(i, c)];
                for j in 0..i {
                    acc -= self.lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[(i, c)];
                for j in i + 1..n {
                    acc -= self.lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = acc / self.lu[(i, i)];
            }
        }
        Ok(x)
    }
}

/// Solves `A X = B` for square `A`.
///
/// Complex-symmetric impedance blocks are not Hermitian, so this always takes
/// the general pivoted-LU route.
pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix, NumericsError> {
    LuFactors::factor(a)?.solve(b)
}

/// Smallest eigenvalue of the Hermitian part `(A + A^H) / 2`.
pub fn min_hermitian_eigenvalue(a: &ComplexMatrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let h = (a + a.adjoint()).map(|z| z * 0.5);
    let eig = SymmetricEigen::new(h);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of the symmetric part of a real matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let s = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Largest absolute row sum.
pub fn norm_inf(a: &ComplexMatrix) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_matrix(&mut rng, 3, 2);
        let x = solve(&ComplexMatrix::identity(3, 3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_solve() {
        let a = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2.0), c(4.0)]));
        let b = ComplexMatrix::from_column_slice(2, 1, &[c(2.0), c(4.0)]);
        let x = solve(&a, &b).unwrap();
        assert_eq!(x[(0, 0)], c(1.0));
        assert_eq!(x[(1, 0)], c(1.0));
    }

    #[test]
    fn round_trip_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = random_matrix(&mut rng, 10, 10);
        for i in 0..10 {
            a[(i, i)] += c(5.0);
        }
        let x0 = random_matrix(&mut rng, 10, 3);
        let b = &a * &x0;
        let x = solve(&a, &b).unwrap();
        assert!(frobenius(&(&x - &x0)) < 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(2.0), c(4.0)]);
        let b = ComplexMatrix::from_element(2, 1, c(1.0));
        assert!(matches!(solve(&a, &b), Err(NumericsError::Singular { .. })));
    }

    #[test]
    fn non_square_is_rejected() {
        let a = ComplexMatrix::zeros(2, 3);
        let b = ComplexMatrix::zeros(2, 1);
        assert!(matches!(solve(&a, &b), Err(NumericsError::Shape(_))));
    }

    proptest::proptest! {
        #[test]
        fn residual_bound(seed in 0u64..10_000, n in 1usize..16, cols in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = random_matrix(&mut rng, n, n);
            for i in 0..n {
                a[(i, i)] += c(2.0 * n as f64);
            }
            let b = random_matrix(&mut rng, n, cols);
            let x = solve(&a, &b).unwrap();
            let r = &a * &x - &b;
            proptest::prop_assert!(frobenius(&r) <= 1e-10 * frobenius(&b));
        }
    }
}
