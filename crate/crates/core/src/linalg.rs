//! Sparse factorization of the scalar Laplacian-like global matrix and a
//! preconditioned conjugate-gradient solver over flat `3n` vectors.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

/// Relative pivot below which the factorization is treated as singular.
const PIVOT_TOL: f64 = 1e-10;

/// Symmetric positive-definite `n×n` matrix `L` acting on each coordinate of
/// a flat `3n` vector, i.e. `K = L ⊗ I₃`, with a reusable Cholesky factor.
#[derive(Clone)]
pub struct FactoredLaplacian {
    matrix: CscMatrix<f64>,
    factor: CscCholesky<f64>,
}

impl std::fmt::Debug for FactoredLaplacian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactoredLaplacian")
            .field("n", &self.matrix.nrows())
            .field("nnz", &self.matrix.nnz())
            .finish()
    }
}

impl FactoredLaplacian {
    pub fn factor(coo: &CooMatrix<f64>) -> Result<Self> {
        let matrix = CscMatrix::from(coo);
        let factor = CscCholesky::factor(&matrix).map_err(|_| Error::NotPositiveDefinite)?;
        // Cholesky happily factors matrices whose nullspace is only broken by
        // rounding; reject tiny pivots relative to the diagonal scale.
        let max_diag = matrix
            .diagonal_as_csc()
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let l = factor.l();
        let min_pivot = l
            .diagonal_as_csc()
            .values()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > PIVOT_TOL * max_diag) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { matrix, factor })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CscMatrix<f64> {
        &self.matrix
    }

    /// `(L ⊗ I₃) x` for a flat `3n` vector.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        let offsets = self.matrix.col_offsets();
        let rows = self.matrix.row_indices();
        let vals = self.matrix.values();
        for j in 0..self.n() {
            let xj = [x[3 * j], x[3 * j + 1], x[3 * j + 2]];
            for k in offsets[j]..offsets[j + 1] {
                let i = rows[k];
                let v = vals[k];
                out[3 * i] += v * xj[0];
                out[3 * i + 1] += v * xj[1];
                out[3 * i + 2] += v * xj[2];
            }
        }
        out
    }

    /// Solves `(L ⊗ I₃) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let rhs = DMatrix::from_fn(n, 3, |i, a| b[3 * i + a]);
        let sol = self.factor.solve(&rhs);
        DVector::from_fn(3 * n, |k, _| sol[(k / 3, k % 3)])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n(), self.n());
        for (i, j, v) in self.matrix.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for `A x = b` with relative residual
/// `‖b − A x‖ / ‖b‖ < tol`.
pub fn pcg(
    apply_a: impl Fn(&DVector<f64>) -> DVector<f64>,
    precondition: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    x0: Option<DVector<f64>>,
    tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, CgStats)> {
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok((
            DVector::zeros(b.len()),
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut x = x0.unwrap_or_else(|| precondition(b));
    let mut r = b - apply_a(&x);
    let mut rel = r.norm() / bnorm;
    if rel < tol {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: rel,
            },
        ));
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iters {
        let ap = apply_a(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!(
                "conjugate gradient met non-positive curvature {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        rel = r.norm() / bnorm;
        if rel < tol {
            // guard against drift in the recursive residual
            let true_rel = (b - apply_a(&x)).norm() / bnorm;
            if true_rel < tol {
                return Ok((
                    x,
                    CgStats {
                        iterations: it,
                        relative_residual: true_rel,
                    },
                ));
            }
            r = b - apply_a(&x);
        }
        z = precondition(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    Err(Error::CgNotConverged {
        iterations: max_iters,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize, pin: f64) -> CooMatrix<f64> {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n - 1 {
            coo.push(i, i, 1.0);
            coo.push(i + 1, i + 1, 1.0);
            coo.push(i, i + 1, -1.0);
            coo.push(i + 1, i, -1.0);
        }
        if pin > 0.0 {
            coo.push(0, 0, pin);
        }
        coo
    }

    #[test]
    fn pinned_path_factors_and_solves() {
        let l = FactoredLaplacian::factor(&path_laplacian(6, 1.0)).unwrap();
        let b = DVector::from_fn(18, |i, _| (i as f64).sin());
        let x = l.solve(&b);
        assert!((l.apply(&x) - &b).norm() < 1e-12 * b.norm());
    }

    #[test]
    fn unpinned_path_is_rejected() {
        assert!(matches!(
            FactoredLaplacian::factor(&path_laplacian(6, 0.0)),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn pcg_with_exact_preconditioner_is_one_step() {
        let l = FactoredLaplacian::factor(&path_laplacian(5, 2.0)).unwrap();
        let b = DVector::from_fn(15, |i, _| 1.0 + i as f64);
        let (x, stats) = pcg(|v| l.apply(v), |r| l.solve(r), &b, None, 1e-12, 50).unwrap();
        assert!(stats.iterations <= 1);
        assert!((l.apply(&x) - &b).norm() < 1e-10 * b.norm());
    }

    #[test]
    fn pcg_solves_perturbed_system() {
        let l = FactoredLaplacian::factor(&path_laplacian(8, 1.0)).unwrap();
        let extra = DMatrix::from_fn(24, 24, |i, j| if i == j { 0.5 + (i % 3) as f64 } else { 0.0 });
        let apply = |v: &DVector<f64>| l.apply(v) + &extra * v;
        let b = DVector::from_fn(24, |i, _| (i as f64 * 0.7).cos());
        let (x, stats) = pcg(apply, |r| l.solve(r), &b, None, 1e-10, 100).unwrap();
        assert!(stats.relative_residual < 1e-10);
        assert!((apply(&x) - &b).norm() < 1e-9 * b.norm());
    }
}
