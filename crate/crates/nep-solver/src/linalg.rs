//! Sparse direct factorizations, matrix-free GMRES, and power iteration.
//!
//! Direct solves delegate to `faer`; the iterative solvers are implemented
//! here against the [`LinearOperator`] trait so the semi-smooth Newton step
//! can stay matrix-free (its operator is a composition of mass matrices,
//! node-set masks, and inverse-stiffness solves).

use crate::mesh_fem::{m_norm, SparseMatrix};
use crate::Error;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};

/// A square linear map on nodal vectors.
///
/// Implementations must be linear; compositions built from factorized
/// solves and sparse products satisfy this by construction.
pub trait LinearOperator {
    /// Dimension of the (square) operator.
    fn dim(&self) -> usize;

    /// Computes `out = A x`.
    ///
    /// Panics if `x.len()` or `out.len()` differ from `dim()`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows(), self.ncols(), "operator must be square");
        self.nrows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.mul_into(x, out);
    }
}

/// Adapter turning a closure into a [`LinearOperator`].
pub struct FnOperator<F: Fn(&[f64], &mut [f64])> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim, "input length mismatch");
        assert_eq!(out.len(), self.dim, "output length mismatch");
        (self.f)(x, out);
    }
}

enum FactorKind {
    Cholesky(Llt<usize, f64>),
    Lu(Box<Lu<usize, f64>>),
}

/// A computed sparse factorization, reusable for many right-hand sides.
pub struct Factorization {
    kind: FactorKind,
    n: usize,
}

fn to_faer(a: &SparseMatrix) -> Result<SparseColMat<usize, f64>, Error> {
    let trips: Vec<Triplet<usize, usize, f64>> = a
        .triplets()
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows(), a.ncols(), &trips)
        .map_err(|e| Error::Factorization(format!("sparse conversion failed: {e:?}")))
}

/// Sparse LU factorization with pivoting, for general square matrices.
///
/// Panics if `a` is not square. Returns an error when the factorization
/// cannot be computed.
pub fn lu_factorize(a: &SparseMatrix) -> Result<Factorization, Error> {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    let f = to_faer(a)?
        .sp_lu()
        .map_err(|e| Error::Factorization(format!("lu: {e:?}")))?;
    Ok(Factorization {
        kind: FactorKind::Lu(Box::new(f)),
        n: a.nrows(),
    })
}

/// Sparse Cholesky factorization for symmetric positive definite matrices.
///
/// Panics if `a` is not square. Returns an error when the factorization
/// cannot be computed (in particular for indefinite input).
pub fn cholesky_factorize(a: &SparseMatrix) -> Result<Factorization, Error> {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    let f = to_faer(a)?
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| Error::Factorization(format!("cholesky: {e:?}")))?;
    Ok(Factorization {
        kind: FactorKind::Cholesky(f),
        n: a.nrows(),
    })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = rhs`.
    ///
    /// Panics if `rhs.len()` differs from the matrix dimension.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n, "right-hand side length mismatch");
        let b = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = match &self.kind {
            FactorKind::Cholesky(f) => f.solve(&b),
            FactorKind::Lu(f) => f.solve(&b),
        };
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of a successful GMRES solve.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    /// Total inner (Arnoldi) iterations across all restart cycles.
    pub iterations: usize,
    /// Relative Euclidean residual `|b - A x| / |b|` at exit.
    pub relative_residual: f64,
    /// Estimated relative residual after each inner iteration. Within one
    /// restart cycle the sequence is non-increasing.
    pub residual_history: Vec<f64>,
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations,
/// starting from the zero vector.
///
/// Convergence is declared when the relative Euclidean residual drops to
/// `tol`. A zero right-hand side returns the zero solution immediately.
/// When `maxiter` total inner iterations are exhausted the error carries
/// the best iterate and its true relative residual.
///
/// Panics if `b.len() != op.dim()`, `tol <= 0`, or `restart == 0`.
pub fn gmres<O: LinearOperator + ?Sized>(
    op: &O,
    b: &[f64],
    tol: f64,
    restart: usize,
    maxiter: usize,
) -> Result<GmresOutcome, Error> {
    let n = b.len();
    assert_eq!(op.dim(), n, "right-hand side length mismatch");
    assert!(tol > 0.0, "tolerance must be positive");
    assert!(restart >= 1, "restart length must be at least 1");
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
            residual_history: Vec::new(),
        });
    }
    let mut x = vec![0.0; n];
    let mut total = 0usize;
    let mut history = Vec::new();
    let mut buf = vec![0.0; n];
    loop {
        // True residual at the start of each cycle.
        op.apply(&x, &mut buf);
        let mut r: Vec<f64> = b.iter().zip(&buf).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        let rel0 = beta / bnorm;
        if rel0 <= tol {
            return Ok(GmresOutcome {
                x,
                iterations: total,
                relative_residual: rel0,
                residual_history: history,
            });
        }
        if total >= maxiter {
            return Err(Error::GmresStalled {
                iterations: total,
                relative_residual: rel0,
                best: x,
            });
        }
        for e in r.iter_mut() {
            *e /= beta;
        }
        let mut basis: Vec<Vec<f64>> = vec![r];
        // Column-major Hessenberg after Givens rotations; column j holds
        // rows 0..=j+1.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut cs: Vec<f64> = Vec::with_capacity(restart);
        let mut sn: Vec<f64> = Vec::with_capacity(restart);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut cols = 0usize;
        let mut converged = false;
        for j in 0..restart {
            if total >= maxiter {
                break;
            }
            op.apply(&basis[j], &mut buf);
            total += 1;
            let mut w = buf.clone();
            let mut hj = vec![0.0; j + 2];
            for i in 0..=j {
                let hij = dot(&w, &basis[i]);
                hj[i] = hij;
                for (we, ve) in w.iter_mut().zip(&basis[i]) {
                    *we -= hij * ve;
                }
            }
            let hlast = norm2(&w);
            hj[j + 1] = hlast;
            for i in 0..j {
                let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
                hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
                hj[i] = t;
            }
            let denom = hj[j].hypot(hj[j + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (hj[j] / denom, hj[j + 1] / denom)
            };
            cs.push(c);
            sn.push(s);
            hj[j] = denom;
            hj[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            h.push(hj);
            cols = j + 1;
            let rel = g[j + 1].abs() / bnorm;
            history.push(rel);
            if rel <= tol {
                converged = true;
                break;
            }
            if hlast > 0.0 {
                let v_next: Vec<f64> = w.iter().map(|e| e / hlast).collect();
                basis.push(v_next);
            } else {
                // Invariant subspace reached; the rotation above already
                // drove the recurrence residual to zero, so this point is
                // unreachable unless rel > tol due to round-off.
                break;
            }
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut acc = g[i];
            for k in (i + 1)..cols {
                acc -= h[k][i] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xe, ve) in x.iter_mut().zip(&basis[j]) {
                *xe += yj * ve;
            }
        }
        if converged {
            return Ok(GmresOutcome {
                x,
                iterations: total,
                relative_residual: g[cols].abs() / bnorm,
                residual_history: history,
            });
        }
        // Otherwise restart; the loop head re-derives the true residual and
        // handles the iteration cap.
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Power iteration for the dominant eigenvalue magnitude of `op` in the
/// inner product induced by `inner_product`.
///
/// For an operator self-adjoint in that inner product the returned value is
/// its largest singular value. The start vector is a fixed pseudo-random
/// vector, so results are deterministic. Iteration stops when successive
/// Rayleigh quotients agree to `tol` (relative for values above one); an
/// operator that annihilates the iterate yields zero. Exhausting `maxiter`
/// returns an error carrying the last estimate.
///
/// Panics if the dimensions disagree or `tol <= 0`.
pub fn power_iteration<O: LinearOperator + ?Sized>(
    op: &O,
    inner_product: &SparseMatrix,
    tol: f64,
    maxiter: usize,
) -> Result<f64, Error> {
    let n = op.dim();
    assert_eq!(inner_product.nrows(), n, "inner product dimension mismatch");
    assert_eq!(inner_product.ncols(), n, "inner product must be square");
    assert!(tol > 0.0, "tolerance must be positive");
    let mut state = 0x0123_4567_89ab_cdefu64;
    let mut x: Vec<f64> = (0..n)
        .map(|_| (splitmix(&mut state) >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        .collect();
    let nrm = m_norm(inner_product, &x);
    assert!(nrm > 0.0, "start vector has zero norm in the inner product");
    for e in x.iter_mut() {
        *e /= nrm;
    }
    let mut y = vec![0.0; n];
    let mut last = f64::NAN;
    for _ in 0..maxiter {
        op.apply(&x, &mut y);
        let lambda = inner_product.quadratic_form(&x, &y);
        let ynorm = m_norm(inner_product, &y);
        if ynorm <= 1e-300 {
            return Ok(0.0);
        }
        if !last.is_nan() && (lambda - last).abs() <= tol * lambda.abs().max(1.0) {
            return Ok(lambda.abs());
        }
        last = lambda;
        for i in 0..n {
            x[i] = y[i] / ynorm;
        }
    }
    Err(Error::PowerIterationStalled { last_estimate: last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::{
        assemble_mass, assemble_stiffness, build_rect_mesh, Rect, RegionIndicator,
    };
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dominant_sparse(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 4.0 + rng.gen_range(0.0..1.0)));
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    trips.push((i, j, rng.gen_range(-0.5..0.5)));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &trips)
    }

    fn to_nalgebra(a: &SparseMatrix) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(a.nrows(), a.ncols());
        for (r, c, v) in a.triplets() {
            d[(r, c)] += v;
        }
        d
    }

    #[test]
    fn lu_solves_identity_and_permutation() {
        let id = SparseMatrix::identity(5);
        let f = lu_factorize(&id).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(f.solve(&b), b);
        // Reversal permutation.
        let trips: Vec<(usize, usize, f64)> = (0..5).map(|i| (i, 4 - i, 1.0)).collect();
        let p = SparseMatrix::from_triplets(5, 5, &trips);
        let f = lu_factorize(&p).unwrap();
        let x = f.solve(&b);
        for i in 0..5 {
            assert!((x[i] - b[4 - i]).abs() < 1e-14);
        }
    }

    #[test]
    fn lu_matches_dense_oracle_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [5usize, 12, 25, 40] {
            for _ in 0..5 {
                let a = random_dominant_sparse(n, &mut rng);
                let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x = lu_factorize(&a).unwrap().solve(&b);
                let dense = to_nalgebra(&a);
                let xd = dense
                    .clone()
                    .lu()
                    .solve(&DVector::from_vec(b.clone()))
                    .unwrap();
                let mut err: f64 = 0.0;
                for i in 0..n {
                    err = err.max((x[i] - xd[i]).abs());
                }
                assert!(err < 1e-10, "n={n} max err {err}");
                let r = a.mul_vec(&x);
                let res: f64 = r
                    .iter()
                    .zip(&b)
                    .map(|(ri, bi)| (ri - bi) * (ri - bi))
                    .sum::<f64>()
                    .sqrt();
                assert!(res < 1e-10 * norm2(&b).max(1.0));
            }
        }
    }

    #[test]
    fn cholesky_solves_reduced_stiffness() {
        let mesh = build_rect_mesh(Rect::unit(), 8, 8);
        let k = assemble_stiffness(&mesh);
        let kii = k.submatrix(&mesh.interior_nodes, &mesh.interior_nodes);
        let n = kii.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = cholesky_factorize(&kii).unwrap().solve(&b);
        // Conjugate gradient oracle.
        let mut xc = vec![0.0; n];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rs = dot(&r, &r);
        for _ in 0..10 * n {
            let ap = kii.mul_vec(&p);
            let alpha = rs / dot(&p, &ap);
            for i in 0..n {
                xc[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = dot(&r, &r);
            if rs_new.sqrt() < 1e-14 * norm2(&b) {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        let mut err: f64 = 0.0;
        for i in 0..n {
            err = err.max((x[i] - xc[i]).abs());
        }
        assert!(err < 1e-9, "max deviation from cg oracle {err}");
    }

    #[test]
    fn factorization_of_zero_matrix_does_not_produce_a_finite_solve() {
        let zero = SparseMatrix::from_triplets(4, 4, &[]);
        let b = vec![1.0; 4];
        match lu_factorize(&zero) {
            Err(Error::Factorization(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
            Ok(f) => {
                let x = f.solve(&b);
                assert!(
                    x.iter().any(|v| !v.is_finite()),
                    "zero matrix solve returned finite values {x:?}"
                );
            }
        }
    }

    #[test]
    fn gmres_solves_identity_in_one_iteration() {
        let id = SparseMatrix::identity(6);
        let b = vec![1.0, 2.0, -1.0, 0.0, 4.0, -2.5];
        let out = gmres(&id, &b, 1e-12, 50, 100).unwrap();
        assert_eq!(out.iterations, 1);
        for i in 0..6 {
            assert!((out.x[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gmres_zero_rhs_returns_zero_without_iterating() {
        let id = SparseMatrix::identity(4);
        let out = gmres(&id, &[0.0; 4], 1e-12, 10, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0; 4]);
        assert!(out.residual_history.is_empty());
    }

    #[test]
    fn gmres_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [10usize, 30, 60] {
            let a = random_dominant_sparse(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = gmres(&a, &b, 1e-12, 200, 2000).unwrap();
            let xd = lu_factorize(&a).unwrap().solve(&b);
            for i in 0..n {
                assert!((out.x[i] - xd[i]).abs() < 1e-9, "n={n} entry {i}");
            }
            assert!(out.relative_residual <= 1e-12);
            // Single-cycle history is non-increasing.
            for w in out.residual_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-10), "history not monotone: {w:?}");
            }
        }
    }

    #[test]
    fn gmres_converges_with_short_restart() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 60;
        let a = random_dominant_sparse(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = gmres(&a, &b, 1e-10, 7, 2000).unwrap();
        let r = a.mul_vec(&out.x);
        let res: f64 = r
            .iter()
            .zip(&b)
            .map(|(ri, bi)| (ri - bi) * (ri - bi))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-10 * norm2(&b) * 1.01);
    }

    #[test]
    fn gmres_reports_stall_with_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 40;
        let a = random_dominant_sparse(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match gmres(&a, &b, 1e-14, 2, 5) {
            Ok(_) => panic!("expected a stall"),
            Err(Error::GmresStalled {
                iterations,
                relative_residual,
                best,
            }) => {
                assert_eq!(iterations, 5);
                assert!(relative_residual.is_finite() && relative_residual > 0.0);
                assert_eq!(best.len(), n);
                assert!(best.iter().all(|v| v.is_finite()));
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn gmres_handles_singular_consistent_systems() {
        // A = S D with S symmetric positive definite and D a 0/1 mask:
        // singular, but any right-hand side of the form S D z is in the
        // range, and the D-supported part of the solution is unique.
        let mesh = build_rect_mesh(Rect::unit(), 5, 5);
        let s = assemble_mass(&mesh, &RegionIndicator::Whole);
        let n = s.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.6))).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dz: Vec<f64> = z.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let b = s.mul_vec(&dz);
        let op = FnOperator::new(n, |x: &[f64], out: &mut [f64]| {
            let dx: Vec<f64> = x.iter().zip(&mask).map(|(a, m)| a * m).collect();
            s.mul_into(&dx, out);
        });
        let out = gmres(&op, &b, 1e-12, 200, 2000).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..n {
            err = err.max(((out.x[i] - z[i]) * mask[i]).abs());
        }
        assert!(err < 1e-8, "masked solution error {err}");
    }

    #[test]
    fn operator_implementations_are_linear() {
        let mesh = build_rect_mesh(Rect::unit(), 6, 6);
        let m = assemble_mass(&mesh, &RegionIndicator::Whole);
        let n = m.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let mut out = vec![0.0; n];
        m.apply(&combo, &mut out);
        let mx = m.mul_vec(&x);
        let my = m.mul_vec(&y);
        for i in 0..n {
            let expected = 2.0 * mx[i] - 3.0 * my[i];
            assert!((out[i] - expected).abs() < 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn power_iteration_finds_dominant_diagonal_values() {
        let two = SparseMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, 2.0), (2, 2, 2.0)]);
        let id = SparseMatrix::identity(3);
        let lam = power_iteration(&two, &id, 1e-12, 500).unwrap();
        assert!((lam - 2.0).abs() < 1e-10);
        let d = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0)]);
        let lam = power_iteration(&d, &id, 1e-12, 500).unwrap();
        assert!((lam - 3.0).abs() < 1e-8, "lambda {lam}");
        // Magnitude of a negative dominant eigenvalue.
        let d = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, -3.0), (2, 2, 2.0)]);
        let lam = power_iteration(&d, &id, 1e-12, 500).unwrap();
        assert!((lam - 3.0).abs() < 1e-8, "lambda {lam}");
    }

    #[test]
    fn power_iteration_matches_dense_symmetric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 40;
        let mut trips = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                if i == j || rng.gen_bool(0.2) {
                    let v = rng.gen_range(-1.0..1.0);
                    trips.push((i, j, v));
                    if i != j {
                        trips.push((j, i, v));
                    }
                }
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &trips);
        let id = SparseMatrix::identity(n);
        let lam = power_iteration(&a, &id, 1e-13, 20_000).unwrap();
        let eig = nalgebra::SymmetricEigen::new(to_nalgebra(&a));
        let lam_ref = eig
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        assert!(
            (lam - lam_ref).abs() < 1e-6 * lam_ref,
            "power {lam} vs dense {lam_ref}"
        );
    }

    #[test]
    fn power_iteration_handles_generalized_inner_products() {
        // Dominant eigenvalue of M^{-1} K in the M inner product, checked
        // against the dense generalized eigenproblem via a Cholesky
        // similarity transform.
        let mesh = build_rect_mesh(Rect::unit(), 5, 5);
        let k_full = assemble_stiffness(&mesh);
        let m_full = assemble_mass(&mesh, &RegionIndicator::Whole);
        let kii = k_full.submatrix(&mesh.interior_nodes, &mesh.interior_nodes);
        let mii = m_full.submatrix(&mesh.interior_nodes, &mesh.interior_nodes);
        let n = kii.nrows();
        let m_chol = cholesky_factorize(&mii).unwrap();
        let op = FnOperator::new(n, |x: &[f64], out: &mut [f64]| {
            let kx = kii.mul_vec(x);
            out.copy_from_slice(&m_chol.solve(&kx));
        });
        let lam = power_iteration(&op, &mii, 1e-12, 50_000).unwrap();
        let md = to_nalgebra(&mii);
        let kd = to_nalgebra(&kii);
        let chol = nalgebra::Cholesky::new(md).unwrap();
        let l = chol.l();
        let tmp = l.clone().solve_lower_triangular(&kd).unwrap();
        let c = l.solve_lower_triangular(&tmp.transpose()).unwrap();
        let sym = (&c + c.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        let lam_ref = eig
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        assert!(
            (lam - lam_ref).abs() < 1e-5 * lam_ref,
            "power {lam} vs dense {lam_ref}"
        );
    }

    #[test]
    fn power_iteration_returns_zero_for_the_zero_operator() {
        let zero = SparseMatrix::from_triplets(5, 5, &[]);
        let id = SparseMatrix::identity(5);
        assert_eq!(power_iteration(&zero, &id, 1e-12, 100).unwrap(), 0.0);
    }

    #[test]
    fn power_iteration_reports_slow_convergence() {
        // A Jordan block converges only like 1/k, far too slow for the
        // requested tolerance within the iteration budget.
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)]);
        let id = SparseMatrix::identity(2);
        match power_iteration(&a, &id, 1e-14, 40) {
            Ok(v) => panic!("unexpected convergence to {v}"),
            Err(Error::PowerIterationStalled { last_estimate }) => {
                assert!(last_estimate.is_finite());
                assert!((last_estimate - 1.0).abs() < 0.5);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
