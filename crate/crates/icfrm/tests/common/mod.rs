//! Shared helpers for the integration suites.

use nalgebra::DMatrix;

/// Reflexive generalized inverse of a symmetric positive semidefinite
/// matrix, built independently of the SVD/eigen route used by the library.
///
/// Pivoting on the largest remaining diagonal entry of the Schur complement
/// selects a nonsingular principal submatrix `A11` whose order equals
/// `rank(A)`. For symmetric PSD `A`, placing `A11^{-1}` on those rows and
/// columns (zero elsewhere) yields a g-inverse: `A G A = A`.
pub fn principal_block_ginverse(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square input required");

    // Greedy diagonal pivoting on a working copy of the Schur complement.
    let mut work = a.clone();
    let mut pivots: Vec<usize> = Vec::new();
    loop {
        let mut best = None;
        let mut best_val = tol;
        for i in 0..n {
            if !pivots.contains(&i) && work[(i, i)] > best_val {
                best_val = work[(i, i)];
                best = Some(i);
            }
        }
        let Some(p) = best else { break };
        pivots.push(p);
        let d = work[(p, p)];
        let col = work.column(p).clone_owned();
        for i in 0..n {
            for j in 0..n {
                work[(i, j)] -= col[i] * col[j] / d;
            }
        }
    }

    let r = pivots.len();
    let mut a11 = DMatrix::zeros(r, r);
    for (bi, &i) in pivots.iter().enumerate() {
        for (bj, &j) in pivots.iter().enumerate() {
            a11[(bi, bj)] = a[(i, j)];
        }
    }
    let a11_inv = a11.try_inverse().expect("selected principal block is nonsingular");
    let mut g = DMatrix::zeros(n, n);
    for (bi, &i) in pivots.iter().enumerate() {
        for (bj, &j) in pivots.iter().enumerate() {
            g[(i, j)] = a11_inv[(bi, bj)];
        }
    }
    g
}
