//! Data model and rank-deficient estimation.
//!
//! The functional response model is `y_i(t) = x_i' beta(t) + v_i(t)` on a
//! common grid. The design matrix may be rank deficient; estimation goes
//! through the Moore-Penrose inverse of `X'X`, and only estimable functions
//! `C beta(t)` are meaningful downstream.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Tolerance below which a clamped variance diagonal is treated as a bug
/// rather than rounding noise.
pub const VARIANCE_FLOOR: f64 = -1e-10;

/// `n` response curves evaluated on a shared grid (rows are curves).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub grid: TimeGrid,
    pub values: DMatrix<f64>,
}

impl FunctionalDataset {
    pub fn new(grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidInput("dataset needs at least one curve".into()));
        }
        if values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} value columns vs {} grid points",
                values.ncols(),
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("functional dataset"));
        }
        Ok(FunctionalDataset { grid, values })
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }
}

/// Design matrix with cached pseudoinverse machinery.
///
/// `rank_k` is the single source of truth for degrees of freedom `n - k`
/// everywhere in the crate.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    rank_k: usize,
    xtx_pinv: DMatrix<f64>,
    residual_projector: DMatrix<f64>,
    // xtx_pinv * X', applied to response columns to get beta_hat
    beta_operator: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.x.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank_k
    }

    pub fn dof(&self) -> usize {
        self.n() - self.rank_k
    }

    pub fn xtx_pinv(&self) -> &DMatrix<f64> {
        &self.xtx_pinv
    }

    /// `I_n - X (X'X)^+ X'`.
    pub fn residual_projector(&self) -> &DMatrix<f64> {
        &self.residual_projector
    }

    /// `(X'X)^+ X'`, the operator mapping responses to coefficient estimates.
    pub fn beta_operator(&self) -> &DMatrix<f64> {
        &self.beta_operator
    }
}

/// `beta_hat(t)` on the grid, one column per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub grid: TimeGrid,
    pub beta_hat: DMatrix<f64>,
}

impl CoefficientEstimate {
    pub fn new(grid: TimeGrid, beta_hat: DMatrix<f64>) -> Result<Self> {
        if beta_hat.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient columns vs {} grid points",
                beta_hat.ncols(),
                grid.len()
            )));
        }
        if !beta_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("coefficient estimate"));
        }
        Ok(CoefficientEstimate { grid, beta_hat })
    }

    /// Scale every coefficient function by `factor`.
    pub fn scaled(&self, factor: f64) -> CoefficientEstimate {
        CoefficientEstimate {
            grid: self.grid.clone(),
            beta_hat: &self.beta_hat * factor,
        }
    }
}

/// Gridded covariance estimate `gamma_hat(s, t)` with its degrees of freedom.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub grid: TimeGrid,
    pub gamma_hat: DMatrix<f64>,
    pub dof: usize,
}

impl CovarianceEstimate {
    /// Diagonal `gamma_hat(t, t)` with small negative rounding clamped to 0.
    ///
    /// Values below the `VARIANCE_FLOOR` signal a bug and error out.
    pub fn clamped_diagonal(&self) -> Result<Vec<f64>> {
        self.gamma_hat
            .diagonal()
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v < VARIANCE_FLOOR {
                    Err(Error::Numeric(format!(
                        "gamma_hat diagonal {v:e} below floor at grid index {j}"
                    )))
                } else {
                    Ok(v.max(0.0))
                }
            })
            .collect()
    }
}

/// A testable hypothesis `H0: C beta(t) = c(t)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub c_matrix: DMatrix<f64>,
    pub c_funcs: DMatrix<f64>,
}

impl Hypothesis {
    pub fn new(c_matrix: DMatrix<f64>, c_funcs: DMatrix<f64>) -> Result<Self> {
        if c_matrix.nrows() != c_funcs.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} contrast rows vs {} null-value rows",
                c_matrix.nrows(),
                c_funcs.nrows()
            )));
        }
        if !c_matrix.iter().all(|v| v.is_finite()) || !c_funcs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("hypothesis"));
        }
        let rank = matrix_rank(&c_matrix);
        if rank != c_matrix.nrows() {
            return Err(Error::InvalidInput(format!(
                "contrast matrix must have full row rank ({} rows, rank {rank})",
                c_matrix.nrows()
            )));
        }
        Ok(Hypothesis { c_matrix, c_funcs })
    }

    /// Hypothesis with zero null-value functions on a grid of length `t`.
    pub fn with_zero_null(c_matrix: DMatrix<f64>, t: usize) -> Result<Self> {
        let q = c_matrix.nrows();
        Hypothesis::new(c_matrix, DMatrix::zeros(q, t))
    }

    pub fn q(&self) -> usize {
        self.c_matrix.nrows()
    }
}

fn svd_rank_tol(sigma_max: f64, nrows: usize, ncols: usize) -> f64 {
    nrows.max(ncols) as f64 * f64::EPSILON * sigma_max
}

/// Numerical rank via singular values above the relative cutoff.
pub fn matrix_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = svd_rank_tol(smax, a.nrows(), a.ncols());
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `max_dim * eps * lambda_max` are treated as zero.
pub fn moore_penrose_pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("pseudoinverse input"));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "pseudoinverse input must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let m = a.nrows();
    let sym_tol = 1e-8 * (1.0 + a.amax());
    for i in 0..m {
        for j in (i + 1)..m {
            if (a[(i, j)] - a[(j, i)]).abs() > sym_tol {
                return Err(Error::InvalidInput(
                    "pseudoinverse input must be symmetric".into(),
                ));
            }
        }
    }
    // Symmetrize exactly so the eigendecomposition sees a symmetric matrix.
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = svd_rank_tol(lambda_max, m, m);
    let mut pinv = DMatrix::zeros(m, m);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > tol {
            let v = eig.eigenvectors.column(idx);
            pinv += v * v.transpose() / lambda;
        }
    }
    Ok(pinv)
}

/// Build a design matrix with its pseudoinverse machinery.
pub fn build_design(x: DMatrix<f64>) -> Result<DesignMatrix> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    let rank_k = matrix_rank(&x);
    let xtx = x.transpose() * &x;
    let xtx_pinv = moore_penrose_pinv(&xtx)?;
    let beta_operator = &xtx_pinv * x.transpose();
    let hat = &x * &beta_operator;
    let residual_projector = DMatrix::identity(x.nrows(), x.nrows()) - hat;
    Ok(DesignMatrix {
        x,
        rank_k,
        xtx_pinv,
        residual_projector,
        beta_operator,
    })
}

/// `beta_hat(t) = (X'X)^+ X' y(t)` on the grid.
pub fn estimate_beta(y: &FunctionalDataset, d: &DesignMatrix) -> Result<CoefficientEstimate> {
    if y.n_curves() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} curves vs {} design rows",
            y.n_curves(),
            d.n()
        )));
    }
    let beta_hat = d.beta_operator() * &y.values;
    CoefficientEstimate::new(y.grid.clone(), beta_hat)
}

/// Unbiased covariance estimate `gamma_hat = Y' R Y / (n - k)`.
pub fn estimate_covariance(y: &FunctionalDataset, d: &DesignMatrix) -> Result<CovarianceEstimate> {
    if y.n_curves() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} curves vs {} design rows",
            y.n_curves(),
            d.n()
        )));
    }
    if d.n() <= d.rank() {
        return Err(Error::DegreesOfFreedom {
            n: d.n(),
            rank: d.rank(),
        });
    }
    let ry = d.residual_projector() * &y.values;
    let raw = y.values.transpose() * ry / d.dof() as f64;
    let gamma_hat = (&raw + raw.transpose()) * 0.5;
    Ok(CovarianceEstimate {
        grid: y.grid.clone(),
        gamma_hat,
        dof: d.dof(),
    })
}

/// Estimability check: `C (X'X)^+ (X'X) = C` elementwise within `tol`.
pub fn check_estimable(h: &Hypothesis, d: &DesignMatrix, tol: f64) -> Result<bool> {
    if h.c_matrix.ncols() != d.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "{} contrast columns vs {} design parameters",
            h.c_matrix.ncols(),
            d.n_params()
        )));
    }
    let xtx = d.x().transpose() * d.x();
    let projected = &h.c_matrix * d.xtx_pinv() * xtx;
    let diff = &projected - &h.c_matrix;
    Ok(diff.amax() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_penrose(a: &DMatrix<f64>, pinv: &DMatrix<f64>, tol: f64) {
        let apa = a * pinv * a;
        let pap = pinv * a * pinv;
        let ap = a * pinv;
        let pa = pinv * a;
        assert!((apa - a).amax() < tol, "A A+ A = A violated");
        assert!((pap - pinv).amax() < tol, "A+ A A+ = A+ violated");
        assert!((&ap - ap.transpose()).amax() < tol, "A A+ symmetry violated");
        assert!((&pa - pa.transpose()).amax() < tol, "A+ A symmetry violated");
    }

    #[test]
    fn pinv_identity() {
        let i3 = DMatrix::identity(3, 3);
        let p = moore_penrose_pinv(&i3).unwrap();
        assert!((p - i3).amax() < 1e-12);
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]));
        let p = moore_penrose_pinv(&a).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(1, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_rejects_asymmetric_and_nonfinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(moore_penrose_pinv(&a).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, f64::NAN]);
        assert!(moore_penrose_pinv(&b).is_err());
    }

    #[test]
    fn pinv_satisfies_penrose_conditions_on_random_psd() {
        let mut rng = crate::rng::stream(11, &[0]);
        use rand::Rng;
        // low-rank PSD: B B' with B 6x3
        let b = DMatrix::from_fn(6, 3, |_, _| rng.gen::<f64>() - 0.5);
        let a = &b * b.transpose();
        let p = moore_penrose_pinv(&a).unwrap();
        assert_penrose(&a, &p, 1e-10);
    }

    #[test]
    fn identity_design_has_zero_residual_projector() {
        let d = build_design(DMatrix::identity(5, 5)).unwrap();
        assert_eq!(d.rank(), 5);
        assert!(d.residual_projector().amax() < 1e-12);
    }

    #[test]
    fn duplicated_column_rank_matches_row_reduction_oracle() {
        // 6x4 with column 3 duplicating column 1
        let x = DMatrix::from_row_slice(
            6,
            4,
            &[
                1.0, 2.0, 0.5, 2.0, //
                1.0, 0.0, 1.5, 0.0, //
                1.0, 1.0, -1.0, 1.0, //
                1.0, 3.0, 0.0, 3.0, //
                1.0, -1.0, 2.0, -1.0, //
                1.0, 0.5, 1.0, 0.5,
            ],
        );
        assert_eq!(gaussian_elimination_rank(&x), 3);
        let d = build_design(x).unwrap();
        assert_eq!(d.rank(), 3);
        // projector properties
        let p = d.residual_projector();
        assert!((p * p - p).amax() < 1e-10);
        assert!((p * d.x()).amax() < 1e-8);
        assert_penrose(&(d.x().transpose() * d.x()), d.xtx_pinv(), 1e-8);
    }

    // brute-force rank oracle, independent of the SVD path
    fn gaussian_elimination_rank(a: &DMatrix<f64>) -> usize {
        let mut m = a.clone();
        let (rows, cols) = m.shape();
        let mut rank = 0;
        for col in 0..cols {
            let pivot = (rank..rows).max_by(|&i, &j| {
                m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap()
            });
            let Some(p) = pivot else { break };
            if m[(p, col)].abs() < 1e-9 {
                continue;
            }
            m.swap_rows(rank, p);
            for i in (rank + 1)..rows {
                let f = m[(i, col)] / m[(rank, col)];
                for j in col..cols {
                    m[(i, j)] -= f * m[(rank, j)];
                }
            }
            rank += 1;
            if rank == rows {
                break;
            }
        }
        rank
    }

    #[test]
    fn full_rank_design_reduces_to_ols() {
        let mut rng = crate::rng::stream(5, &[0]);
        use rand::Rng;
        let x = DMatrix::from_fn(10, 3, |_, _| rng.gen::<f64>());
        let grid = TimeGrid::unit_uniform(4).unwrap();
        let yv = DMatrix::from_fn(10, 4, |_, _| rng.gen::<f64>());
        let y = FunctionalDataset::new(grid, yv.clone()).unwrap();
        let d = build_design(x.clone()).unwrap();
        assert_eq!(d.rank(), 3);
        let beta = estimate_beta(&y, &d).unwrap();
        let xtx = x.transpose() * &x;
        let ols = xtx.try_inverse().unwrap() * x.transpose() * yv;
        assert!((beta.beta_hat - ols).amax() < 1e-8);
    }

    #[test]
    fn noise_free_estimable_contrast_recovers_truth() {
        // 6x4 rank-3 design; estimable C rows lie in row space of X
        let x = DMatrix::from_row_slice(
            6,
            4,
            &[
                1.0, 1.0, 0.0, 1.0, //
                1.0, 1.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 1.0, //
                1.0, 0.0, 1.0, 1.0, //
                1.0, 1.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 1.0,
            ],
        );
        let d = build_design(x.clone()).unwrap();
        let grid = TimeGrid::unit_uniform(5).unwrap();
        let b_true = DMatrix::from_fn(4, 5, |i, j| (i + 1) as f64 * (j as f64 + 0.5));
        let y = FunctionalDataset::new(grid.clone(), &x * &b_true).unwrap();
        let beta = estimate_beta(&y, &d).unwrap();
        // C = (0, 1, -1, 0) is in the row space (difference of run types)
        let c = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, -1.0, 0.0]);
        let h = Hypothesis::with_zero_null(c.clone(), 5).unwrap();
        assert!(check_estimable(&h, &d, 1e-8).unwrap());
        let cb_hat = &c * &beta.beta_hat;
        let cb_true = &c * &b_true;
        assert!((cb_hat - cb_true).amax() < 1e-8);
        // a single-coefficient selector is not estimable here
        let bad = Hypothesis::with_zero_null(
            DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.0, 0.0]),
            5,
        )
        .unwrap();
        assert!(!check_estimable(&bad, &d, 1e-8).unwrap());
    }

    #[test]
    fn zero_residual_data_gives_zero_covariance() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let d = build_design(x.clone()).unwrap();
        let grid = TimeGrid::unit_uniform(3).unwrap();
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let y = FunctionalDataset::new(grid, &x * b).unwrap();
        let gamma = estimate_covariance(&y, &d).unwrap();
        assert!(gamma.gamma_hat.amax() < 1e-10);
        assert_eq!(gamma.dof, 2);
    }

    #[test]
    fn residual_orthogonality() {
        let mut rng = crate::rng::stream(3, &[1]);
        use rand::Rng;
        let x = DMatrix::from_fn(8, 3, |_, _| rng.gen::<f64>());
        let d = build_design(x).unwrap();
        let yv = DMatrix::from_fn(8, 6, |_, _| rng.gen::<f64>() * 10.0);
        let resid = d.residual_projector() * &yv;
        assert!((d.x().transpose() * resid).amax() < 1e-8);
    }

    #[test]
    fn covariance_needs_positive_dof() {
        let d = build_design(DMatrix::identity(3, 3)).unwrap();
        let grid = TimeGrid::unit_uniform(2).unwrap();
        let y = FunctionalDataset::new(grid, DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(
            estimate_covariance(&y, &d),
            Err(Error::DegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn hypothesis_requires_full_row_rank() {
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(Hypothesis::with_zero_null(c, 4).is_err());
    }
}
