//! Pointwise SSH/SSE decomposition and the four global test statistics.
//!
//! Statistics:
//! - `T_L2`: integrated SSH
//! - `F_ratio`: (integrated SSH / q) / (integrated SSE / (n - k))
//! - `G_global`: (1/q) * integral of SSH(t) / gamma_hat(t, t)
//! - `F_max`: (1/q) * max over the grid of SSH(t) / gamma_hat(t, t)
//!
//! The pointwise ratio SSH(t) / gamma_hat(t, t) is scale-invariant, so
//! `G_global` and `F_max` do not change when responses and null values are
//! multiplied by a fixed non-vanishing function. `T_L2` and `F_ratio` do.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{
    check_estimable, estimate_beta, estimate_covariance, DesignMatrix, FunctionalDataset,
    Hypothesis,
};

pub const ESTIMABILITY_TOL: f64 = 1e-8;
const MIN_SCALE: f64 = 1e-12;

/// The four global statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatisticKind {
    /// Integrated SSH (the L2-norm statistic).
    TL2,
    /// Integrated-SSH over integrated-SSE F ratio.
    FRatio,
    /// Globalizing pointwise F statistic.
    GGlobal,
    /// Supremum of the pointwise F curve.
    FMax,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 4] = [
        StatisticKind::TL2,
        StatisticKind::FRatio,
        StatisticKind::GGlobal,
        StatisticKind::FMax,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            StatisticKind::TL2 => "T",
            StatisticKind::FRatio => "F",
            StatisticKind::GGlobal => "G",
            StatisticKind::FMax => "Fmax",
        }
    }

    /// True for the statistics built on the pointwise ratio curve.
    pub fn is_scale_invariant(&self) -> bool {
        matches!(self, StatisticKind::GGlobal | StatisticKind::FMax)
    }
}

/// Fixed scale function `h(t)` on the grid, non-vanishing everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFunction {
    values: Vec<f64>,
}

impl ScaleFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (j, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("scale function"));
            }
            if v.abs() < MIN_SCALE {
                return Err(Error::InvalidScale(j));
            }
        }
        Ok(ScaleFunction { values })
    }

    /// The reference scaling `h(t) = 1 / (t + 1/43)` on a unit grid.
    pub fn reciprocal_shift(grid: &TimeGrid) -> Result<Self> {
        ScaleFunction::new(grid.points().iter().map(|t| 1.0 / (t + 1.0 / 43.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn inverse(&self) -> ScaleFunction {
        ScaleFunction {
            values: self.values.iter().map(|v| 1.0 / v).collect(),
        }
    }
}

/// Per-grid-point building blocks of every statistic.
#[derive(Debug, Clone)]
pub struct PointwiseDecomposition {
    pub grid: TimeGrid,
    pub ssh: Vec<f64>,
    pub sse: Vec<f64>,
    pub gamma_diag: Vec<f64>,
    pub q: usize,
    pub dof: usize,
}

/// Cholesky factor of the middle matrix `C (X'X)^+ C'`, reused across grid
/// points and bootstrap replicates.
pub(crate) struct MiddleFactor {
    chol: Cholesky<f64, Dyn>,
}

impl MiddleFactor {
    pub(crate) fn new(d: &DesignMatrix, h: &Hypothesis) -> Result<Self> {
        let middle = &h.c_matrix * d.xtx_pinv() * h.c_matrix.transpose();
        let sym = (&middle + middle.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if lmin <= 0.0 {
            return Err(Error::SingularMiddleMatrix);
        }
        if lmax / lmin > 1e12 {
            log::warn!(
                "middle matrix condition number {:.3e} exceeds 1e12",
                lmax / lmin
            );
        }
        let chol = Cholesky::new(sym).ok_or(Error::SingularMiddleMatrix)?;
        Ok(MiddleFactor { chol })
    }

    /// SSH curve for a matrix of per-point deviation columns (q x T).
    pub(crate) fn ssh_curve(&self, deviations: &DMatrix<f64>) -> Vec<f64> {
        let solved = self.chol.solve(deviations);
        (0..deviations.ncols())
            .map(|j| deviations.column(j).dot(&solved.column(j)).max(0.0))
            .collect()
    }
}

/// Pointwise SSH/SSE decomposition for a testable hypothesis.
pub fn decompose(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    h: &Hypothesis,
) -> Result<PointwiseDecomposition> {
    if h.c_funcs.ncols() != y.grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} null-value columns vs {} grid points",
            h.c_funcs.ncols(),
            y.grid.len()
        )));
    }
    if !check_estimable(h, d, ESTIMABILITY_TOL)? {
        return Err(Error::NotEstimable);
    }
    let factor = MiddleFactor::new(d, h)?;
    let beta = estimate_beta(y, d)?;
    let gamma = estimate_covariance(y, d)?;
    let deviations = &h.c_matrix * &beta.beta_hat - &h.c_funcs;
    let ssh = factor.ssh_curve(&deviations);
    let gamma_diag = gamma.clamped_diagonal()?;
    let dof = d.dof();
    let sse = gamma_diag.iter().map(|g| dof as f64 * g).collect();
    Ok(PointwiseDecomposition {
        grid: y.grid.clone(),
        ssh,
        sse,
        gamma_diag,
        q: h.q(),
        dof,
    })
}

/// Evaluate one global statistic from a decomposition.
pub fn statistic(dec: &PointwiseDecomposition, kind: StatisticKind) -> Result<f64> {
    let q = dec.q as f64;
    match kind {
        StatisticKind::TL2 => dec.grid.integrate(&dec.ssh),
        StatisticKind::FRatio => {
            let num = dec.grid.integrate(&dec.ssh)? / q;
            let den = dec.grid.integrate(&dec.sse)? / dec.dof as f64;
            Ok(num / den)
        }
        StatisticKind::GGlobal | StatisticKind::FMax => {
            let ratio = ratio_curve(&dec.ssh, &dec.gamma_diag)?;
            match kind {
                StatisticKind::GGlobal => Ok(dec.grid.integrate(&ratio)? / q),
                _ => Ok(ratio.iter().cloned().fold(0.0_f64, f64::max) / q),
            }
        }
    }
}

/// Pointwise `ssh[j] / gamma_diag[j]`; errors on a degenerate variance.
pub(crate) fn ratio_curve(ssh: &[f64], gamma_diag: &[f64]) -> Result<Vec<f64>> {
    ssh.iter()
        .zip(gamma_diag)
        .enumerate()
        .map(|(j, (&s, &g))| {
            if g <= 0.0 {
                Err(Error::DegenerateVariance(j))
            } else {
                Ok(s / g)
            }
        })
        .collect()
}

/// Multiply every curve pointwise by `h(t)`.
pub fn scale_dataset(y: &FunctionalDataset, h: &ScaleFunction) -> Result<FunctionalDataset> {
    if h.values().len() != y.grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scale values vs {} grid points",
            h.values().len(),
            y.grid.len()
        )));
    }
    let mut values = y.values.clone();
    for (j, &hj) in h.values().iter().enumerate() {
        values.column_mut(j).scale_mut(hj);
    }
    FunctionalDataset::new(y.grid.clone(), values)
}

/// Scale the null-value functions: `c^h(t) = h(t) c(t)`.
pub fn scale_hypothesis(hyp: &Hypothesis, h: &ScaleFunction) -> Result<Hypothesis> {
    if h.values().len() != hyp.c_funcs.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} scale values vs {} null-value columns",
            h.values().len(),
            hyp.c_funcs.ncols()
        )));
    }
    let mut c_funcs = hyp.c_funcs.clone();
    for (j, &hj) in h.values().iter().enumerate() {
        c_funcs.column_mut(j).scale_mut(hj);
    }
    Hypothesis::new(hyp.c_matrix.clone(), c_funcs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_design;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn toy_problem(seed: u64) -> (FunctionalDataset, DesignMatrix, Hypothesis) {
        let mut rng = crate::rng::stream(seed, &[9]);
        // rank-deficient 8x4 design with two run types
        let x = DMatrix::from_fn(8, 4, |i, j| match j {
            0 => 1.0,
            1 => (i % 2) as f64,
            2 => 1.0 - (i % 2) as f64,
            _ => 1.0,
        });
        let d = build_design(x).unwrap();
        assert_eq!(d.rank(), 2);
        let grid = TimeGrid::unit_uniform(12).unwrap();
        let values = DMatrix::from_fn(8, 12, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let y = FunctionalDataset::new(grid, values).unwrap();
        let c = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, -1.0, 0.0]);
        let h = Hypothesis::with_zero_null(c, 12).unwrap();
        (y, d, h)
    }

    #[test]
    fn ssh_vanishes_at_the_estimate() {
        let (y, d, mut h) = toy_problem(1);
        let beta = crate::model::estimate_beta(&y, &d).unwrap();
        h.c_funcs = &h.c_matrix * &beta.beta_hat;
        let dec = decompose(&y, &d, &h).unwrap();
        assert!(dec.ssh.iter().all(|&s| s.abs() < 1e-18));
        for kind in StatisticKind::ALL {
            assert_abs_diff_eq!(statistic(&dec, kind).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn q1_ssh_matches_scalar_formula() {
        let (y, d, h) = toy_problem(2);
        let dec = decompose(&y, &d, &h).unwrap();
        let beta = crate::model::estimate_beta(&y, &d).unwrap();
        let c = &h.c_matrix;
        let denom = (c * d.xtx_pinv() * c.transpose())[(0, 0)];
        for j in 0..y.grid.len() {
            let num = (c * beta.beta_hat.column(j))[(0, 0)];
            assert_abs_diff_eq!(dec.ssh[j], num * num / denom, epsilon = 1e-10);
        }
    }

    #[test]
    fn sse_is_dof_times_gamma_diag() {
        let (y, d, h) = toy_problem(3);
        let dec = decompose(&y, &d, &h).unwrap();
        for j in 0..dec.sse.len() {
            assert_abs_diff_eq!(
                dec.sse[j],
                dec.dof as f64 * dec.gamma_diag[j],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn constant_ratio_gives_dof_for_f_g_fmax() {
        let grid = TimeGrid::unit_uniform(10).unwrap();
        let dof = 7usize;
        let dec = PointwiseDecomposition {
            grid,
            ssh: vec![3.0; 10],
            sse: vec![3.0; 10],
            gamma_diag: vec![3.0 / dof as f64; 10],
            q: 1,
            dof,
        };
        assert_abs_diff_eq!(
            statistic(&dec, StatisticKind::FRatio).unwrap(),
            dof as f64,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            statistic(&dec, StatisticKind::GGlobal).unwrap(),
            dof as f64,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            statistic(&dec, StatisticKind::FMax).unwrap(),
            dof as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn non_estimable_hypothesis_is_rejected() {
        let (y, d, _) = toy_problem(4);
        let bad = Hypothesis::with_zero_null(
            DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.0, 0.0]),
            12,
        )
        .unwrap();
        assert!(matches!(
            decompose(&y, &d, &bad),
            Err(Error::NotEstimable)
        ));
    }

    #[test]
    fn degenerate_variance_errors_for_ratio_statistics() {
        let grid = TimeGrid::unit_uniform(5).unwrap();
        let dec = PointwiseDecomposition {
            grid,
            ssh: vec![1.0; 5],
            sse: vec![0.0; 5],
            gamma_diag: vec![1.0, 1.0, 0.0, 1.0, 1.0],
            q: 1,
            dof: 4,
        };
        assert!(matches!(
            statistic(&dec, StatisticKind::GGlobal),
            Err(Error::DegenerateVariance(2))
        ));
        assert!(matches!(
            statistic(&dec, StatisticKind::FMax),
            Err(Error::DegenerateVariance(2))
        ));
    }

    #[test]
    fn scale_then_unscale_recovers_input() {
        let (y, _, _) = toy_problem(5);
        let h = ScaleFunction::reciprocal_shift(&y.grid).unwrap();
        let back = scale_dataset(&scale_dataset(&y, &h).unwrap(), &h.inverse()).unwrap();
        assert!((back.values - &y.values).amax() < 1e-12);
    }

    #[test]
    fn scale_function_rejects_near_zero() {
        assert!(matches!(
            ScaleFunction::new(vec![1.0, 1e-13, 2.0]),
            Err(Error::InvalidScale(1))
        ));
    }

    #[test]
    fn ratio_statistics_are_scale_invariant_but_t_and_f_are_not() {
        let (y, d, h) = toy_problem(6);
        let dec = decompose(&y, &d, &h).unwrap();
        let mut rng = crate::rng::stream(6, &[77]);
        for _ in 0..100 {
            let hv: Vec<f64> = (0..y.grid.len())
                .map(|_| {
                    let v: f64 = rng.gen::<f64>() * 3.0 + 0.1;
                    if rng.gen::<bool>() {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let hfun = ScaleFunction::new(hv).unwrap();
            let ys = scale_dataset(&y, &hfun).unwrap();
            let hs = scale_hypothesis(&h, &hfun).unwrap();
            let dec_s = decompose(&ys, &d, &hs).unwrap();
            for j in 0..y.grid.len() {
                let r = dec.ssh[j] / dec.gamma_diag[j];
                let rs = dec_s.ssh[j] / dec_s.gamma_diag[j];
                assert!((r - rs).abs() <= 1e-9 * r.abs().max(1.0));
            }
            for kind in [StatisticKind::GGlobal, StatisticKind::FMax] {
                let a = statistic(&dec, kind).unwrap();
                let b = statistic(&dec_s, kind).unwrap();
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
        // the non-invariance witness
        let hfun = ScaleFunction::reciprocal_shift(&y.grid).unwrap();
        let ys = scale_dataset(&y, &hfun).unwrap();
        let hs = scale_hypothesis(&h, &hfun).unwrap();
        let dec_s = decompose(&ys, &d, &hs).unwrap();
        for kind in [StatisticKind::TL2, StatisticKind::FRatio] {
            let a = statistic(&dec, kind).unwrap();
            let b = statistic(&dec_s, kind).unwrap();
            assert!((a - b).abs() > 1e-3 * a.abs());
        }
    }

    #[test]
    fn statistics_are_nonnegative_and_fmax_dominates_integral_on_unit_grid() {
        for seed in 0..20 {
            let (y, d, h) = toy_problem(100 + seed);
            let dec = decompose(&y, &d, &h).unwrap();
            for kind in StatisticKind::ALL {
                assert!(statistic(&dec, kind).unwrap() >= 0.0);
            }
            let g = statistic(&dec, StatisticKind::GGlobal).unwrap();
            let fmax = statistic(&dec, StatisticKind::FMax).unwrap();
            assert!(fmax >= g - 1e-12);
        }
    }
}
