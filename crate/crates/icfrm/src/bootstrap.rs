//! Bootstrap null distributions and p-values.
//!
//! Two resampling schemes build the null distribution of a statistic:
//!
//! - nonparametric: resample estimated subject-effect curves with
//!   replacement, rebuild responses around the fitted mean, and center the
//!   replicate SSH at `beta_hat`;
//! - parametric: sample zero-mean Gaussian curves with covariance
//!   `gamma_hat` (eigendecomposition factor, negative eigenvalues clipped to
//!   zero) and leave the replicate SSH centered at zero.
//!
//! The p-value is the fraction of replicates strictly greater than the
//! observed statistic. Replicate RNG streams are derived from
//! `(seed, replicate index)`, so results are identical under any thread
//! count.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_estimable, estimate_beta, estimate_covariance, CoefficientEstimate, CovarianceEstimate,
    DesignMatrix, FunctionalDataset, Hypothesis,
};
use crate::stats::{
    decompose, ratio_curve, statistic, MiddleFactor, StatisticKind, ESTIMABILITY_TOL,
};

// stream-path tags keeping the two bootstrap families on disjoint streams
const NB_TAG: u64 = 0xb0;
const PB_TAG: u64 = 0xb1;

const MAX_REDRAWS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BootstrapKind {
    Nonparametric,
    Parametric,
}

impl BootstrapKind {
    pub fn label(&self) -> &'static str {
        match self {
            BootstrapKind::Nonparametric => "nb",
            BootstrapKind::Parametric => "pb",
        }
    }
}

/// Outcome of one bootstrap test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: StatisticKind,
    pub bootstrap: BootstrapKind,
    pub observed: f64,
    pub p_value: f64,
    pub m_replicates: usize,
    pub seed: u64,
    pub replicates: Option<Vec<f64>>,
}

/// Residual curves `v_hat_i(t) = y_i(t) - x_i' beta_hat(t)`.
pub fn residual_functions(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    beta: &CoefficientEstimate,
) -> Result<FunctionalDataset> {
    if y.n_curves() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} curves vs {} design rows",
            y.n_curves(),
            d.n()
        )));
    }
    let values = &y.values - d.x() * &beta.beta_hat;
    FunctionalDataset::new(y.grid.clone(), values)
}

/// All four replicate statistics computed from one bootstrap draw.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateStats {
    pub t_l2: f64,
    pub f_ratio: f64,
    pub g_global: f64,
    pub f_max: f64,
    /// False when the draw had a zero SSE at some grid point, making the
    /// ratio statistics undefined.
    pub ratio_defined: bool,
}

impl ReplicateStats {
    pub fn get(&self, kind: StatisticKind) -> f64 {
        match kind {
            StatisticKind::TL2 => self.t_l2,
            StatisticKind::FRatio => self.f_ratio,
            StatisticKind::GGlobal => self.g_global,
            StatisticKind::FMax => self.f_max,
        }
    }
}

/// Precomputed state shared by every replicate of a bootstrap run.
pub struct BootstrapContext<'a> {
    d: &'a DesignMatrix,
    grid: crate::grid::TimeGrid,
    q: usize,
    factor: MiddleFactor,
    c_matrix: &'a DMatrix<f64>,
    /// `C beta_hat`, the nonparametric centering term (q x T).
    c_beta_hat: DMatrix<f64>,
    /// Fitted mean `X beta_hat` (n x T).
    fitted: DMatrix<f64>,
    /// Residual curves (n x T).
    residuals: DMatrix<f64>,
    /// Covariance factor `L` with `gamma_hat ~= L L'` (T x r).
    cov_factor: DMatrix<f64>,
}

impl<'a> BootstrapContext<'a> {
    pub fn new(y: &FunctionalDataset, d: &'a DesignMatrix, h: &'a Hypothesis) -> Result<Self> {
        if !check_estimable(h, d, ESTIMABILITY_TOL)? {
            return Err(Error::NotEstimable);
        }
        let factor = MiddleFactor::new(d, h)?;
        let beta = estimate_beta(y, d)?;
        let gamma = estimate_covariance(y, d)?;
        let fitted = d.x() * &beta.beta_hat;
        let residuals = &y.values - &fitted;
        let c_beta_hat = &h.c_matrix * &beta.beta_hat;
        let cov_factor = covariance_factor(&gamma)?;
        Ok(BootstrapContext {
            d,
            grid: y.grid.clone(),
            q: h.q(),
            factor,
            c_matrix: &h.c_matrix,
            c_beta_hat,
            fitted,
            residuals,
            cov_factor,
        })
    }

    fn n(&self) -> usize {
        self.fitted.nrows()
    }

    fn t_len(&self) -> usize {
        self.grid.len()
    }

    /// One nonparametric draw with the degenerate-SSE redraw policy applied.
    ///
    /// Returns the replicate statistics and the number of redraws consumed.
    pub fn nonparametric_replicate(&self, seed: u64, m: u64) -> Result<(ReplicateStats, u64)> {
        for attempt in 0..MAX_REDRAWS {
            let mut rng = crate::rng::stream(seed, &[NB_TAG, m, attempt]);
            let n = self.n();
            let t_len = self.t_len();
            let mut y_star = self.fitted.clone();
            for i in 0..n {
                let pick = rng.gen_range(0..n);
                for j in 0..t_len {
                    y_star[(i, j)] += self.residuals[(pick, j)];
                }
            }
            let stats = self.replicate_from_sample(&y_star, true)?;
            if stats.ratio_defined {
                return Ok((stats, attempt));
            }
        }
        Err(Error::Numeric(
            "nonparametric bootstrap: degenerate SSE persisted across redraws".into(),
        ))
    }

    /// One parametric draw: Gaussian curves with covariance `gamma_hat`.
    pub fn parametric_replicate(&self, seed: u64, m: u64) -> Result<ReplicateStats> {
        let mut rng = crate::rng::stream(seed, &[PB_TAG, m]);
        let n = self.n();
        let r = self.cov_factor.ncols();
        let z = DMatrix::from_fn(n, r, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let y_star = z * self.cov_factor.transpose();
        self.replicate_from_sample(&y_star, false)
    }

    /// Replicate statistics for an already-sampled response matrix.
    ///
    /// `center_at_beta_hat` selects the nonparametric SSH centering; the
    /// parametric branch keeps SSH centered at zero.
    fn replicate_from_sample(
        &self,
        y_star: &DMatrix<f64>,
        center_at_beta_hat: bool,
    ) -> Result<ReplicateStats> {
        let beta_star = self.d.beta_operator() * y_star;
        let mut deviations = self.c_matrix * &beta_star;
        if center_at_beta_hat {
            deviations -= &self.c_beta_hat;
        }
        let ssh = self.factor.ssh_curve(&deviations);
        let resid_star = y_star - self.d.x() * &beta_star;
        let t_len = self.t_len();
        let mut sse = vec![0.0; t_len];
        for j in 0..t_len {
            sse[j] = resid_star.column(j).norm_squared();
        }
        let q = self.q as f64;
        let dof = self.d.dof() as f64;
        let t_l2 = self.grid.integrate(&ssh)?;
        let sse_int = self.grid.integrate(&sse)?;
        let f_ratio = if sse_int > 0.0 {
            (t_l2 / q) / (sse_int / dof)
        } else {
            f64::INFINITY
        };
        let ratio_defined = sse.iter().all(|&s| s > 0.0);
        let (g_global, f_max) = if ratio_defined {
            let gamma_diag: Vec<f64> = sse.iter().map(|&s| s / dof).collect();
            let ratio = ratio_curve(&ssh, &gamma_diag)?;
            (
                self.grid.integrate(&ratio)? / q,
                ratio.iter().cloned().fold(0.0_f64, f64::max) / q,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(ReplicateStats {
            t_l2,
            f_ratio,
            g_global,
            f_max,
            ratio_defined,
        })
    }

    /// All replicate statistics for one bootstrap family, ordered by index.
    pub fn replicates(
        &self,
        bootstrap: BootstrapKind,
        m: usize,
        seed: u64,
    ) -> Result<Vec<ReplicateStats>> {
        let results: Vec<Result<(ReplicateStats, u64)>> = (0..m as u64)
            .into_par_iter()
            .map(|idx| match bootstrap {
                BootstrapKind::Nonparametric => self.nonparametric_replicate(seed, idx),
                BootstrapKind::Parametric => self.parametric_replicate(seed, idx).map(|s| (s, 0)),
            })
            .collect();
        let mut stats = Vec::with_capacity(m);
        let mut redraws = 0;
        for r in results {
            let (s, redrawn) = r?;
            redraws += redrawn;
            stats.push(s);
        }
        if m > 0 && redraws as f64 / m as f64 > 0.01 {
            log::warn!(
                "bootstrap redraw rate {:.2}% exceeds 1% ({} redraws over {} replicates)",
                100.0 * redraws as f64 / m as f64,
                redraws,
                m
            );
        }
        Ok(stats)
    }
}

/// Eigendecomposition factor of `gamma_hat` with negative eigenvalues
/// clipped to zero.
fn covariance_factor(gamma: &CovarianceEstimate) -> Result<DMatrix<f64>> {
    let t_len = gamma.gamma_hat.nrows();
    let eig = gamma.gamma_hat.clone().symmetric_eigen();
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("covariance eigendecomposition failed".into()));
    }
    let kept: Vec<usize> = (0..t_len).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
    let mut factor = DMatrix::zeros(t_len, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        for row in 0..t_len {
            factor[(row, col)] = eig.eigenvectors[(row, i)] * scale;
        }
    }
    Ok(factor)
}

fn p_value(observed: f64, replicates: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut count = 0usize;
    let mut total = 0usize;
    for r in replicates {
        total += 1;
        if r > observed {
            count += 1;
        }
    }
    (count as f64 / total.max(1) as f64, total)
}

/// Run one bootstrap test: observed statistic against `c(t)`, `m` replicates,
/// strict-inequality p-value.
pub fn bootstrap_test(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    h: &Hypothesis,
    kind: StatisticKind,
    bootstrap: BootstrapKind,
    m: usize,
    seed: u64,
) -> Result<TestResult> {
    bootstrap_test_impl(y, d, h, kind, bootstrap, m, seed, false)
}

/// As `bootstrap_test`, keeping the replicate vector in the result.
pub fn bootstrap_test_with_replicates(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    h: &Hypothesis,
    kind: StatisticKind,
    bootstrap: BootstrapKind,
    m: usize,
    seed: u64,
) -> Result<TestResult> {
    bootstrap_test_impl(y, d, h, kind, bootstrap, m, seed, true)
}

#[allow(clippy::too_many_arguments)]
fn bootstrap_test_impl(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    h: &Hypothesis,
    kind: StatisticKind,
    bootstrap: BootstrapKind,
    m: usize,
    seed: u64,
    keep_replicates: bool,
) -> Result<TestResult> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    let dec = decompose(y, d, h)?;
    let observed = statistic(&dec, kind)?;
    let ctx = BootstrapContext::new(y, d, h)?;
    let reps = ctx.replicates(bootstrap, m, seed)?;
    let values: Vec<f64> = reps.iter().map(|r| r.get(kind)).collect();
    let (p, _) = p_value(observed, values.iter().cloned());
    Ok(TestResult {
        kind,
        bootstrap,
        observed,
        p_value: p,
        m_replicates: m,
        seed,
        replicates: keep_replicates.then_some(values),
    })
}

/// P-values for the whole battery from shared bootstrap draws:
/// `T^nb, F^nb, G^nb, G^pb, Fmax^nb, Fmax^pb`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteResult {
    pub observed: [f64; 4],
    pub t_nb: f64,
    pub f_nb: f64,
    pub g_nb: f64,
    pub g_pb: f64,
    pub fmax_nb: f64,
    pub fmax_pb: f64,
    pub m_replicates: usize,
    pub seed: u64,
}

impl SuiteResult {
    pub fn p_for(&self, kind: StatisticKind, bootstrap: BootstrapKind) -> Option<f64> {
        match (kind, bootstrap) {
            (StatisticKind::TL2, BootstrapKind::Nonparametric) => Some(self.t_nb),
            (StatisticKind::FRatio, BootstrapKind::Nonparametric) => Some(self.f_nb),
            (StatisticKind::GGlobal, BootstrapKind::Nonparametric) => Some(self.g_nb),
            (StatisticKind::GGlobal, BootstrapKind::Parametric) => Some(self.g_pb),
            (StatisticKind::FMax, BootstrapKind::Nonparametric) => Some(self.fmax_nb),
            (StatisticKind::FMax, BootstrapKind::Parametric) => Some(self.fmax_pb),
            _ => None,
        }
    }
}

/// Run every reported test off one pair of replicate sets (one nonparametric,
/// one parametric), reusing draws across statistics exactly as a single
/// simulation replicate would.
pub fn bootstrap_suite(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    h: &Hypothesis,
    m: usize,
    seed: u64,
) -> Result<SuiteResult> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    let dec = decompose(y, d, h)?;
    let observed = [
        statistic(&dec, StatisticKind::TL2)?,
        statistic(&dec, StatisticKind::FRatio)?,
        statistic(&dec, StatisticKind::GGlobal)?,
        statistic(&dec, StatisticKind::FMax)?,
    ];
    let ctx = BootstrapContext::new(y, d, h)?;
    let nb = ctx.replicates(BootstrapKind::Nonparametric, m, seed)?;
    let pb = ctx.replicates(BootstrapKind::Parametric, m, seed)?;
    let p_of = |obs: f64, vals: Box<dyn Iterator<Item = f64> + '_>| p_value(obs, vals).0;
    Ok(SuiteResult {
        observed,
        t_nb: p_of(observed[0], Box::new(nb.iter().map(|r| r.t_l2))),
        f_nb: p_of(observed[1], Box::new(nb.iter().map(|r| r.f_ratio))),
        g_nb: p_of(observed[2], Box::new(nb.iter().map(|r| r.g_global))),
        g_pb: p_of(observed[2], Box::new(pb.iter().map(|r| r.g_global))),
        fmax_nb: p_of(observed[3], Box::new(nb.iter().map(|r| r.f_max))),
        fmax_pb: p_of(observed[3], Box::new(pb.iter().map(|r| r.f_max))),
        m_replicates: m,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::model::build_design;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn toy_problem(seed: u64) -> (FunctionalDataset, DesignMatrix, Hypothesis) {
        let mut rng = crate::rng::stream(seed, &[42]);
        let x = DMatrix::from_fn(10, 4, |i, j| match j {
            0 => 1.0,
            1 => (i % 2) as f64,
            2 => 1.0 - (i % 2) as f64,
            _ => if i < 5 { 1.0 } else { 0.0 },
        });
        let d = build_design(x).unwrap();
        let grid = TimeGrid::unit_uniform(15).unwrap();
        let values = DMatrix::from_fn(10, 15, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let y = FunctionalDataset::new(grid, values).unwrap();
        let c = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, -1.0, 0.0]);
        let h = Hypothesis::with_zero_null(c, 15).unwrap();
        (y, d, h)
    }

    #[test]
    fn residuals_match_projector_product() {
        let (y, d, _) = toy_problem(1);
        let beta = estimate_beta(&y, &d).unwrap();
        let resid = residual_functions(&y, &d, &beta).unwrap();
        let projected = d.residual_projector() * &y.values;
        assert!((&resid.values - projected).amax() < 1e-10);
        assert!((d.x().transpose() * &resid.values).amax() < 1e-8);
    }

    #[test]
    fn noise_free_data_gives_zero_residuals() {
        let (_, d, _) = toy_problem(2);
        let grid = TimeGrid::unit_uniform(15).unwrap();
        let b = DMatrix::from_fn(4, 15, |i, j| (i * j) as f64 * 0.1);
        // project onto fitted space so the model holds exactly
        let yv = d.x() * d.beta_operator() * (d.x() * b);
        let y = FunctionalDataset::new(grid, yv).unwrap();
        let beta = estimate_beta(&y, &d).unwrap();
        let resid = residual_functions(&y, &d, &beta).unwrap();
        assert!(resid.values.amax() < 1e-8);
    }

    #[test]
    fn identity_resample_gives_zero_ratio_replicate() {
        let (y, d, h) = toy_problem(3);
        let ctx = BootstrapContext::new(&y, &d, &h).unwrap();
        // force the identity resample by rebuilding y_star = fitted + residuals
        let y_star = &ctx.fitted + &ctx.residuals;
        let stats = ctx.replicate_from_sample(&y_star, true).unwrap();
        assert!(stats.g_global.abs() < 1e-8);
        assert!(stats.f_max.abs() < 1e-8);
    }

    #[test]
    fn distinct_seeds_give_distinct_replicates() {
        let (y, d, h) = toy_problem(4);
        let ctx = BootstrapContext::new(&y, &d, &h).unwrap();
        let (a, _) = ctx.nonparametric_replicate(1, 0).unwrap();
        let (b, _) = ctx.nonparametric_replicate(2, 0).unwrap();
        assert_ne!(a.g_global, b.g_global);
        let pa = ctx.parametric_replicate(1, 0).unwrap();
        let pb = ctx.parametric_replicate(2, 0).unwrap();
        assert_ne!(pa.g_global, pb.g_global);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (y, d, h) = toy_problem(5);
        let r1 = bootstrap_test(&y, &d, &h, StatisticKind::GGlobal, BootstrapKind::Nonparametric, 200, 9)
            .unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r2 = pool
            .install(|| {
                bootstrap_test(
                    &y,
                    &d,
                    &h,
                    StatisticKind::GGlobal,
                    BootstrapKind::Nonparametric,
                    200,
                    9,
                )
            })
            .unwrap();
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.observed, r2.observed);
    }

    #[test]
    fn zero_observed_statistic_has_p_near_one() {
        let (y, d, mut h) = toy_problem(6);
        let beta = estimate_beta(&y, &d).unwrap();
        h.c_funcs = &h.c_matrix * &beta.beta_hat;
        let r = bootstrap_test(&y, &d, &h, StatisticKind::GGlobal, BootstrapKind::Nonparametric, 300, 3)
            .unwrap();
        assert!(r.observed.abs() < 1e-12);
        assert!(r.p_value > 0.95);
    }

    #[test]
    fn zero_m_is_an_input_error() {
        let (y, d, h) = toy_problem(7);
        assert!(bootstrap_test(&y, &d, &h, StatisticKind::GGlobal, BootstrapKind::Nonparametric, 0, 1)
            .is_err());
    }

    #[test]
    fn p_values_live_on_the_bootstrap_lattice() {
        let (y, d, h) = toy_problem(8);
        let m = 37;
        for bootstrap in [BootstrapKind::Nonparametric, BootstrapKind::Parametric] {
            let r = bootstrap_test(&y, &d, &h, StatisticKind::FMax, bootstrap, m, 5).unwrap();
            let scaled = r.p_value * m as f64;
            assert!((scaled - scaled.round()).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn parametric_identity_covariance_has_unit_variance_samples() {
        // context whose gamma_hat is (close to) the identity
        let (y, d, h) = toy_problem(9);
        let mut ctx = BootstrapContext::new(&y, &d, &h).unwrap();
        let t_len = y.grid.len();
        ctx.cov_factor = DMatrix::identity(t_len, t_len);
        let mut mean_sq = vec![0.0; t_len];
        let draws = 2000 / y.n_curves();
        let mut total = 0usize;
        for m in 0..draws as u64 {
            let mut rng = crate::rng::stream(7, &[PB_TAG, m]);
            let z = DMatrix::from_fn(y.n_curves(), t_len, |_, _| {
                rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng)
            });
            let y_star = z * ctx.cov_factor.transpose();
            for i in 0..y.n_curves() {
                for j in 0..t_len {
                    mean_sq[j] += y_star[(i, j)] * y_star[(i, j)];
                }
                total += 1;
            }
        }
        for v in &mean_sq {
            let var = v / total as f64;
            assert!((var - 1.0).abs() < 0.1, "empirical variance {var}");
        }
    }

    #[test]
    fn zero_covariance_gives_zero_parametric_replicates() {
        let (y, d, h) = toy_problem(10);
        let mut ctx = BootstrapContext::new(&y, &d, &h).unwrap();
        ctx.cov_factor = DMatrix::zeros(y.grid.len(), 0);
        let r = ctx.parametric_replicate(1, 0).unwrap();
        assert_eq!(r.t_l2, 0.0);
        assert!(!r.ratio_defined);
    }

    #[test]
    fn nonparametric_p_values_are_scale_invariant_with_shared_seed() {
        let (y, d, h) = toy_problem(11);
        let hfun = crate::stats::ScaleFunction::reciprocal_shift(&y.grid).unwrap();
        let ys = crate::stats::scale_dataset(&y, &hfun).unwrap();
        let hs = crate::stats::scale_hypothesis(&h, &hfun).unwrap();
        for kind in [StatisticKind::GGlobal, StatisticKind::FMax] {
            let a = bootstrap_test(&y, &d, &h, kind, BootstrapKind::Nonparametric, 400, 17).unwrap();
            let b = bootstrap_test(&ys, &d, &hs, kind, BootstrapKind::Nonparametric, 400, 17).unwrap();
            assert_eq!(a.p_value, b.p_value);
        }
    }

    #[test]
    fn suite_matches_individual_tests() {
        let (y, d, h) = toy_problem(12);
        let suite = bootstrap_suite(&y, &d, &h, 150, 23).unwrap();
        let g_nb = bootstrap_test(&y, &d, &h, StatisticKind::GGlobal, BootstrapKind::Nonparametric, 150, 23)
            .unwrap();
        let fmax_pb =
            bootstrap_test(&y, &d, &h, StatisticKind::FMax, BootstrapKind::Parametric, 150, 23).unwrap();
        assert_eq!(suite.g_nb, g_nb.p_value);
        assert_eq!(suite.fmax_pb, fmax_pb.p_value);
    }
}
