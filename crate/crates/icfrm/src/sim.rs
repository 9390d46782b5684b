//! Monte-Carlo size/power harness.
//!
//! Subject-effect generators (Cases 1-3), delta-scaled coefficient signal,
//! optional scaling by `h(t) = 1/(t + 1/43)`, and empirical rejection rates
//! for every implemented (statistic, bootstrap) pair. Outer simulation
//! replicates run in parallel, each on its own RNG stream derived from
//! `(seed, sim index)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::bootstrap_suite;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{CoefficientEstimate, CovarianceEstimate, DesignMatrix, FunctionalDataset, Hypothesis};
use crate::stats::{scale_dataset, scale_hypothesis, ScaleFunction};

pub const DEFAULT_M0: usize = 13;
/// The Wiener dispersion of Case 3 (`0.3^2`); distinct from the scale
/// function also written `h` elsewhere.
pub const WIENER_DISPERSION_SQ: f64 = 0.09;

const SIM_TAG: u64 = 0x51;

/// Subject-effect generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "lowercase")]
pub enum NoiseCase {
    /// Karhunen-Loeve sum with Gaussian scores, `lambda_s = rho^s`.
    Case1 { rho: f64 },
    /// As Case 1 with scaled t(4) scores.
    Case2 { rho: f64 },
    /// Wiener paths with dispersion `0.3^2`.
    Case3,
}

impl NoiseCase {
    pub fn label(&self) -> String {
        match self {
            NoiseCase::Case1 { rho } => format!("case1(rho={rho})"),
            NoiseCase::Case2 { rho } => format!("case2(rho={rho})"),
            NoiseCase::Case3 => "case3".into(),
        }
    }
}

/// Fourier rows `psi_1 = 1, psi_2r = sqrt(2) sin(2 pi r t),
/// psi_{2r+1} = sqrt(2) cos(2 pi r t)`, in that order.
pub fn fourier_basis(grid: &TimeGrid, m0: usize) -> Result<DMatrix<f64>> {
    if m0 % 2 == 0 {
        return Err(Error::InvalidInput(format!("m0 must be odd, got {m0}")));
    }
    let t_len = grid.len();
    let mut basis = DMatrix::zeros(m0, t_len);
    for (j, &t) in grid.points().iter().enumerate() {
        basis[(0, j)] = 1.0;
        for r in 1..=(m0 - 1) / 2 {
            let angle = 2.0 * std::f64::consts::PI * r as f64 * t;
            basis[(2 * r - 1, j)] = std::f64::consts::SQRT_2 * angle.sin();
            basis[(2 * r, j)] = std::f64::consts::SQRT_2 * angle.cos();
        }
    }
    Ok(basis)
}

/// Draw `n` subject-effect curves on the grid.
pub fn gen_subject_effects(
    case: NoiseCase,
    n: usize,
    grid: &TimeGrid,
    m0: usize,
    rng: &mut impl Rng,
) -> Result<FunctionalDataset> {
    let t_len = grid.len();
    let values = match case {
        NoiseCase::Case1 { rho } | NoiseCase::Case2 { rho } => {
            if !(0.0..1.0).contains(&rho) || rho == 0.0 {
                return Err(Error::InvalidInput(format!("rho must be in (0,1), got {rho}")));
            }
            let basis = fourier_basis(grid, m0)?;
            let lambda: Vec<f64> = (1..=m0).map(|s| rho.powi(s as i32)).collect();
            let t4 = StudentT::new(4.0).expect("valid dof");
            let mut scores = DMatrix::zeros(n, m0);
            for i in 0..n {
                for s in 0..m0 {
                    let score = match case {
                        NoiseCase::Case1 { .. } => {
                            let z: f64 = StandardNormal.sample(rng);
                            lambda[s].sqrt() * z
                        }
                        _ => lambda[s].sqrt() * t4.sample(rng) / std::f64::consts::SQRT_2,
                    };
                    scores[(i, s)] = score;
                }
            }
            scores * basis
        }
        NoiseCase::Case3 => {
            let pts = grid.points();
            let mut values = DMatrix::zeros(n, t_len);
            for i in 0..n {
                // Wiener restriction to the grid: start at N(0, h^2 t_1),
                // then independent increments N(0, h^2 dt).
                let mut level = {
                    let z: f64 = StandardNormal.sample(rng);
                    z * (WIENER_DISPERSION_SQ * pts[0]).sqrt()
                };
                values[(i, 0)] = level;
                for j in 1..t_len {
                    let z: f64 = StandardNormal.sample(rng);
                    level += z * (WIENER_DISPERSION_SQ * (pts[j] - pts[j - 1])).sqrt();
                    values[(i, j)] = level;
                }
            }
            values
        }
    };
    FunctionalDataset::new(grid.clone(), values)
}

/// `y = X beta + v`.
pub fn gen_responses(
    d: &DesignMatrix,
    beta: &CoefficientEstimate,
    v: &FunctionalDataset,
) -> Result<FunctionalDataset> {
    if v.n_curves() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} noise curves vs {} design rows",
            v.n_curves(),
            d.n()
        )));
    }
    if beta.beta_hat.nrows() != d.n_params() || beta.grid.len() != v.grid.len() {
        return Err(Error::DimensionMismatch(
            "coefficient estimate does not match design/grid".into(),
        ));
    }
    let values = d.x() * &beta.beta_hat + &v.values;
    FunctionalDataset::new(v.grid.clone(), values)
}

/// One scenario of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub case: NoiseCase,
    pub delta: f64,
    pub n_sims: usize,
    pub m_boot: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub apply_scaling: bool,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    pub seed: u64,
    #[serde(default = "default_m0")]
    pub m0: usize,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_grid_size() -> usize {
    43
}
fn default_m0() -> usize {
    DEFAULT_M0
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(Error::InvalidInput(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if self.n_sims == 0 {
            return Err(Error::InvalidInput("n_sims must be at least 1".into()));
        }
        if self.m_boot == 0 {
            return Err(Error::InvalidInput("m_boot must be at least 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidInput("delta must be nonnegative".into()));
        }
        if self.m0 % 2 == 0 {
            return Err(Error::InvalidInput("m0 must be odd".into()));
        }
        Ok(())
    }
}

/// Rejection rates for the six implemented (statistic, bootstrap) pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TestRates {
    pub t_nb: f64,
    pub f_nb: f64,
    pub g_nb: f64,
    pub g_pb: f64,
    pub fmax_nb: f64,
    pub fmax_pb: f64,
}

impl TestRates {
    pub const LABELS: [&'static str; 6] = ["T_nb", "F_nb", "G_nb", "G_pb", "Fmax_nb", "Fmax_pb"];

    pub fn as_array(&self) -> [f64; 6] {
        [self.t_nb, self.f_nb, self.g_nb, self.g_pb, self.fmax_nb, self.fmax_pb]
    }
}

/// Empirical rejection rates for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizePowerReport {
    pub label: String,
    pub delta: f64,
    pub n_sims: usize,
    pub rates: TestRates,
    pub wall_secs: f64,
}

fn aggregate(rejections: &[[bool; 6]], n_sims: usize) -> TestRates {
    let mut counts = [0usize; 6];
    for r in rejections {
        for (c, &b) in counts.iter_mut().zip(r.iter()) {
            if b {
                *c += 1;
            }
        }
    }
    let rate = |c: usize| c as f64 / n_sims as f64;
    TestRates {
        t_nb: rate(counts[0]),
        f_nb: rate(counts[1]),
        g_nb: rate(counts[2]),
        g_pb: rate(counts[3]),
        fmax_nb: rate(counts[4]),
        fmax_pb: rate(counts[5]),
    }
}

/// Run one scenario: `n_sims` replicates of draw-noise, build-responses,
/// test-everything. Deterministic for a fixed config.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    d: &DesignMatrix,
    h: &Hypothesis,
    beta_ref: &CoefficientEstimate,
) -> Result<SizePowerReport> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let grid = resolve_grid(cfg.grid_size, beta_ref)?;
    let beta = resample_beta(beta_ref, &grid)?.scaled(cfg.delta);
    let hypothesis = with_grid(h, grid.len())?;
    let scale = cfg
        .apply_scaling
        .then(|| ScaleFunction::reciprocal_shift(&grid))
        .transpose()?;
    let rejections: Vec<Result<[bool; 6]>> = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::stream(cfg.seed, &[SIM_TAG, i]);
            let v = gen_subject_effects(cfg.case, d.n(), &grid, cfg.m0, &mut rng)?;
            let y = gen_responses(d, &beta, &v)?;
            let boot_seed: u64 = rng.gen();
            let (y, hyp) = match &scale {
                Some(hfun) => (
                    scale_dataset(&y, hfun)?,
                    scale_hypothesis(&hypothesis, hfun)?,
                ),
                None => (y, hypothesis.clone()),
            };
            let suite = bootstrap_suite(&y, d, &hyp, cfg.m_boot, boot_seed)?;
            let a = cfg.alpha;
            Ok([
                suite.t_nb <= a,
                suite.f_nb <= a,
                suite.g_nb <= a,
                suite.g_pb <= a,
                suite.fmax_nb <= a,
                suite.fmax_pb <= a,
            ])
        })
        .collect();
    let rejections: Vec<[bool; 6]> = rejections.into_iter().collect::<Result<_>>()?;
    Ok(SizePowerReport {
        label: format!(
            "{}{} delta={}",
            cfg.case.label(),
            if cfg.apply_scaling { " scaled" } else { "" },
            cfg.delta
        ),
        delta: cfg.delta,
        n_sims: cfg.n_sims,
        rates: aggregate(&rejections, cfg.n_sims),
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Mean structure of the data-driven simulation.
#[derive(Debug, Clone)]
pub enum RealDataMean {
    /// `beta = 0`: type I error study.
    Null,
    /// `beta = beta_hat`: power study.
    Fitted(CoefficientEstimate),
}

/// Simulation mimicking the real data: Gaussian curves with a given
/// covariance, mean either zero or `X beta_hat`.
#[allow(clippy::too_many_arguments)]
pub fn realdata_simulation(
    sigma: &CovarianceEstimate,
    d: &DesignMatrix,
    h: &Hypothesis,
    mean: &RealDataMean,
    n_sims: usize,
    m_boot: usize,
    alpha: f64,
    seed: u64,
) -> Result<SizePowerReport> {
    if n_sims == 0 || m_boot == 0 {
        return Err(Error::InvalidInput("n_sims and m_boot must be positive".into()));
    }
    let start = std::time::Instant::now();
    let grid = sigma.grid.clone();
    let factor = gaussian_factor(&sigma.gamma_hat)?;
    let fitted_mean = match mean {
        RealDataMean::Null => None,
        RealDataMean::Fitted(beta) => Some(d.x() * &beta.beta_hat),
    };
    let rejections: Vec<Result<[bool; 6]>> = (0..n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::stream(seed, &[SIM_TAG, 1, i]);
            let n = d.n();
            let r = factor.ncols();
            let z = DMatrix::from_fn(n, r, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let mut values = z * factor.transpose();
            if let Some(m) = &fitted_mean {
                values += m;
            }
            let boot_seed: u64 = rng.gen();
            let y = FunctionalDataset::new(grid.clone(), values)?;
            let suite = bootstrap_suite(&y, d, h, m_boot, boot_seed)?;
            Ok([
                suite.t_nb <= alpha,
                suite.f_nb <= alpha,
                suite.g_nb <= alpha,
                suite.g_pb <= alpha,
                suite.fmax_nb <= alpha,
                suite.fmax_pb <= alpha,
            ])
        })
        .collect();
    let rejections: Vec<[bool; 6]> = rejections.into_iter().collect::<Result<_>>()?;
    Ok(SizePowerReport {
        label: match mean {
            RealDataMean::Null => "realdata beta=0".into(),
            RealDataMean::Fitted(_) => "realdata beta=beta_hat".into(),
        },
        delta: match mean {
            RealDataMean::Null => 0.0,
            RealDataMean::Fitted(_) => 1.0,
        },
        n_sims,
        rates: aggregate(&rejections, n_sims),
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Sample covariance of the curves themselves (not the model residuals),
/// for the data-driven simulation.
pub fn sample_covariance(y: &FunctionalDataset) -> CovarianceEstimate {
    let n = y.n_curves();
    let t_len = y.n_points();
    let mut centered = y.values.clone();
    for j in 0..t_len {
        let mean = centered.column(j).sum() / n as f64;
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let raw = centered.transpose() * &centered / (n - 1) as f64;
    CovarianceEstimate {
        grid: y.grid.clone(),
        gamma_hat: (&raw + raw.transpose()) * 0.5,
        dof: n - 1,
    }
}

fn gaussian_factor(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t_len = gamma.nrows();
    let eig = gamma.clone().symmetric_eigen();
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

fn resolve_grid(grid_size: usize, beta_ref: &CoefficientEstimate) -> Result<TimeGrid> {
    if grid_size == beta_ref.grid.len() {
        Ok(beta_ref.grid.clone())
    } else {
        TimeGrid::unit_uniform(grid_size)
    }
}

/// Linear interpolation of the reference coefficients onto a target grid.
fn resample_beta(beta: &CoefficientEstimate, grid: &TimeGrid) -> Result<CoefficientEstimate> {
    if beta.grid.len() == grid.len() && beta.grid.points() == grid.points() {
        return Ok(beta.clone());
    }
    let src = beta.grid.points();
    let p = beta.beta_hat.nrows();
    let mut out = DMatrix::zeros(p, grid.len());
    for (j, &t) in grid.points().iter().enumerate() {
        let hi = src.partition_point(|&s| s < t).min(src.len() - 1).max(1);
        let lo = hi - 1;
        let w = ((t - src[lo]) / (src[hi] - src[lo])).clamp(0.0, 1.0);
        for i in 0..p {
            out[(i, j)] = (1.0 - w) * beta.beta_hat[(i, lo)] + w * beta.beta_hat[(i, hi)];
        }
    }
    CoefficientEstimate::new(grid.clone(), out)
}

fn with_grid(h: &Hypothesis, t_len: usize) -> Result<Hypothesis> {
    if h.c_funcs.ncols() == t_len {
        Ok(h.clone())
    } else if h.c_funcs.amax() == 0.0 {
        Hypothesis::with_zero_null(h.c_matrix.clone(), t_len)
    } else {
        Err(Error::DimensionMismatch(
            "hypothesis null values do not match the simulation grid".into(),
        ))
    }
}
