//! Bundled stand-in for the audible-noise data.
//!
//! The measured sound-pressure curves are distributed externally (see
//! `data::DATA_URL`) and cannot ship with the crate. Simulations need a
//! reference coefficient fit, so this module builds a deterministic
//! surrogate: 36 synthetic decibel curves on the same design, with
//! main-effect contrast functions whose magnitudes and shapes mirror the
//! measured data (factor G strongest, factor F localized in a narrow speed
//! band, factors B and E near zero). `reference_beta` is the generalized-
//! inverse fit of this surrogate and is the default `beta_ref` for the
//! simulation harness. Point the CLI at a downloaded copy of the real data
//! to use it instead.

use nalgebra::DMatrix;

use crate::data::{build_factorial_design, RawNoiseTable, N_RUNS, N_SPEEDS};
use crate::grid::TimeGrid;
use crate::model::{estimate_beta, CoefficientEstimate, FunctionalDataset};
use crate::sim::{gen_subject_effects, NoiseCase, DEFAULT_M0};

const NOISE_SEED: u64 = 0x5e_11a;
const NOISE_SD_DB: f64 = 0.9;

/// Main-effect contrast functions `alpha_i1(t) - alpha_i2(t)` in decibels.
pub fn contrast_functions(grid: &TimeGrid) -> [Vec<f64>; 7] {
    let f = |shape: &dyn Fn(f64) -> f64| -> Vec<f64> {
        grid.points().iter().map(|&t| shape(t)).collect()
    };
    // Effects are small at low speed, grow with speed, and share a
    // resonance bump in the upper speed band.
    let bump = |t: f64| (-((t - 0.65) / 0.12).powi(2)).exp();
    [
        // A: moderate, growing with speed
        f(&move |t| 1.2 * t * (0.3 + 0.7 * t) + 0.8 * bump(t)),
        // B: small
        f(&|t| 0.35 * (std::f64::consts::PI * t).sin()),
        // C: moderate
        f(&move |t| 0.9 * t * (1.0 - 0.55 * t) + 0.5 * bump(t)),
        // D: strong, growing
        f(&move |t| 1.6 * (0.25 + 0.75 * t) + 1.2 * bump(t)),
        // E: small mid-band hump
        f(&|t| 0.4 * 4.0 * t * (1.0 - t)),
        // F: narrow high-speed bump
        f(&|t| 2.0 * (-((t - 0.75) / 0.08).powi(2)).exp()),
        // G: strongest
        f(&move |t| 8.2 * (0.15 + 0.85 * t) + 5.6 * bump(t)),
    ]
}

/// Cell-means coefficient functions (15 x T): grand mean plus half the
/// contrast on each factor's two levels.
pub fn surrogate_coefficients(grid: &TimeGrid) -> DMatrix<f64> {
    let t_len = grid.len();
    let contrasts = contrast_functions(grid);
    let mut beta = DMatrix::zeros(15, t_len);
    for (j, &t) in grid.points().iter().enumerate() {
        beta[(0, j)] = 70.0 + 8.0 * t - 2.0 * (2.0 * std::f64::consts::PI * t).cos();
    }
    for (factor, g) in contrasts.iter().enumerate() {
        for (j, &gj) in g.iter().enumerate() {
            beta[(2 * factor + 1, j)] = 0.5 * gj;
            beta[(2 * factor + 2, j)] = -0.5 * gj;
        }
    }
    beta
}

fn rpm_grid() -> Vec<f64> {
    (0..N_SPEEDS)
        .map(|j| 1000.0 + 1500.0 * j as f64 / (N_SPEEDS - 1) as f64)
        .collect()
}

/// The surrogate table: `X beta + noise` on the 36-run design, one fixed
/// realization.
pub fn surrogate_noise_table() -> RawNoiseTable {
    let grid = TimeGrid::unit_uniform(N_SPEEDS).expect("valid grid");
    let d = build_factorial_design();
    let beta = surrogate_coefficients(&grid);
    let mut rng = crate::rng::stream(NOISE_SEED, &[0]);
    let v = gen_subject_effects(NoiseCase::Case1 { rho: 0.5 }, N_RUNS, &grid, DEFAULT_M0, &mut rng)
        .expect("noise generation");
    let spl = d.x() * beta + v.values * NOISE_SD_DB;
    RawNoiseTable {
        rpm_grid: rpm_grid(),
        spl,
        run_labels: (1..=N_RUNS).map(|i| format!("run{i:02}")).collect(),
    }
}

/// The surrogate curves on the unit grid.
pub fn surrogate_dataset() -> FunctionalDataset {
    surrogate_noise_table()
        .to_dataset()
        .expect("surrogate dataset is well formed")
}

/// Reference coefficient fit used as `beta_ref` by the simulation harness.
pub fn reference_beta() -> CoefficientEstimate {
    let d = build_factorial_design();
    let y = surrogate_dataset();
    estimate_beta(&y, &d).expect("surrogate fit")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_contrast, FactorSelector};

    #[test]
    fn surrogate_is_deterministic() {
        let a = surrogate_noise_table();
        let b = surrogate_noise_table();
        assert_eq!(a.spl, b.spl);
    }

    #[test]
    fn fitted_contrasts_recover_the_construction() {
        // estimable contrasts of the fit equal the built-in contrast
        // functions up to the noise fit error
        let beta = reference_beta();
        let grid = beta.grid.clone();
        let truth = contrast_functions(&grid);
        let all = build_contrast(FactorSelector::All, grid.len()).unwrap();
        let fitted = &all.c_matrix * &beta.beta_hat;
        for f in 0..7 {
            for j in 0..grid.len() {
                let err = (fitted[(f, j)] - truth[f][j]).abs();
                assert!(err < 1.5, "factor {f} grid {j}: err {err}");
            }
        }
        // factor G has the largest mean absolute contrast
        let mean_abs: Vec<f64> = (0..7)
            .map(|f| fitted.row(f).iter().map(|v| v.abs()).sum::<f64>() / grid.len() as f64)
            .collect();
        let max_idx = (0..7).max_by(|&a, &b| mean_abs[a].partial_cmp(&mean_abs[b]).unwrap());
        assert_eq!(max_idx, Some(6), "mean abs contrasts: {mean_abs:?}");
    }
}
