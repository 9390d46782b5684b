//! Audible-noise dataset ingestion, the 36x15 factorial design, and the
//! 7x15 main-effect contrast matrix.
//!
//! The experiment is a 2^(7-2) fractional factorial in seven two-level
//! factors A-G plus four replicated runs at the high levels: 36 runs, each
//! measured at 43 rotating speeds from 1000 to 2500 rpm. The coding is
//! cell-means with intercept: a ones column followed by two indicator
//! columns per factor, giving a 36x15 design of rank 8.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{build_design, DesignMatrix, FunctionalDataset, Hypothesis};

pub const FACTOR_NAMES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];
pub const N_RUNS: usize = 36;
pub const N_SPEEDS: usize = 43;

/// Download location for the audible noise data (the monograph page that
/// distributes it).
pub const DATA_URL: &str =
    "https://blog.nus.edu.sg/stazjt2020/research/monographs/analysis-of-variance-for-functional-data/";

/// The 36x15 design matrix, row for row.
#[rustfmt::skip]
const DESIGN_ROWS: [[u8; 15]; N_RUNS] = [
    [1,1,0,1,0,1,0,1,0,1,0,0,1,0,1],
    [1,1,0,1,0,1,0,1,0,0,1,0,1,1,0],
    [1,1,0,1,0,1,0,0,1,1,0,1,0,1,0],
    [1,1,0,1,0,1,0,0,1,0,1,1,0,0,1],
    [1,1,0,1,0,0,1,1,0,1,0,1,0,0,1],
    [1,1,0,1,0,0,1,1,0,0,1,1,0,1,0],
    [1,1,0,1,0,0,1,0,1,1,0,0,1,1,0],
    [1,1,0,1,0,0,1,0,1,0,1,0,1,0,1],
    [1,1,0,0,1,1,0,1,0,1,0,1,0,1,0],
    [1,1,0,0,1,1,0,1,0,0,1,1,0,0,1],
    [1,1,0,0,1,1,0,0,1,1,0,0,1,0,1],
    [1,1,0,0,1,1,0,0,1,0,1,0,1,1,0],
    [1,1,0,0,1,0,1,1,0,1,0,0,1,1,0],
    [1,1,0,0,1,0,1,1,0,0,1,0,1,0,1],
    [1,1,0,0,1,0,1,0,1,1,0,1,0,0,1],
    [1,1,0,0,1,0,1,0,1,0,1,1,0,1,0],
    [1,0,1,1,0,1,0,1,0,1,0,1,0,1,0],
    [1,0,1,1,0,1,0,1,0,0,1,1,0,0,1],
    [1,0,1,1,0,1,0,0,1,1,0,0,1,0,1],
    [1,0,1,1,0,1,0,0,1,0,1,0,1,1,0],
    [1,0,1,1,0,0,1,1,0,1,0,0,1,1,0],
    [1,0,1,1,0,0,1,1,0,0,1,0,1,0,1],
    [1,0,1,1,0,0,1,0,1,1,0,1,0,0,1],
    [1,0,1,1,0,0,1,0,1,0,1,1,0,1,0],
    [1,0,1,0,1,1,0,1,0,1,0,0,1,0,1],
    [1,0,1,0,1,1,0,1,0,0,1,0,1,1,0],
    [1,0,1,0,1,1,0,0,1,1,0,1,0,1,0],
    [1,0,1,0,1,1,0,0,1,0,1,1,0,0,1],
    [1,0,1,0,1,0,1,1,0,1,0,1,0,0,1],
    [1,0,1,0,1,0,1,1,0,0,1,1,0,1,0],
    [1,0,1,0,1,0,1,0,1,1,0,0,1,1,0],
    [1,0,1,0,1,0,1,0,1,0,1,0,1,0,1],
    [1,0,1,0,1,0,1,0,1,0,1,0,1,0,1],
    [1,0,1,0,1,0,1,0,1,0,1,0,1,0,1],
    [1,0,1,0,1,0,1,0,1,0,1,0,1,0,1],
    [1,0,1,0,1,0,1,0,1,0,1,0,1,0,1],
];

/// The raw 36x15 matrix entries.
pub fn factorial_design_entries() -> DMatrix<f64> {
    DMatrix::from_fn(N_RUNS, 15, |i, j| DESIGN_ROWS[i][j] as f64)
}

/// Build the factorial design with its pseudoinverse machinery (rank 8).
pub fn build_factorial_design() -> DesignMatrix {
    build_design(factorial_design_entries()).expect("embedded design matrix is valid")
}

/// Factor selector for the contrast builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorSelector {
    /// One of the seven factors, 1-based (1 = A, ..., 7 = G).
    Factor(usize),
    /// The full 7-row main-effect contrast matrix.
    All,
}

impl FactorSelector {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ALL" => Ok(FactorSelector::All),
            other => {
                let idx = FACTOR_NAMES
                    .iter()
                    .position(|&n| n == other)
                    .map(|i| i + 1)
                    .or_else(|| other.parse::<usize>().ok().filter(|i| (1..=7).contains(i)));
                idx.map(FactorSelector::Factor).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "unknown factor {s:?} (expected A-G, 1-7 or \"all\")"
                    ))
                })
            }
        }
    }
}

fn contrast_row(factor: usize) -> [f64; 15] {
    let mut row = [0.0; 15];
    row[2 * factor - 1] = 1.0;
    row[2 * factor] = -1.0;
    row
}

/// Main-effect contrast hypothesis with zero null-value functions on a grid
/// of `t_len` points.
pub fn build_contrast(selector: FactorSelector, t_len: usize) -> Result<Hypothesis> {
    let c_matrix = match selector {
        FactorSelector::Factor(i) => {
            if !(1..=7).contains(&i) {
                return Err(Error::InvalidInput(format!("factor index {i} out of 1..=7")));
            }
            DMatrix::from_row_slice(1, 15, &contrast_row(i))
        }
        FactorSelector::All => {
            let rows: Vec<f64> = (1..=7).flat_map(|i| contrast_row(i).to_vec()).collect();
            DMatrix::from_row_slice(7, 15, &rows)
        }
    };
    Hypothesis::with_zero_null(c_matrix, t_len)
}

/// Orientation of curves in a CSV file. Auto-detection is refused on
/// purpose: a silent transposition would corrupt every downstream result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvOrientation {
    CurvesAsRows,
    CurvesAsColumns,
}

/// The ingested audible-noise table: rpm grid plus 36 sound-pressure curves.
#[derive(Debug, Clone)]
pub struct RawNoiseTable {
    pub rpm_grid: Vec<f64>,
    /// 36 x 43, decibels, one row per run.
    pub spl: DMatrix<f64>,
    pub run_labels: Vec<String>,
}

impl RawNoiseTable {
    /// Dataset on the rpm grid mapped affinely onto `[0, 1]`, row order
    /// matching the design rows.
    pub fn to_dataset(&self) -> Result<FunctionalDataset> {
        let lo = self.rpm_grid[0];
        let hi = self.rpm_grid[self.rpm_grid.len() - 1];
        let points: Vec<f64> = self.rpm_grid.iter().map(|r| (r - lo) / (hi - lo)).collect();
        let grid = TimeGrid::new(points, 0.0, 1.0)?;
        FunctionalDataset::new(grid, self.spl.clone())
    }
}

fn parse_cell(raw: &str, row: usize, col: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        col,
        msg: format!("not a number: {raw:?}"),
    })
}

/// Read the audible-noise CSV.
///
/// Layout: a header row `label,<rpm_1>,...,<rpm_43>` followed by one row per
/// run (`CurvesAsRows`), or the transpose with runs in columns
/// (`CurvesAsColumns`). Dot decimal separator, comma field separator.
pub fn ingest_noise_csv(path: &Path, orientation: CsvOrientation) -> Result<RawNoiseTable> {
    let file = std::fs::File::open(path)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(line.split(',').map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::Format("empty file".into()));
    }
    if orientation == CsvOrientation::CurvesAsColumns {
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Format("ragged rows in CSV".into()));
        }
        rows = (0..width)
            .map(|j| rows.iter().map(|r| r[j].clone()).collect())
            .collect();
    }
    let header = &rows[0];
    if header.len() != N_SPEEDS + 1 {
        return Err(Error::Format(format!(
            "expected {} columns (label + {} speeds), found {}",
            N_SPEEDS + 1,
            N_SPEEDS,
            header.len()
        )));
    }
    let rpm_grid: Vec<f64> = header[1..]
        .iter()
        .enumerate()
        .map(|(j, s)| parse_cell(s, 0, j + 1))
        .collect::<Result<_>>()?;
    let body = &rows[1..];
    if body.len() != N_RUNS {
        return Err(Error::Format(format!(
            "expected {} curve rows, found {}",
            N_RUNS,
            body.len()
        )));
    }
    let mut spl = DMatrix::zeros(N_RUNS, N_SPEEDS);
    let mut run_labels = Vec::with_capacity(N_RUNS);
    for (i, row) in body.iter().enumerate() {
        if row.len() != N_SPEEDS + 1 {
            return Err(Error::Format(format!(
                "row {} has {} columns, expected {}",
                i + 2,
                row.len(),
                N_SPEEDS + 1
            )));
        }
        run_labels.push(row[0].clone());
        for j in 0..N_SPEEDS {
            spl[(i, j)] = parse_cell(&row[j + 1], i + 1, j + 1)?;
        }
    }
    if !spl.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sound pressure levels"));
    }
    Ok(RawNoiseTable {
        rpm_grid,
        spl,
        run_labels,
    })
}

/// Write a table back out in the `CurvesAsRows` layout.
pub fn write_noise_csv(table: &RawNoiseTable, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write!(file, "run")?;
    for rpm in &table.rpm_grid {
        write!(file, ",{rpm}")?;
    }
    writeln!(file)?;
    for i in 0..table.spl.nrows() {
        write!(file, "{}", table.run_labels[i])?;
        for j in 0..table.spl.ncols() {
            write!(file, ",{}", table.spl[(i, j)])?;
        }
        writeln!(file)?;
    }
    Ok(())
}
