//! Incomplete data model and CSV ingestion.
//!
//! A dataset holds one fully observed outcome column `Y`, one fully observed
//! variable of interest `D`, and `p` candidate controls `X1..Xp` that may
//! contain missing cells. Columns are normalized to the internal layout
//! `[Y | D | X1..Xp]` at construction regardless of their order on disk.

use nalgebra::DMatrix;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Column offsets in the internal layout.
pub const COL_Y: usize = 0;
/// Column offset of the variable of interest.
pub const COL_D: usize = 1;
/// First control column.
pub const COL_X0: usize = 2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cell at row {row}, column '{column}' is not a number: '{token}'")]
    Parse {
        row: usize,
        column: String,
        token: String,
    },
    #[error("column '{column}' holds the {role} role and must be fully observed (missing at row {row})")]
    RoleViolation {
        column: String,
        role: &'static str,
        row: usize,
    },
    #[error("duplicate column name '{0}' in header")]
    DuplicateColumn(String),
    #[error("required column '{0}' not found in header")]
    MissingColumn(String),
    #[error("dataset must have at least 2 rows and 1 control column (got n={n}, p={p})")]
    TooSmall { n: usize, p: usize },
    #[error("observed cell at row {row}, column '{column}' is not finite")]
    NonFinite { row: usize, column: String },
    #[error("mask and value dimensions disagree")]
    ShapeMismatch,
}

/// How a CSV file maps onto column roles.
#[derive(Debug, Clone)]
pub struct CsvConfig {
    /// Header name of the outcome column.
    pub y_column: String,
    /// Header name of the variable of interest.
    pub d_column: String,
    /// Token written/read for a missing cell. Empty cells are always missing.
    pub sentinel: String,
}

impl CsvConfig {
    pub fn new(y_column: impl Into<String>, d_column: impl Into<String>) -> Self {
        Self {
            y_column: y_column.into(),
            d_column: d_column.into(),
            sentinel: "NA".to_string(),
        }
    }

    pub fn with_sentinel(mut self, sentinel: impl Into<String>) -> Self {
        self.sentinel = sentinel.into();
        self
    }
}

/// Numeric table with a missingness mask and fixed column roles.
///
/// Invariants enforced at construction: `Y` and `D` are fully observed,
/// missingness occurs only in control columns, `n >= 2`, `p >= 1`, and every
/// observed cell is finite. Masked cells store `NaN` so that any read that
/// ignores the mask poisons its result instead of silently using a value.
#[derive(Debug, Clone)]
pub struct IncompleteDataset {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    column_names: Vec<String>,
}

impl PartialEq for IncompleteDataset {
    /// Equality over names, mask, and observed cells (masked cells hold NaN).
    fn eq(&self, other: &Self) -> bool {
        self.column_names == other.column_names
            && self.mask == other.mask
            && self.values.shape() == other.values.shape()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &observed)| !observed || a == b)
    }
}

impl IncompleteDataset {
    /// Builds a dataset from values in internal layout `[Y | D | X..]`.
    /// `mask[i][j] == true` means observed.
    pub fn new(
        mut values: DMatrix<f64>,
        mask: DMatrix<bool>,
        column_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if values.shape() != mask.shape() || column_names.len() != values.ncols() {
            return Err(DatasetError::ShapeMismatch);
        }
        let (n, cols) = values.shape();
        if cols < 3 || n < 2 {
            return Err(DatasetError::TooSmall {
                n,
                p: cols.saturating_sub(2),
            });
        }
        for i in 0..n {
            for role_col in [COL_Y, COL_D] {
                if !mask[(i, role_col)] {
                    return Err(DatasetError::RoleViolation {
                        column: column_names[role_col].clone(),
                        role: if role_col == COL_Y { "outcome" } else { "interest" },
                        row: i,
                    });
                }
            }
            for j in 0..cols {
                if mask[(i, j)] {
                    if !values[(i, j)].is_finite() {
                        return Err(DatasetError::NonFinite {
                            row: i,
                            column: column_names[j].clone(),
                        });
                    }
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(Self {
            values,
            mask,
            column_names,
        })
    }

    /// Fully observed dataset from a plain value matrix.
    pub fn complete(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self, DatasetError> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask, column_names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of candidate controls.
    pub fn p(&self) -> usize {
        self.values.ncols() - 2
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Name of control `j` (0-based).
    pub fn x_name(&self, j: usize) -> &str {
        &self.column_names[COL_X0 + j]
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    pub fn y(&self) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(COL_Y)
    }

    pub fn d(&self) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(COL_D)
    }

    /// Fraction of missing cells over the control block only.
    pub fn missing_rate(&self) -> f64 {
        let n = self.n();
        let p = self.p();
        let missing = (0..n)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.mask[(i, COL_X0 + j)])
            .count();
        missing as f64 / (n * p) as f64
    }

    /// True when no cell is missing.
    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Observed values of internal column `col`, in row order.
    pub fn observed_pool(&self, col: usize) -> Vec<f64> {
        (0..self.n())
            .filter(|&i| self.mask[(i, col)])
            .map(|i| self.values[(i, col)])
            .collect()
    }
}

/// A dataset with every cell filled, tagged with the perturbation iteration
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    values: DMatrix<f64>,
    /// Perturbation iteration index the completion belongs to.
    pub provenance: u64,
    /// Degenerate-column fallbacks taken during imputation.
    pub warnings: Vec<ImputeWarning>,
    /// Source-row index per row when the completion came from a bootstrap
    /// draw. Cross-validation groups duplicated rows into one fold so that
    /// resampled copies never leak across the train/test split.
    pub row_origin: Option<Vec<usize>>,
}

/// Fallbacks recorded while completing a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImputeWarning {
    /// Control column had no observed values in the (possibly resampled)
    /// input; cells were filled from the fallback pool.
    FullyMissingColumn(usize),
    /// Control column was constant on its observed cells; missing cells were
    /// mean-filled.
    ZeroVarianceColumn(usize),
}

impl CompletedDataset {
    pub fn new(values: DMatrix<f64>, provenance: u64, warnings: Vec<ImputeWarning>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            values,
            provenance,
            warnings,
            row_origin: None,
        }
    }

    pub fn with_row_origin(mut self, origin: Vec<usize>) -> Self {
        debug_assert_eq!(origin.len(), self.n());
        self.row_origin = Some(origin);
        self
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols() - 2
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn y(&self) -> nalgebra::DVector<f64> {
        self.values.column(COL_Y).into_owned()
    }

    pub fn d(&self) -> nalgebra::DVector<f64> {
        self.values.column(COL_D).into_owned()
    }

    /// The control block as an `n x p` matrix.
    pub fn x(&self) -> DMatrix<f64> {
        self.values.columns(COL_X0, self.p()).into_owned()
    }
}

/// Loads a CSV file with a header row into the internal layout.
///
/// Empty cells and the sentinel token become missing; everything else must
/// parse as a finite number.
pub fn load_csv(path: impl AsRef<Path>, config: &CsvConfig) -> Result<IncompleteDataset, DatasetError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DatasetError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DatasetError::Csv(e),
        })?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.clone()) {
            return Err(DatasetError::DuplicateColumn(h.clone()));
        }
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let y_idx = find(&config.y_column)?;
    let d_idx = find(&config.d_column)?;
    let x_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| j != y_idx && j != d_idx)
        .collect();

    // internal column order: Y, D, then remaining columns in file order
    let order: Vec<usize> = std::iter::once(y_idx)
        .chain(std::iter::once(d_idx))
        .chain(x_idx.iter().copied())
        .collect();
    let column_names: Vec<String> = order.iter().map(|&j| headers[j].clone()).collect();

    let mut raw_rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (row_i, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(order.len());
        for &file_col in &order {
            let token = record.get(file_col).unwrap_or("").trim();
            if token.is_empty() || token == config.sentinel {
                row.push(None);
            } else {
                let v: f64 = token.parse().map_err(|_| DatasetError::Parse {
                    row: row_i,
                    column: headers[file_col].clone(),
                    token: token.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::Parse {
                        row: row_i,
                        column: headers[file_col].clone(),
                        token: token.to_string(),
                    });
                }
                row.push(Some(v));
            }
        }
        raw_rows.push(row);
    }

    let n = raw_rows.len();
    let cols = order.len();
    if cols < 3 || n < 2 {
        return Err(DatasetError::TooSmall {
            n,
            p: cols.saturating_sub(2),
        });
    }
    for (i, row) in raw_rows.iter().enumerate() {
        for (col, role) in [(COL_Y, "outcome"), (COL_D, "interest")] {
            if row[col].is_none() {
                return Err(DatasetError::RoleViolation {
                    column: column_names[col].clone(),
                    role,
                    row: i,
                });
            }
        }
    }

    let values = DMatrix::from_fn(n, cols, |i, j| raw_rows[i][j].unwrap_or(f64::NAN));
    let mask = DMatrix::from_fn(n, cols, |i, j| raw_rows[i][j].is_some());
    IncompleteDataset::new(values, mask, column_names)
}

/// Writes a dataset back to CSV. Missing cells become `"NA"`; observed values
/// are rendered at full round-trip precision.
pub fn write_csv(dataset: &IncompleteDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    };
    writeln!(out, "{}", dataset.column_names().join(",")).map_err(io_err)?;
    let mut line = String::new();
    for i in 0..dataset.n() {
        line.clear();
        for j in 0..dataset.values().ncols() {
            if j > 0 {
                line.push(',');
            }
            if dataset.is_observed(i, j) {
                // shortest decimal that parses back to the same f64
                line.push_str(&format!("{}", dataset.values()[(i, j)]));
            } else {
                line.push_str("NA");
            }
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}
