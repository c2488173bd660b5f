//! Block-Hankel expansion of signals and the persistent-excitation rank test.

use std::fmt;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Relative singular-value threshold used by default when deciding
/// numerical rank. Floating-point data is never exactly rank-deficient,
/// so the rank test keeps singular values above `tol * sigma_max`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Block-Hankel matrix of a `d`-channel signal: block row `i`, column `j`
/// holds sample `i + j` of the source, giving shape `(d*order) x (N-order+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    data: DMatrix<f64>,
    block_dim: usize,
    order: usize,
}

impl HankelMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Dimension `d` of one sample block.
    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Number of block rows (the window length `L`).
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Splits into the first `past` block rows and the remaining block rows,
    /// as views; stacking the two vertically reproduces the matrix.
    pub fn split_past_future(
        &self,
        past: usize,
    ) -> Result<(DMatrixView<'_, f64>, DMatrixView<'_, f64>)> {
        if past == 0 || past >= self.order {
            return Err(Error::InvalidArgument(format!(
                "past block count must be in 1..order; got past={past}, order={}",
                self.order
            )));
        }
        let split = past * self.block_dim;
        Ok((
            self.data.rows(0, split),
            self.data.rows(split, self.data.nrows() - split),
        ))
    }
}

/// Builds the order-`order` block Hankel matrix of `signal`.
pub fn build_hankel(signal: &Signal, order: usize) -> Result<HankelMatrix> {
    let n = signal.len();
    let d = signal.dim();
    if order == 0 {
        return Err(Error::InvalidArgument("hankel order must be >= 1".into()));
    }
    if order > n {
        return Err(Error::InvalidArgument(format!(
            "hankel order {order} exceeds signal length {n}"
        )));
    }
    let cols = n - order + 1;
    let src = signal.as_matrix();
    let mut data = DMatrix::zeros(d * order, cols);
    for i in 0..order {
        for j in 0..cols {
            data.view_mut((i * d, j), (d, 1)).copy_from(&src.column(i + j));
        }
    }
    Ok(HankelMatrix {
        data,
        block_dim: d,
        order,
    })
}

/// Outcome of the persistent-excitation rank test.
#[derive(Debug, Clone)]
pub struct PeDiagnostic {
    /// Numerical rank of the order-`order` Hankel matrix.
    pub numerical_rank: usize,
    /// Rank required for persistent excitation (`d * order`).
    pub required_rank: usize,
    /// Smallest singular value counted toward the rank, if any were retained.
    pub smallest_retained: Option<f64>,
    /// Available columns vs. the `d * order` needed for the rank to be attainable.
    pub columns: usize,
    pub order: usize,
    /// Set when the column count alone rules the rank condition out.
    pub insufficient_columns: bool,
}

impl PeDiagnostic {
    pub fn passed(&self) -> bool {
        self.numerical_rank == self.required_rank
    }
}

impl fmt::Display for PeDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.insufficient_columns {
            write!(
                f,
                "insufficient columns: order-{} Hankel has {} columns, rank {} unattainable",
                self.order, self.columns, self.required_rank
            )
        } else {
            write!(
                f,
                "numerical rank {} (required {}), smallest retained singular value {}",
                self.numerical_rank,
                self.required_rank,
                self.smallest_retained
                    .map_or_else(|| "n/a".to_string(), |s| format!("{s:.3e}"))
            )
        }
    }
}

/// Tests whether `signal` is persistently exciting of order `order`:
/// the order-`order` block Hankel matrix must have full row rank `d * order`.
///
/// Numerical rank counts singular values above `tol * sigma_max`.
pub fn check_persistent_excitation(
    signal: &Signal,
    order: usize,
    tol: f64,
) -> Result<(bool, PeDiagnostic)> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must be nonnegative, got {tol}"
        )));
    }
    let d = signal.dim();
    let required_rank = d * order;
    let h = build_hankel(signal, order)?;
    let columns = h.ncols();
    if columns < required_rank {
        let diag = PeDiagnostic {
            numerical_rank: 0,
            required_rank,
            smallest_retained: None,
            columns,
            order,
            insufficient_columns: true,
        };
        return Ok((false, diag));
    }

    let mut sv: Vec<f64> = h
        .data()
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let threshold = tol * sigma_max;
    let retained: Vec<f64> = sv
        .iter()
        .copied()
        .filter(|&s| s > threshold && s > 0.0)
        .collect();
    let numerical_rank = retained.len();
    let diag = PeDiagnostic {
        numerical_rank,
        required_rank,
        smallest_retained: retained.last().copied(),
        columns,
        order,
        insufficient_columns: false,
    };
    Ok((numerical_rank == required_rank, diag))
}
