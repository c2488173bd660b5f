//! Multichannel discrete-time signals and recorded input-output trajectories.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

/// A length-`T` sequence of `dim`-dimensional samples, stored as the columns
/// of a dense `dim x T` matrix. All entries must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: DMatrix<f64>,
}

impl Signal {
    /// Wraps a `dim x len` matrix whose columns are the samples.
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "signal must have at least one channel and one sample".into(),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "signal contains a non-finite entry".into(),
            ));
        }
        Ok(Self { samples })
    }

    /// Builds a signal from per-sample vectors. All samples must share one dimension.
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("signal has no samples".into()))?;
        let dim = first.len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "signal samples have mixed dimensions (expected {dim})"
            )));
        }
        let mut m = DMatrix::zeros(dim, samples.len());
        for (j, s) in samples.iter().enumerate() {
            m.set_column(j, s);
        }
        Self::new(m)
    }

    /// Builds a 1-channel signal from scalar samples.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, values.len(), values))
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false // at least one sample by construction
    }

    pub fn sample(&self, t: usize) -> DVectorView<'_, f64> {
        self.samples.column(t)
    }

    /// The underlying `dim x len` matrix, columns are samples.
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.samples
    }
}

/// One recorded run of a system: inputs and outputs sampled on a common
/// uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub inputs: Signal,
    pub outputs: Signal,
    /// Seconds per step.
    pub sample_time: f64,
}

impl TrajectoryData {
    pub fn new(inputs: Signal, outputs: Signal, sample_time: f64) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::InvalidArgument(format!(
                "input length {} != output length {}",
                inputs.len(),
                outputs.len()
            )));
        }
        if !(sample_time > 0.0) || !sample_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample_time must be positive and finite, got {sample_time}"
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            sample_time,
        })
    }

    /// Number of samples (the `N` of the record).
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    /// Output dimension `p`.
    pub fn output_dim(&self) -> usize {
        self.outputs.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_entries() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, f64::NAN, 2.0]);
        assert!(Signal::new(m).is_err());
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::INFINITY]);
        assert!(Signal::new(m).is_err());
    }

    #[test]
    fn rejects_mixed_sample_dimensions() {
        let samples = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0])];
        assert!(Signal::from_samples(&samples).is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(Signal::scalar(&[]).is_err());
        assert!(Signal::from_samples(&[]).is_err());
    }

    #[test]
    fn trajectory_requires_equal_lengths_and_positive_dt() {
        let u = Signal::scalar(&[1.0, 2.0]).unwrap();
        let y = Signal::scalar(&[1.0, 2.0, 3.0]).unwrap();
        assert!(TrajectoryData::new(u.clone(), y, 0.1).is_err());
        let y2 = Signal::scalar(&[1.0, 2.0]).unwrap();
        assert!(TrajectoryData::new(u.clone(), y2.clone(), 0.0).is_err());
        assert!(TrajectoryData::new(u, y2, 0.1).is_ok());
    }

    #[test]
    fn accessors() {
        let s = Signal::from_samples(&[
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s.sample(1)[0], 3.0);
    }
}
