//! Cleanup of raw recorded trajectories: outlier repair and resampling to a
//! uniform target grid.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal::{Signal, TrajectoryData};

/// Repairs outliers and resamples `raw` onto a uniform grid with step
/// `target_sample_time`, covering the same time span via linear interpolation.
///
/// A sample is an outlier in a channel when its robust z-score (deviation from
/// the channel median, scaled by 1.4826 * MAD) exceeds `outlier_z`; it is
/// replaced by linear interpolation between the nearest non-outlier
/// neighbors. Outlier repair happens on the raw grid, before resampling.
pub fn preprocess(
    raw: &TrajectoryData,
    target_sample_time: f64,
    outlier_z: f64,
) -> Result<TrajectoryData> {
    if raw.len() < 2 {
        return Err(Error::InsufficientData {
            have: raw.len(),
            minimum: 2,
            context: "cannot interpolate fewer than 2 samples".into(),
        });
    }
    if !(target_sample_time > 0.0) || !target_sample_time.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target_sample_time must be positive, got {target_sample_time}"
        )));
    }
    if !(outlier_z > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "outlier_z must be positive, got {outlier_z}"
        )));
    }

    let inputs = repair_outliers(raw.inputs.as_matrix(), outlier_z);
    let outputs = repair_outliers(raw.outputs.as_matrix(), outlier_z);

    let span = (raw.len() - 1) as f64 * raw.sample_time;
    // last grid point that does not extrapolate past the recorded span
    let new_len = (span / target_sample_time + 1e-9).floor() as usize + 1;
    let inputs = resample(&inputs, raw.sample_time, target_sample_time, new_len);
    let outputs = resample(&outputs, raw.sample_time, target_sample_time, new_len);

    TrajectoryData::new(Signal::new(inputs)?, Signal::new(outputs)?, target_sample_time)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn repair_outliers(data: &DMatrix<f64>, outlier_z: f64) -> DMatrix<f64> {
    let mut out = data.clone();
    if !outlier_z.is_finite() {
        return out;
    }
    let n = data.ncols();
    for ch in 0..data.nrows() {
        let mut vals: Vec<f64> = data.row(ch).iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = median(&vals);
        let mut devs: Vec<f64> = data.row(ch).iter().map(|v| (v - med).abs()).collect();
        devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = median(&devs);
        let scale = 1.4826 * mad;

        let is_outlier: Vec<bool> = data
            .row(ch)
            .iter()
            .map(|&v| {
                if scale > 0.0 {
                    (v - med).abs() / scale > outlier_z
                } else {
                    // constant-to-MAD channel: anything off the median is an outlier
                    v != med
                }
            })
            .collect();

        for j in 0..n {
            if !is_outlier[j] {
                continue;
            }
            let left = (0..j).rev().find(|&k| !is_outlier[k]);
            let right = (j + 1..n).find(|&k| !is_outlier[k]);
            out[(ch, j)] = match (left, right) {
                (Some(l), Some(r)) => {
                    let w = (j - l) as f64 / (r - l) as f64;
                    data[(ch, l)] * (1.0 - w) + data[(ch, r)] * w
                }
                (Some(l), None) => data[(ch, l)],
                (None, Some(r)) => data[(ch, r)],
                (None, None) => med, // every sample flagged; fall back to the median
            };
        }
    }
    out
}

fn resample(data: &DMatrix<f64>, dt_in: f64, dt_out: f64, new_len: usize) -> DMatrix<f64> {
    let n = data.ncols();
    let mut out = DMatrix::zeros(data.nrows(), new_len);
    for j in 0..new_len {
        let t = j as f64 * dt_out;
        let pos = t / dt_in;
        let i = (pos.floor() as usize).min(n - 2);
        let w = (pos - i as f64).clamp(0.0, 1.0);
        for ch in 0..data.nrows() {
            out[(ch, j)] = data[(ch, i)] * (1.0 - w) + data[(ch, i + 1)] * w;
        }
    }
    out
}
