//! CSV persistence for recorded trajectories.
//!
//! Format: UTF-8, header `t,u1..um,y1..yp`, one row per sample. Time is in
//! seconds, angles in radians, positions in meters. Lines starting with `#`
//! are comments. Values are written in Rust's shortest round-trip float
//! notation, so save/load is lossless.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal::{Signal, TrajectoryData};

pub fn save_trajectory(data: &TrajectoryData, path: &Path) -> Result<()> {
    let m = data.input_dim();
    let p = data.output_dim();
    let mut out = String::new();
    out.push('t');
    for i in 1..=m {
        out.push_str(&format!(",u{i}"));
    }
    for i in 1..=p {
        out.push_str(&format!(",y{i}"));
    }
    out.push('\n');
    for k in 0..data.len() {
        out.push_str(&format!("{}", k as f64 * data.sample_time));
        for v in data.inputs.sample(k).iter() {
            out.push_str(&format!(",{v}"));
        }
        for v in data.outputs.sample(k).iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<TrajectoryData> {
    let text = fs::read_to_string(path)?;
    parse_trajectory(&text)
}

/// Parses the trajectory CSV format. Errors name the offending 1-based line.
pub fn parse_trajectory(text: &str) -> Result<TrajectoryData> {
    let mut header: Option<(usize, usize)> = None; // (m, p)
    let mut times: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match header {
            None => {
                header = Some(parse_header(&fields, line_no)?);
            }
            Some((m, p)) => {
                if fields.len() != 1 + m + p {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!(
                            "expected {} fields (t + {m} inputs + {p} outputs), found {}",
                            1 + m + p,
                            fields.len()
                        ),
                    });
                }
                let mut vals = Vec::with_capacity(fields.len());
                for f in &fields {
                    let v: f64 = f.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("not a number: {f:?}"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("non-finite value: {f:?}"),
                        });
                    }
                    vals.push(v);
                }
                times.push(vals[0]);
                rows.push(vals[1..].to_vec());
            }
        }
    }

    let (m, p) = header.ok_or(Error::Parse {
        line: 1,
        message: "no samples (missing header)".into(),
    })?;
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no samples".into(),
        });
    }

    let sample_time = if times.len() < 2 {
        1.0
    } else {
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::Parse {
                line: 3,
                message: format!("time must be strictly increasing; step is {dt}"),
            });
        }
        for (k, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::Parse {
                    line: k + 3, // header line + first row + k
                    message: format!(
                        "non-uniform sample time: step {step} differs from {dt}"
                    ),
                });
            }
        }
        dt
    };

    let n = rows.len();
    let mut u = DMatrix::zeros(m, n);
    let mut y = DMatrix::zeros(p, n);
    for (k, row) in rows.iter().enumerate() {
        for i in 0..m {
            u[(i, k)] = row[i];
        }
        for i in 0..p {
            y[(i, k)] = row[m + i];
        }
    }
    TrajectoryData::new(Signal::new(u)?, Signal::new(y)?, sample_time)
}

fn parse_header(fields: &[&str], line_no: usize) -> Result<(usize, usize)> {
    if fields.first() != Some(&"t") {
        return Err(Error::Parse {
            line: line_no,
            message: format!("header must start with 't', found {:?}", fields.first()),
        });
    }
    let mut m = 0usize;
    let mut p = 0usize;
    for f in &fields[1..] {
        if let Some(rest) = f.strip_prefix('u') {
            if p > 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "input columns must precede output columns".into(),
                });
            }
            expect_index(rest, m + 1, f, line_no)?;
            m += 1;
        } else if let Some(rest) = f.strip_prefix('y') {
            expect_index(rest, p + 1, f, line_no)?;
            p += 1;
        } else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unexpected header column {f:?}"),
            });
        }
    }
    if m == 0 || p == 0 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("header needs at least one input and one output column; got m={m}, p={p}"),
        });
    }
    Ok((m, p))
}

fn expect_index(rest: &str, want: usize, full: &str, line_no: usize) -> Result<()> {
    let got: usize = rest.parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("bad channel index in header column {full:?}"),
    })?;
    if got != want {
        return Err(Error::Parse {
            line: line_no,
            message: format!("header column {full:?} out of order (expected index {want})"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_is_lossless() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 17;
        let u = DMatrix::from_fn(2, n, |_, _| rng.random::<f64>() - 0.5);
        let y = DMatrix::from_fn(3, n, |_, _| 10.0 * (rng.random::<f64>() - 0.5));
        let data = TrajectoryData::new(
            Signal::new(u).unwrap(),
            Signal::new(y).unwrap(),
            0.05,
        )
        .unwrap();
        let dir = std::env::temp_dir().join("ddmpc_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        save_trajectory(&data, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back.len(), data.len());
        assert_eq!(back.input_dim(), 2);
        assert_eq!(back.output_dim(), 3);
        for k in 0..n {
            for i in 0..2 {
                assert!((back.inputs.sample(k)[i] - data.inputs.sample(k)[i]).abs() < 1e-12);
            }
            for i in 0..3 {
                assert!((back.outputs.sample(k)[i] - data.outputs.sample(k)[i]).abs() < 1e-12);
            }
        }
        assert!((back.sample_time - 0.05).abs() < 1e-12);
    }

    #[test]
    fn wrong_arity_names_line() {
        let text = "t,u1,y1\n0,1,2\n0.1,1\n0.2,1,2\n";
        let err = parse_trajectory(text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_reports_no_samples() {
        let err = parse_trajectory("").unwrap_err();
        assert!(err.to_string().contains("no samples"));
        let err = parse_trajectory("t,u1,y1\n").unwrap_err();
        assert!(err.to_string().contains("no samples"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# recorded run\nt,u1,y1\n# body comment\n0,1,2\n\n0.5,3,4\n";
        let data = parse_trajectory(text).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.inputs.sample(1)[0], 3.0);
        assert!((data.sample_time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bad_number_is_a_parse_error() {
        let text = "t,u1,y1\n0,abc,2\n";
        let err = parse_trajectory(text).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn non_uniform_time_is_rejected() {
        let text = "t,u1,y1\n0,1,2\n0.1,1,2\n0.3,1,2\n";
        assert!(parse_trajectory(text).is_err());
    }
}
