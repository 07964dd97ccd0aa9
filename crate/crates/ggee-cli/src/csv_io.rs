//! Long-format CSV ingestion.
//!
//! Expected header: `subject_id,time,y,<covariate columns...>`. Rows are
//! grouped by subject (in order of first appearance) and sorted by time
//! within subject. An intercept column of ones is prepended unless a column
//! literally named `intercept` is present.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use ggee_core::{LongitudinalDataset, Subject};

use crate::error::{CliError, CliResult};

struct RawRow {
    line: u64,
    time: f64,
    y: f64,
    covs: Vec<f64>,
}

pub fn read_long_csv(path: &Path) -> CliResult<LongitudinalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 {
        return Err(CliError::Data(format!(
            "{}: need at least subject_id, time, y columns",
            path.display()
        )));
    }
    for (idx, want) in [(0, "subject_id"), (1, "time"), (2, "y")] {
        let got = headers.get(idx).unwrap_or("");
        if got != want {
            return Err(CliError::Data(format!(
                "{}: column {} must be named '{want}' (found '{got}')",
                path.display(),
                idx + 1
            )));
        }
    }
    let has_intercept_col = headers.iter().skip(3).any(|h| h == "intercept");

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<RawRow>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(CliError::Data(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        let subject = record.get(0).unwrap_or("").to_string();
        if subject.is_empty() {
            return Err(CliError::Data(format!(
                "{}: line {line}: empty subject_id",
                path.display()
            )));
        }
        let parse = |idx: usize| -> CliResult<f64> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() {
                return Err(CliError::Data(format!(
                    "{}: line {line}: missing value in column '{}'",
                    path.display(),
                    headers.get(idx).unwrap_or("?")
                )));
            }
            raw.parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "{}: line {line}: non-numeric value '{raw}' in column '{}'",
                    path.display(),
                    headers.get(idx).unwrap_or("?")
                ))
            })
        };
        let time = parse(1)?;
        let y = parse(2)?;
        let mut covs = Vec::with_capacity(headers.len() - 3);
        for idx in 3..headers.len() {
            covs.push(parse(idx)?);
        }
        if !rows.contains_key(&subject) {
            order.push(subject.clone());
        }
        rows.entry(subject).or_default().push(RawRow { line, time, y, covs });
    }
    if order.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }

    let p_raw = headers.len() - 3;
    let p = if has_intercept_col { p_raw } else { p_raw + 1 };
    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut sub_rows = rows.remove(&id).expect("collected above");
        sub_rows.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap_or(std::cmp::Ordering::Equal));
        for w in sub_rows.windows(2) {
            if w[1].time == w[0].time {
                return Err(CliError::Data(format!(
                    "duplicate time {} for subject '{id}' at line {}",
                    w[1].time, w[1].line
                )));
            }
        }
        let t = sub_rows.len();
        let mut x = DMatrix::zeros(t, p);
        let mut y = DVector::zeros(t);
        let mut times = Vec::with_capacity(t);
        for (r, row) in sub_rows.iter().enumerate() {
            y[r] = row.y;
            times.push(row.time);
            let offset = if has_intercept_col {
                0
            } else {
                x[(r, 0)] = 1.0;
                1
            };
            for (j, &v) in row.covs.iter().enumerate() {
                x[(r, offset + j)] = v;
            }
        }
        subjects.push(Subject { id, y, x, times });
    }
    LongitudinalDataset::new(subjects).map_err(|e| CliError::Data(e.to_string()))
}

/// Covariate column names as they will appear in reports (with the implicit
/// intercept first when one was added).
pub fn covariate_names(path: &Path) -> CliResult<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut names: Vec<String> = headers.iter().skip(3).map(|s| s.to_string()).collect();
    if !names.iter().any(|n| n == "intercept") {
        names.insert(0, "intercept".to_string());
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn reads_balanced_panel() {
        let f = write_tmp(
            "subject_id,time,y,x1,x2\n\
             a,1,0,0.5,-0.2\na,2,1,0.1,0.3\na,3,1,0.7,0.9\n\
             b,1,1,-0.5,0.2\nb,2,0,0.0,0.0\nb,3,0,1.0,-1.0\n",
        );
        let data = read_long_csv(f.path()).unwrap();
        assert_eq!(data.n_subjects(), 2);
        assert_eq!(data.n_covariates(), 3); // intercept prepended
        assert!(data.balanced());
        assert_eq!(data.subjects()[0].x[(0, 0)], 1.0);
        assert_eq!(data.subjects()[0].x[(0, 1)], 0.5);
    }

    #[test]
    fn unbalanced_flag_and_time_sorting() {
        let f = write_tmp(
            "subject_id,time,y,x1\n\
             a,3,0,0.1\na,1,1,0.2\na,2,0,0.3\n\
             b,1,1,0.4\nb,2,0,0.5\nb,3,1,0.6\nb,4,0,0.7\nb,5,1,0.8\n",
        );
        let data = read_long_csv(f.path()).unwrap();
        assert!(!data.balanced());
        // times sorted within subject
        assert_eq!(data.subjects()[0].times, vec![1.0, 2.0, 3.0]);
        assert_eq!(data.subjects()[0].x[(0, 1)], 0.2);
    }

    #[test]
    fn duplicate_time_names_line() {
        let f = write_tmp("subject_id,time,y,x1\ns1,1,0,0.1\ns1,2,1,0.2\ns1,2,0,0.3\n");
        let err = read_long_csv(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate time"), "{msg}");
        assert!(msg.contains("s1"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn non_numeric_rejected_with_line() {
        let f = write_tmp("subject_id,time,y,x1\na,1,zero,0.1\n");
        let msg = read_long_csv(f.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("zero"), "{msg}");
    }

    #[test]
    fn missing_value_rejected() {
        let f = write_tmp("subject_id,time,y,x1\na,1,0,\n");
        let msg = read_long_csv(f.path()).unwrap_err().to_string();
        assert!(msg.contains("missing value"), "{msg}");
    }

    #[test]
    fn explicit_intercept_column_not_duplicated() {
        let f = write_tmp("subject_id,time,y,intercept,x1\na,1,0,1,0.5\na,2,1,1,0.6\n");
        let data = read_long_csv(f.path()).unwrap();
        assert_eq!(data.n_covariates(), 2);
        assert_eq!(data.subjects()[0].x[(0, 0)], 1.0);
        assert_eq!(data.subjects()[0].x[(0, 1)], 0.5);
    }

    #[test]
    fn header_names_enforced() {
        let f = write_tmp("id,time,y,x1\na,1,0,0.5\n");
        let msg = read_long_csv(f.path()).unwrap_err().to_string();
        assert!(msg.contains("subject_id"), "{msg}");
    }

    #[test]
    fn fuzz_mutations_never_panic() {
        use rand::Rng;
        let valid = "subject_id,time,y,x1,x2\n\
                     a,1,0,0.5,-0.2\na,2,1,0.1,0.3\n\
                     b,1,1,-0.5,0.2\nb,2,0,0.0,0.0\n";
        let mut rng = rand::rng();
        for _ in 0..300 {
            let mut bytes = valid.as_bytes().to_vec();
            let n_mut = rng.random_range(1..6);
            for _ in 0..n_mut {
                let pos = rng.random_range(0..bytes.len());
                match rng.random_range(0..3) {
                    0 => {
                        bytes[pos] = rng.random_range(0x20..0x7f) as u8;
                    }
                    1 => {
                        bytes.remove(pos);
                    }
                    _ => {
                        bytes.insert(pos, rng.random_range(0x20..0x7f) as u8);
                    }
                }
            }
            let f = write_tmp(&String::from_utf8_lossy(&bytes));
            let _ = read_long_csv(f.path()); // must return, never panic
        }
    }
}
