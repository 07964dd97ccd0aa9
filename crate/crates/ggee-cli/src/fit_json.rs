//! Versioned JSON persistence of fitted models and selection results.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use ggee_core::corr::{CorrStructure, WorkingCorrelationSpec};
use ggee_core::{CvaResult, GroupFit, GroupedFit};

use crate::error::{CliError, CliResult};
use crate::parse::{corr_to_str, parse_corr};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlphaDoc {
    pub structure: String,
    pub alpha: Vec<f64>,
    pub heterogeneous: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupFitDoc {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub h: Vec<Vec<f64>>,
    pub sandwich_cov: Vec<Vec<f64>>,
    pub n_g: usize,
    pub ridge_used: bool,
}

/// On-disk form of a fitted model plus run metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitDocument {
    pub schema: u32,
    pub family: String,
    pub corr: String,
    pub seed: u64,
    pub n_groups: usize,
    pub converged: bool,
    pub outer_iterations: usize,
    pub objective: f64,
    pub subject_ids: Vec<String>,
    pub assignments: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub alpha: Vec<AlphaDoc>,
    pub group_fits: Vec<GroupFitDoc>,
    pub history: Vec<usize>,
    pub diagnostics: Vec<String>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Data("ragged matrix in fit document".into()));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

impl FitDocument {
    pub fn from_fit(
        fit: &GroupedFit,
        family: &str,
        corr: CorrStructure,
        seed: u64,
        subject_ids: Vec<String>,
    ) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            family: family.to_string(),
            corr: corr_to_str(corr).to_string(),
            seed,
            n_groups: fit.n_groups,
            converged: fit.converged,
            outer_iterations: fit.outer_iterations,
            objective: fit.objective,
            subject_ids,
            assignments: fit.assignments.clone(),
            betas: fit.betas.iter().map(|b| b.iter().copied().collect()).collect(),
            alpha: fit
                .alpha
                .iter()
                .map(|a| AlphaDoc {
                    structure: corr_to_str(a.structure).to_string(),
                    alpha: a.alpha.clone(),
                    heterogeneous: a.heterogeneous,
                })
                .collect(),
            group_fits: fit
                .group_fits
                .iter()
                .map(|g| GroupFitDoc {
                    beta: g.beta.iter().copied().collect(),
                    iterations: g.iterations,
                    converged: g.converged,
                    score_norm: g.score_norm,
                    h: matrix_rows(&g.h),
                    sandwich_cov: matrix_rows(&g.sandwich_cov),
                    n_g: g.n_g,
                    ridge_used: g.ridge_used,
                })
                .collect(),
            history: fit.history.clone(),
            diagnostics: fit.diagnostics.clone(),
        }
    }

    pub fn to_fit(&self) -> CliResult<GroupedFit> {
        let alpha = self
            .alpha
            .iter()
            .map(|a| {
                Ok(WorkingCorrelationSpec {
                    structure: parse_corr(&a.structure)?,
                    alpha: a.alpha.clone(),
                    heterogeneous: a.heterogeneous,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let group_fits = self
            .group_fits
            .iter()
            .map(|g| {
                Ok(GroupFit {
                    beta: DVector::from_vec(g.beta.clone()),
                    iterations: g.iterations,
                    converged: g.converged,
                    score_norm: g.score_norm,
                    h: rows_matrix(&g.h)?,
                    sandwich_cov: rows_matrix(&g.sandwich_cov)?,
                    n_g: g.n_g,
                    ridge_used: g.ridge_used,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(GroupedFit {
            n_groups: self.n_groups,
            betas: self.betas.iter().map(|b| DVector::from_vec(b.clone())).collect(),
            assignments: self.assignments.clone(),
            alpha,
            group_fits,
            outer_iterations: self.outer_iterations,
            converged: self.converged,
            objective: self.objective,
            history: self.history.clone(),
            diagnostics: self.diagnostics.clone(),
        })
    }
}

pub fn write_fit_json(doc: &FitDocument, path: &Path) -> CliResult<()> {
    let json = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Data(format!("serializing fit: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn read_fit_json(path: &Path) -> CliResult<FitDocument> {
    let raw = fs::read_to_string(path)?;
    let doc: FitDocument = serde_json::from_str(&raw)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if doc.schema != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported schema version {} (expected {SCHEMA_VERSION})",
            path.display(),
            doc.schema
        )));
    }
    Ok(doc)
}

/// Selection results, persisted alongside fits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SelectDocument {
    pub schema: u32,
    pub family: String,
    pub corr: String,
    pub seed: u64,
    pub m: usize,
    pub splits: usize,
    pub candidates: Vec<usize>,
    pub instability: Vec<f64>,
    pub selected_g: usize,
    pub per_split: Vec<Vec<Option<u64>>>,
    pub diagnostics: Vec<String>,
}

impl SelectDocument {
    pub fn from_result(res: &CvaResult, family: &str, corr: CorrStructure, splits: usize) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            family: family.to_string(),
            corr: corr_to_str(corr).to_string(),
            seed: res.seed,
            m: res.m,
            splits,
            candidates: res.candidates.clone(),
            instability: res.instability.clone(),
            selected_g: res.selected_g,
            per_split: res.per_split.clone(),
            diagnostics: res.diagnostics.clone(),
        }
    }
}

pub fn write_select_json(doc: &SelectDocument, path: &Path) -> CliResult<()> {
    let json = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Data(format!("serializing selection: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ggee_core::corr::CorrStructure;

    fn sample_doc(groups: usize, p: usize) -> FitDocument {
        let mk_mat = |scale: f64| {
            (0..p)
                .map(|i| (0..p).map(|j| scale * ((i * p + j) as f64 + 0.123456789012345)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        FitDocument {
            schema: SCHEMA_VERSION,
            family: "bernoulli".into(),
            corr: "EX".into(),
            seed: 42,
            n_groups: groups,
            converged: true,
            outer_iterations: 7,
            objective: 123.456789012345678,
            subject_ids: (0..5).map(|i| format!("s{i}")).collect(),
            assignments: vec![0, 1, 0, 1, 0].into_iter().map(|g| g % groups).collect(),
            betas: (0..groups)
                .map(|g| (0..p).map(|k| g as f64 + k as f64 * 0.1 + 1e-13).collect())
                .collect(),
            alpha: vec![AlphaDoc { structure: "EX".into(), alpha: vec![0.4999999999999999], heterogeneous: false }],
            group_fits: (0..groups)
                .map(|g| GroupFitDoc {
                    beta: (0..p).map(|k| g as f64 - k as f64 * 0.25).collect(),
                    iterations: 5,
                    converged: true,
                    score_norm: 3.3e-12,
                    h: mk_mat(1.0),
                    sandwich_cov: mk_mat(0.01),
                    n_g: 2,
                    ridge_used: false,
                })
                .collect(),
            history: vec![3, 1, 0],
            diagnostics: vec!["note".into()],
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let doc = sample_doc(2, 3);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_fit_json(&doc, f.path()).unwrap();
        let back = read_fit_json(f.path()).unwrap();
        assert_eq!(doc, back);
        // and through the in-memory model as well
        let fit = back.to_fit().unwrap();
        let doc2 = FitDocument::from_fit(&fit, "bernoulli", CorrStructure::Ex, 42, doc.subject_ids.clone());
        assert_eq!(doc.betas, doc2.betas);
        assert_eq!(doc.group_fits, doc2.group_fits);
    }

    #[test]
    fn application_scale_shape_roundtrips() {
        let doc = sample_doc(8, 6);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_fit_json(&doc, f.path()).unwrap();
        assert_eq!(read_fit_json(f.path()).unwrap(), doc);
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut doc = sample_doc(2, 3);
        doc.schema = 99;
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), serde_json::to_string(&doc).unwrap()).unwrap();
        let msg = read_fit_json(f.path()).unwrap_err().to_string();
        assert!(msg.contains("schema version 99"), "{msg}");
    }

    #[test]
    fn truncated_file_is_an_error_not_a_panic() {
        let doc = sample_doc(2, 3);
        let json = serde_json::to_string(&doc).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), &json[..json.len() / 2]).unwrap();
        assert!(read_fit_json(f.path()).is_err());
    }
}
