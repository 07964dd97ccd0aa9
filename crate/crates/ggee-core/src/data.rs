//! Longitudinal data containers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One subject's observations: a response vector of length `T_i` and a
/// `T_i x p` covariate matrix, with strictly increasing observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub times: Vec<f64>,
}

impl Subject {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

/// A collection of subjects sharing a common covariate dimension `p`.
/// Panels may be unbalanced (subject-specific `T_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    subjects: Vec<Subject>,
    p: usize,
}

impl LongitudinalDataset {
    /// Builds a dataset, validating per-subject shapes and time ordering.
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Contract("dataset has no subjects".into()));
        }
        let p = subjects[0].x.ncols();
        for s in &subjects {
            if s.x.ncols() != p {
                return Err(Error::Contract(format!(
                    "subject {} has {} covariates, expected {}",
                    s.id,
                    s.x.ncols(),
                    p
                )));
            }
            if s.x.nrows() != s.y.len() || s.times.len() != s.y.len() {
                return Err(Error::Contract(format!(
                    "subject {}: y, X, times lengths disagree",
                    s.id
                )));
            }
            if s.y.len() == 0 {
                return Err(Error::Contract(format!("subject {} has no observations", s.id)));
            }
            for w in s.times.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::Contract(format!(
                        "subject {}: times not strictly increasing",
                        s.id
                    )));
                }
            }
        }
        Ok(Self { subjects, p })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    /// All subjects observed at the same number of time points.
    pub fn balanced(&self) -> bool {
        let t0 = self.subjects[0].n_obs();
        self.subjects.iter().all(|s| s.n_obs() == t0)
    }

    pub fn max_t(&self) -> usize {
        self.subjects.iter().map(Subject::n_obs).max().unwrap_or(0)
    }

    /// Restricts to the subjects at the given indices (clones them).
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let subjects: Vec<Subject> = idx.iter().map(|&i| self.subjects[i].clone()).collect();
        Self::new(subjects)
    }
}
