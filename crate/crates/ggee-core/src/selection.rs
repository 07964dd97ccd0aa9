//! Group-count selection by cross-validation with averaging: the candidate
//! `G` minimizing the co-clustering instability of two independently trained
//! fits, evaluated on held-out subjects and averaged over random splits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corr::CorrStructure;
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::grouping::{
    assign_scan, fit, fit_with_start, init_from_estimates, subject_estimates, CorrState,
    FitOptions, GroupedFit, InitStrategy,
};
use crate::rng::derive_rng;

const TAG_SPLIT: u64 = 0x5350;
const TAG_TRAIN: u64 = 0x5452;

/// Options for [`cva_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct CvaOptions {
    /// Number of random three-way splits `C`.
    pub splits: usize,
    pub seed: u64,
    pub strategy: InitStrategy,
    /// Options for the training fits; their seeds are derived per
    /// `(seed, split, G, half)` for reproducibility.
    pub fit: FitOptions,
}

impl Default for CvaOptions {
    fn default() -> Self {
        Self {
            splits: 20,
            seed: 0,
            strategy: InitStrategy::SubjectwiseKMeans,
            fit: FitOptions::default(),
        }
    }
}

/// Outcome of the instability selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaResult {
    pub candidates: Vec<usize>,
    /// Averaged instability per candidate, aligned with `candidates`;
    /// infinite when every cell for that candidate failed.
    pub instability: Vec<f64>,
    pub selected_g: usize,
    /// Raw per-split instabilities, `splits x candidates`; `None` marks a
    /// cell whose training fits failed.
    pub per_split: Vec<Vec<Option<u64>>>,
    pub seed: u64,
    /// Training-set size `M = floor(n / 3)`.
    pub m: usize,
    pub diagnostics: Vec<String>,
}

/// Randomly divides `0..n` into two training sets of size `m` and a test set
/// with the remainder.
pub fn split_three(
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if 2 * m >= n {
        return Err(Error::Contract(format!(
            "three-way split needs 2M < n (got M={m}, n={n})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let z1 = idx[..m].to_vec();
    let z2 = idx[m..2 * m].to_vec();
    let z3 = idx[2 * m..].to_vec();
    Ok((z1, z2, z3))
}

/// Classifies held-out subjects into a trained fit's groups by the same
/// argmin distance scan used during training.
pub fn test_assignments(
    test_data: &LongitudinalDataset,
    family: &FamilySpec,
    trained: &GroupedFit,
) -> Result<Vec<usize>> {
    let corr = CorrState::build(&trained.alpha, test_data)?;
    Ok(assign_scan(test_data, family, &trained.betas, &corr)?.0)
}

/// Co-clustering instability between two assignments of the same subjects:
/// the number of ordered pairs `(i, j)` co-clustered under exactly one of
/// the two fits (each unordered pair counts twice).
pub fn instability(g1: &[usize], g2: &[usize]) -> Result<u64> {
    if g1.len() != g2.len() {
        return Err(Error::Contract("instability requires equal-length assignments".into()));
    }
    let n = g1.len();
    let mut disagreements = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let same1 = g1[i] == g1[j];
            let same2 = g2[i] == g2[j];
            if same1 != same2 {
                disagreements += 1;
            }
        }
    }
    Ok(2 * disagreements)
}

/// Selects the group count by cross-validation with averaging.
///
/// For every split and candidate `G`, two fits are trained on the disjoint
/// halves, both classify the held-out third, and their co-clustering
/// disagreement accumulates. Cells whose training fails are excluded from
/// that candidate's average with a diagnostic.
pub fn cva_select(
    data: &LongitudinalDataset,
    family: &FamilySpec,
    structure: CorrStructure,
    candidates: &[usize],
    opts: &CvaOptions,
) -> Result<CvaResult> {
    if candidates.is_empty() {
        return Err(Error::Contract("candidate list must be non-empty".into()));
    }
    if opts.splits == 0 {
        return Err(Error::Contract("need at least one split".into()));
    }
    let n = data.n_subjects();
    let m = n / 3;
    for &g in candidates {
        if g == 0 || g > m {
            return Err(Error::Contract(format!(
                "candidate G={g} outside 1..=M (M={m})"
            )));
        }
    }

    let mut per_split: Vec<Vec<Option<u64>>> = Vec::with_capacity(opts.splits);
    let mut diagnostics = Vec::new();
    for c in 0..opts.splits {
        let mut rng = derive_rng(opts.seed, &[TAG_SPLIT, c as u64]);
        let (z1, z2, z3) = split_three(n, m, &mut rng)?;
        let train = [data.subset(&z1)?, data.subset(&z2)?];
        let test = data.subset(&z3)?;
        // Subject-wise estimates do not depend on G; compute them once per
        // training half and share them across candidates.
        let estimates = match opts.strategy {
            InitStrategy::SubjectwiseKMeans => {
                let mut est = Vec::with_capacity(2);
                for half in &train {
                    est.push(subject_estimates(half, family, &opts.fit.solver)?);
                }
                Some(est)
            }
            InitStrategy::RandomRestarts(_) => None,
        };
        let mut row = Vec::with_capacity(candidates.len());
        for &g in candidates {
            row.push(evaluate_cell(
                &train,
                &test,
                estimates.as_deref(),
                family,
                structure,
                g,
                c,
                opts,
                &mut diagnostics,
            ));
        }
        per_split.push(row);
    }

    let mut instability_avg = Vec::with_capacity(candidates.len());
    for (gi, &g) in candidates.iter().enumerate() {
        let cells: Vec<u64> = per_split.iter().filter_map(|row| row[gi]).collect();
        if cells.is_empty() {
            diagnostics.push(format!("candidate G={g}: all {} cells failed", opts.splits));
            instability_avg.push(f64::INFINITY);
        } else {
            instability_avg.push(cells.iter().sum::<u64>() as f64 / cells.len() as f64);
        }
    }
    if instability_avg.iter().all(|v| v.is_infinite()) {
        return Err(Error::Numeric("every candidate failed in every split".into()));
    }

    // argmin; ties resolve to the smallest candidate G
    let mut selected_g = 0usize;
    let mut best = f64::INFINITY;
    for (gi, &g) in candidates.iter().enumerate() {
        let v = instability_avg[gi];
        if v < best || (v == best && g < selected_g) {
            best = v;
            selected_g = g;
        }
    }

    Ok(CvaResult {
        candidates: candidates.to_vec(),
        instability: instability_avg,
        selected_g,
        per_split,
        seed: opts.seed,
        m,
        diagnostics,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    train: &[LongitudinalDataset; 2],
    test: &LongitudinalDataset,
    estimates: Option<&[Vec<nalgebra::DVector<f64>>]>,
    family: &FamilySpec,
    structure: CorrStructure,
    g: usize,
    split: usize,
    opts: &CvaOptions,
    diagnostics: &mut Vec<String>,
) -> Option<u64> {
    let mut assigned: [Option<Vec<usize>>; 2] = [None, None];
    for h in 0..2 {
        let mut fit_opts = opts.fit.clone();
        fit_opts.seed = u64::from_le_bytes(
            crate::rng::derive_seed(opts.seed, &[TAG_TRAIN, split as u64, g as u64, h as u64])[..8]
                .try_into()
                .expect("seed slice"),
        );
        let trained = match estimates {
            Some(est) => init_from_estimates(&est[h], &train[h], family, g, &fit_opts, 0)
                .and_then(|(betas0, g0, diags)| {
                    fit_with_start(&train[h], family, g, structure, betas0, g0, diags, &fit_opts)
                }),
            None => fit(&train[h], family, g, structure, opts.strategy, &fit_opts),
        };
        match trained {
            Ok(trained) => match test_assignments(test, family, &trained) {
                Ok(labels) => assigned[h] = Some(labels),
                Err(e) => {
                    diagnostics.push(format!(
                        "split {split}, G={g}, half {h}: test assignment failed: {e}"
                    ));
                    return None;
                }
            },
            Err(e) => {
                diagnostics.push(format!("split {split}, G={g}, half {h}: training failed: {e}"));
                return None;
            }
        }
    }
    let a = assigned[0].take().expect("checked");
    let b = assigned[1].take().expect("checked");
    instability(&a, &b).ok()
}
