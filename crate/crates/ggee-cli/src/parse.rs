//! Parsing of CLI argument values shared across subcommands.

use ggee_core::corr::CorrStructure;
use ggee_core::{Family, FamilySpec};

use crate::error::{CliError, CliResult};

pub fn parse_family(s: &str) -> CliResult<FamilySpec> {
    match s.to_ascii_lowercase().as_str() {
        "bernoulli" | "binomial" | "logit" => Ok(FamilySpec::bernoulli_logit()),
        "gaussian" | "normal" => Ok(FamilySpec::gaussian_identity()),
        "poisson" => Ok(FamilySpec::poisson_log()),
        other => Err(CliError::Usage(format!(
            "unknown family '{other}' (expected bernoulli, gaussian, or poisson)"
        ))),
    }
}

pub fn family_to_str(f: &FamilySpec) -> &'static str {
    match f.family {
        Family::BernoulliLogit => "bernoulli",
        Family::GaussianIdentity => "gaussian",
        Family::PoissonLog => "poisson",
    }
}

pub fn parse_corr(s: &str) -> CliResult<CorrStructure> {
    match s.to_ascii_uppercase().as_str() {
        "ID" => Ok(CorrStructure::Id),
        "EX" => Ok(CorrStructure::Ex),
        "AR1" | "AR" => Ok(CorrStructure::Ar1),
        "UN" | "US" => Ok(CorrStructure::Un),
        other => Err(CliError::Usage(format!(
            "unknown working correlation '{other}' (expected ID, EX, AR1, or UN)"
        ))),
    }
}

pub fn corr_to_str(c: CorrStructure) -> &'static str {
    match c {
        CorrStructure::Id => "ID",
        CorrStructure::Ex => "EX",
        CorrStructure::Ar1 => "AR1",
        CorrStructure::Un => "UN",
    }
}

/// Candidate group counts: either an inclusive range `a..b` or a comma list.
pub fn parse_candidates(s: &str) -> CliResult<Vec<usize>> {
    let bad = |msg: &str| CliError::Usage(format!("candidates '{s}': {msg}"));
    let values: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad("range start must be an integer"))?;
        let hi: usize = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad("range end must be an integer"))?;
        if lo > hi {
            return Err(bad("range start exceeds end"));
        }
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|part| part.trim().parse::<usize>().map_err(|_| bad("expected integers")))
            .collect::<CliResult<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|&g| g == 0) {
        return Err(bad("group counts must be positive"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_forms() {
        assert_eq!(parse_candidates("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_candidates("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_candidates("3,5,7").unwrap(), vec![3, 5, 7]);
        assert!(parse_candidates("5..2").is_err());
        assert!(parse_candidates("0..3").is_err());
        assert!(parse_candidates("x").is_err());
    }

    #[test]
    fn family_and_corr_names() {
        assert!(parse_family("bernoulli").is_ok());
        assert!(parse_family("weibull").is_err());
        assert_eq!(parse_corr("us").unwrap(), CorrStructure::Un);
        assert_eq!(parse_corr("AR").unwrap(), CorrStructure::Ar1);
        assert!(parse_corr("toeplitz").is_err());
    }
}
