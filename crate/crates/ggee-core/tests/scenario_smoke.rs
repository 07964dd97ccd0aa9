//! End-to-end checks of the simulation generators feeding the grouped fit.

use ggee_core::corr::CorrStructure;
use ggee_core::grouping::{fit, init_fit, FitOptions, InitStrategy};
use ggee_core::selection::{cva_select, CvaOptions};
use ggee_core::sim::{align_labels, generate, metrics, ScenarioKind, SimScenario, TruthCorr};
use ggee_core::FamilySpec;

#[test]
fn kmeans_init_close_to_truth_on_separated_scenario() {
    // n = 60, T = 20: subject-wise fits plus k-means start within CE < 0.2
    // of the truth after alignment.
    let sc = SimScenario::new(ScenarioKind::S1, TruthCorr::Ex(0.5), 60, 20).unwrap();
    let truth = generate(&sc, 7, 0).unwrap();
    let fam = FamilySpec::bernoulli_logit();
    let opts = FitOptions { seed: 7, ..FitOptions::default() };
    let (_, labels, diags) =
        init_fit(&truth.data, &fam, 3, InitStrategy::SubjectwiseKMeans, &opts).unwrap();
    assert!(diags.is_empty());
    let sigma = align_labels(&labels, &truth.true_groups, 3).unwrap();
    let wrong = labels
        .iter()
        .zip(truth.true_groups.iter())
        .filter(|(&e, &t)| sigma[e] != t)
        .count();
    let ce = wrong as f64 / 60.0;
    assert!(ce < 0.2, "initial CE {ce}");
}

#[test]
fn grouped_fit_recovers_s1_structure() {
    // A single (180, 10) replication fitted with the correctly specified EX
    // working correlation classifies the clear majority of subjects.
    let sc = SimScenario::new(ScenarioKind::S1, TruthCorr::Ex(0.5), 180, 10).unwrap();
    let truth = generate(&sc, 11, 0).unwrap();
    let fam = FamilySpec::bernoulli_logit();
    let opts = FitOptions { seed: 11, ..FitOptions::default() };
    let out = fit(
        &truth.data,
        &fam,
        3,
        CorrStructure::Ex,
        InitStrategy::SubjectwiseKMeans,
        &opts,
    )
    .unwrap();
    let rep = metrics(&out, &truth).unwrap();
    assert!(rep.ce < 0.15, "CE {}", rep.ce);
    assert!(rep.sel_by_group.iter().all(|&v| v < 1.0), "SEL {:?}", rep.sel_by_group);
    // estimated exchangeable parameter lands in a plausible band
    let alpha = out.alpha[0].alpha[0];
    assert!(alpha > 0.1 && alpha < 0.8, "alpha {alpha}");
}

#[test]
fn cva_prefers_three_groups_on_one_replication() {
    // Selection is only reliable once the training halves are informative;
    // this mirrors the larger simulation design at reduced split count.
    let sc = SimScenario::new(ScenarioKind::S1, TruthCorr::Ex(0.5), 270, 20).unwrap();
    let truth = generate(&sc, 13, 0).unwrap();
    let fam = FamilySpec::bernoulli_logit();
    let opts = CvaOptions { splits: 6, seed: 13, ..CvaOptions::default() };
    let res = cva_select(&truth.data, &fam, CorrStructure::Ex, &[2, 3, 4], &opts).unwrap();
    assert_eq!(res.selected_g, 3, "instabilities {:?}", res.instability);
}
