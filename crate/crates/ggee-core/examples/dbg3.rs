use ggee_core::corr::CorrStructure;
use ggee_core::selection::{cva_select, CvaOptions};
use ggee_core::sim::{generate, ScenarioKind, SimScenario, TruthCorr};
use ggee_core::FamilySpec;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

fn main() {
    let reps = 12u64;
    let hits = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    thread::scope(|scope| {
        for w in 0..8u64 {
            let hits = &hits;
            let done = &done;
            scope.spawn(move || {
                let sc = SimScenario::new(ScenarioKind::S1, TruthCorr::Ex(0.5), 270, 20).unwrap();
                let fam = FamilySpec::bernoulli_logit();
                let mut r = w;
                while r < reps {
                    let truth = generate(&sc, 4242, r).unwrap();
                    let opts = CvaOptions { splits: 20, seed: 4242 + r, ..CvaOptions::default() };
                    let res = cva_select(&truth.data, &fam, CorrStructure::Ex, &[2, 3, 4, 5, 6, 7], &opts).unwrap();
                    if res.selected_g == 3 { hits.fetch_add(1, Ordering::Relaxed); }
                    let d = done.fetch_add(1, Ordering::Relaxed) + 1;
                    eprintln!("rep {r}: selected {} (avg {:?}) [{}/{}]", res.selected_g, res.instability.iter().map(|v| *v as i64).collect::<Vec<_>>(), d, reps);
                    r += 8;
                }
            });
        }
    });
    println!("selected G=3 in {}/{} replications", hits.load(Ordering::Relaxed), reps);
}
