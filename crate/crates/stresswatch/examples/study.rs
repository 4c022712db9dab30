//! Runs the full synthetic study in memory and prints cross-validated F1 per
//! feature condition, then personalization scores for three users whose
//! context habits run opposite to everyone else's.
//!
//! `cargo run --release --example study -- [seed]`

use std::time::Instant;

use stresswatch::pipeline::simulate_study;
use stresswatch::sim::{SimConfig, UserOverride};
use stresswatch_core::dataset::{FeatureSet, FeaturizeConfig};
use stresswatch_core::learn::{grouped_cv, personalization_eval, ModelSpec};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let base = SimConfig {
        n_users: 11,
        days: 14,
        seed,
        ..Default::default()
    };
    let fcfg = FeaturizeConfig::default();
    let spec = ModelSpec::random_forest(10).with_select_top(Some(24));

    let t = Instant::now();
    let m = simulate_study(&base, &fcfg).expect("valid config");
    println!("{} labeled windows in {:.1?}", m.n_rows(), t.elapsed());
    for set in [FeatureSet::All, FeatureSet::Ppg, FeatureSet::Context] {
        let sub = m.select_columns(&set.columns()).expect("known columns");
        let r = grouped_cv(&sub, &spec, 5, seed).expect("cross-validation");
        println!("{set:?}: mean F1 {:.3}", r.mean_f1);
    }

    let targets = [8, 9, 10];
    let shifted = SimConfig {
        overrides: targets
            .iter()
            .map(|&user| UserOverride {
                user,
                baseline_bpm: None,
                invert_context: true,
            })
            .collect(),
        ..base
    };
    let m = simulate_study(&shifted, &fcfg).expect("valid config");
    for u in targets {
        let id = SimConfig::user_id(u);
        let r = personalization_eval(&m, &id, &spec, seed).expect("personalization");
        println!("{id}: F1 before {:.3}, after {:.3}", r.f1_before, r.f1_after);
    }
}
