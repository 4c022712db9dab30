//! Raw records to a labeled feature matrix.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use stresswatch_core::context::ContextSnapshot;
use stresswatch_core::dataset::{
    assemble, featurize_window, label_windows, EmaResponse, FeatureMatrix, FeatureWindow, FeaturizeConfig,
    DEFAULT_LABEL_HORIZON_MS,
};
use stresswatch_core::signal::windowize;

use crate::formats::{self, BurstRecord, FormatError};
use crate::sim::{self, ConfigError, SimConfig, UserOutput};

/// Every window of every user, labeled where an EMA allows, in
/// (user, window start) order.
pub fn feature_windows(
    bursts: &[BurstRecord],
    context: &[ContextSnapshot],
    emas: &[EmaResponse],
    cfg: &FeaturizeConfig,
) -> Vec<FeatureWindow> {
    let mut by_user: BTreeMap<&str, (Vec<_>, Vec<ContextSnapshot>)> = BTreeMap::new();
    for b in bursts {
        by_user.entry(&b.user_id).or_default().0.push(b.to_burst());
    }
    for c in context {
        by_user.entry(&c.user_id).or_default().1.push(c.clone());
    }
    let mut out: Vec<FeatureWindow> = by_user
        .into_iter()
        .flat_map(|(user, (b, c))| {
            windowize(&b, &c, &cfg.sampling)
                .into_par_iter()
                .map(|raw| featurize_window(user, &raw, cfg))
                .collect::<Vec<_>>()
        })
        .collect();
    label_windows(&mut out, emas, DEFAULT_LABEL_HORIZON_MS);
    out
}

/// Labeled windows only.
pub fn featurize(
    bursts: &[BurstRecord],
    context: &[ContextSnapshot],
    emas: &[EmaResponse],
    cfg: &FeaturizeConfig,
) -> FeatureMatrix {
    let windows: Vec<FeatureWindow> = feature_windows(bursts, context, emas, cfg)
        .into_iter()
        .filter(|w| w.label2.is_some())
        .collect();
    assemble(&windows)
}

/// Reads `bursts.jsonl`, `context.jsonl` and `ema.csv` from `dir`; missing
/// files count as empty.
pub fn featurize_dir(dir: &Path, cfg: &FeaturizeConfig) -> Result<FeatureMatrix, FormatError> {
    let bursts = formats::read_bursts(&dir.join("bursts.jsonl"), true)?;
    let context = formats::read_context(&dir.join("context.jsonl"), true)?;
    let emas = formats::read_ema(&dir.join("ema.csv"), true)?;
    Ok(featurize(&bursts, &context, &emas, cfg))
}

pub fn featurize_user(out: &UserOutput, cfg: &FeaturizeConfig) -> FeatureMatrix {
    featurize(&out.bursts, &out.context, &out.emas, cfg)
}

/// Simulates and featurizes one user at a time, so raw signals for the
/// whole cohort never sit in memory together.
pub fn simulate_study(config: &SimConfig, cfg: &FeaturizeConfig) -> Result<FeatureMatrix, ConfigError> {
    config.validate()?;
    let parts: Vec<FeatureMatrix> = (0..config.n_users)
        .map(|u| featurize_user(&sim::simulate_user(config, u), cfg))
        .collect();
    Ok(concat(parts))
}

/// Stacks matrices that share a column layout.
pub fn concat(parts: Vec<FeatureMatrix>) -> FeatureMatrix {
    let mut it = parts.into_iter();
    let Some(mut first) = it.next() else {
        return assemble(&[]);
    };
    for m in it {
        debug_assert_eq!(m.columns, first.columns);
        first.keys.extend(m.keys);
        first.values.extend(m.values);
        first.label5.extend(m.label5);
        first.labels.extend(m.labels);
    }
    first
}
