//! User-grouped cross-validation and the personalization experiment.
//!
//! Every split refits the imputer, the feature selector and the model on
//! its training rows only.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::importance::importance_ranking;
use super::{fit_model, par_map, sub_seed, Confusion, LearnError, Model, ModelSpec};
use crate::dataset::{FeatureMatrix, KnnImputer};

/// Minimum selection size tried when tuning.
pub const MIN_SELECT: usize = 4;
pub const INNER_FOLDS: usize = 3;

/// Assigns each user a fold: sorted users are shuffled with `seed` and
/// dealt round-robin. Returns `(user, fold)` pairs in sorted user order.
pub fn assign_folds(users: &[String], folds: usize, seed: u64) -> Result<Vec<(String, usize)>, LearnError> {
    let mut sorted = users.to_vec();
    sorted.sort();
    sorted.dedup();
    if folds < 2 || sorted.len() < folds {
        return Err(LearnError::TooFewGroups {
            groups: sorted.len(),
            folds,
        });
    }
    let mut shuffled = sorted.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out: Vec<(String, usize)> = shuffled.into_iter().enumerate().map(|(i, u)| (u, i % folds)).collect();
    out.sort();
    Ok(out)
}

fn fold_of(assignment: &[(String, usize)], user: &str) -> usize {
    let i = assignment.binary_search_by(|(u, _)| u.as_str().cmp(user)).expect("user assigned");
    assignment[i].1
}

/// Imputes a train/test pair with an imputer fitted on the training rows.
/// Columns never observed in training are set to zero on both sides.
pub fn prepare_split(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    spec: &ModelSpec,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), LearnError> {
    let d = train.n_cols();
    let empty: Vec<usize> = (0..d).filter(|&c| train.values.iter().all(|r| r[c].is_none())).collect();
    let patch = |rows: &[Vec<Option<f64>>]| -> Vec<Vec<Option<f64>>> {
        rows.iter()
            .map(|r| {
                let mut r = r.clone();
                for &c in &empty {
                    r[c] = Some(0.0);
                }
                r
            })
            .collect()
    };
    let tr = patch(&train.values);
    let te = patch(&test.values);
    if tr.is_empty() {
        return Err(LearnError::EmptyData);
    }
    let imputer = KnnImputer::fit(&train.columns, &tr, spec.impute_k, spec.impute_weighting)?;
    let dense = |rows: Vec<Vec<Option<f64>>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(0.0)).collect())
            .collect()
    };
    Ok((dense(imputer.transform_reference()), dense(imputer.transform(&te))))
}

fn project(x: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect()
}

fn labels(m: &FeatureMatrix) -> Vec<u8> {
    m.labels.iter().map(|l| l.expect("labeled row")).collect()
}

/// Picks the selection size by inner grouped CV over `MIN_SELECT..=d`;
/// ties go to the smaller size.
fn tune_selection(
    x: &[Vec<f64>],
    y: &[u8],
    groups: &[&str],
    ranking: &[usize],
    spec: &ModelSpec,
    seed: u64,
) -> Result<usize, LearnError> {
    let d = ranking.len();
    let mut users: Vec<String> = groups.iter().map(|g| String::from(*g)).collect();
    users.sort();
    users.dedup();
    let inner = INNER_FOLDS.min(users.len());
    if d <= MIN_SELECT || inner < 2 {
        return Ok(d);
    }
    let assignment = assign_folds(&users, inner, sub_seed(seed, 1, 0))?;
    let fold: Vec<usize> = groups.iter().map(|g| fold_of(&assignment, g)).collect();
    let mut best = (d, f64::NEG_INFINITY);
    for m in MIN_SELECT..=d {
        let cols = &ranking[..m];
        let mut total = 0.0;
        for f in 0..inner {
            let tr: Vec<usize> = (0..x.len()).filter(|&i| fold[i] != f).collect();
            let te: Vec<usize> = (0..x.len()).filter(|&i| fold[i] == f).collect();
            let xt: Vec<Vec<f64>> = tr.iter().map(|&i| cols.iter().map(|&c| x[i][c]).collect()).collect();
            let yt: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
            let names: Vec<String> = cols.iter().map(|c| alloc::format!("f{c}")).collect();
            let (model, _) = fit_model(spec, &xt, &yt, sub_seed(seed, 2, (m * inner + f) as u64), &names)?;
            let truth: Vec<u8> = te.iter().map(|&i| y[i]).collect();
            let pred: Vec<u8> = te
                .iter()
                .map(|&i| model.predict(&cols.iter().map(|&c| x[i][c]).collect::<Vec<_>>()))
                .collect();
            total += Confusion::from_labels(&truth, &pred)?.f1();
        }
        let score = total / inner as f64;
        if score > best.1 {
            best = (m, score);
        }
    }
    Ok(best.0)
}

/// A fitted imputation + selection + model chain.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub model: Model,
    /// Selected column indices into the training matrix, most important
    /// first.
    pub selected: Vec<usize>,
    pub degenerate: bool,
    /// Imputed training rows restricted to the selected columns.
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<u8>,
}

fn fit_on(
    train: &FeatureMatrix,
    x_train: Vec<Vec<f64>>,
    spec: &ModelSpec,
    seed: u64,
) -> Result<FittedPipeline, LearnError> {
    let y = labels(train);
    let d = train.n_cols();
    let selected = match spec.select_top {
        Some(0) => return Err(LearnError::EmptySelection),
        Some(m) if m >= d => (0..d).collect(),
        Some(m) => {
            let mut r = importance_ranking(&x_train, &y, sub_seed(seed, 3, 0))?;
            r.truncate(m);
            r
        }
        None => {
            let ranking = importance_ranking(&x_train, &y, sub_seed(seed, 3, 0))?;
            let m = tune_selection(&x_train, &y, &train.groups(), &ranking, spec, seed)?;
            ranking[..m].to_vec()
        }
    };
    let xs = project(&x_train, &selected);
    let names: Vec<String> = selected.iter().map(|&c| train.columns[c].clone()).collect();
    let (model, degenerate) = fit_model(spec, &xs, &y, sub_seed(seed, 4, 0), &names)?;
    Ok(FittedPipeline {
        model,
        selected,
        degenerate,
        train_x: xs,
        train_y: y,
    })
}

/// Fits the whole chain on every labeled row of `matrix`.
pub fn fit_pipeline(matrix: &FeatureMatrix, spec: &ModelSpec, seed: u64) -> Result<FittedPipeline, LearnError> {
    let train = matrix.trainable();
    let (x, _) = prepare_split(&train, &FeatureMatrix::empty(train.columns.clone()), spec)?;
    fit_on(&train, x, spec, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub confusion: Confusion,
    pub selected: Vec<String>,
    pub degenerate: bool,
}

/// Fits on `train`, predicts `test` and scores it. Both matrices must hold
/// only labeled rows.
pub fn evaluate_split(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    spec: &ModelSpec,
    seed: u64,
) -> Result<SplitOutcome, LearnError> {
    let (x_train, x_test) = prepare_split(train, test, spec)?;
    let fitted = fit_on(train, x_train, spec, seed)?;
    let pred: Vec<u8> = project(&x_test, &fitted.selected)
        .iter()
        .map(|r| fitted.model.predict(r))
        .collect();
    Ok(SplitOutcome {
        confusion: Confusion::from_labels(&labels(test), &pred)?,
        selected: fitted.selected.iter().map(|&c| train.columns[c].clone()).collect(),
        degenerate: fitted.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_users: Vec<String>,
    pub train_users: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
    pub selected_features: Vec<String>,
    /// Training labels had one class and a constant model was used.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelSpec,
    pub seed: u64,
    pub columns: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    /// Features selected in at least half of the folds, most often first.
    pub selected_features: Vec<String>,
    pub confusion: Confusion,
}

/// Grouped k-fold cross-validation over the labeled rows of `matrix`.
pub fn grouped_cv(matrix: &FeatureMatrix, spec: &ModelSpec, folds: usize, seed: u64) -> Result<EvalReport, LearnError> {
    let data = matrix.trainable();
    let users = data.users();
    let assignment = assign_folds(&users, folds, seed)?;
    let row_fold: Vec<usize> = data.keys.iter().map(|k| fold_of(&assignment, &k.user_id)).collect();
    let results = par_map(folds, |f| -> Result<FoldReport, LearnError> {
        let train = data.filter_rows(|i| row_fold[i] != f);
        let test = data.filter_rows(|i| row_fold[i] == f);
        let out = evaluate_split(&train, &test, spec, sub_seed(seed, 10, f as u64))?;
        let pick = |g: usize| -> Vec<String> {
            assignment.iter().filter(|(_, a)| (*a == f) == (g == 1)).map(|(u, _)| u.clone()).collect()
        };
        Ok(FoldReport {
            fold: f,
            test_users: pick(1),
            train_users: pick(0),
            n_train: train.n_rows(),
            n_test: test.n_rows(),
            f1: out.confusion.f1(),
            precision: out.confusion.precision(),
            recall: out.confusion.recall(),
            confusion: out.confusion,
            selected_features: out.selected,
            degenerate: out.degenerate,
        })
    });
    let folds_out: Vec<FoldReport> = results.into_iter().collect::<Result<_, _>>()?;
    let fold_f1: Vec<f64> = folds_out.iter().map(|f| f.f1).collect();
    let mean_f1 = fold_f1.iter().sum::<f64>() / fold_f1.len() as f64;
    let mut confusion = Confusion::default();
    for f in &folds_out {
        confusion.add(&f.confusion);
    }
    let mut counts: Vec<(usize, usize)> = data
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (folds_out.iter().filter(|f| f.selected_features.contains(c)).count(), i))
        .filter(|&(n, _)| 2 * n >= folds)
        .collect();
    counts.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(EvalReport {
        model: spec.clone(),
        seed,
        columns: data.columns.clone(),
        folds: folds_out,
        fold_f1,
        mean_f1,
        selected_features: counts.into_iter().map(|(_, i)| data.columns[i].clone()).collect(),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationReport {
    pub user: String,
    pub f1_before: f64,
    pub f1_after: f64,
    pub n_test: usize,
    pub n_added: usize,
}

/// Scores a target user's earliest half of labeled windows, first with a
/// model trained on all other users, then with the user's later half added
/// to training.
pub fn personalization_eval(
    matrix: &FeatureMatrix,
    target_user: &str,
    spec: &ModelSpec,
    seed: u64,
) -> Result<PersonalizationReport, LearnError> {
    if !matrix.keys.iter().any(|k| k.user_id == target_user) {
        return Err(LearnError::UnknownUser(target_user.into()));
    }
    let data = matrix.trainable();
    let mut own: Vec<usize> = (0..data.n_rows()).filter(|&i| data.keys[i].user_id == target_user).collect();
    if own.len() < 2 {
        return Err(LearnError::InsufficientTargetData(own.len()));
    }
    own.sort_by_key(|&i| data.keys[i].window_start);
    let n_test = own.len().div_ceil(2);
    let test = data.select_rows(&own[..n_test]);
    let others: Vec<usize> = (0..data.n_rows()).filter(|&i| data.keys[i].user_id != target_user).collect();
    let before = data.select_rows(&others);
    let mut with_own = others.clone();
    with_own.extend_from_slice(&own[n_test..]);
    let after = data.select_rows(&with_own);
    let seed = sub_seed(seed, 20, 0);
    let b = evaluate_split(&before, &test, spec, seed)?;
    let a = evaluate_split(&after, &test, spec, seed)?;
    Ok(PersonalizationReport {
        user: target_user.into(),
        f1_before: b.confusion.f1(),
        f1_after: a.confusion.f1(),
        n_test,
        n_added: own.len() - n_test,
    })
}
