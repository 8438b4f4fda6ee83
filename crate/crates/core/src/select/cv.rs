//! Level selection by cross-validation over the levels of a dyadic tree.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ratio::DensityRatio;
use crate::data::{Dataset, Origin};
use crate::dyadic::{TreeIndex, TreeKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stratified fold assignment: every origin is spread across the folds
/// with sizes differing by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    fold_count: usize,
    assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    /// Fold index of every sample, in dataset order.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// `(train, holdout)` sample positions for a fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != fold)
    }
}

pub fn make_folds<T: Scalar>(data: &Dataset<T>, fold_count: usize, seed: u64) -> Result<FoldPlan> {
    if fold_count < 2 {
        return Err(Error::Config("at least two folds are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; data.len()];
    for (&origin, &available) in data.counts() {
        if available < fold_count {
            return Err(Error::TooFewForFolds {
                origin,
                available,
                folds: fold_count,
            });
        }
        let mut members: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, s)| s.origin == origin)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for (rank, i) in members.into_iter().enumerate() {
            assignments[i] = rank % fold_count;
        }
    }
    Ok(FoldPlan {
        fold_count,
        assignments,
    })
}

/// How a hold-out fold is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiskKind {
    /// Misclassification rate over the target samples of the fold.
    Cv,
    /// Misclassification rate over every sample of the fold.
    Fcv,
    /// Pooled rate with source errors weighted by the density ratio.
    Iwcv,
}

impl RiskKind {
    pub fn name(self) -> &'static str {
        match self {
            RiskKind::Cv => "CV",
            RiskKind::Fcv => "FCV",
            RiskKind::Iwcv => "IWCV",
        }
    }
}

/// `(1/n) [sum_source w(X_i) 1{Y_i != f(X_i)} + sum_target 1{Y_i != f(X_i)}]`.
pub fn iwcv_risk<T: Scalar>(holdout: &Dataset<T>, ratio: &dyn DensityRatio<T>, predictions: &[u8]) -> Result<T> {
    if predictions.len() != holdout.len() {
        return Err(Error::LengthMismatch {
            expected: holdout.len(),
            found: predictions.len(),
        });
    }
    if holdout.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = T::zero();
    for (s, &p) in holdout.iter().zip(predictions) {
        if s.label != p {
            total = total
                + match s.origin {
                    Origin::Target => T::one(),
                    Origin::Source(_) => ratio.weight(&s.features),
                };
        }
    }
    Ok(total / T::of_count(holdout.len()))
}

fn holdout_risk<T: Scalar>(
    holdout: &Dataset<T>,
    predictions: &[u8],
    risk: RiskKind,
    ratio: Option<&dyn DensityRatio<T>>,
    fold: usize,
) -> Result<T> {
    match risk {
        RiskKind::Cv => {
            let mut errors = 0usize;
            let mut n = 0usize;
            for (s, &p) in holdout.iter().zip(predictions) {
                if s.origin.is_target() {
                    n += 1;
                    errors += usize::from(s.label != p);
                }
            }
            if n == 0 {
                return Err(Error::EmptyTargetHoldout(fold));
            }
            Ok(T::of_count(errors) / T::of_count(n))
        }
        RiskKind::Fcv => {
            if holdout.is_empty() {
                return Err(Error::EmptyInput);
            }
            let errors = holdout.iter().zip(predictions).filter(|(s, &p)| s.label != p).count();
            Ok(T::of_count(errors) / T::of_count(holdout.len()))
        }
        RiskKind::Iwcv => iwcv_risk(holdout, ratio.ok_or(Error::MissingRatio)?, predictions),
    }
}

/// Hold-out risks of every candidate level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSelection<T> {
    pub risk: RiskKind,
    /// Candidate levels, ascending.
    pub levels: Vec<u32>,
    /// `fold_risks[l][f]`: risk of level `levels[l]` on fold `f`.
    pub fold_risks: Vec<Vec<T>>,
    pub mean_risks: Vec<T>,
    pub selected: u32,
}

/// Selects the level with the smallest mean hold-out risk; ties go to the
/// shallowest level.
pub fn level_cv<T: Scalar>(
    data: &Dataset<T>,
    folds: &FoldPlan,
    risk: RiskKind,
    ratio: Option<&dyn DensityRatio<T>>,
    levels: &[u32],
    kind: TreeKind,
) -> Result<LevelSelection<T>> {
    if levels.is_empty() {
        return Err(Error::EmptyInput);
    }
    if folds.assignments.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: folds.assignments.len(),
        });
    }
    if risk == RiskKind::Iwcv && ratio.is_none() {
        return Err(Error::MissingRatio);
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let max_level = *levels.last().expect("non-empty");

    let per_fold: Vec<Vec<T>> = (0..folds.fold_count)
        .into_par_iter()
        .map(|fold| -> Result<Vec<T>> {
            let (train_pos, hold_pos) = folds.split(fold);
            let train = data.select(&train_pos);
            let holdout = data.select(&hold_pos);
            let index = TreeIndex::build(&train, max_level, kind)?;
            levels
                .iter()
                .map(|&level| {
                    let preds = holdout
                        .iter()
                        .map(|s| index.classify_at_level(&s.features, level))
                        .collect::<Result<Vec<u8>>>()?;
                    holdout_risk(&holdout, &preds, risk, ratio, fold)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let fold_risks: Vec<Vec<T>> = (0..levels.len())
        .map(|l| per_fold.iter().map(|f| f[l]).collect())
        .collect();
    let mean_risks: Vec<T> = fold_risks
        .iter()
        .map(|r| r.iter().fold(T::zero(), |a, &b| a + b) / T::of_count(r.len()))
        .collect();
    let mut best = 0;
    for (l, &m) in mean_risks.iter().enumerate() {
        if m < mean_risks[best] {
            best = l;
        }
    }
    Ok(LevelSelection {
        risk,
        selected: levels[best],
        levels,
        fold_risks,
        mean_risks,
    })
}

/// One candidate of a model-selection report.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow<T> {
    pub method: String,
    pub candidate: String,
    pub fold_risks: Vec<T>,
    pub mean_risk: T,
    pub selected: bool,
}

impl<T: Scalar> LevelSelection<T> {
    pub fn report_rows(&self) -> Vec<SelectionRow<T>> {
        self.levels
            .iter()
            .enumerate()
            .map(|(l, &level)| SelectionRow {
                method: self.risk.name().to_string(),
                candidate: level.to_string(),
                fold_risks: self.fold_risks[l].clone(),
                mean_risk: self.mean_risks[l],
                selected: level == self.selected,
            })
            .collect()
    }
}

/// Writes `method,candidate,fold,fold_risk,mean_risk,selected`, one row per
/// candidate and fold.
pub fn write_selection_report<T: Scalar, W: Write>(rows: &[SelectionRow<T>], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "candidate", "fold", "fold_risk", "mean_risk", "selected"])?;
    for row in rows {
        for (fold, r) in row.fold_risks.iter().enumerate() {
            wtr.write_record([
                row.method.clone(),
                row.candidate.clone(),
                fold.to_string(),
                r.to_string(),
                row.mean_risk.to_string(),
                row.selected.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
