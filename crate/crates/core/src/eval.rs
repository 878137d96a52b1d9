//! Metrics, subject-grouped hold-out splitting and leave-one-subject-out evaluation.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassProbabilities;
use crate::error::{FpcgError, Result};
use crate::signal_io::{Gender, LabeledDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub positive: Gender,
}

impl ConfusionMatrix {
    pub fn new(positive: Gender) -> Self {
        ConfusionMatrix { tp: 0, fp: 0, tn: 0, fn_: 0, positive }
    }

    pub fn add(&mut self, truth: Gender, predicted: Gender) {
        match (truth == self.positive, predicted == self.positive) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Gender, Gender)>, positive: Gender) -> Self {
        let mut cm = ConfusionMatrix::new(positive);
        pairs.into_iter().for_each(|(t, p)| cm.add(t, p));
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    HoldOut,
    Loso,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::HoldOut => "hold-out",
            Protocol::Loso => "LOSO",
        })
    }
}

/// Ratios with a zero denominator are `None` and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub pr: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub n: usize,
    pub protocol: Protocol,
    pub undefined: Vec<String>,
}

pub fn compute_metrics(cm: &ConfusionMatrix, protocol: Protocol) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(FpcgError::EmptyEvaluation);
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: usize, den: usize| {
        if den == 0 {
            undefined.push(name.to_string());
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let pr = ratio("pr", cm.tp, cm.tp + cm.fp);
    let sn = ratio("sn", cm.tp, cm.tp + cm.fn_);
    let sp = ratio("sp", cm.tn, cm.tn + cm.fp);
    Ok(MetricsReport { acc: (cm.tp + cm.tn) as f64 / n as f64, pr, sn, sp, n, protocol, undefined })
}

/// Row indices `(train, test)` of a hold-out split grouped by subject.
///
/// The number of test subjects is `round(fraction * subjects)`, clamped so both
/// sides are non-empty, and is shared between genders by largest remainder.
pub fn holdout_indices(subject_ids: &[String], genders: &[Gender], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FpcgError::InvalidConfig(format!("test fraction {fraction} must lie in (0, 1)")));
    }
    let mut by_gender: [BTreeSet<String>; 2] = Default::default();
    for (s, g) in subject_ids.iter().zip(genders) {
        by_gender[g.index()].insert(s.clone());
    }
    let counts = [by_gender[0].len(), by_gender[1].len()];
    let n = counts[0] + counts[1];
    if n < 2 {
        return Err(FpcgError::TooFewSubjects(format!("hold-out needs at least 2 subjects, have {n}")));
    }
    let total = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let quota = counts.map(|c| total as f64 * c as f64 / n as f64);
    let mut take = quota.map(|q| q.floor() as usize);
    if take[0] + take[1] < total {
        // the larger fractional part gets the spare slot; ties go to Male
        let g = if quota[1].fract() > quota[0].fract() { 1 } else { 0 };
        take[g] += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_subjects = BTreeSet::new();
    for (g, group) in by_gender.iter().enumerate() {
        let mut subjects: Vec<&String> = group.iter().collect();
        subjects.shuffle(&mut rng);
        test_subjects.extend(subjects.into_iter().take(take[g]).cloned());
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..subject_ids.len()).partition(|&i| test_subjects.contains(&subject_ids[i]));
    Ok((train, test))
}

pub fn holdout_split<T: Clone>(data: &LabeledDataset<T>, fraction: f64, seed: u64) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    let ids: Vec<String> = data.samples.iter().map(|s| s.subject_id.clone()).collect();
    let (train, test) = holdout_indices(&ids, &data.labels(), fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    /// Row index in the evaluated dataset.
    pub index: usize,
    pub subject_id: String,
    pub truth: Gender,
    pub predicted: Gender,
    /// `[P(Male), P(Female)]`.
    pub p: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub held_out: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    /// Why the fold was skipped, when it was.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub folds: Vec<FoldRecord>,
    pub predictions: Vec<SegmentPrediction>,
}

impl EvalReport {
    pub fn from_predictions(
        predictions: Vec<SegmentPrediction>,
        folds: Vec<FoldRecord>,
        protocol: Protocol,
        positive: Gender,
    ) -> Result<EvalReport> {
        let confusion = ConfusionMatrix::from_pairs(predictions.iter().map(|p| (p.truth, p.predicted)), positive);
        Ok(EvalReport { metrics: compute_metrics(&confusion, protocol)?, confusion, folds, predictions })
    }

    /// Rebuilds the report from its own per-segment predictions.
    pub fn recompute(&self) -> Result<EvalReport> {
        EvalReport::from_predictions(self.predictions.clone(), self.folds.clone(), self.metrics.protocol, self.confusion.positive)
    }
}

fn predictions_for(
    rows: &[usize],
    probs: Vec<ClassProbabilities>,
    subject_ids: &[String],
    genders: &[Gender],
) -> Result<Vec<SegmentPrediction>> {
    if probs.len() != rows.len() {
        return Err(FpcgError::LengthMismatch { left: rows.len(), right: probs.len() });
    }
    Ok(rows
        .iter()
        .zip(probs)
        .map(|(&i, p)| SegmentPrediction { index: i, subject_id: subject_ids[i].clone(), truth: genders[i], predicted: p.label(), p: p.p })
        .collect())
}

/// Trains on `train` rows, predicts `test` rows and scores the result.
pub fn evaluate_holdout<M>(
    subject_ids: &[String],
    genders: &[Gender],
    train: &[usize],
    test: &[usize],
    train_fn: impl Fn(&[usize]) -> Result<M>,
    predict_fn: impl Fn(&M, &[usize]) -> Result<Vec<ClassProbabilities>>,
    positive: Gender,
) -> Result<EvalReport> {
    let held: BTreeSet<&String> = test.iter().map(|&i| &subject_ids[i]).collect();
    assert!(train.iter().all(|&i| !held.contains(&subject_ids[i])), "hold-out split leaks a subject");
    let model = train_fn(train)?;
    let predictions = predictions_for(test, predict_fn(&model, test)?, subject_ids, genders)?;
    let fold = FoldRecord { held_out: held.into_iter().cloned().collect(), n_train: train.len(), n_test: test.len(), skipped: None };
    EvalReport::from_predictions(predictions, vec![fold], Protocol::HoldOut, positive)
}

/// Leave-one-subject-out over row indices.
///
/// Folds whose training rows hold a single class (or too few subjects for the
/// learner) are skipped and recorded; other errors abort. Folds run in parallel.
pub fn loso_indices<M>(
    subject_ids: &[String],
    genders: &[Gender],
    train_fn: impl Fn(&[usize]) -> Result<M> + Sync,
    predict_fn: impl Fn(&M, &[usize]) -> Result<Vec<ClassProbabilities>> + Sync,
    positive: Gender,
) -> Result<EvalReport> {
    let mut subjects: Vec<&String> = Vec::new();
    let mut seen = BTreeSet::new();
    for s in subject_ids {
        if seen.insert(s) {
            subjects.push(s);
        }
    }
    let per_fold = subjects
        .par_iter()
        .map(|&held| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..subject_ids.len()).partition(|&i| &subject_ids[i] == held);
            assert!(train.iter().all(|&i| &subject_ids[i] != held), "LOSO fold for {held} leaks the held-out subject");
            let mut record = FoldRecord { held_out: vec![held.clone()], n_train: train.len(), n_test: test.len(), skipped: None };
            match train_fn(&train) {
                Ok(model) => {
                    let preds = predictions_for(&test, predict_fn(&model, &test)?, subject_ids, genders)?;
                    Ok((record, preds))
                }
                Err(e @ (FpcgError::SingleClass | FpcgError::InsufficientSubjects(_))) => {
                    log::warn!("LOSO fold {held} skipped: {e}");
                    record.skipped = Some(e.to_string());
                    Ok((record, Vec::new()))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut folds = Vec::with_capacity(per_fold.len());
    let mut predictions = Vec::new();
    for (f, p) in per_fold {
        folds.push(f);
        predictions.extend(p);
    }
    EvalReport::from_predictions(predictions, folds, Protocol::Loso, positive)
}

/// Leave-one-subject-out over a dataset with item-level callbacks.
pub fn loso_cv<T: Clone + Sync, M>(
    data: &LabeledDataset<T>,
    train_fn: impl Fn(&LabeledDataset<T>) -> Result<M> + Sync,
    predict_fn: impl Fn(&M, &T) -> Result<ClassProbabilities> + Sync,
    positive: Gender,
) -> Result<EvalReport> {
    let per_class = data.subject_genders().values().fold([0usize; 2], |mut c, g| {
        c[g.index()] += 1;
        c
    });
    if per_class.iter().any(|&c| c < 2) {
        return Err(FpcgError::InsufficientSubjects(format!(
            "LOSO needs at least 2 subjects per class, have {} male and {} female",
            per_class[0], per_class[1]
        )));
    }
    let ids: Vec<String> = data.samples.iter().map(|s| s.subject_id.clone()).collect();
    loso_indices(
        &ids,
        &data.labels(),
        |rows| train_fn(&data.subset(rows)),
        |m, rows| rows.iter().map(|&i| predict_fn(m, &data.samples[i].item)).collect(),
        positive,
    )
}
