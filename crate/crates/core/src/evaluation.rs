//! Loss functions, student-stratified cross-validation, model ranking and
//! the R-binned comparison of two models' predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_logistic, FitOptions};
use crate::features::{featurize, FeatureRow, FeatureTable};
use crate::model::{build_design_rows, FallbackPolicy, FittedModel, ModelSpec};
use crate::stats::CompensatedSum;

/// 0 when the thresholded prediction matches `y`, else 1. A prediction of
/// exactly 0.5 is wrong for either outcome.
pub fn zero_one_loss(p_hat: f64, y: bool) -> f64 {
    let target = if y { 1.0 } else { 0.0 };
    if (p_hat - target).abs() < 0.5 {
        0.0
    } else {
        1.0
    }
}

/// Absolute prediction error `|p_hat - y|`.
pub fn pe_loss(p_hat: f64, y: bool) -> f64 {
    let target = if y { 1.0 } else { 0.0 };
    (p_hat - target).abs()
}

/// Whether a prediction calls the attempt correct (`p_hat > 0.5`).
pub fn predicts_correct(p_hat: f64) -> bool {
    p_hat > 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    PredictionError,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::ZeroOne, LossKind::PredictionError];

    pub fn loss(self, p_hat: f64, y: bool) -> f64 {
        match self {
            LossKind::ZeroOne => zero_one_loss(p_hat, y),
            LossKind::PredictionError => pe_loss(p_hat, y),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::ZeroOne => "zero_one",
            LossKind::PredictionError => "prediction_error",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean loss over paired predictions and outcomes.
pub fn mean_loss(kind: LossKind, predictions: &[f64], outcomes: &[bool]) -> Result<f64> {
    if predictions.len() != outcomes.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} outcomes",
            predictions.len(),
            outcomes.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    let sum: CompensatedSum = predictions.iter().zip(outcomes).map(|(&p, &y)| kind.loss(p, y)).collect();
    Ok(sum.value() / predictions.len() as f64)
}

/// Assignment of students to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, student: &str) -> Option<usize> {
        self.folds.get(student).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn students_in(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Shuffles students with a seeded generator and deals them round-robin
/// into `k` folds, so fold sizes differ by at most one.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Parameter(format!("cross-validation needs k >= 2, got {k}")));
    }
    let mut students: Vec<&String> = dataset.students().iter().collect();
    if k > students.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the number of students ({})",
            students.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    students.shuffle(&mut rng);
    let folds = students
        .into_iter()
        .enumerate()
        .map(|(pos, s)| (s.clone(), pos % k))
        .collect();
    Ok(FoldAssignment { k, seed, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: String,
    pub loss: LossKind,
    pub fold_means: Vec<f64>,
    pub fold_sizes: Vec<usize>,
    /// Attempt-weighted mean over all held-out attempts.
    pub mean: f64,
    pub n_scored: usize,
    /// Held-out attempts whose KC was absent from the training folds.
    pub n_fallback: usize,
    pub non_converged_folds: usize,
}

impl CvResult {
    /// One CSV row per fold: `model,loss,fold,n,mean`.
    pub fn write_csv<W: Write>(results: &[CvResult], sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["model", "loss", "fold", "n", "mean"])?;
        for r in results {
            for (f, (m, n)) in r.fold_means.iter().zip(&r.fold_sizes).enumerate() {
                w.write_record([r.model.clone(), r.loss.to_string(), f.to_string(), n.to_string(), m.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct FoldOutcome {
    losses: Vec<Vec<f64>>,
    n_fallback: usize,
    converged: bool,
}

/// Cross-validates `spec` on `dataset` with default fit options.
pub fn cross_validate(
    dataset: &Dataset,
    spec: &ModelSpec,
    folds: &FoldAssignment,
    losses: &[LossKind],
) -> Result<Vec<CvResult>> {
    let table = featurize(dataset, &spec.feature_config)?;
    cross_validate_table(&table, spec, folds, losses, &FitOptions::default())
}

/// Cross-validates on precomputed features. Each fold is fit on the other
/// folds' attempts and scored on its own; folds run in parallel.
pub fn cross_validate_table(
    table: &FeatureTable,
    spec: &ModelSpec,
    folds: &FoldAssignment,
    losses: &[LossKind],
    options: &FitOptions,
) -> Result<Vec<CvResult>> {
    if spec.include_student_intercept {
        return Err(Error::Configuration(
            "cross-validation scores unseen students; disable student intercepts".into(),
        ));
    }
    spec.validate()?;
    spec.check_features(&table.config)?;
    let losses: Vec<LossKind> = losses.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if losses.is_empty() {
        return Err(Error::Parameter("no loss functions requested".into()));
    }

    let mut assignment = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let fold = folds.fold_of(&row.student_id).ok_or_else(|| Error::UnknownEntity {
            kind: "student",
            id: row.student_id.to_string(),
        })?;
        assignment.push(fold);
    }

    let outcomes: Vec<FoldOutcome> = (0..folds.k)
        .into_par_iter()
        .map(|fold| -> Result<FoldOutcome> {
            let (train, test): (Vec<FeatureRow>, Vec<FeatureRow>) = {
                let mut train = Vec::new();
                let mut test = Vec::new();
                for (row, &f) in table.rows.iter().zip(&assignment) {
                    if f == fold {
                        test.push(row.clone());
                    } else {
                        train.push(row.clone());
                    }
                }
                (train, test)
            };
            let design = build_design_rows(&train, spec)?;
            let model = fit_logistic(&design, options)?.into_model(spec.clone());
            let predictions = model.predict_rows(&test, FallbackPolicy::ZeroContribution)?;
            let per_loss = losses
                .iter()
                .map(|&kind| {
                    predictions
                        .iter()
                        .zip(&test)
                        .map(|(p, row)| kind.loss(p.p, row.correct))
                        .collect()
                })
                .collect();
            Ok(FoldOutcome {
                losses: per_loss,
                n_fallback: predictions.iter().filter(|p| p.fallback).count(),
                converged: model.converged,
            })
        })
        .collect::<Result<_>>()?;

    let n_fallback = outcomes.iter().map(|o| o.n_fallback).sum();
    let non_converged_folds = outcomes.iter().filter(|o| !o.converged).count();
    Ok(losses
        .iter()
        .enumerate()
        .map(|(li, &kind)| {
            let mut total = CompensatedSum::new();
            let mut fold_means = Vec::with_capacity(folds.k);
            let mut fold_sizes = Vec::with_capacity(folds.k);
            for o in &outcomes {
                let values = &o.losses[li];
                let fold_sum: CompensatedSum = values.iter().copied().collect();
                for &v in values {
                    total.add(v);
                }
                fold_sizes.push(values.len());
                fold_means.push(if values.is_empty() {
                    f64::NAN
                } else {
                    fold_sum.value() / values.len() as f64
                });
            }
            let n_scored: usize = fold_sizes.iter().sum();
            CvResult {
                model: spec.name.clone(),
                loss: kind,
                fold_means,
                fold_sizes,
                mean: total.value() / n_scored as f64,
                n_scored,
                n_fallback,
                non_converged_folds,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// A model's score on one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub model: String,
    pub score: f64,
    pub n_params: usize,
}

impl ScoreEntry {
    pub fn new(model: impl Into<String>, score: f64, n_params: usize) -> Self {
        Self {
            model: model.into(),
            score,
            n_params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model: String,
    pub score: f64,
    pub n_params: usize,
    /// 1 is best.
    pub rank: usize,
    /// Set when the score was NaN and the model was ranked last.
    pub invalid_score: bool,
}

/// Orders models by score, breaking exact ties by fewer parameters and then
/// by name. NaN scores rank last and are flagged.
pub fn rank_models(scores: &[ScoreEntry], direction: Direction) -> Result<Vec<RankedModel>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to rank".into()));
    }
    let mut order: Vec<&ScoreEntry> = scores.iter().collect();
    order.sort_by(|a, b| {
        let by_score = match (a.score.is_nan(), b.score.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            (false, false) => match direction {
                Direction::LowerIsBetter => a.score.total_cmp(&b.score),
                Direction::HigherIsBetter => b.score.total_cmp(&a.score),
            },
        };
        by_score
            .then(a.n_params.cmp(&b.n_params))
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, e)| RankedModel {
            model: e.model.clone(),
            score: e.score,
            n_params: e.n_params,
            rank: i + 1,
            invalid_score: e.score.is_nan(),
        })
        .collect())
}

/// How often each model took each rank across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub measure: String,
    pub n_replications: usize,
    /// `counts[model][r - 1]` is the number of replications ranking `model` at `r`.
    pub counts: BTreeMap<String, Vec<usize>>,
}

impl RankingSummary {
    /// Aggregates rankings that all cover the same set of models.
    pub fn from_rankings(measure: impl Into<String>, rankings: &[Vec<RankedModel>]) -> Result<Self> {
        let first = rankings
            .first()
            .ok_or_else(|| Error::EmptyInput("no rankings to summarize".into()))?;
        let models: BTreeSet<&str> = first.iter().map(|r| r.model.as_str()).collect();
        let m = models.len();
        let mut counts: BTreeMap<String, Vec<usize>> = models.iter().map(|s| (s.to_string(), vec![0; m])).collect();
        for ranking in rankings {
            let these: BTreeSet<&str> = ranking.iter().map(|r| r.model.as_str()).collect();
            if these != models || ranking.len() != m {
                return Err(Error::Shape("rankings cover different model sets".into()));
            }
            for r in ranking {
                counts.get_mut(&r.model).expect("model present")[r.rank - 1] += 1;
            }
        }
        Ok(Self {
            measure: measure.into(),
            n_replications: rankings.len(),
            counts,
        })
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// Proportion of replications ranking `model` at `rank` (1-based).
    pub fn proportion(&self, model: &str, rank: usize) -> f64 {
        match self.counts.get(model) {
            Some(c) if rank >= 1 && rank <= c.len() && self.n_replications > 0 => {
                c[rank - 1] as f64 / self.n_replications as f64
            }
            _ => 0.0,
        }
    }

    /// Nested proportion map `model -> rank -> share`.
    pub fn frequencies(&self) -> BTreeMap<String, BTreeMap<usize, f64>> {
        self.counts
            .iter()
            .map(|(m, c)| {
                let row = (1..=c.len()).map(|r| (r, self.proportion(m, r))).collect();
                (m.clone(), row)
            })
            .collect()
    }

    /// One CSV row per (model, rank): `measure,model,rank,count,proportion`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["measure", "model", "rank", "count", "proportion"])?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (model, c) in &self.counts {
            for (i, n) in c.iter().enumerate() {
                w.write_record([
                    self.measure.clone(),
                    model.clone(),
                    (i + 1).to_string(),
                    n.to_string(),
                    self.proportion(model, i + 1).to_string(),
                ])?;
            }
        }
        Ok(())
    }
}

/// Intervals of the recency-weighted proportion used to facet comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RBin {
    #[serde(rename = "[0,0.3]")]
    UpTo03,
    #[serde(rename = "(0.3,0.5]")]
    UpTo05,
    #[serde(rename = "(0.5,0.7]")]
    UpTo07,
    #[serde(rename = "(0.7,1]")]
    Above07,
}

impl RBin {
    pub const ALL: [RBin; 4] = [RBin::UpTo03, RBin::UpTo05, RBin::UpTo07, RBin::Above07];

    pub fn of(r: f64) -> RBin {
        if r <= 0.3 {
            RBin::UpTo03
        } else if r <= 0.5 {
            RBin::UpTo05
        } else if r <= 0.7 {
            RBin::UpTo07
        } else {
            RBin::Above07
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RBin::UpTo03 => "[0,0.3]",
            RBin::UpTo05 => "(0.3,0.5]",
            RBin::UpTo07 => "(0.5,0.7]",
            RBin::Above07 => "(0.7,1]",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    fn record(&mut self, predicted_correct: bool, actual: bool) {
        match (predicted_correct, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBinCell {
    pub bin: RBin,
    pub outcome: u8,
    pub n: usize,
    pub model_a: Confusion,
    pub model_b: Confusion,
    /// A classifies correctly and B does not.
    pub a_wins: usize,
    /// B classifies correctly and A does not.
    pub a_losses: usize,
    pub both_correct: usize,
    pub both_wrong: usize,
    /// Attempts in the cell at opportunity 1 or 2.
    pub early: usize,
    pub early_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBinReport {
    pub model_a: String,
    pub model_b: String,
    /// Decay of the R values used for binning.
    pub decay_r: f64,
    pub n_rows: usize,
    pub fallback_a: usize,
    pub fallback_b: usize,
    /// Cells ordered by bin, then outcome 0 before 1.
    pub cells: Vec<RBinCell>,
}

impl RBinReport {
    pub fn cell(&self, bin: RBin, outcome: bool) -> &RBinCell {
        &self.cells[RBin::ALL.iter().position(|&b| b == bin).expect("bin listed") * 2 + usize::from(outcome)]
    }

    /// One CSV row per cell.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "model_a", "model_b", "bin", "outcome", "n", "a_tp", "a_fp", "a_tn", "a_fn", "b_tp", "b_fp", "b_tn",
            "b_fn", "a_wins", "a_losses", "both_correct", "both_wrong", "early", "early_share",
        ])?;
        for c in &self.cells {
            let mut record = vec![
                self.model_a.clone(),
                self.model_b.clone(),
                c.bin.label().to_string(),
                c.outcome.to_string(),
                c.n.to_string(),
            ];
            for conf in [c.model_a, c.model_b] {
                record.extend([conf.tp, conf.fp, conf.tn, conf.fn_].iter().map(|v| v.to_string()));
            }
            record.extend(
                [c.a_wins, c.a_losses, c.both_correct, c.both_wrong, c.early]
                    .iter()
                    .map(|v| v.to_string()),
            );
            record.push(c.early_share.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares two models attempt by attempt, faceted by the R value in
/// `rows_a` and by the actual outcome. `rows_a` and `rows_b` hold the same
/// attempts featurized for each model.
pub fn prediction_comparison(
    model_a: &FittedModel,
    model_b: &FittedModel,
    rows_a: &[FeatureRow],
    rows_b: &[FeatureRow],
) -> Result<RBinReport> {
    if rows_a.len() != rows_b.len() {
        return Err(Error::Shape(format!(
            "feature tables have {} and {} rows",
            rows_a.len(),
            rows_b.len()
        )));
    }
    let pa = model_a.predict_rows(rows_a, FallbackPolicy::ZeroContribution)?;
    let pb = model_b.predict_rows(rows_b, FallbackPolicy::ZeroContribution)?;
    let mut cells: Vec<RBinCell> = RBin::ALL
        .iter()
        .flat_map(|&bin| {
            [0u8, 1].map(|outcome| RBinCell {
                bin,
                outcome,
                n: 0,
                model_a: Confusion::default(),
                model_b: Confusion::default(),
                a_wins: 0,
                a_losses: 0,
                both_correct: 0,
                both_wrong: 0,
                early: 0,
                early_share: 0.0,
            })
        })
        .collect();
    for (i, (ra, rb)) in rows_a.iter().zip(rows_b).enumerate() {
        if ra.student_id != rb.student_id || ra.kc_id != rb.kc_id || ra.t != rb.t || ra.correct != rb.correct {
            return Err(Error::Shape(format!("feature rows differ at position {i}")));
        }
        let bin = RBin::of(ra.features.recent);
        let idx = RBin::ALL.iter().position(|&b| b == bin).expect("bin listed") * 2 + usize::from(ra.correct);
        let cell = &mut cells[idx];
        let a_says = predicts_correct(pa[i].p);
        let b_says = predicts_correct(pb[i].p);
        cell.n += 1;
        cell.model_a.record(a_says, ra.correct);
        cell.model_b.record(b_says, ra.correct);
        match (a_says == ra.correct, b_says == ra.correct) {
            (true, false) => cell.a_wins += 1,
            (false, true) => cell.a_losses += 1,
            (true, true) => cell.both_correct += 1,
            (false, false) => cell.both_wrong += 1,
        }
        if ra.t <= 2 {
            cell.early += 1;
        }
    }
    for cell in &mut cells {
        cell.early_share = if cell.n == 0 { 0.0 } else { cell.early as f64 / cell.n as f64 };
    }
    Ok(RBinReport {
        model_a: model_a.spec.name.clone(),
        model_b: model_b.spec.name.clone(),
        decay_r: model_a.spec.feature_config.decay_r,
        n_rows: rows_a.len(),
        fallback_a: pa.iter().filter(|p| p.fallback).count(),
        fallback_b: pb.iter().filter(|p| p.fallback).count(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PracticeSequence;
    use crate::estimator::FitDiagnostics;
    use crate::features::Features;
    use crate::model::feature_row;
    use proptest::prelude::*;

    fn dataset_with_students(n: usize) -> Dataset {
        Dataset::from_sequences(
            (0..n)
                .map(|i| PracticeSequence::from_bits(format!("s{i:03}"), "k", &[0, 1]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(zero_one_loss(0.48, false), 0.0);
        assert_eq!(zero_one_loss(0.52, true), 0.0);
        assert_eq!(zero_one_loss(0.5, true), 1.0);
        assert_eq!(zero_one_loss(0.5, false), 1.0);
        assert_eq!(pe_loss(1.0, true), 0.0);
        assert!((pe_loss(0.3, false) - 0.3).abs() < 1e-15);
        let y = [false, true];
        assert_eq!(mean_loss(LossKind::ZeroOne, &[0.48, 0.52], &y).unwrap(), 0.0);
        assert_eq!(mean_loss(LossKind::ZeroOne, &[0.1, 0.9], &y).unwrap(), 0.0);
        assert!((mean_loss(LossKind::PredictionError, &[0.48, 0.52], &y).unwrap() - 0.48).abs() < 1e-12);
        assert!((mean_loss(LossKind::PredictionError, &[0.1, 0.9], &y).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_one_agrees_with_thresholding() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            let p: f64 = rng.random();
            let y: bool = rng.random();
            let classified = if p > 0.5 { y } else { !y };
            assert_eq!(zero_one_loss(p, y), if classified { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn mean_pe_matches_plain_sum() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let y: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
        let mut oracle = 0.0;
        for i in 0..p.len() {
            oracle += if y[i] { 1.0 - p[i] } else { p[i] };
        }
        oracle /= p.len() as f64;
        assert!((mean_loss(LossKind::PredictionError, &p, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn mean_loss_errors() {
        assert!(matches!(mean_loss(LossKind::ZeroOne, &[0.1], &[]), Err(Error::Shape(_))));
        assert!(matches!(mean_loss(LossKind::ZeroOne, &[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let ds = dataset_with_students(10);
        let a = make_folds(&ds, 5, 1).unwrap();
        assert_eq!(a.sizes(), vec![2; 5]);
        assert_eq!(a, make_folds(&ds, 5, 1).unwrap());
        let ds = dataset_with_students(103);
        for seed in 0..100 {
            let mut sizes = make_folds(&ds, 5, seed).unwrap().sizes();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            assert_eq!(sizes, vec![21, 21, 21, 20, 20]);
        }
        assert_ne!(make_folds(&ds, 5, 0).unwrap(), make_folds(&ds, 5, 1).unwrap());
    }

    #[test]
    fn fold_errors() {
        let ds = dataset_with_students(3);
        assert!(matches!(make_folds(&ds, 4, 0), Err(Error::Parameter(_))));
        assert!(matches!(make_folds(&ds, 1, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn ranking_examples() {
        let scores = [
            ScoreEntry::new("a", 206.0, 3),
            ScoreEntry::new("b", 210.0, 3),
            ScoreEntry::new("c", 190.0, 3),
        ];
        let ranks: BTreeMap<_, _> = rank_models(&scores, Direction::LowerIsBetter)
            .unwrap()
            .into_iter()
            .map(|r| (r.model, r.rank))
            .collect();
        assert_eq!(ranks["a"], 2);
        assert_eq!(ranks["b"], 3);
        assert_eq!(ranks["c"], 1);

        let tied = [ScoreEntry::new("big", 5.0, 10), ScoreEntry::new("small", 5.0, 2)];
        assert_eq!(rank_models(&tied, Direction::LowerIsBetter).unwrap()[0].model, "small");

        let nan = [ScoreEntry::new("x", f64::NAN, 1), ScoreEntry::new("y", 1e9, 1)];
        let r = rank_models(&nan, Direction::LowerIsBetter).unwrap();
        assert_eq!(r[1].model, "x");
        assert!(r[1].invalid_score && !r[0].invalid_score);
        assert!(rank_models(&[], Direction::LowerIsBetter).is_err());
    }

    proptest! {
        #[test]
        fn ranking_ignores_input_order(
            scores in prop::collection::vec((0u8..5, 0usize..3), 1..8),
            seed in any::<u64>(),
        ) {
            let entries: Vec<ScoreEntry> = scores
                .iter()
                .enumerate()
                .map(|(i, &(s, k))| ScoreEntry::new(format!("m{i}"), s as f64, k))
                .collect();
            let mut shuffled = entries.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                rank_models(&entries, Direction::LowerIsBetter).unwrap(),
                rank_models(&shuffled, Direction::LowerIsBetter).unwrap()
            );
        }

        #[test]
        fn rank_frequencies_are_doubly_stochastic(
            runs in prop::collection::vec(prop::collection::vec(0u8..4, 4), 1..12),
        ) {
            let rankings: Vec<Vec<RankedModel>> = runs
                .iter()
                .map(|scores| {
                    let entries: Vec<ScoreEntry> = scores
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| ScoreEntry::new(format!("m{i}"), s as f64, 1))
                        .collect();
                    rank_models(&entries, Direction::LowerIsBetter).unwrap()
                })
                .collect();
            let summary = RankingSummary::from_rankings("aic", &rankings).unwrap();
            for m in summary.models() {
                let total: f64 = (1..=4).map(|r| summary.proportion(m, r)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
            for r in 1..=4 {
                let total: f64 = summary.models().map(|m| summary.proportion(m, r)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn pe_is_continuous_and_zero_one_piecewise_constant(p in 0.0f64..1.0, dp in -1e-6f64..1e-6, y: bool) {
            let q = (p + dp).clamp(0.0, 1.0);
            prop_assert!((pe_loss(p, y) - pe_loss(q, y)).abs() <= 1e-6 + 1e-15);
            if (p > 0.5) == (q > 0.5) {
                prop_assert_eq!(zero_one_loss(p, y), zero_one_loss(q, y));
            }
        }
    }

    #[test]
    fn summary_rejects_mismatched_rosters() {
        let a = rank_models(&[ScoreEntry::new("a", 1.0, 1)], Direction::LowerIsBetter).unwrap();
        let b = rank_models(&[ScoreEntry::new("b", 1.0, 1)], Direction::LowerIsBetter).unwrap();
        assert!(RankingSummary::from_rankings("aic", &[a, b]).is_err());
    }

    fn model_with(name: &str, intercept: f64) -> FittedModel {
        let mut coefs = BTreeMap::new();
        coefs.insert("kc:k".to_string(), intercept);
        let mut spec = ModelSpec::afm();
        spec.name = name.into();
        FittedModel::new(spec, coefs, vec![], 0.0, 0, FitDiagnostics::default())
    }

    fn row(t: u32, correct: bool, recent: f64) -> FeatureRow {
        feature_row(
            "s",
            "k",
            t,
            correct,
            Features {
                total: 0,
                successes: 0.0,
                failures: 0.0,
                recent,
            },
        )
    }

    #[test]
    fn identical_models_never_win_or_lose() {
        let m = model_with("a", 0.3);
        let rows: Vec<FeatureRow> = (1..=8).map(|t| row(t, t % 3 == 0, t as f64 / 8.0)).collect();
        let report = prediction_comparison(&m, &m, &rows, &rows).unwrap();
        assert!(report.cells.iter().all(|c| c.a_wins == 0 && c.a_losses == 0));
        assert_eq!(report.cells.iter().map(|c| c.n).sum::<usize>(), rows.len());
    }

    #[test]
    fn hand_counted_comparison() {
        // AFM predictions ignore features, so give each row its own intercept
        // by using distinct KCs.
        let mk = |kc: &str, t, correct, recent| {
            let mut r = row(t, correct, recent);
            r.kc_id = kc.into();
            r
        };
        let rows = vec![
            mk("k1", 1, false, 0.1),
            mk("k2", 3, false, 0.3),
            mk("k3", 2, true, 0.2),
            mk("k4", 5, true, 0.45),
            mk("k5", 6, false, 0.9),
            mk("k6", 7, true, 0.71),
        ];
        let coef = |vals: [f64; 6]| -> BTreeMap<String, f64> {
            vals.iter().enumerate().map(|(i, v)| (format!("kc:k{}", i + 1), *v)).collect()
        };
        let a = FittedModel::new(
            ModelSpec::afm(),
            coef([-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]),
            vec![],
            0.0,
            0,
            FitDiagnostics::default(),
        );
        let b = FittedModel::new(
            ModelSpec::afm(),
            coef([1.0, -1.0, 1.0, -1.0, -1.0, 0.0]),
            vec![],
            0.0,
            0,
            FitDiagnostics::default(),
        );
        let r = prediction_comparison(&a, &b, &rows, &rows).unwrap();
        // [0,0.3] incorrect: k1 (A right, B wrong), k2 (both right).
        let c = r.cell(RBin::UpTo03, false);
        assert_eq!((c.n, c.a_wins, c.a_losses, c.both_correct, c.both_wrong), (2, 1, 0, 1, 0));
        assert_eq!((c.model_a.tn, c.model_b.tn, c.model_b.fp), (2, 1, 1));
        assert_eq!(c.early, 1);
        // [0,0.3] correct: k3 (A wrong, B right).
        let c = r.cell(RBin::UpTo03, true);
        assert_eq!((c.n, c.a_wins, c.a_losses), (1, 0, 1));
        assert_eq!((c.model_a.fn_, c.model_b.tp), (1, 1));
        assert_eq!(c.early_share, 1.0);
        // (0.3,0.5] correct: k4 (A right, B wrong).
        let c = r.cell(RBin::UpTo05, true);
        assert_eq!((c.n, c.a_wins), (1, 1));
        // (0.7,1] incorrect: k5 (A wrong, B right); correct: k6 (A right, B at 0.5 wrong).
        let c = r.cell(RBin::Above07, false);
        assert_eq!((c.n, c.a_losses, c.model_a.fp), (1, 1, 1));
        let c = r.cell(RBin::Above07, true);
        assert_eq!((c.n, c.a_wins, c.model_b.fn_), (1, 1, 1));
        let total: usize = r.cells.iter().map(|c| c.model_a.total()).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn bin_edges() {
        assert_eq!(RBin::of(0.0), RBin::UpTo03);
        assert_eq!(RBin::of(0.3), RBin::UpTo03);
        assert_eq!(RBin::of(0.30001), RBin::UpTo05);
        assert_eq!(RBin::of(0.5), RBin::UpTo05);
        assert_eq!(RBin::of(0.7), RBin::UpTo07);
        assert_eq!(RBin::of(1.0), RBin::Above07);
    }

    #[test]
    fn misaligned_rows_are_rejected() {
        let m = model_with("a", 0.0);
        let rows = vec![row(1, true, 0.1)];
        let other = vec![row(2, true, 0.1)];
        assert!(matches!(prediction_comparison(&m, &m, &rows, &other), Err(Error::Shape(_))));
        assert!(matches!(prediction_comparison(&m, &m, &rows, &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn cv_rejects_student_intercepts() {
        let ds = dataset_with_students(4);
        let folds = make_folds(&ds, 2, 0).unwrap();
        let spec = ModelSpec::afm().with_student_intercept(true);
        assert!(matches!(
            cross_validate(&ds, &spec, &folds, &[LossKind::ZeroOne]),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn cv_all_correct_scores_zero() {
        let seqs = (0..6)
            .map(|i| PracticeSequence::from_bits(format!("s{i}"), "k", &[1, 1, 1]))
            .collect();
        let ds = Dataset::from_sequences(seqs).unwrap();
        let folds = make_folds(&ds, 3, 7).unwrap();
        let spec = ModelSpec::afm();
        let results = cross_validate(&ds, &spec, &folds, &LossKind::ALL).unwrap();
        let zo = results.iter().find(|r| r.loss == LossKind::ZeroOne).unwrap();
        assert_eq!(zo.mean, 0.0);
        assert_eq!(zo.n_scored, 18);
        assert_eq!(zo.n_fallback, 0);
    }
}
