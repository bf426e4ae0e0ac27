//! Decay sweeps, replicated simulation studies, prediction comparisons and
//! report output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{aic, bic, fit_model, FitOptions};
use crate::evaluation::{
    cross_validate_table, make_folds, prediction_comparison, rank_models, Direction, LossKind, RankedModel,
    RankingSummary, RBinReport, ScoreEntry,
};
use crate::features::featurize;
use crate::model::{FittedModel, ModelFamily, ModelSpec};
use crate::simulators::{
    replication_seed, simulate, FsSettings, Generator, InitialState, ParamSource, PopulationConfig, SimConfig,
};
use crate::stats::{spearman, variance};

/// Model-selection measure; lower is better for all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Aic,
    Bic,
    CvZeroOne,
    CvPe,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Aic => "aic",
            Measure::Bic => "bic",
            Measure::CvZeroOne => "cv_zero_one",
            Measure::CvPe => "cv_pe",
        }
    }

    fn loss(self) -> Option<LossKind> {
        match self {
            Measure::CvZeroOne => Some(LossKind::ZeroOne),
            Measure::CvPe => Some(LossKind::PredictionError),
            _ => None,
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "aic" => Ok(Measure::Aic),
            "bic" => Ok(Measure::Bic),
            "cv_zero_one" | "cv_0_1" | "cv01" => Ok(Measure::CvZeroOne),
            "cv_pe" => Ok(Measure::CvPe),
            _ => Err(Error::Configuration(format!("unknown measure `{s}`"))),
        }
    }
}

/// Every score computed for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model: String,
    pub n_params: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    /// Measure name to value; CV entries only when requested.
    pub values: BTreeMap<Measure, f64>,
    pub cv_fallbacks: usize,
    pub cv_non_converged_folds: usize,
}

impl ModelScores {
    pub fn value(&self, measure: Measure) -> f64 {
        self.values.get(&measure).copied().unwrap_or(f64::NAN)
    }

    /// Whether every fit behind these scores converged.
    pub fn all_converged(&self) -> bool {
        self.converged && self.cv_non_converged_folds == 0
    }
}

/// Settings shared by everything that fits and scores models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringOptions {
    pub fit: FitOptions,
    pub k_folds: usize,
    pub fold_seed: u64,
    /// Treat non-convergence as a failure instead of a flag.
    pub strict: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            k_folds: 5,
            fold_seed: 0,
            strict: false,
        }
    }
}

/// Fits `spec` on all of `dataset` (for information criteria) and
/// cross-validates it for any requested CV measures.
pub fn score_model(
    dataset: &Dataset,
    spec: &ModelSpec,
    measures: &[Measure],
    options: &ScoringOptions,
) -> Result<ModelScores> {
    let table = featurize(dataset, &spec.feature_config)?;
    let model = fit_model(&table, spec, &options.fit)?;
    let mut values = BTreeMap::new();
    for &m in measures {
        match m {
            Measure::Aic => {
                values.insert(m, aic(&model));
            }
            Measure::Bic => {
                values.insert(m, bic(&model, model.n_obs as f64)?);
            }
            _ => {}
        }
    }
    let losses: Vec<LossKind> = measures.iter().filter_map(|m| m.loss()).collect();
    let mut cv_fallbacks = 0;
    let mut cv_non_converged_folds = 0;
    if !losses.is_empty() {
        let folds = make_folds(dataset, options.k_folds, options.fold_seed)?;
        for r in cross_validate_table(&table, spec, &folds, &losses, &options.fit)? {
            let measure = match r.loss {
                LossKind::ZeroOne => Measure::CvZeroOne,
                LossKind::PredictionError => Measure::CvPe,
            };
            values.insert(measure, r.mean);
            cv_fallbacks = r.n_fallback;
            cv_non_converged_folds = r.non_converged_folds;
        }
    }
    let scores = ModelScores {
        model: spec.name.clone(),
        n_params: model.n_params,
        log_likelihood: model.log_likelihood,
        converged: model.converged,
        values,
        cv_fallbacks,
        cv_non_converged_folds,
    };
    if options.strict && !scores.all_converged() {
        return Err(Error::NotConverged {
            iterations: model.iterations,
            gradient_max_abs: model.diagnostics.gradient_max_abs,
        });
    }
    Ok(scores)
}

/// Fits a model on a whole dataset.
pub fn fit_dataset(dataset: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<FittedModel> {
    let table = featurize(dataset, &spec.feature_config)?;
    fit_model(&table, spec, options)
}

/// Seeds, settings and timing attached to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

impl Provenance {
    fn new(seed: u64, started: Instant) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        }
    }

    fn csv_comment(&self) -> String {
        format!(
            "# tool={} version={} seed={} wall_time_seconds={}\n",
            self.tool, self.version, self.seed, self.wall_time_seconds
        )
    }
}

/// The default grid `0.1, 0.2, ..., 1.0`.
pub fn default_decay_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub family: ModelFamily,
    /// Decays for the success-side term (`S` or `R`, by family).
    #[serde(default = "default_decay_grid")]
    pub success_decays: Vec<f64>,
    /// Decays for `F`; ignored by families without a failure term.
    #[serde(default = "default_decay_grid")]
    pub failure_decays: Vec<f64>,
    /// Use the success decay for `F` as well, giving one cell per success decay.
    #[serde(default)]
    pub equal_decays: bool,
}

impl SweepGrid {
    pub fn new(family: ModelFamily, success_decays: Vec<f64>, failure_decays: Vec<f64>) -> Self {
        Self {
            family,
            success_decays,
            failure_decays,
            equal_decays: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.success_decays.is_empty() || self.failure_decays.is_empty() {
            return Err(Error::Parameter("sweep grids must be non-empty".into()));
        }
        for &d in self.success_decays.iter().chain(&self.failure_decays) {
            crate::features::check_decay(d)?;
        }
        if self.family == ModelFamily::Custom {
            return Err(Error::Configuration("custom models cannot be swept".into()));
        }
        Ok(())
    }

    fn uses_success(&self) -> bool {
        self.family != ModelFamily::Afm
    }

    fn uses_failure(&self) -> bool {
        matches!(self.family, ModelFamily::Pfa | ModelFamily::RPfa)
    }

    /// `(success, failure)` decay pairs in row-major order. Unused
    /// dimensions collapse to a single cell with decay 1.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let success = if self.uses_success() {
            self.success_decays.clone()
        } else {
            vec![1.0]
        };
        let mut out = Vec::new();
        for &s in &success {
            if self.equal_decays && self.uses_failure() {
                out.push((s, s));
            } else if self.uses_failure() {
                out.extend(self.failure_decays.iter().map(|&f| (s, f)));
            } else {
                out.push((s, 1.0));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub success_decay: f64,
    pub failure_decay: f64,
    pub model: String,
    pub value: f64,
    pub n_params: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: SweepGrid,
    pub metric: Measure,
    pub options: ScoringOptions,
    pub cells: Vec<SweepCell>,
    /// Index into `cells` of the lowest finite metric value.
    pub argmin: Option<usize>,
    pub provenance: Provenance,
}

impl SweepReport {
    pub fn best(&self) -> Option<&SweepCell> {
        self.argmin.map(|i| &self.cells[i])
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failed()).count()
    }
}

/// File form of a sweep: the grid, the metric, scoring settings and, when
/// no dataset is supplied, a simulation to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    #[serde(default = "default_sweep_metric")]
    pub metric: Measure,
    #[serde(default)]
    pub scoring: ScoringOptions,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
}

fn default_sweep_metric() -> Measure {
    Measure::Aic
}

/// Fits and scores every cell of a decay grid. Failing cells are recorded
/// and the sweep continues.
pub fn sweep_decay(dataset: &Dataset, grid: &SweepGrid, metric: Measure, options: &ScoringOptions) -> Result<SweepReport> {
    let started = Instant::now();
    grid.validate()?;
    let cells: Vec<SweepCell> = grid
        .cells()
        .into_par_iter()
        .map(|(s, f)| {
            let spec = ModelSpec::from_family(grid.family, s, f);
            let outcome = spec.and_then(|spec| score_model(dataset, &spec, &[metric], options).map(|r| (spec, r)));
            match outcome {
                Ok((_, scores)) => SweepCell {
                    success_decay: s,
                    failure_decay: f,
                    value: scores.value(metric),
                    model: scores.model,
                    n_params: scores.n_params,
                    log_likelihood: scores.log_likelihood,
                    converged: scores.converged && scores.cv_non_converged_folds == 0,
                    error: None,
                },
                Err(e) => SweepCell {
                    success_decay: s,
                    failure_decay: f,
                    model: String::new(),
                    value: f64::NAN,
                    n_params: 0,
                    log_likelihood: f64::NAN,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let argmin = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.value.is_finite())
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(i, _)| i);
    Ok(SweepReport {
        grid: grid.clone(),
        metric,
        options: *options,
        cells,
        argmin,
        provenance: Provenance::new(options.fold_seed, started),
    })
}

/// The comparison roster: AFM, PFA, and R-PFA at `d_R` in
/// `{0.2, 0.4, 0.6, 0.8, 1.0}` with `d_F = 0.1`.
pub fn default_roster() -> Vec<ModelSpec> {
    let mut roster = vec![ModelSpec::afm(), ModelSpec::pfa(1.0, 1.0)];
    roster.extend([0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|&d| ModelSpec::r_pfa(d, 0.1)));
    roster
}

fn default_measures() -> Vec<Measure> {
    vec![Measure::Aic, Measure::CvZeroOne, Measure::CvPe]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub generator: Generator,
    pub replications: usize,
    /// Population shape; its seed is replaced per replication.
    pub population: PopulationConfig,
    pub fs: FsSettings,
    pub initial_state: InitialState,
    pub roster: Vec<ModelSpec>,
    pub measures: Vec<Measure>,
    pub k_folds: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub strict: bool,
}

impl Default for StudyConfig {
    /// Reduced scale: 20 replications of 1000 students and 30 KCs.
    fn default() -> Self {
        Self {
            generator: Generator::Bkt2,
            replications: 20,
            population: PopulationConfig {
                n_kcs: 30,
                n_students: 1000,
                kc_mean: 5.0,
                attempts_mean: 8.0,
                seed: 0,
            },
            fs: FsSettings::default(),
            initial_state: InitialState::AtFirstAttempt,
            roster: default_roster(),
            measures: default_measures(),
            k_folds: 5,
            seed: 0,
            fit: FitOptions::default(),
            strict: false,
        }
    }
}

impl StudyConfig {
    /// Full scale: 100 replications of 3500 students and 50 KCs.
    pub fn full_scale() -> Self {
        Self {
            replications: 100,
            population: PopulationConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Parameter("replications must be positive".into()));
        }
        if self.roster.is_empty() || self.measures.is_empty() {
            return Err(Error::Parameter("roster and measures must be non-empty".into()));
        }
        let mut names: Vec<&str> = self.roster.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Configuration("roster model names must be unique".into()));
        }
        for spec in &self.roster {
            spec.validate()?;
        }
        self.population.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub n_attempts: usize,
    pub scores: Vec<ModelScores>,
    pub rankings: BTreeMap<Measure, Vec<RankedModel>>,
    pub error: Option<String>,
}

impl ReplicationResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Rank of `model` under `measure`, if ranked.
    pub fn rank_of(&self, measure: Measure, model: &str) -> Option<usize> {
        self.rankings.get(&measure)?.iter().find(|r| r.model == model).map(|r| r.rank)
    }

    pub fn winner(&self, measure: Measure) -> Option<&str> {
        self.rankings.get(&measure)?.first().map(|r| r.model.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub replications: Vec<ReplicationResult>,
    /// Rank frequencies over successful replications, one per measure.
    pub summaries: Vec<RankingSummary>,
    pub provenance: Provenance,
}

impl StudyReport {
    pub fn failed_replications(&self) -> usize {
        self.replications.iter().filter(|r| r.failed()).count()
    }

    pub fn summary(&self, measure: Measure) -> Option<&RankingSummary> {
        self.summaries.iter().find(|s| s.measure == measure.as_str())
    }

    /// Ranks of `model` under `measure` across successful replications.
    pub fn ranks(&self, measure: Measure, model: &str) -> Vec<usize> {
        self.replications.iter().filter_map(|r| r.rank_of(measure, model)).collect()
    }

    /// Share of successful replications in which `pred` holds.
    pub fn share(&self, pred: impl Fn(&ReplicationResult) -> bool) -> f64 {
        let ok: Vec<&ReplicationResult> = self.replications.iter().filter(|r| !r.failed()).collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|r| pred(r)).count() as f64 / ok.len() as f64
    }

    /// Sample variance of a model's rank under a measure.
    pub fn rank_variance(&self, measure: Measure, model: &str) -> f64 {
        let ranks: Vec<f64> = self.ranks(measure, model).into_iter().map(|r| r as f64).collect();
        variance(&ranks)
    }

    /// Mean Spearman correlation between two measures' rankings.
    pub fn mean_rank_correlation(&self, a: Measure, b: Measure) -> Option<f64> {
        let mut values = Vec::new();
        for rep in self.replications.iter().filter(|r| !r.failed()) {
            let models: Vec<&str> = self.config.roster.iter().map(|s| s.name.as_str()).collect();
            let ra: Option<Vec<f64>> = models.iter().map(|m| rep.rank_of(a, m).map(|x| x as f64)).collect();
            let rb: Option<Vec<f64>> = models.iter().map(|m| rep.rank_of(b, m).map(|x| x as f64)).collect();
            values.push(spearman(&ra?, &rb?)?);
        }
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

fn run_replication(config: &StudyConfig, index: usize) -> ReplicationResult {
    let seed = replication_seed(config.seed, index as u64);
    let mut result = ReplicationResult {
        index,
        seed,
        n_attempts: 0,
        scores: Vec::new(),
        rankings: BTreeMap::new(),
        error: None,
    };
    let sim = SimConfig {
        generator: config.generator,
        population: config.population.with_seed(seed),
        fs: config.fs,
        params: ParamSource::Sampled,
        initial_state: config.initial_state,
    };
    let options = ScoringOptions {
        fit: config.fit,
        k_folds: config.k_folds,
        fold_seed: seed,
        strict: config.strict,
    };
    let outcome = simulate(&sim, false).and_then(|s| {
        let dataset = s.dataset;
        let scores = config
            .roster
            .par_iter()
            .map(|spec| score_model(&dataset, spec, &config.measures, &options))
            .collect::<Result<Vec<_>>>()?;
        Ok((dataset.n_attempts(), scores))
    });
    match outcome {
        Ok((n, scores)) => {
            result.n_attempts = n;
            for &m in &config.measures {
                let entries: Vec<ScoreEntry> = scores
                    .iter()
                    .map(|s| ScoreEntry::new(s.model.clone(), s.value(m), s.n_params))
                    .collect();
                match rank_models(&entries, Direction::LowerIsBetter) {
                    Ok(r) => {
                        result.rankings.insert(m, r);
                    }
                    Err(e) => result.error = Some(e.to_string()),
                }
            }
            result.scores = scores;
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result
}

/// Runs every replication: simulate, score the roster, rank per measure.
/// A failing replication is recorded and the study continues.
pub fn replicate_study(config: &StudyConfig) -> Result<StudyReport> {
    let started = Instant::now();
    config.validate()?;
    let replications: Vec<ReplicationResult> = (0..config.replications)
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect();
    let mut summaries = Vec::new();
    for &m in &config.measures {
        let rankings: Vec<Vec<RankedModel>> = replications
            .iter()
            .filter(|r| !r.failed())
            .filter_map(|r| r.rankings.get(&m).cloned())
            .collect();
        if !rankings.is_empty() {
            summaries.push(RankingSummary::from_rankings(m.as_str(), &rankings)?);
        }
    }
    Ok(StudyReport {
        config: config.clone(),
        replications,
        summaries,
        provenance: Provenance::new(config.seed, started),
    })
}

/// Fits both models on the whole dataset and compares their predictions
/// binned by model A's recency-weighted proportion.
pub fn compare_predictions(
    dataset: &Dataset,
    spec_a: &ModelSpec,
    spec_b: &ModelSpec,
    options: &FitOptions,
) -> Result<RBinReport> {
    let table_a = featurize(dataset, &spec_a.feature_config)?;
    let table_b = featurize(dataset, &spec_b.feature_config)?;
    let model_a = fit_model(&table_a, spec_a, options)?;
    let model_b = fit_model(&table_b, spec_b, options)?;
    prediction_comparison(&model_a, &model_b, &table_a.rows, &table_b.rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Configuration(format!("unknown report format `{s}`"))),
        }
    }
}

/// A report that can be written as nested JSON or flat CSV.
pub trait Report: Serialize + DeserializeOwned {
    /// Flat rows for plotting. Provenance, when present, leads as `#` lines.
    fn write_csv(&self, sink: &mut dyn Write) -> Result<()>;
}

impl Report for SweepReport {
    fn write_csv(&self, sink: &mut dyn Write) -> Result<()> {
        sink.write_all(self.provenance.csv_comment().as_bytes())?;
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "model",
            "success_decay",
            "failure_decay",
            "metric",
            "value",
            "n_params",
            "log_likelihood",
            "converged",
            "error",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.model.clone(),
                c.success_decay.to_string(),
                c.failure_decay.to_string(),
                self.metric.as_str().to_string(),
                c.value.to_string(),
                c.n_params.to_string(),
                c.log_likelihood.to_string(),
                c.converged.to_string(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Report for StudyReport {
    fn write_csv(&self, sink: &mut dyn Write) -> Result<()> {
        sink.write_all(self.provenance.csv_comment().as_bytes())?;
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["measure", "model", "rank", "count", "proportion"])?;
        for s in &self.summaries {
            s.write_rows(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Report for RBinReport {
    fn write_csv(&self, sink: &mut dyn Write) -> Result<()> {
        RBinReport::write_csv(self, sink)
    }
}

/// Writes a report to `destination`.
pub fn emit_report<R: Report>(report: &R, format: ReportFormat, destination: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(destination)?);
    write_report(report, format, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_report<R: Report>(report: &R, format: ReportFormat, sink: &mut dyn Write) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *sink, report)?;
            sink.write_all(b"\n")?;
        }
        ReportFormat::Csv => report.write_csv(sink)?,
    }
    Ok(())
}

/// Per-replication scores as flat CSV: `replication,seed,model,measure,value,rank`.
pub fn write_study_scores_csv<W: Write>(report: &StudyReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["replication", "seed", "model", "measure", "value", "rank"])?;
    for rep in &report.replications {
        for s in &rep.scores {
            for (m, v) in &s.values {
                let rank = rep.rank_of(*m, &s.model).map(|r| r.to_string()).unwrap_or_default();
                w.write_record([
                    rep.index.to_string(),
                    rep.seed.to_string(),
                    s.model.clone(),
                    m.as_str().to_string(),
                    v.to_string(),
                    rank,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::simulate_bkt2;

    fn tiny_population(seed: u64) -> PopulationConfig {
        PopulationConfig {
            n_kcs: 4,
            n_students: 40,
            kc_mean: 2.0,
            attempts_mean: 5.0,
            seed,
        }
    }

    #[test]
    fn grid_cells() {
        let g = SweepGrid::new(ModelFamily::RPfa, vec![0.2, 0.4], vec![0.1, 0.5, 1.0]);
        assert_eq!(g.cells().len(), 6);
        let eq = SweepGrid {
            equal_decays: true,
            ..g.clone()
        };
        assert_eq!(eq.cells(), vec![(0.2, 0.2), (0.4, 0.4)]);
        let r = SweepGrid::new(ModelFamily::ROnly, vec![0.2, 0.4], vec![0.1, 0.5]);
        assert_eq!(r.cells(), vec![(0.2, 1.0), (0.4, 1.0)]);
        let afm = SweepGrid::new(ModelFamily::Afm, vec![0.2, 0.4], vec![0.1]);
        assert_eq!(afm.cells().len(), 1);
        assert!(SweepGrid::new(ModelFamily::Pfa, vec![], vec![0.1]).validate().is_err());
        assert!(SweepGrid::new(ModelFamily::Pfa, vec![0.0], vec![0.1]).validate().is_err());
    }

    #[test]
    fn single_cell_sweep_equals_single_fit() {
        let ds = simulate_bkt2(&tiny_population(1), ParamSource::Sampled).unwrap().dataset;
        let grid = SweepGrid::new(ModelFamily::RPfa, vec![0.6], vec![0.1]);
        let options = ScoringOptions::default();
        let report = sweep_decay(&ds, &grid, Measure::Aic, &options).unwrap();
        let model = fit_dataset(&ds, &ModelSpec::r_pfa(0.6, 0.1), &FitOptions::default()).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.argmin, Some(0));
        assert_eq!(report.cells[0].value, aic(&model));
    }

    #[test]
    fn tiny_study_has_one_ranking_per_measure() {
        let config = StudyConfig {
            replications: 1,
            population: tiny_population(0),
            k_folds: 2,
            ..StudyConfig::default()
        };
        let report = replicate_study(&config).unwrap();
        assert_eq!(report.replications.len(), 1);
        assert_eq!(report.failed_replications(), 0);
        assert_eq!(report.summaries.len(), 3);
        for m in &config.measures {
            assert_eq!(report.replications[0].rankings[m].len(), 7);
        }
    }

    #[test]
    fn replication_failures_are_isolated() {
        let config = StudyConfig {
            replications: 2,
            population: PopulationConfig {
                n_students: 3,
                ..tiny_population(0)
            },
            k_folds: 5,
            ..StudyConfig::default()
        };
        let report = replicate_study(&config).unwrap();
        assert_eq!(report.failed_replications(), 2);
        assert!(report.summaries.is_empty());
    }

    #[test]
    fn identical_specs_compare_evenly() {
        let ds = simulate_bkt2(&tiny_population(2), ParamSource::Sampled).unwrap().dataset;
        let spec = ModelSpec::r_pfa(0.7, 0.1);
        let r = compare_predictions(&ds, &spec, &spec, &FitOptions::default()).unwrap();
        assert!(r.cells.iter().all(|c| c.a_wins == 0 && c.a_losses == 0));
        assert_eq!(r.cells.iter().map(|c| c.n).sum::<usize>(), ds.n_attempts());
    }

    #[test]
    fn report_round_trips_and_is_stable() {
        let ds = simulate_bkt2(&tiny_population(3), ParamSource::Sampled).unwrap().dataset;
        let grid = SweepGrid::new(ModelFamily::Pfa, vec![0.5, 1.0], vec![0.5, 1.0]);
        let report = sweep_decay(&ds, &grid, Measure::Aic, &ScoringOptions::default()).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_report(&report, ReportFormat::Json, &mut a).unwrap();
        write_report(&report, ReportFormat::Json, &mut b).unwrap();
        assert_eq!(a, b);
        let back: SweepReport = serde_json::from_slice(&a).unwrap();
        assert_eq!(back, report);

        let mut c = Vec::new();
        write_report(&report, ReportFormat::Csv, &mut c).unwrap();
        let text = String::from_utf8(c).unwrap();
        let data_lines = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(data_lines, report.cells.len() + 1);
    }

    #[test]
    fn measure_names_parse() {
        for m in [Measure::Aic, Measure::Bic, Measure::CvZeroOne, Measure::CvPe] {
            assert_eq!(m.as_str().parse::<Measure>().unwrap(), m);
        }
        assert!("auc".parse::<Measure>().is_err());
    }
}
