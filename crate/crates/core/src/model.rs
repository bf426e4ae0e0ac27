//! Logistic performance model families, design matrices and scoring.
//!
//! Every family shares the form `logit(p) = [theta_student] + beta_kc + sum
//! coef_kc * term`, differing only in which prior-practice terms enter:
//!
//! | family | terms  |
//! |--------|--------|
//! | AFM    | T      |
//! | PFA    | S, F   |
//! | S-only | S      |
//! | R-only | R      |
//! | R-AFM  | T, R   |
//! | R-PFA  | F, R   |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitDiagnostics;
use crate::features::{FeatureConfig, FeatureRow, FeatureTable, Features};

/// A prior-practice predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    T,
    S,
    F,
    R,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::T, Term::S, Term::F, Term::R];

    pub fn value(self, features: &Features) -> f64 {
        match self {
            Term::T => f64::from(features.total),
            Term::S => features.successes,
            Term::F => features.failures,
            Term::R => features.recent,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Term::T => "T",
            Term::S => "S",
            Term::F => "F",
            Term::R => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Afm,
    Pfa,
    SOnly,
    ROnly,
    RAfm,
    RPfa,
    Custom,
}

impl ModelFamily {
    /// Slope terms of the named families; `None` for custom models.
    pub fn terms(self) -> Option<&'static [Term]> {
        match self {
            ModelFamily::Afm => Some(&[Term::T]),
            ModelFamily::Pfa => Some(&[Term::S, Term::F]),
            ModelFamily::SOnly => Some(&[Term::S]),
            ModelFamily::ROnly => Some(&[Term::R]),
            ModelFamily::RAfm => Some(&[Term::T, Term::R]),
            ModelFamily::RPfa => Some(&[Term::F, Term::R]),
            ModelFamily::Custom => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Afm => "AFM",
            ModelFamily::Pfa => "PFA",
            ModelFamily::SOnly => "S-only",
            ModelFamily::ROnly => "R-only",
            ModelFamily::RAfm => "R-AFM",
            ModelFamily::RPfa => "R-PFA",
            ModelFamily::Custom => "custom",
        }
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "afm" => ModelFamily::Afm,
            "pfa" => ModelFamily::Pfa,
            "s-only" => ModelFamily::SOnly,
            "r-only" => ModelFamily::ROnly,
            "r-afm" => ModelFamily::RAfm,
            "r-pfa" => ModelFamily::RPfa,
            "custom" => ModelFamily::Custom,
            _ => return Err(Error::Parameter(format!("unknown model family `{s}`"))),
        })
    }
}

/// Whether a slope term gets one coefficient per KC or one overall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMode {
    #[default]
    PerKc,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: ModelFamily,
    #[serde(default)]
    pub include_student_intercept: bool,
    pub slope_terms: Vec<Term>,
    #[serde(default)]
    pub slope_mode: SlopeMode,
    pub feature_config: FeatureConfig,
}

fn fmt_decay(d: f64) -> String {
    format!("{d:?}")
}

impl ModelSpec {
    fn named(family: ModelFamily, name: String, config: FeatureConfig) -> Self {
        Self {
            name,
            family,
            include_student_intercept: false,
            slope_terms: family.terms().map(<[Term]>::to_vec).unwrap_or_default(),
            slope_mode: SlopeMode::PerKc,
            feature_config: config,
        }
    }

    pub fn afm() -> Self {
        Self::named(ModelFamily::Afm, "AFM".into(), FeatureConfig::default())
    }

    /// PFA with decayed counts; `pfa(1.0, 1.0)` is classic PFA.
    pub fn pfa(decay_s: f64, decay_f: f64) -> Self {
        let name = if decay_s == 1.0 && decay_f == 1.0 {
            "PFA".to_string()
        } else {
            format!("PFA s({}) f({})", fmt_decay(decay_s), fmt_decay(decay_f))
        };
        Self::named(ModelFamily::Pfa, name, FeatureConfig::new(decay_s, decay_f, 1.0))
    }

    pub fn s_only(decay_s: f64) -> Self {
        let name = format!("S-only({})", fmt_decay(decay_s));
        Self::named(ModelFamily::SOnly, name, FeatureConfig::new(decay_s, 1.0, 1.0))
    }

    pub fn r_only(decay_r: f64) -> Self {
        let name = format!("R-only({})", fmt_decay(decay_r));
        Self::named(ModelFamily::ROnly, name, FeatureConfig::new(1.0, 1.0, decay_r))
    }

    pub fn r_afm(decay_r: f64) -> Self {
        let name = format!("R-AFM({})", fmt_decay(decay_r));
        Self::named(ModelFamily::RAfm, name, FeatureConfig::new(1.0, 1.0, decay_r))
    }

    pub fn r_pfa(decay_r: f64, decay_f: f64) -> Self {
        let name = format!("R-PFA r({}) f({})", fmt_decay(decay_r), fmt_decay(decay_f));
        Self::named(ModelFamily::RPfa, name, FeatureConfig::new(1.0, decay_f, decay_r))
    }

    pub fn custom(name: impl Into<String>, terms: &[Term], config: FeatureConfig) -> Self {
        let mut spec = Self::named(ModelFamily::Custom, name.into(), config);
        spec.slope_terms = terms.to_vec();
        spec
    }

    /// Family and decays from a family name plus success/failure decays.
    ///
    /// The success decay feeds `S` or `R` depending on the family.
    pub fn from_family(family: ModelFamily, success_decay: f64, failure_decay: f64) -> Result<Self> {
        Ok(match family {
            ModelFamily::Afm => Self::afm(),
            ModelFamily::Pfa => Self::pfa(success_decay, failure_decay),
            ModelFamily::SOnly => Self::s_only(success_decay),
            ModelFamily::ROnly => Self::r_only(success_decay),
            ModelFamily::RAfm => Self::r_afm(success_decay),
            ModelFamily::RPfa => Self::r_pfa(success_decay, failure_decay),
            ModelFamily::Custom => {
                return Err(Error::Parameter("custom models need an explicit term list".into()))
            }
        })
    }

    /// Parses `family[:success[:failure]]`, e.g. `afm`, `pfa`, `r-pfa:0.7:0.1`.
    /// Missing decays default to 1.
    pub fn from_shorthand(text: &str) -> Result<Self> {
        let mut parts = text.split(':');
        let family: ModelFamily = parts.next().unwrap_or_default().parse()?;
        let mut decay = || -> Result<f64> {
            match parts.next() {
                None => Ok(1.0),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad decay `{v}` in model `{text}`"))),
            }
        };
        let success = decay()?;
        let failure = decay()?;
        if parts.next().is_some() {
            return Err(Error::Parameter(format!("too many fields in model `{text}`")));
        }
        let spec = Self::from_family(family, success, failure)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_student_intercept(mut self, on: bool) -> Self {
        self.include_student_intercept = on;
        self
    }

    pub fn with_slope_mode(mut self, mode: SlopeMode) -> Self {
        self.slope_mode = mode;
        self
    }

    pub fn with_feature_config(mut self, config: FeatureConfig) -> Self {
        self.feature_config = config;
        self
    }

    /// Slope terms, de-duplicated, in T, S, F, R order.
    pub fn ordered_terms(&self) -> Vec<Term> {
        self.slope_terms.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.feature_config.validate()?;
        if let Some(expected) = self.family.terms() {
            let mut expected = expected.to_vec();
            expected.sort();
            if self.ordered_terms() != expected {
                return Err(Error::Configuration(format!(
                    "{} models use terms {:?}, got {:?}",
                    self.family.label(),
                    expected,
                    self.slope_terms
                )));
            }
        }
        Ok(())
    }

    /// Checks that features were computed with the decays this model needs.
    pub fn check_features(&self, config: &FeatureConfig) -> Result<()> {
        let mine = &self.feature_config;
        let mismatch = |what: &str| {
            Err(Error::Configuration(format!(
                "feature {what} does not match model `{}`",
                self.name
            )))
        };
        for term in self.ordered_terms() {
            match term {
                Term::T => {}
                Term::S if config.decay_s != mine.decay_s => return mismatch("decay_s"),
                Term::F if config.decay_f != mine.decay_f || config.failure_sign != mine.failure_sign => {
                    return mismatch("decay_f/failure_sign")
                }
                Term::R if config.decay_r != mine.decay_r || config.ghost_count != mine.ghost_count => {
                    return mismatch("decay_r/ghost_count")
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// What a design-matrix column encodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnLabel {
    StudentIntercept(String),
    KcIntercept(String),
    /// Slope of a term; `kc` is `None` for a global slope.
    Slope { term: Term, kc: Option<String> },
}

impl fmt::Display for ColumnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnLabel::StudentIntercept(id) => write!(f, "student:{id}"),
            ColumnLabel::KcIntercept(id) => write!(f, "kc:{id}"),
            ColumnLabel::Slope { term, kc: Some(id) } => write!(f, "{}:{id}", term.as_str()),
            ColumnLabel::Slope { term, kc: None } => write!(f, "{}:*", term.as_str()),
        }
    }
}

impl FromStr for ColumnLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("malformed column label `{s}`")))?;
        let id = id.to_string();
        let slope = |term| ColumnLabel::Slope {
            term,
            kc: if id == "*" { None } else { Some(id.clone()) },
        };
        Ok(match kind {
            "student" => ColumnLabel::StudentIntercept(id),
            "kc" => ColumnLabel::KcIntercept(id),
            "T" => slope(Term::T),
            "S" => slope(Term::S),
            "F" => slope(Term::F),
            "R" => slope(Term::R),
            _ => return Err(Error::Parameter(format!("malformed column label `{s}`"))),
        })
    }
}

/// Sparse row-major design matrix with binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    labels: Vec<ColumnLabel>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    outcomes: Vec<f64>,
}

impl DesignMatrix {
    /// Assembles a matrix from explicit sparse rows. Used by tests and by
    /// callers with designs outside the named families.
    pub fn from_rows(labels: Vec<ColumnLabel>, rows: Vec<Vec<(usize, f64)>>, outcomes: Vec<f64>) -> Result<Self> {
        if rows.len() != outcomes.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} outcomes",
                rows.len(),
                outcomes.len()
            )));
        }
        let mut m = Self {
            labels,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            outcomes,
        };
        for row in rows {
            for (c, v) in row {
                if c >= m.labels.len() {
                    return Err(Error::Shape(format!("column {c} out of range")));
                }
                if v != 0.0 {
                    m.col_idx.push(c);
                    m.values.push(v);
                }
            }
            m.row_ptr.push(m.col_idx.len());
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_cols(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[ColumnLabel] {
        &self.labels
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Nonzero `(column, value)` entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `X beta` for a coefficient vector in column order.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.row(i).map(|(c, v)| v * beta[c]).sum())
            .collect()
    }

    /// Number of rows with a nonzero entry in each column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols()];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        counts
    }

    pub(crate) fn select_columns(&self, keep: &[usize]) -> DesignMatrix {
        let mut remap = vec![usize::MAX; self.n_cols()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut out = DesignMatrix {
            labels: keep.iter().map(|&c| self.labels[c].clone()).collect(),
            row_ptr: vec![0],
            col_idx: Vec::with_capacity(self.col_idx.len()),
            values: Vec::with_capacity(self.values.len()),
            outcomes: self.outcomes.clone(),
        };
        for i in 0..self.n_rows() {
            for (c, v) in self.row(i) {
                if remap[c] != usize::MAX {
                    out.col_idx.push(remap[c]);
                    out.values.push(v);
                }
            }
            out.row_ptr.push(out.col_idx.len());
        }
        out
    }
}

/// Builds the design matrix of `spec` over a feature table.
///
/// Column blocks, in order: student intercepts (optional), KC intercepts,
/// then one block per slope term in T, S, F, R order. Ids are sorted.
pub fn build_design(table: &FeatureTable, spec: &ModelSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    spec.check_features(&table.config)?;
    build_design_rows(&table.rows, spec)
}

pub(crate) fn build_design_rows(rows: &[FeatureRow], spec: &ModelSpec) -> Result<DesignMatrix> {
    let students: BTreeSet<&str> = rows.iter().map(|r| &*r.student_id).collect();
    let kcs: BTreeSet<&str> = rows.iter().map(|r| &*r.kc_id).collect();
    let terms = spec.ordered_terms();

    let mut labels = Vec::new();
    let mut student_col = HashMap::new();
    if spec.include_student_intercept {
        for s in &students {
            student_col.insert(*s, labels.len());
            labels.push(ColumnLabel::StudentIntercept(s.to_string()));
        }
    }
    let kc_base = labels.len();
    let kc_pos: HashMap<&str, usize> = kcs.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    labels.extend(kcs.iter().map(|k| ColumnLabel::KcIntercept(k.to_string())));
    let mut term_base = Vec::with_capacity(terms.len());
    for &term in &terms {
        term_base.push(labels.len());
        match spec.slope_mode {
            SlopeMode::PerKc => labels.extend(kcs.iter().map(|k| ColumnLabel::Slope {
                term,
                kc: Some(k.to_string()),
            })),
            SlopeMode::Global => labels.push(ColumnLabel::Slope { term, kc: None }),
        }
    }

    let nnz_per_row = 1 + usize::from(spec.include_student_intercept) + terms.len();
    let mut m = DesignMatrix {
        labels,
        row_ptr: Vec::with_capacity(rows.len() + 1),
        col_idx: Vec::with_capacity(rows.len() * nnz_per_row),
        values: Vec::with_capacity(rows.len() * nnz_per_row),
        outcomes: rows.iter().map(FeatureRow::outcome).collect(),
    };
    m.row_ptr.push(0);
    for row in rows {
        if spec.include_student_intercept {
            m.col_idx.push(student_col[&*row.student_id]);
            m.values.push(1.0);
        }
        let k = kc_pos[&*row.kc_id];
        m.col_idx.push(kc_base + k);
        m.values.push(1.0);
        for (&term, &base) in terms.iter().zip(&term_base) {
            let v = term.value(&row.features);
            if v != 0.0 {
                let offset = match spec.slope_mode {
                    SlopeMode::PerKc => k,
                    SlopeMode::Global => 0,
                };
                m.col_idx.push(base + offset);
                m.values.push(v);
            }
        }
        m.row_ptr.push(m.col_idx.len());
    }
    Ok(m)
}

/// Numerically stable inverse logit, kept strictly inside (0, 1).
pub fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// What to do when a row's KC (or student) has no estimated coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Unknown entities contribute zero to the linear predictor.
    #[default]
    ZeroContribution,
    /// Unknown KCs are an error.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p: f64,
    /// True when an unknown KC or student fell back to zero contribution.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct KcCoefficients {
    intercept: f64,
    slopes: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CoefficientIndex {
    students: HashMap<String, f64>,
    kcs: HashMap<String, KcCoefficients>,
    global: [f64; 4],
}

/// An estimated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// Estimated coefficients keyed by column label (`kc:<id>`, `T:<id>`, ...).
    pub coefficients: BTreeMap<String, f64>,
    /// Columns dropped before fitting for lack of support.
    #[serde(default)]
    pub dropped_columns: Vec<String>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: FitDiagnostics,
    #[serde(skip)]
    index: OnceLock<CoefficientIndex>,
}

impl FittedModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        spec: ModelSpec,
        coefficients: BTreeMap<String, f64>,
        dropped_columns: Vec<String>,
        log_likelihood: f64,
        n_obs: usize,
        diagnostics: FitDiagnostics,
    ) -> Self {
        Self {
            spec,
            n_params: coefficients.len(),
            coefficients,
            dropped_columns,
            log_likelihood,
            n_obs,
            converged: diagnostics.converged,
            iterations: diagnostics.iterations,
            diagnostics,
            index: OnceLock::new(),
        }
    }

    fn index(&self) -> &CoefficientIndex {
        self.index.get_or_init(|| {
            let mut idx = CoefficientIndex::default();
            for (label, &value) in &self.coefficients {
                match label.parse::<ColumnLabel>() {
                    Ok(ColumnLabel::StudentIntercept(s)) => {
                        idx.students.insert(s, value);
                    }
                    Ok(ColumnLabel::KcIntercept(k)) => idx.kcs.entry(k).or_default().intercept = value,
                    Ok(ColumnLabel::Slope { term, kc: Some(k) }) => {
                        idx.kcs.entry(k).or_default().slopes[term.slot()] = value
                    }
                    Ok(ColumnLabel::Slope { term, kc: None }) => idx.global[term.slot()] = value,
                    Err(_) => {}
                }
            }
            idx
        })
    }

    /// Coefficient for a column label, zero when dropped or absent.
    pub fn coefficient(&self, label: &ColumnLabel) -> Option<f64> {
        self.coefficients.get(&label.to_string()).copied()
    }

    /// `z' beta` for one row plus whether a fallback was engaged.
    pub fn linear_predictor(&self, row: &FeatureRow, policy: FallbackPolicy) -> Result<(f64, bool)> {
        let idx = self.index();
        let mut fallback = false;
        let mut z = 0.0;
        if self.spec.include_student_intercept {
            match idx.students.get(&*row.student_id) {
                Some(v) => z += v,
                None => fallback = true,
            }
        }
        let terms = self.spec.ordered_terms();
        match idx.kcs.get(&*row.kc_id) {
            Some(kc) => {
                z += kc.intercept;
                if self.spec.slope_mode == SlopeMode::PerKc {
                    z += terms
                        .iter()
                        .map(|t| kc.slopes[t.slot()] * t.value(&row.features))
                        .sum::<f64>();
                }
            }
            None if policy == FallbackPolicy::Disabled => {
                return Err(Error::UnknownEntity {
                    kind: "kc",
                    id: row.kc_id.to_string(),
                })
            }
            None => fallback = true,
        }
        if self.spec.slope_mode == SlopeMode::Global {
            z += terms
                .iter()
                .map(|t| idx.global[t.slot()] * t.value(&row.features))
                .sum::<f64>();
        }
        Ok((z, fallback))
    }

    pub fn predict(&self, row: &FeatureRow, policy: FallbackPolicy) -> Result<Prediction> {
        let (z, fallback) = self.linear_predictor(row, policy)?;
        Ok(Prediction {
            p: logistic(z),
            fallback,
        })
    }

    pub fn predict_rows(&self, rows: &[FeatureRow], policy: FallbackPolicy) -> Result<Vec<Prediction>> {
        rows.iter().map(|r| self.predict(r, policy)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Convenience for shared ids in hand-built rows.
pub fn feature_row(student: &str, kc: &str, t: u32, correct: bool, features: Features) -> FeatureRow {
    FeatureRow {
        student_id: Arc::from(student),
        kc_id: Arc::from(kc),
        t,
        correct,
        features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, PracticeSequence};
    use crate::features::featurize;
    use proptest::prelude::*;

    fn zero_features() -> Features {
        Features {
            total: 0,
            successes: 0.0,
            failures: 0.0,
            recent: 0.0,
        }
    }

    fn model_with(spec: ModelSpec, coefs: &[(&str, f64)]) -> FittedModel {
        FittedModel::new(
            spec,
            coefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            vec![],
            -1.0,
            1,
            FitDiagnostics::default(),
        )
    }

    #[test]
    fn named_families_have_table_terms() {
        assert_eq!(ModelSpec::afm().slope_terms, vec![Term::T]);
        assert_eq!(ModelSpec::pfa(1.0, 1.0).ordered_terms(), vec![Term::S, Term::F]);
        assert_eq!(ModelSpec::s_only(0.5).slope_terms, vec![Term::S]);
        assert_eq!(ModelSpec::r_only(0.5).slope_terms, vec![Term::R]);
        assert_eq!(ModelSpec::r_afm(0.5).ordered_terms(), vec![Term::T, Term::R]);
        assert_eq!(ModelSpec::r_pfa(0.6, 0.1).ordered_terms(), vec![Term::F, Term::R]);
        assert_eq!(ModelSpec::r_pfa(0.6, 0.1).name, "R-PFA r(0.6) f(0.1)");
        assert_eq!(ModelSpec::pfa(1.0, 1.0).name, "PFA");
        let mut bad = ModelSpec::afm();
        bad.slope_terms = vec![Term::S];
        assert!(matches!(bad.validate(), Err(Error::Configuration(_))));
    }

    #[test]
    fn rpfa_design_block_arithmetic() {
        let ds = Dataset::from_sequences(vec![
            PracticeSequence::from_bits("s", "k1", &[0, 1]),
            PracticeSequence::from_bits("s", "k2", &[1, 1]),
        ])
        .unwrap();
        let spec = ModelSpec::r_pfa(0.6, 0.1);
        let table = featurize(&ds, &spec.feature_config).unwrap();
        let m = build_design(&table, &spec).unwrap();
        assert_eq!(m.n_cols(), 2 + 2 + 2);
        let with_students = build_design(&table, &spec.clone().with_student_intercept(true)).unwrap();
        assert_eq!(with_students.n_cols(), 1 + 6);
        for i in 0..m.n_rows() {
            let kc_entries = m
                .row(i)
                .filter(|(c, _)| matches!(m.labels()[*c], ColumnLabel::KcIntercept(_)))
                .count();
            assert_eq!(kc_entries, 1);
        }
    }

    #[test]
    fn afm_row_has_t_minus_one() {
        let ds = Dataset::from_sequences(vec![PracticeSequence::from_bits("s", "k", &[0, 0, 1, 1])]).unwrap();
        let spec = ModelSpec::afm();
        let table = featurize(&ds, &spec.feature_config).unwrap();
        let m = build_design(&table, &spec).unwrap();
        let row: Vec<_> = m.row(3).collect();
        assert_eq!(row, vec![(0, 1.0), (1, 3.0)]);
        assert_eq!(m.labels()[1].to_string(), "T:k");
    }

    #[test]
    fn decay_mismatch_is_configuration_error() {
        let ds = Dataset::from_sequences(vec![PracticeSequence::from_bits("s", "k", &[0, 1])]).unwrap();
        let table = featurize(&ds, &FeatureConfig::new(1.0, 0.1, 0.5)).unwrap();
        let err = build_design(&table, &ModelSpec::r_pfa(0.6, 0.1)).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        // AFM does not care about decays.
        assert!(build_design(&table, &ModelSpec::afm()).is_ok());
    }

    #[test]
    fn prediction_basics() {
        let row = feature_row("s", "k", 1, true, zero_features());
        let m = model_with(ModelSpec::afm(), &[("kc:k", 0.0), ("T:k", 0.0)]);
        assert_eq!(m.predict(&row, FallbackPolicy::Disabled).unwrap().p, 0.5);
        let m = model_with(ModelSpec::afm(), &[("kc:k", 3f64.ln()), ("T:k", 0.0)]);
        assert!((m.predict(&row, FallbackPolicy::Disabled).unwrap().p - 0.75).abs() < 1e-12);
    }

    #[test]
    fn unknown_kc_policy() {
        let row = feature_row("s", "other", 1, true, zero_features());
        let m = model_with(ModelSpec::afm(), &[("kc:k", 1.0)]);
        assert!(matches!(
            m.predict(&row, FallbackPolicy::Disabled),
            Err(Error::UnknownEntity { kind: "kc", .. })
        ));
        let p = m.predict(&row, FallbackPolicy::ZeroContribution).unwrap();
        assert!(p.fallback);
        assert_eq!(p.p, 0.5);
    }

    #[test]
    fn extreme_linear_predictor_stays_open() {
        for z in [1000.0, -1000.0, 1e6, -1e6] {
            let p = logistic(z);
            assert!(p > 0.0 && p < 1.0 && p.is_finite(), "{z} -> {p}");
        }
        let m = model_with(ModelSpec::afm(), &[("kc:k", 1000.0)]);
        let p = m
            .predict(&feature_row("s", "k", 1, true, zero_features()), FallbackPolicy::Disabled)
            .unwrap()
            .p;
        assert!(p < 1.0 && p.is_finite());
    }

    #[test]
    fn fitted_model_json_round_trip() {
        let m = model_with(ModelSpec::r_pfa(0.7, 0.1), &[("kc:k", 0.25), ("R:k", 1.5), ("F:k", -0.5)]);
        let text = m.to_json().unwrap();
        let back = FittedModel::from_json(&text).unwrap();
        assert_eq!(back.coefficients, m.coefficients);
        assert_eq!(back.spec, m.spec);
        let row = feature_row(
            "s",
            "k",
            3,
            true,
            Features {
                total: 2,
                successes: 1.0,
                failures: 0.4,
                recent: 0.6,
            },
        );
        let a = m.predict(&row, FallbackPolicy::Disabled).unwrap();
        let b = back.predict(&row, FallbackPolicy::Disabled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_predictor_matches_hand_sum() {
        // Dot-product oracle: theta_i + beta_j + sum term * coef, summed by hand.
        let ds = Dataset::from_sequences(vec![
            PracticeSequence::from_bits("a", "k1", &[0, 1, 1, 0]),
            PracticeSequence::from_bits("b", "k1", &[1, 1]),
            PracticeSequence::from_bits("b", "k2", &[0, 0, 1]),
        ])
        .unwrap();
        let spec = ModelSpec::r_afm(0.7).with_student_intercept(true);
        let table = featurize(&ds, &spec.feature_config).unwrap();
        let m = build_design(&table, &spec).unwrap();
        let beta: Vec<f64> = (0..m.n_cols()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let coef = |label: ColumnLabel| beta[m.labels().iter().position(|l| *l == label).unwrap()];
        let z = m.linear_predictor(&beta);
        for (row, zi) in table.rows.iter().zip(z) {
            let kc = row.kc_id.to_string();
            let hand = coef(ColumnLabel::StudentIntercept(row.student_id.to_string()))
                + coef(ColumnLabel::KcIntercept(kc.clone()))
                + coef(ColumnLabel::Slope {
                    term: Term::T,
                    kc: Some(kc.clone()),
                }) * f64::from(row.features.total)
                + coef(ColumnLabel::Slope {
                    term: Term::R,
                    kc: Some(kc),
                }) * row.features.recent;
            assert!((hand - zi).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn labels_round_trip(kind in 0usize..6, id in "[a-z0-9_]{1,8}") {
            let label = match kind {
                0 => ColumnLabel::StudentIntercept(id),
                1 => ColumnLabel::KcIntercept(id),
                2 => ColumnLabel::Slope { term: Term::T, kc: Some(id) },
                3 => ColumnLabel::Slope { term: Term::S, kc: None },
                4 => ColumnLabel::Slope { term: Term::F, kc: Some(id) },
                _ => ColumnLabel::Slope { term: Term::R, kc: Some(id) },
            };
            prop_assert_eq!(label.to_string().parse::<ColumnLabel>().unwrap(), label);
        }

        #[test]
        fn design_is_row_order_invariant(seed_bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 1..6), 1..6)) {
            let seqs: Vec<PracticeSequence> = seed_bits
                .iter()
                .enumerate()
                .map(|(i, b)| PracticeSequence::new(format!("s{}", i % 3), format!("k{i}"), b.clone()))
                .collect();
            let mut reversed = seqs.clone();
            reversed.reverse();
            let a = Dataset::from_sequences(seqs).unwrap();
            let b = Dataset::from_sequences(reversed).unwrap();
            for spec in [ModelSpec::afm(), ModelSpec::pfa(1.0, 1.0), ModelSpec::r_pfa(0.6, 0.1)] {
                let ta = featurize(&a, &spec.feature_config).unwrap();
                let tb = featurize(&b, &spec.feature_config).unwrap();
                prop_assert_eq!(build_design(&ta, &spec).unwrap(), build_design(&tb, &spec).unwrap());
            }
        }
    }

    #[test]
    fn shorthand_specs() {
        assert_eq!(ModelSpec::from_shorthand("afm").unwrap(), ModelSpec::afm());
        assert_eq!(ModelSpec::from_shorthand("PFA").unwrap(), ModelSpec::pfa(1.0, 1.0));
        assert_eq!(ModelSpec::from_shorthand("r-pfa:0.7:0.1").unwrap(), ModelSpec::r_pfa(0.7, 0.1));
        assert_eq!(ModelSpec::from_shorthand("r_only:0.5").unwrap(), ModelSpec::r_only(0.5));
        assert!(ModelSpec::from_shorthand("r-pfa:1.5").is_err());
        assert!(ModelSpec::from_shorthand("r-pfa:x").is_err());
        assert!(ModelSpec::from_shorthand("pfa:1:1:1").is_err());
        assert!(ModelSpec::from_shorthand("custom").is_err());
    }
}
