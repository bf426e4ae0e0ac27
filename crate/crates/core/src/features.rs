//! Prior-practice predictors for every attempt.
//!
//! For attempt `t` of a practice sequence `X_1..X_O` (with decay `d`):
//!
//! * `T = t - 1`, the number of prior opportunities;
//! * `S = sum_{p<t} d^(t-1-p) X_p`, the decayed success count;
//! * `F = sum_{p<t} d^(t-1-p) (1 - X_p)`, the decayed failure count;
//! * `R = sum_{p<t} d^(t-p) X_p / sum_{p<t} d^(t-p)`, the decayed success
//!   proportion, where the sums also run over `ghost_count` stipulated
//!   incorrect attempts at `p = 1 - ghost_count ..= 0`.
//!
//! Only attempts strictly before `t` contribute, so an outcome never leaks
//! into its own features.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Sign convention for the decayed failure count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailureSign {
    /// `sum d^k (1 - X)`, a non-negative count.
    #[default]
    NonnegCount,
    /// `sum d^k (X - 1)`, the non-positive form.
    NonposSum,
}

impl FailureSign {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureSign::NonnegCount => "nonneg_count",
            FailureSign::NonposSum => "nonpos_sum",
        }
    }
}

/// Decay weights and ghost-attempt settings used to compute features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub decay_s: f64,
    pub decay_f: f64,
    pub decay_r: f64,
    #[serde(default = "default_ghosts")]
    pub ghost_count: u32,
    #[serde(default)]
    pub failure_sign: FailureSign,
}

fn default_ghosts() -> u32 {
    FeatureConfig::DEFAULT_GHOSTS
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            decay_s: 1.0,
            decay_f: 1.0,
            decay_r: 1.0,
            ghost_count: Self::DEFAULT_GHOSTS,
            failure_sign: FailureSign::NonnegCount,
        }
    }
}

impl FeatureConfig {
    pub const DEFAULT_GHOSTS: u32 = 3;

    pub fn new(decay_s: f64, decay_f: f64, decay_r: f64) -> Self {
        Self {
            decay_s,
            decay_f,
            decay_r,
            ..Self::default()
        }
    }

    pub fn with_ghosts(mut self, ghost_count: u32) -> Self {
        self.ghost_count = ghost_count;
        self
    }

    pub fn with_failure_sign(mut self, sign: FailureSign) -> Self {
        self.failure_sign = sign;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_decay(self.decay_s)?;
        check_decay(self.decay_f)?;
        check_decay(self.decay_r)
    }
}

pub(crate) fn check_decay(d: f64) -> Result<()> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("decay weight must lie in (0, 1], got {d}")))
    }
}

fn check_t(outcomes: &[bool], t: usize) -> Result<()> {
    if t == 0 || t > outcomes.len() {
        Err(Error::Index {
            index: t,
            len: outcomes.len(),
        })
    } else {
        Ok(())
    }
}

/// `T` at opportunity `t`: the number of prior opportunities.
pub fn total_count(outcomes: &[bool], t: usize) -> Result<usize> {
    check_t(outcomes, t)?;
    Ok(t - 1)
}

/// `S` at opportunity `t`, the most recent prior attempt weighted `d^0`.
pub fn decayed_success_count(outcomes: &[bool], t: usize, d: f64) -> Result<f64> {
    check_t(outcomes, t)?;
    check_decay(d)?;
    Ok(outcomes[..t - 1]
        .iter()
        .enumerate()
        .filter(|(_, &x)| x)
        .map(|(i, _)| d.powi((t - 2 - i) as i32))
        .sum())
}

/// `F` at opportunity `t` under the given sign convention.
pub fn decayed_failure_count(outcomes: &[bool], t: usize, d: f64, sign: FailureSign) -> Result<f64> {
    check_t(outcomes, t)?;
    check_decay(d)?;
    let count: f64 = outcomes[..t - 1]
        .iter()
        .enumerate()
        .filter(|(_, &x)| !x)
        .map(|(i, _)| d.powi((t - 2 - i) as i32))
        .sum();
    Ok(match sign {
        FailureSign::NonnegCount => count,
        FailureSign::NonposSum => -count,
    })
}

/// `R` at opportunity `t`: decayed proportion of prior successes including
/// `ghost_count` incorrect ghost attempts before the first opportunity.
pub fn recency_weighted_proportion(outcomes: &[bool], t: usize, d: f64, ghost_count: u32) -> Result<f64> {
    check_t(outcomes, t)?;
    check_decay(d)?;
    if ghost_count == 0 && t == 1 {
        return Err(Error::UndefinedRatio(
            "recency-weighted proportion at t = 1 needs at least one ghost attempt".into(),
        ));
    }
    // Attempt p (1-based, ghosts at p <= 0) carries weight d^(t - p).
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let first = 1 - i64::from(ghost_count);
    for p in first..t as i64 {
        let w = d.powi((t as i64 - p) as i32);
        denominator += w;
        if p >= 1 && outcomes[(p - 1) as usize] {
            numerator += w;
        }
    }
    Ok(numerator / denominator)
}

/// Weights of the most recent `window` attempts under decay `d`, normalized
/// to sum to one over the window. Index 0 is the most recent attempt.
pub fn normalized_recency_weights(d: f64, window: usize) -> Result<Vec<f64>> {
    check_decay(d)?;
    let raw: Vec<f64> = (0..window).map(|k| d.powi(k as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// The four predictors for one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// `T`
    pub total: u32,
    /// `S`
    pub successes: f64,
    /// `F`
    pub failures: f64,
    /// `R`
    pub recent: f64,
}

/// One attempt with its predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub student_id: Arc<str>,
    pub kc_id: Arc<str>,
    pub t: u32,
    pub correct: bool,
    #[serde(flatten)]
    pub features: Features,
}

impl FeatureRow {
    pub fn outcome(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// Streaming accumulator producing the same features as the direct sums.
///
/// Each call to [`FeatureState::observe`] emits the features of the next
/// attempt and then folds that attempt's outcome into the state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    config: FeatureConfig,
    s_accum: f64,
    f_accum: f64,
    r_num: f64,
    r_den: f64,
    t_next: u32,
}

impl FeatureState {
    /// Fresh state for a new sequence, with ghost attempts already folded in.
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let d = config.decay_r;
        // Ghosts are incorrect: they add weight d^(1-p) for p = 1-g..=0.
        let mut r_den = 0.0;
        for _ in 0..config.ghost_count {
            r_den = d * (r_den + 1.0);
        }
        Ok(Self {
            config,
            s_accum: 0.0,
            f_accum: 0.0,
            r_num: 0.0,
            r_den,
            t_next: 1,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Opportunity index of the next attempt to be emitted.
    pub fn t_next(&self) -> u32 {
        self.t_next
    }

    /// Features of the next attempt, computed from prior attempts only.
    pub fn current(&self) -> Result<Features> {
        if self.r_den == 0.0 {
            return Err(Error::UndefinedRatio(
                "recency-weighted proportion at t = 1 needs at least one ghost attempt".into(),
            ));
        }
        let failures = match self.config.failure_sign {
            FailureSign::NonnegCount => self.f_accum,
            FailureSign::NonposSum => -self.f_accum,
        };
        Ok(Features {
            total: self.t_next - 1,
            successes: self.s_accum,
            failures,
            recent: self.r_num / self.r_den,
        })
    }

    /// Emits the features for the next attempt, then consumes its outcome.
    pub fn observe(&mut self, correct: bool) -> Result<Features> {
        let features = self.current()?;
        let x = if correct { 1.0 } else { 0.0 };
        let FeatureConfig {
            decay_s, decay_f, decay_r, ..
        } = self.config;
        self.s_accum = decay_s * self.s_accum + x;
        self.f_accum = decay_f * self.f_accum + (1.0 - x);
        self.r_num = decay_r * (self.r_num + x);
        self.r_den = decay_r * (self.r_den + 1.0);
        self.t_next += 1;
        Ok(features)
    }
}

/// Feature rows for a whole dataset, tagged with the config that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub config: FeatureConfig,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Feature table CSV with a leading `#` comment recording the config.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        let c = &self.config;
        writeln!(
            sink,
            "# decay_s={},decay_f={},decay_r={},ghost_count={},failure_sign={}",
            c.decay_s,
            c.decay_f,
            c.decay_r,
            c.ghost_count,
            c.failure_sign.as_str()
        )?;
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["student", "kc", "t", "outcome", "T", "S", "F", "R"])?;
        for row in &self.rows {
            let f = &row.features;
            writer.write_record([
                row.student_id.to_string(),
                row.kc_id.to_string(),
                row.t.to_string(),
                u8::from(row.correct).to_string(),
                f.total.to_string(),
                f.successes.to_string(),
                f.failures.to_string(),
                f.recent.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// One [`FeatureRow`] per attempt, in the dataset's canonical order.
pub fn featurize(dataset: &Dataset, config: &FeatureConfig) -> Result<FeatureTable> {
    config.validate()?;
    let per_sequence: Vec<Vec<FeatureRow>> = dataset
        .sequences()
        .par_iter()
        .map(|seq| {
            let student: Arc<str> = Arc::from(seq.student_id.as_str());
            let kc: Arc<str> = Arc::from(seq.kc_id.as_str());
            let mut state = FeatureState::new(*config)?;
            seq.outcomes
                .iter()
                .map(|&correct| {
                    let t = state.t_next();
                    Ok(FeatureRow {
                        student_id: student.clone(),
                        kc_id: kc.clone(),
                        t,
                        correct,
                        features: state.observe(correct)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(FeatureTable {
        config: *config,
        rows: per_sequence.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PracticeSequence;
    use proptest::prelude::*;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b != 0).collect()
    }

    const SLIPS_TWICE: [u8; 9] = [0, 1, 1, 1, 0, 0, 1, 1, 1];

    #[test]
    fn total_count_basics() {
        let x = bits(&SLIPS_TWICE);
        assert_eq!(total_count(&x, 1).unwrap(), 0);
        assert_eq!(total_count(&x, 9).unwrap(), 8);
        assert!(matches!(total_count(&x, 10), Err(Error::Index { .. })));
        assert!(matches!(total_count(&x, 0), Err(Error::Index { .. })));
    }

    #[test]
    fn success_count_trace_fixtures() {
        let x = bits(&SLIPS_TWICE);
        let s = |t, d| decayed_success_count(&x, t, d).unwrap();
        assert!((s(5, 0.2) - 1.24).abs() < 0.005);
        assert!((s(6, 0.2) - 0.248).abs() < 0.005);
        assert!((s(5, 0.7) - 2.19).abs() < 0.005);
        assert!((s(6, 0.7) - 1.53).abs() < 0.005);
        assert!((s(7, 0.7) - 1.07).abs() < 0.005);
    }

    #[test]
    fn failure_count_direct_sum() {
        let x = bits(&[0, 0, 1]);
        let f = decayed_failure_count(&x, 3, 0.1, FailureSign::NonnegCount).unwrap();
        assert!((f - 1.1).abs() < 1e-12);
        let ones = bits(&[1, 1, 1, 1]);
        assert_eq!(decayed_failure_count(&ones, 4, 0.5, FailureSign::NonnegCount).unwrap(), 0.0);
    }

    #[test]
    fn bad_decay_is_rejected() {
        let x = bits(&[1, 0]);
        for d in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(decayed_success_count(&x, 2, d), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn proportion_examples() {
        let x = bits(&[0, 1, 1, 1, 0]);
        assert_eq!(recency_weighted_proportion(&x, 1, 0.4, 3).unwrap(), 0.0);
        // numerator 0.343 + 0.49 + 0.7, denominator sum_{k=1}^{7} 0.7^k
        let den: f64 = (1..=7).map(|k| 0.7f64.powi(k)).sum();
        let expected = (0.343 + 0.49 + 0.7) / den;
        let r = recency_weighted_proportion(&x, 5, 0.7, 3).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.7160).abs() < 1e-4);
        assert!(matches!(
            recency_weighted_proportion(&x, 1, 0.7, 0),
            Err(Error::UndefinedRatio(_))
        ));
        let ones = vec![true; 201];
        assert!((recency_weighted_proportion(&ones, 201, 0.7, 3).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn state_rejects_undefined_first_ratio() {
        let mut state = FeatureState::new(FeatureConfig::new(0.5, 0.5, 0.5).with_ghosts(0)).unwrap();
        assert!(state.observe(true).is_err());
    }

    #[test]
    fn fresh_state_emits_zeros() {
        let mut state = FeatureState::new(FeatureConfig::new(0.7, 0.1, 0.7)).unwrap();
        let f = state.observe(true).unwrap();
        assert_eq!(
            f,
            Features {
                total: 0,
                successes: 0.0,
                failures: 0.0,
                recent: 0.0
            }
        );
    }

    #[test]
    fn recent_grows_with_consecutive_successes() {
        let mut state = FeatureState::new(FeatureConfig::new(0.7, 0.1, 0.7)).unwrap();
        let mut rs = Vec::new();
        for _ in 0..4 {
            rs.push(state.observe(true).unwrap().recent);
        }
        // rs[2] follows two successes, rs[3] follows three.
        assert!(rs[3] > rs[2]);
    }

    #[test]
    fn normalized_weights_for_point_seven() {
        let w = normalized_recency_weights(0.7, 6).unwrap();
        let expected = [0.340, 0.238, 0.167, 0.117, 0.082, 0.057];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 0.001, "{a} vs {b}");
        }
    }

    #[test]
    fn featurize_first_attempt_and_order() {
        let ds = Dataset::from_sequences(vec![
            PracticeSequence::from_bits("b", "k", &[1]),
            PracticeSequence::from_bits("a", "k", &SLIPS_TWICE),
        ])
        .unwrap();
        let table = featurize(&ds, &FeatureConfig::new(0.7, 0.1, 0.7)).unwrap();
        assert_eq!(table.len(), 10);
        assert_eq!(&*table.rows[0].student_id, "a");
        let last = &table.rows[9];
        assert_eq!((&*last.student_id, last.t), ("b", 1));
        assert_eq!(last.features.recent, 0.0);
        let s: Vec<f64> = table.rows[..9].iter().map(|r| r.features.successes).collect();
        assert!((s[4] - 2.19).abs() < 0.005);
        assert!((s[5] - 1.53).abs() < 0.005);
        assert!((s[6] - 1.07).abs() < 0.005);
    }

    #[test]
    fn feature_csv_has_config_comment() {
        let ds = Dataset::from_sequences(vec![PracticeSequence::from_bits("a", "k", &[0, 1])]).unwrap();
        let table = featurize(&ds, &FeatureConfig::new(0.5, 0.1, 0.7)).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "# decay_s=0.5,decay_f=0.1,decay_r=0.7,ghost_count=3,failure_sign=nonneg_count"
        );
        assert_eq!(lines.next().unwrap(), "student,kc,t,outcome,T,S,F,R");
        assert_eq!(text.lines().count(), 4);
    }

    fn decay() -> impl Strategy<Value = f64> {
        prop_oneof![Just(1.0), 0.01f64..1.0]
    }

    proptest! {
        #[test]
        fn proportion_is_bounded_and_shift_invariant(
            x in proptest::collection::vec(any::<bool>(), 1..60),
            d in decay(),
            ghosts in 1u32..6,
        ) {
            for t in 1..=x.len() {
                let r = recency_weighted_proportion(&x, t, d, ghosts).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
                // Same ratio with exponent t-1-p.
                let first = 1 - i64::from(ghosts);
                let (mut num, mut den) = (0.0, 0.0);
                for p in first..t as i64 {
                    let w = d.powi((t as i64 - 1 - p) as i32);
                    den += w;
                    if p >= 1 && x[(p - 1) as usize] { num += w; }
                }
                prop_assert!((num / den - r).abs() < 1e-12);
            }
        }

        #[test]
        fn success_count_respects_geometric_bound(
            x in proptest::collection::vec(any::<bool>(), 1..80),
            d in decay(),
        ) {
            for t in 1..=x.len() {
                let s = decayed_success_count(&x, t, d).unwrap();
                let mut bound = (t - 1) as f64;
                if d < 1.0 { bound = bound.min(1.0 / (1.0 - d)); }
                prop_assert!(s >= 0.0 && s <= bound + 1e-12);
            }
        }

        #[test]
        fn unit_decay_gives_raw_counts(x in proptest::collection::vec(any::<bool>(), 1..50)) {
            for t in 1..=x.len() {
                let prior = &x[..t - 1];
                let succ = prior.iter().filter(|&&b| b).count() as f64;
                prop_assert_eq!(decayed_success_count(&x, t, 1.0).unwrap(), succ);
                prop_assert_eq!(
                    decayed_failure_count(&x, t, 1.0, FailureSign::NonnegCount).unwrap(),
                    prior.len() as f64 - succ
                );
            }
        }

        #[test]
        fn literal_sign_is_negation(x in proptest::collection::vec(any::<bool>(), 1..50), d in decay()) {
            for t in 1..=x.len() {
                let a = decayed_failure_count(&x, t, d, FailureSign::NonnegCount).unwrap();
                let b = decayed_failure_count(&x, t, d, FailureSign::NonposSum).unwrap();
                prop_assert_eq!(a, -b);
            }
        }

        #[test]
        fn appending_moves_proportion(
            x in proptest::collection::vec(any::<bool>(), 0..10),
            d in 0.05f64..0.99,
            ghosts in 1u32..5,
        ) {
            let mut state = FeatureState::new(FeatureConfig::new(d, d, d).with_ghosts(ghosts)).unwrap();
            for &b in &x { state.observe(b).unwrap(); }
            let before = state.current().unwrap().recent;
            let mut up = state.clone();
            up.observe(true).unwrap();
            let mut down = state;
            down.observe(false).unwrap();
            prop_assert!(up.current().unwrap().recent > before);
            // An all-incorrect history already sits at R = 0.
            prop_assert!(down.current().unwrap().recent < before || before == 0.0);
        }
    }
}
