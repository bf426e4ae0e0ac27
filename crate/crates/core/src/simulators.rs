//! Synthetic practice data from three knowledge-tracing generators:
//! two-state BKT, three-state BKT, and BKT with failure sequences (FS), in
//! which some students sometimes answer at a fixed low success rate
//! regardless of what they know.
//!
//! Randomness is split into independent ChaCha streams: stream 0 draws the
//! per-KC parameters, and student `i` owns streams `4i + 1` (KC plan),
//! `4i + 2` (outcomes) and `4i + 3` (FS indicators). Students are generated
//! in parallel; the result does not depend on scheduling.

use std::io::Write;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PracticeSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_kcs: usize,
    pub n_students: usize,
    /// Mean number of KCs practiced per student (Poisson, capped at `n_kcs`).
    pub kc_mean: f64,
    /// Mean attempts per practiced KC (Poisson, floored at 2).
    pub attempts_mean: f64,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_kcs: 50,
            n_students: 3500,
            kc_mean: 5.0,
            attempts_mean: 8.0,
            seed: 0,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_kcs == 0 || self.n_students == 0 {
            return Err(Error::Parameter("population needs at least one KC and one student".into()));
        }
        if !(self.kc_mean > 0.0 && self.kc_mean.is_finite()) || !(self.attempts_mean > 0.0 && self.attempts_mean.is_finite())
        {
            return Err(Error::Parameter("population means must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn student_id(&self, index: usize) -> String {
        format!("s{:0w$}", index + 1, w = digits(self.n_students))
    }

    pub fn kc_id(&self, index: usize) -> String {
        format!("kc{:0w$}", index + 1, w = digits(self.n_kcs))
    }
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// Which generator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Bkt2,
    Bkt3,
    BktFs,
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bkt2" => Ok(Generator::Bkt2),
            "bkt3" => Ok(Generator::Bkt3),
            "bkt_fs" | "bkt-fs" => Ok(Generator::BktFs),
            _ => Err(Error::Configuration(format!("unknown generator `{s}`"))),
        }
    }
}

/// Two-state parameters of one KC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bkt2Kc {
    /// Probability of knowing the KC before the first attempt.
    pub initial: f64,
    /// Probability of moving to the learned state after an attempt.
    pub learn: f64,
    /// Success probability while unlearned.
    pub correct_unlearned: f64,
    /// Success probability once learned.
    pub correct_learned: f64,
}

/// Three-state parameters of one KC. States are unlearned, practicing and
/// fluent; nobody starts fluent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bkt3Kc {
    /// Probability of starting unlearned (otherwise practicing).
    pub initial_unlearned: f64,
    pub stay_unlearned: f64,
    pub stay_practicing: f64,
    pub correct_unlearned: f64,
    pub correct_practicing: f64,
    pub correct_fluent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BktFsParams {
    pub kcs: Vec<Bkt2Kc>,
    /// Per-KC probability that an FS student shows FS behavior on the KC.
    pub engagement: Vec<f64>,
}

/// When the initial-state distribution applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// The sampled state is the state at the first attempt.
    #[default]
    AtFirstAttempt,
    /// The sampled state precedes the first attempt, so one transition
    /// happens before the first response is emitted.
    BeforeFirstAttempt,
}

/// Settings of the FS generator beyond the KC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsSettings {
    pub p_fs_student: f64,
    pub p_correct_during_fs: f64,
}

impl Default for FsSettings {
    fn default() -> Self {
        Self {
            p_fs_student: 0.08,
            p_correct_during_fs: 0.2,
        }
    }
}

/// Per-KC parameters of any generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorParams {
    Bkt2 { kcs: Vec<Bkt2Kc> },
    Bkt3 { kcs: Vec<Bkt3Kc> },
    BktFs(BktFsParams),
}

impl GeneratorParams {
    pub fn generator(&self) -> Generator {
        match self {
            GeneratorParams::Bkt2 { .. } => Generator::Bkt2,
            GeneratorParams::Bkt3 { .. } => Generator::Bkt3,
            GeneratorParams::BktFs(_) => Generator::BktFs,
        }
    }

    fn n_kcs(&self) -> usize {
        match self {
            GeneratorParams::Bkt2 { kcs } => kcs.len(),
            GeneratorParams::Bkt3 { kcs } => kcs.len(),
            GeneratorParams::BktFs(p) => p.kcs.len(),
        }
    }

    fn validate(&self, n_kcs: usize) -> Result<()> {
        if self.n_kcs() != n_kcs {
            return Err(Error::Parameter(format!(
                "{} KC parameter sets for {n_kcs} KCs",
                self.n_kcs()
            )));
        }
        let probs: Vec<f64> = match self {
            GeneratorParams::Bkt2 { kcs } => kcs.iter().flat_map(bkt2_probs).collect(),
            GeneratorParams::Bkt3 { kcs } => kcs
                .iter()
                .flat_map(|k| {
                    [
                        k.initial_unlearned,
                        k.stay_unlearned,
                        k.stay_practicing,
                        k.correct_unlearned,
                        k.correct_practicing,
                        k.correct_fluent,
                    ]
                })
                .collect(),
            GeneratorParams::BktFs(p) => {
                if p.engagement.len() != n_kcs {
                    return Err(Error::Parameter("engagement length differs from KC count".into()));
                }
                p.kcs.iter().flat_map(bkt2_probs).chain(p.engagement.iter().copied()).collect()
            }
        };
        check_probabilities(&probs)
    }
}

fn bkt2_probs(k: &Bkt2Kc) -> [f64; 4] {
    [k.initial, k.learn, k.correct_unlearned, k.correct_learned]
}

fn check_probabilities(values: &[f64]) -> Result<()> {
    match values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(Error::Parameter(format!("probability {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Where per-KC parameters come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    /// Drawn from the generator's priors on parameter stream 0.
    #[default]
    Sampled,
    Fixed(GeneratorParams),
}

/// Latent state of one attempt. For two-state runs `state` is 0 (unlearned)
/// or 1 (learned); for three-state runs 0, 1, 2 (unlearned, practicing,
/// fluent). FS sequences report state 0 with `fs` set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentStep {
    pub student: String,
    pub kc: String,
    pub t: u32,
    pub state: u8,
    pub fs: bool,
}

/// Per-student generation record, including students who practiced nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusEntry {
    pub student: String,
    pub n_kcs: usize,
    pub fs_student: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    pub params: GeneratorParams,
    pub census: Vec<CensusEntry>,
    /// Present when latent traces were requested.
    pub latent: Option<Vec<LatentStep>>,
}

impl Simulation {
    pub fn empty_students(&self) -> impl Iterator<Item = &CensusEntry> {
        self.census.iter().filter(|c| c.n_kcs == 0)
    }

    /// Writes `student,kc,t,Z,fs` rows; errors when no trace was recorded.
    pub fn write_latent_csv<W: Write>(&self, sink: W) -> Result<()> {
        let latent = self
            .latent
            .as_ref()
            .ok_or_else(|| Error::Configuration("latent traces were not recorded".into()))?;
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["student", "kc", "t", "Z", "fs"])?;
        for s in latent {
            w.write_record([
                s.student.as_str(),
                s.kc.as_str(),
                &s.t.to_string(),
                &s.state.to_string(),
                if s.fs { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_census_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["student", "n_kcs", "fs_student"])?;
        for c in &self.census {
            w.write_record([c.student.as_str(), &c.n_kcs.to_string(), if c.fs_student { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full description of one simulated dataset; the JSON form of the
/// `simulate` command's config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub generator: Generator,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub fs: FsSettings,
    #[serde(default)]
    pub params: ParamSource,
    #[serde(default)]
    pub initial_state: InitialState,
}

impl SimConfig {
    pub fn new(generator: Generator, population: PopulationConfig) -> Self {
        Self {
            generator,
            population,
            fs: FsSettings::default(),
            params: ParamSource::Sampled,
            initial_state: InitialState::AtFirstAttempt,
        }
    }
}

const PARAM_STREAM: u64 = 0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn student_stream(seed: u64, student: usize, offset: u64) -> ChaCha8Rng {
    stream(seed, 4 * student as u64 + 1 + offset)
}

/// Seed of replication `r` under a master seed. Each replication's seed
/// depends only on `(master, r)`.
pub fn replication_seed(master: u64, replication: u64) -> u64 {
    // SplitMix64 finalizer over the combined input.
    let mut z = master ^ replication.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// KCs practiced by one student and the number of attempts on each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentPlan {
    pub student: String,
    /// `(kc index, attempts)` in draw order.
    pub kcs: Vec<(usize, u32)>,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    let d = Poisson::new(mean).expect("validated positive mean");
    d.sample(rng) as u64
}

fn plan_student(config: &PopulationConfig, student: usize) -> StudentPlan {
    let mut rng = student_stream(config.seed, student, 0);
    let j = (poisson(&mut rng, config.kc_mean) as usize).min(config.n_kcs);
    let picks = rand::seq::index::sample(&mut rng, config.n_kcs, j).into_vec();
    let kcs = picks
        .into_iter()
        .map(|kc| (kc, poisson(&mut rng, config.attempts_mean).max(2) as u32))
        .collect();
    StudentPlan {
        student: config.student_id(student),
        kcs,
    }
}

/// Draws every student's KC set and attempt counts.
pub fn sample_population(config: &PopulationConfig) -> Result<Vec<StudentPlan>> {
    config.validate()?;
    Ok((0..config.n_students)
        .into_par_iter()
        .map(|i| plan_student(config, i))
        .collect())
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new(lo, hi).expect("valid range")
}

fn sample_bkt2_kcs(rng: &mut ChaCha8Rng, n_kcs: usize) -> Vec<Bkt2Kc> {
    let initial = Beta::new(1.0, 2.0).expect("valid beta");
    let learn = Beta::new(2.0, 2.0).expect("valid beta");
    let unlearned = uniform(0.02, 0.3);
    let learned = uniform(0.7, 0.98);
    (0..n_kcs)
        .map(|_| Bkt2Kc {
            initial: initial.sample(rng),
            learn: learn.sample(rng),
            correct_unlearned: unlearned.sample(rng),
            correct_learned: learned.sample(rng),
        })
        .collect()
}

fn sample_bkt3_kcs(rng: &mut ChaCha8Rng, n_kcs: usize) -> Vec<Bkt3Kc> {
    let beta = Beta::new(2.0, 2.0).expect("valid beta");
    let cu = uniform(0.02, 0.2);
    let cp = uniform(0.4, 0.7);
    let cf = uniform(0.85, 1.0);
    (0..n_kcs)
        .map(|_| Bkt3Kc {
            initial_unlearned: beta.sample(rng),
            stay_unlearned: beta.sample(rng),
            stay_practicing: beta.sample(rng),
            correct_unlearned: cu.sample(rng),
            correct_practicing: cp.sample(rng),
            correct_fluent: cf.sample(rng),
        })
        .collect()
}

/// Draws per-KC parameters from the generator's priors.
pub fn sample_params(generator: Generator, n_kcs: usize, seed: u64) -> GeneratorParams {
    let mut rng = stream(seed, PARAM_STREAM);
    match generator {
        Generator::Bkt2 => GeneratorParams::Bkt2 {
            kcs: sample_bkt2_kcs(&mut rng, n_kcs),
        },
        Generator::Bkt3 => GeneratorParams::Bkt3 {
            kcs: sample_bkt3_kcs(&mut rng, n_kcs),
        },
        Generator::BktFs => {
            let kcs = sample_bkt2_kcs(&mut rng, n_kcs);
            let b = uniform(0.0, 1.0);
            let engagement = (0..n_kcs).map(|_| b.sample(&mut rng)).collect();
            GeneratorParams::BktFs(BktFsParams { kcs, engagement })
        }
    }
}

fn bkt2_sequence(
    rng: &mut ChaCha8Rng,
    kc: &Bkt2Kc,
    attempts: u32,
    timing: InitialState,
    states: Option<&mut Vec<u8>>,
) -> Vec<bool> {
    let mut learned = rng.random_bool(kc.initial);
    if timing == InitialState::BeforeFirstAttempt && !learned {
        learned = rng.random_bool(kc.learn);
    }
    let mut out = Vec::with_capacity(attempts as usize);
    let mut trace = Vec::new();
    for _ in 0..attempts {
        trace.push(u8::from(learned));
        out.push(rng.random_bool(if learned { kc.correct_learned } else { kc.correct_unlearned }));
        if !learned {
            learned = rng.random_bool(kc.learn);
        }
    }
    if let Some(s) = states {
        *s = trace;
    }
    out
}

fn bkt3_step(rng: &mut ChaCha8Rng, kc: &Bkt3Kc, state: u8) -> u8 {
    match state {
        0 if !rng.random_bool(kc.stay_unlearned) => 1,
        1 if !rng.random_bool(kc.stay_practicing) => 2,
        s => s,
    }
}

fn bkt3_sequence(
    rng: &mut ChaCha8Rng,
    kc: &Bkt3Kc,
    attempts: u32,
    timing: InitialState,
    states: Option<&mut Vec<u8>>,
) -> Vec<bool> {
    let mut state: u8 = if rng.random_bool(kc.initial_unlearned) { 0 } else { 1 };
    if timing == InitialState::BeforeFirstAttempt {
        state = bkt3_step(rng, kc, state);
    }
    let mut out = Vec::with_capacity(attempts as usize);
    let mut trace = Vec::new();
    for _ in 0..attempts {
        trace.push(state);
        let p = match state {
            0 => kc.correct_unlearned,
            1 => kc.correct_practicing,
            _ => kc.correct_fluent,
        };
        out.push(rng.random_bool(p));
        state = bkt3_step(rng, kc, state);
    }
    if let Some(s) = states {
        *s = trace;
    }
    out
}

struct StudentOutput {
    sequences: Vec<PracticeSequence>,
    census: CensusEntry,
    latent: Vec<LatentStep>,
}

fn simulate_student(
    config: &PopulationConfig,
    params: &GeneratorParams,
    fs: &FsSettings,
    timing: InitialState,
    student: usize,
    emit_latent: bool,
) -> StudentOutput {
    let plan = plan_student(config, student);
    let mut outcomes_rng = student_stream(config.seed, student, 1);
    let mut fs_rng = student_stream(config.seed, student, 2);
    let fs_student = match params {
        GeneratorParams::BktFs(_) => fs_rng.random_bool(fs.p_fs_student),
        _ => false,
    };
    let mut sequences = Vec::with_capacity(plan.kcs.len());
    let mut latent = Vec::new();
    for &(kc, attempts) in &plan.kcs {
        let mut states = Vec::new();
        let record = emit_latent.then_some(&mut states);
        let mut in_fs = false;
        let outcomes = match params {
            GeneratorParams::Bkt2 { kcs } => bkt2_sequence(&mut outcomes_rng, &kcs[kc], attempts, timing, record),
            GeneratorParams::Bkt3 { kcs } => bkt3_sequence(&mut outcomes_rng, &kcs[kc], attempts, timing, record),
            GeneratorParams::BktFs(p) => {
                in_fs = fs_student && fs_rng.random_bool(p.engagement[kc]);
                if in_fs {
                    states = vec![0; attempts as usize];
                    (0..attempts)
                        .map(|_| outcomes_rng.random_bool(fs.p_correct_during_fs))
                        .collect()
                } else {
                    bkt2_sequence(&mut outcomes_rng, &p.kcs[kc], attempts, timing, record)
                }
            }
        };
        let kc_id = config.kc_id(kc);
        if emit_latent {
            latent.extend(states.iter().enumerate().map(|(t, &state)| LatentStep {
                student: plan.student.clone(),
                kc: kc_id.clone(),
                t: t as u32 + 1,
                state,
                fs: in_fs,
            }));
        }
        sequences.push(PracticeSequence::new(plan.student.clone(), kc_id, outcomes));
    }
    StudentOutput {
        census: CensusEntry {
            student: plan.student,
            n_kcs: plan.kcs.len(),
            fs_student,
        },
        sequences,
        latent,
    }
}

/// Runs a generator. Students practicing no KC appear only in the census.
pub fn simulate(config: &SimConfig, emit_latent: bool) -> Result<Simulation> {
    let population = &config.population;
    population.validate()?;
    check_probabilities(&[config.fs.p_fs_student, config.fs.p_correct_during_fs])?;
    let params = match &config.params {
        ParamSource::Sampled => sample_params(config.generator, population.n_kcs, population.seed),
        ParamSource::Fixed(p) => {
            if p.generator() != config.generator {
                return Err(Error::Configuration(format!(
                    "fixed parameters are for {:?}, generator is {:?}",
                    p.generator(),
                    config.generator
                )));
            }
            p.validate(population.n_kcs)?;
            p.clone()
        }
    };
    let students: Vec<StudentOutput> = (0..population.n_students)
        .into_par_iter()
        .map(|i| simulate_student(population, &params, &config.fs, config.initial_state, i, emit_latent))
        .collect();
    let mut sequences = Vec::new();
    let mut census = Vec::with_capacity(students.len());
    let mut latent = Vec::new();
    for s in students {
        sequences.extend(s.sequences);
        census.push(s.census);
        latent.extend(s.latent);
    }
    if sequences.is_empty() {
        return Err(Error::EmptyInput("simulated population practiced no KCs".into()));
    }
    latent.sort_by(|a, b| (&a.student, &a.kc, a.t).cmp(&(&b.student, &b.kc, b.t)));
    Ok(Simulation {
        dataset: Dataset::from_sequences(sequences)?,
        params,
        census,
        latent: emit_latent.then_some(latent),
    })
}

/// Two-state BKT data.
pub fn simulate_bkt2(population: &PopulationConfig, params: ParamSource) -> Result<Simulation> {
    simulate(
        &SimConfig {
            params,
            ..SimConfig::new(Generator::Bkt2, *population)
        },
        false,
    )
}

/// Three-state BKT data.
pub fn simulate_bkt3(population: &PopulationConfig, params: ParamSource) -> Result<Simulation> {
    simulate(
        &SimConfig {
            params,
            ..SimConfig::new(Generator::Bkt3, *population)
        },
        false,
    )
}

/// BKT data with failure sequences.
pub fn simulate_bkt_fs(population: &PopulationConfig, params: ParamSource, fs: FsSettings) -> Result<Simulation> {
    simulate(
        &SimConfig {
            params,
            fs,
            ..SimConfig::new(Generator::BktFs, *population)
        },
        false,
    )
}
