//! Show how T, S, F and R evolve along one practice sequence, both from a
//! batch featurization and from the incremental `FeatureState`.

use rpfa::dataset::{Dataset, PracticeSequence};
use rpfa::features::{featurize, FeatureConfig, FeatureState};

fn main() -> rpfa::Result<()> {
    let outcomes = [true, true, false, true, true, true, false, false, true, true];
    let config = FeatureConfig::new(0.9, 0.5, 0.7);

    let dataset = Dataset::from_sequences(vec![PracticeSequence::new("s1", "kc1", outcomes.to_vec())])?;
    let table = featurize(&dataset, &config)?;
    println!(" t  X      T      S      F      R");
    for row in &table.rows {
        let f = row.features;
        println!(
            "{:>2}  {}  {:>5.1}  {:>5.3}  {:>5.3}  {:>5.3}",
            row.t, row.correct as u8, f.total, f.successes, f.failures, f.recent
        );
    }

    // Streaming use: features before each attempt, then the observed outcome.
    let mut state = FeatureState::new(config)?;
    for &x in &outcomes {
        state.observe(x)?;
    }
    println!("after {} attempts: R = {:.3}", outcomes.len(), state.current()?.recent);

    for d in [0.2, 0.6, 1.0] {
        let r = featurize(&dataset, &FeatureConfig::new(1.0, 1.0, d))?;
        let trace: Vec<String> = r.rows.iter().map(|row| format!("{:.2}", row.features.recent)).collect();
        println!("R with d = {d}: {}", trace.join(" "));
    }
    Ok(())
}
