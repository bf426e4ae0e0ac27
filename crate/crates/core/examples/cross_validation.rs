//! Student-stratified 5-fold cross-validation of several models, ranked by
//! mean prediction error.

use rpfa::evaluation::{cross_validate, make_folds, rank_models, Direction, LossKind, ScoreEntry};
use rpfa::model::ModelSpec;
use rpfa::simulators::{simulate, Generator, PopulationConfig, SimConfig};

fn main() -> rpfa::Result<()> {
    let population = PopulationConfig {
        n_kcs: 15,
        n_students: 400,
        seed: 11,
        ..PopulationConfig::default()
    };
    let dataset = simulate(&SimConfig::new(Generator::Bkt3, population), false)?.dataset;
    let folds = make_folds(&dataset, 5, 11)?;
    println!("fold sizes: {:?}", folds.sizes());

    let specs = [ModelSpec::afm(), ModelSpec::pfa(1.0, 1.0), ModelSpec::r_pfa(0.6, 0.1)];
    let mut entries = Vec::new();
    for spec in &specs {
        let results = cross_validate(&dataset, spec, &folds, &LossKind::ALL)?;
        for r in &results {
            println!("{:<22} {:<17} {:.4}", r.model, r.loss.as_str(), r.mean);
        }
        let pe = results.iter().find(|r| r.loss == LossKind::PredictionError).expect("requested");
        let n_params = dataset.kcs().len() * (1 + spec.ordered_terms().len());
        entries.push(ScoreEntry::new(&pe.model, pe.mean, n_params));
    }
    for ranked in rank_models(&entries, Direction::LowerIsBetter)? {
        println!("rank {}: {}", ranked.rank, ranked.model);
    }
    Ok(())
}
