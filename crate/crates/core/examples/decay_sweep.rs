//! Sweep the R-PFA success decay with a fixed failure decay and report the
//! AIC of every cell.

use rpfa::harness::{sweep_decay, Measure, ScoringOptions, SweepGrid};
use rpfa::model::ModelFamily;
use rpfa::simulators::{simulate, Generator, PopulationConfig, SimConfig};

fn main() -> rpfa::Result<()> {
    let population = PopulationConfig {
        n_kcs: 20,
        n_students: 500,
        seed: 3,
        ..PopulationConfig::default()
    };
    let dataset = simulate(&SimConfig::new(Generator::Bkt2, population), false)?.dataset;

    let grid = SweepGrid::new(ModelFamily::RPfa, vec![0.2, 0.4, 0.6, 0.8, 1.0], vec![0.1]);
    let report = sweep_decay(&dataset, &grid, Measure::Aic, &ScoringOptions::default())?;
    for cell in &report.cells {
        println!("{:<22} AIC {:>10.2}  k {}", cell.model, cell.value, cell.n_params);
    }
    if let Some(best) = report.best() {
        println!("best: {}", best.model);
    }
    Ok(())
}
