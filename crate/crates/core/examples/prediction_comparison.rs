//! Fit R-PFA and PFA on the same data and tabulate where their predictions
//! disagree, binned by the recent success rate R.

use rpfa::estimator::FitOptions;
use rpfa::evaluation::RBin;
use rpfa::harness::compare_predictions;
use rpfa::model::ModelSpec;
use rpfa::simulators::{simulate, Generator, PopulationConfig, SimConfig};

fn main() -> rpfa::Result<()> {
    let population = PopulationConfig {
        n_kcs: 20,
        n_students: 800,
        seed: 5,
        ..PopulationConfig::default()
    };
    let dataset = simulate(&SimConfig::new(Generator::Bkt2, population), false)?.dataset;
    let report = compare_predictions(
        &dataset,
        &ModelSpec::r_pfa(0.6, 0.1),
        &ModelSpec::pfa(1.0, 1.0),
        &FitOptions::default(),
    )?;
    println!("{} vs {} on {} attempts", report.model_a, report.model_b, report.n_rows);
    println!("{:<10} {:>2} {:>6} {:>7} {:>7} {:>7}", "R bin", "X", "n", "A wins", "B wins", "t<=2");
    for bin in RBin::ALL {
        for outcome in [false, true] {
            let cell = report.cell(bin, outcome);
            println!(
                "{:<10} {:>2} {:>6} {:>7} {:>7} {:>6.0}%",
                bin.label(),
                cell.outcome,
                cell.n,
                cell.a_wins,
                cell.a_losses,
                100.0 * cell.early_share
            );
        }
    }
    Ok(())
}
