//! Fit the six model families on one simulated dataset and compare
//! log-likelihood, parameter count, AIC and BIC.

use rpfa::estimator::{aic, bic, fit_model, FitOptions};
use rpfa::features::featurize;
use rpfa::model::ModelSpec;
use rpfa::simulators::{simulate, Generator, PopulationConfig, SimConfig};

fn main() -> rpfa::Result<()> {
    let population = PopulationConfig {
        n_kcs: 20,
        n_students: 600,
        seed: 7,
        ..PopulationConfig::default()
    };
    let dataset = simulate(&SimConfig::new(Generator::Bkt2, population), false)?.dataset;
    println!("{} attempts", dataset.n_attempts());

    let specs = [
        ModelSpec::afm(),
        ModelSpec::pfa(1.0, 1.0),
        ModelSpec::s_only(0.8),
        ModelSpec::r_only(0.6),
        ModelSpec::r_afm(0.6),
        ModelSpec::r_pfa(0.6, 0.1),
    ];
    let options = FitOptions::default();
    println!("{:<22} {:>12} {:>4} {:>12} {:>12}", "model", "logLik", "k", "AIC", "BIC");
    for spec in &specs {
        let table = featurize(&dataset, &spec.feature_config)?;
        let model = fit_model(&table, spec, &options)?;
        println!(
            "{:<22} {:>12.2} {:>4} {:>12.2} {:>12.2}{}",
            model.spec.name,
            model.log_likelihood,
            model.n_params,
            aic(&model),
            bic(&model, model.n_obs as f64)?,
            if model.converged { "" } else { "  (not converged)" }
        );
    }
    Ok(())
}
