//! Generate data from each simulator and print its first-attempt success
//! rate, overall success rate and, with latent traces, the learned share at
//! the last attempt.

use rpfa::simulators::{simulate, Generator, PopulationConfig, SimConfig};

fn main() -> rpfa::Result<()> {
    let population = PopulationConfig {
        n_kcs: 10,
        n_students: 300,
        seed: 42,
        ..PopulationConfig::default()
    };
    for generator in [Generator::Bkt2, Generator::Bkt3, Generator::BktFs] {
        let sim = simulate(&SimConfig::new(generator, population), true)?;
        let records = sim.dataset.records();
        let sequences = sim.dataset.sequences();
        let first_rate = sequences.iter().filter(|s| s.outcomes[0]).count() as f64 / sequences.len() as f64;
        let rate = records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;
        let fs_students = sim.census.iter().filter(|c| c.fs_student).count();
        println!(
            "{generator:?}: {} attempts, first-attempt rate {first_rate:.3}, overall {rate:.3}, FS students {fs_students}",
            records.len()
        );
        if let Some(latent) = &sim.latent {
            let top = latent.iter().map(|s| s.state).max().unwrap_or(0);
            let share = latent.iter().filter(|s| s.state == top).count() as f64 / latent.len() as f64;
            println!("  share of attempts in the top latent state: {share:.3}");
        }
    }
    Ok(())
}
