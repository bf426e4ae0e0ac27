//! Replicated model comparison on simulated data.
//!
//! Run with `cargo run --release --example simulation_study -- [generator] [replications]`,
//! where generator is one of `bkt2`, `bkt3`, `bkt_fs`.

use rpfa::harness::{replicate_study, Measure, StudyConfig};
use rpfa::simulators::{Generator, InitialState};

fn main() -> rpfa::Result<()> {
    let mut args = std::env::args().skip(1);
    let generator: Generator = args.next().as_deref().unwrap_or("bkt2").parse()?;
    let replications = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let initial_state = match args.next().as_deref() {
        Some("before") => InitialState::BeforeFirstAttempt,
        _ => InitialState::AtFirstAttempt,
    };
    let config = StudyConfig {
        generator,
        replications,
        initial_state,
        seed: 2024,
        ..StudyConfig::default()
    };
    let report = replicate_study(&config)?;
    println!(
        "{} replications of {:?}, {} failed, {:.1}s",
        replications,
        generator,
        report.failed_replications(),
        report.provenance.wall_time_seconds
    );
    for summary in &report.summaries {
        println!("\n{}", summary.measure);
        for (model, counts) in &summary.counts {
            let row: Vec<String> = counts.iter().map(|c| format!("{c:>3}")).collect();
            println!("  {model:<22} {}", row.join(" "));
        }
    }
    if let Some(rho) = report.mean_rank_correlation(Measure::Aic, Measure::CvPe) {
        println!("\nmean Spearman(AIC, CV-PE) = {rho:.3}");
    }
    println!(
        "PFA rank variance: CV 0-1 {:.3}, CV-PE {:.3}",
        report.rank_variance(Measure::CvZeroOne, "PFA"),
        report.rank_variance(Measure::CvPe, "PFA")
    );
    Ok(())
}
