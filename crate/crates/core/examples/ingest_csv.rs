//! Load an attempt log from CSV and print sparsity statistics.
//!
//! `cargo run --example ingest_csv -- [path.csv]`. Without a path a small
//! inline log is used. Rows are ordered by the `opportunity` column when
//! present, otherwise by file order.

use rpfa::dataset::{ingest_csv, summarize, CsvSchema};

const SAMPLE: &str = "\
student,kc,outcome,opportunity
ann,fractions,0,1
ann,fractions,1,2
ann,fractions,1,3
ann,decimals,1,1
bob,fractions,0,1
bob,decimals,0,1
bob,decimals,1,2
";

fn main() -> rpfa::Result<()> {
    let dataset = match std::env::args().nth(1) {
        Some(path) => {
            let file = std::fs::File::open(&path)?;
            let header = std::fs::read_to_string(&path)?;
            let mut schema = CsvSchema::canonical();
            if !header.lines().next().unwrap_or_default().contains("opportunity") {
                schema.opportunity = None;
            }
            ingest_csv(file, &schema)?
        }
        None => ingest_csv(SAMPLE.as_bytes(), &CsvSchema::canonical())?,
    };

    let summary = summarize(&dataset)?;
    println!(
        "{} students, {} KCs, {} attempts",
        summary.n_students, summary.n_kcs, summary.n_attempts
    );
    let d = summary.attempts_per_student;
    println!(
        "attempts per student: min {} median {} max {} mean {:.2}",
        d.min, d.median, d.max, d.mean
    );
    for (kc, rate) in &summary.percent_correct_per_kc {
        println!("  {kc:<12} {:.1}% correct", 100.0 * rate);
    }
    for seq in dataset.sequences().iter().take(5) {
        let bits: String = seq.outcomes.iter().map(|&c| if c { '1' } else { '0' }).collect();
        println!("  {} / {}: {bits}", seq.student_id, seq.kc_id);
    }
    Ok(())
}
