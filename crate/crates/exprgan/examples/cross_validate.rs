//! Subject-disjoint cross-validation with the oracle decoder substituted
//! for the learned model: exercises the full fold/report machinery quickly
//! and must score exactly 1.0 on the synthetic corpus.
//!
//! Run: cargo run --example cross_validate -- /tmp/exprgan-report

use exprgan::corpus::{generate_corpus, CorpusSpec};
use exprgan::eval::{cross_validate, write_report, OracleClassifierTrainer};

fn main() -> exprgan::error::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "/tmp/exprgan-report".into());
    let images = generate_corpus(&CorpusSpec::default())?;
    let report = cross_validate(&images, &OracleClassifierTrainer, 10, 2, 7)?;
    println!(
        "mean accuracy {:.4} over {} fold x run cells, {} predictions",
        report.mean_accuracy,
        report.fold_accuracies.len(),
        report.total_predictions()
    );
    write_report(&report, out.as_ref())?;
    println!("accuracy.csv, confusion.csv, summary.txt in {out}");
    Ok(())
}
