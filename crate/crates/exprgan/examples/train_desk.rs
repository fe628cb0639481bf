//! Desk-scale end-to-end run: synthesizes the corpus, trains the adversarial
//! pair, and reports held-out recognition accuracy on two reserved subjects.
//!
//! Run: cargo run --release --example train_desk

use exprgan::corpus::{generate_corpus, CorpusSpec, Domain};
use exprgan::eval::recognize;
use exprgan::trainer::{DatasetIndex, TrainConfig, Trainer};

fn main() -> exprgan::error::Result<()> {
    let corpus = generate_corpus(&CorpusSpec::default())?;

    // Hold out two subjects entirely; train on the rest plus all characters.
    let held = ["h00", "h01"];
    let train_set: Vec<_> = corpus
        .iter()
        .filter(|i| i.domain == Domain::Character || !held.contains(&i.subject_id.as_str()))
        .cloned()
        .collect();
    let test_set: Vec<_> = corpus
        .iter()
        .filter(|i| i.domain == Domain::Human && held.contains(&i.subject_id.as_str()))
        .cloned()
        .collect();

    let cfg = TrainConfig::desk_default();
    let data = DatasetIndex::build(&train_set)?;
    let mut trainer = Trainer::new(&cfg)?;
    let out = std::env::temp_dir().join("exprgan-train-desk");
    let summary = trainer.train(&data, &out)?;
    println!(
        "epoch {}: g_total {:.4}, d_total {:.4}; artifacts in {}",
        trainer.epoch,
        summary.g_total,
        summary.d_total,
        out.display()
    );

    let ci = data.character_index(&cfg.fixed_character)?;
    let predicted = recognize(&trainer.gen, &trainer.dis, ci, &test_set)?;
    let hits = test_set
        .iter()
        .zip(&predicted)
        .filter(|(img, p)| img.expression == **p)
        .count();
    println!("held-out accuracy: {}/{} = {:.3}", hits, test_set.len(), hits as f64 / test_set.len() as f64);
    Ok(())
}
