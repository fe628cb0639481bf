//! Generates the two-domain synthetic corpus and saves it as a PNG dataset
//! with a manifest, then decodes every image back with the geometric oracle.
//!
//! Run: cargo run --example synth_corpus -- /tmp/exprgan-corpus

use exprgan::corpus::{decode_expression, generate_corpus, save_dataset, CorpusSpec};

fn main() -> exprgan::error::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "/tmp/exprgan-corpus".into());
    let spec = CorpusSpec::default();
    let images = generate_corpus(&spec)?;
    println!(
        "{} images: {} human subjects x 6 expressions x {} + {} characters x 7",
        images.len(),
        spec.n_human_subjects,
        spec.images_per_cell,
        spec.n_characters
    );
    let decoded_ok = images
        .iter()
        .filter(|i| decode_expression(i).map(|e| e == i.expression).unwrap_or(false))
        .count();
    println!("oracle decodes {decoded_ok}/{} labels exactly", images.len());
    save_dataset(std::path::Path::new(&out), &images)?;
    println!("saved to {out}");
    Ok(())
}
