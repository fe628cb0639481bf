//! Expands one synthetic image into its 110 augmentation variants
//! (5 crops x 11 rotations x flip) and prints the tuple inventory.
//!
//! Run: cargo run --example augment_image

use exprgan::corpus::{augment, generate_corpus, AugmentPlan, CorpusSpec, Domain};

fn main() -> exprgan::error::Result<()> {
    let spec = CorpusSpec { n_human_subjects: 1, images_per_cell: 1, ..Default::default() };
    let images = generate_corpus(&spec)?;
    let img = images.iter().find(|i| i.domain == Domain::Human).unwrap();

    let plan = AugmentPlan::proportional(img.height(), img.width());
    let variants = augment(img, &plan)?;
    println!(
        "{}x{} {} image -> {} variants of size {:?}",
        img.height(),
        img.width(),
        img.expression.name(),
        variants.len(),
        (variants[0].height(), variants[0].width())
    );
    for (t, v) in plan.tuples().iter().zip(&variants).take(12) {
        println!(
            "crop {} angle {:>6.1} flip {:5} -> label {}",
            t.crop_index,
            t.angle_deg,
            t.flip,
            v.expression.name()
        );
    }
    println!("... {} tuples total, all labels preserved", plan.tuples().len());
    Ok(())
}
