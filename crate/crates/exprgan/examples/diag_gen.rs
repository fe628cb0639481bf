//! Diagnostic: does the generator transfer expression? Classifies generated
//! images by nearest character template (L1) instead of the expression head.
//!
//! Run: cargo run --release --example diag_gen -- CKPT DATA_DIR

use exprgan::corpus::{load_dataset, Domain, Expression};
use exprgan::model::one_hot_rows;
use exprgan::trainer::{read_checkpoint_info, Trainer};
use ndarray::{Array2, Array4, Axis};

fn main() -> exprgan::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("CKPT");
    let data = args.next().expect("DATA_DIR");
    let info = read_checkpoint_info(ckpt.as_ref())?;
    let trainer = Trainer::load(&info.config, ckpt.as_ref())?;
    let images = load_dataset(data.as_ref())?;
    let character = &trainer.cfg.fixed_character;
    let templates: Vec<_> = images
        .iter()
        .filter(|i| i.domain == Domain::Character && &i.subject_id == character)
        .collect();
    let humans: Vec<_> = images.iter().filter(|i| i.domain == Domain::Human).collect();

    let mut hits = 0usize;
    let mut neutral_hits = 0usize;
    let mut confusion = vec![vec![0usize; 7]; 6];
    for chunk in humans.chunks(100) {
        let n = chunk.len();
        let mut batch = Array4::zeros((
            n,
            1,
            trainer.cfg.model.image_size,
            trainer.cfg.model.image_size,
        ));
        for (i, img) in chunk.iter().enumerate() {
            batch.index_axis_mut(Axis(0), i).assign(&img.pixels);
        }
        let identity = one_hot_rows(&vec![0usize; n], trainer.cfg.model.n_characters)?;
        let z = Array2::zeros((n, trainer.cfg.model.z_dim));
        let generated = trainer.gen.generate(&batch, &identity, &z)?;
        for (i, img) in chunk.iter().enumerate() {
            let gen_img = generated.index_axis(Axis(0), i);
            let mut best = (f32::INFINITY, Expression::Neutral);
            for t in &templates {
                let d = (&gen_img - &t.pixels).mapv(f32::abs).sum();
                if d < best.0 {
                    best = (d, t.expression);
                }
            }
            if best.1 == img.expression {
                hits += 1;
            }
            if best.1 == Expression::Neutral {
                neutral_hits += 1;
            }
            let row = img.expression.class_index().unwrap();
            let col = templates.iter().position(|t| t.expression == best.1).unwrap();
            confusion[row][col] += 1;
        }
    }
    println!(
        "nearest-template accuracy {}/{} = {:.4}  (neutral collapse: {})",
        hits,
        humans.len(),
        hits as f64 / humans.len() as f64,
        neutral_hits
    );
    println!("rows = true expression, cols = template order:");
    for (i, t) in templates.iter().enumerate() {
        println!("  col {i} = {}", t.expression.name());
    }
    for (row, expr) in Expression::CLASSES.iter().enumerate() {
        println!("{:>10}: {:?}", expr.name(), confusion[row]);
    }
    Ok(())
}
