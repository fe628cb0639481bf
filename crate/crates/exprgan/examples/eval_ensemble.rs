//! Scores a checkpoint with expression logits averaged over every character
//! identity (and optionally several noise draws) instead of a single fixed
//! conditioning.
//!
//! Run: cargo run --release --example eval_ensemble -- CKPT DATA_DIR NOISE_SAMPLES [HELD ...]

use exprgan::corpus::{load_dataset, Domain, Expression};
use exprgan::eval::recognition_logits;
use exprgan::trainer::{read_checkpoint_info, Trainer};

fn main() -> exprgan::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("CKPT");
    let data = args.next().expect("DATA_DIR");
    let noise_samples: usize = args.next().expect("NOISE_SAMPLES").parse().unwrap();
    let held: Vec<String> = args.collect();
    let info = read_checkpoint_info(ckpt.as_ref())?;
    let trainer = Trainer::load(&info.config, ckpt.as_ref())?;
    let eval_set: Vec<_> = load_dataset(data.as_ref())?
        .into_iter()
        .filter(|i| i.domain == Domain::Human)
        .filter(|i| held.is_empty() || held.contains(&i.subject_id))
        .collect();
    let n_chars = trainer.cfg.model.n_characters;
    let mut total = None;
    for ci in 0..n_chars {
        let logits = recognition_logits(&trainer.gen, &trainer.dis, ci, &eval_set, noise_samples, 11)?;
        total = Some(match total {
            None => logits,
            Some(t) => t + logits,
        });
    }
    let logits = total.unwrap();
    let mut hits = 0usize;
    for (i, img) in eval_set.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if Expression::CLASSES[best] == img.expression {
            hits += 1;
        }
    }
    println!("{}/{} = {:.4}", hits, eval_set.len(), hits as f64 / eval_set.len() as f64);
    Ok(())
}
