//! Trains the direct 6-way CNN baseline on one dataset directory and scores
//! it on held-out subjects from another.
//!
//! Run: cargo run --release --example cnn_baseline -- TRAIN_DIR EVAL_DIR [HELD ...]

use exprgan::corpus::{load_dataset, Domain};
use exprgan::eval::{ClassifierTrainer, CnnBaselineTrainer};
use exprgan::trainer::TrainConfig;

fn main() -> exprgan::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_dir = args.next().expect("TRAIN_DIR");
    let eval_dir = args.next().expect("EVAL_DIR");
    let held: Vec<String> = args.collect();
    let cfg = TrainConfig::desk_default();
    let trainer = CnnBaselineTrainer {
        model: cfg.model.clone(),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
    };
    let train_set = load_dataset(train_dir.as_ref())?;
    let model = trainer.fit(&train_set, cfg.seed)?;
    let eval_set: Vec<_> = load_dataset(eval_dir.as_ref())?
        .into_iter()
        .filter(|i| i.domain == Domain::Human)
        .filter(|i| held.is_empty() || held.contains(&i.subject_id))
        .collect();
    let predicted = model.classify(&eval_set)?;
    let hits = eval_set.iter().zip(&predicted).filter(|(i, p)| i.expression == **p).count();
    println!("{}/{} = {:.4}", hits, eval_set.len(), hits as f64 / eval_set.len() as f64);
    Ok(())
}
