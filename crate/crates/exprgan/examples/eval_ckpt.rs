//! Scores a trained checkpoint on a dataset directory, split by subject.
//!
//! Run: cargo run --release --example eval_ckpt -- CKPT DATA_DIR [HELD ...]

use exprgan::corpus::{load_dataset, Domain};
use exprgan::eval::recognize;
use exprgan::trainer::{read_checkpoint_info, Trainer};

fn main() -> exprgan::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("CKPT");
    let data = args.next().expect("DATA_DIR");
    let held: Vec<String> = args.collect();
    let info = read_checkpoint_info(ckpt.as_ref())?;
    let trainer = Trainer::load(&info.config, ckpt.as_ref())?;
    let images = load_dataset(data.as_ref())?;
    let humans: Vec<_> = images.into_iter().filter(|i| i.domain == Domain::Human).collect();
    let eval_set: Vec<_> = if held.is_empty() {
        humans
    } else {
        humans.into_iter().filter(|i| held.contains(&i.subject_id)).collect()
    };
    let predicted = recognize(&trainer.gen, &trainer.dis, 0, &eval_set)?;
    let hits = eval_set.iter().zip(&predicted).filter(|(i, p)| i.expression == **p).count();
    println!("{}/{} = {:.4}", hits, eval_set.len(), hits as f64 / eval_set.len() as f64);
    Ok(())
}
