//! Loads a checkpoint and classifies one PNG through the generator and the
//! expression head.
//!
//! Run: cargo run --release --example recognize_image -- CKPT IMAGE.png

use exprgan::corpus::{load_image, Domain, Expression, LabeledFaceImage};
use exprgan::error::{Error, Result};
use exprgan::eval::recognize;
use exprgan::trainer::{read_checkpoint_info, Trainer};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let (ckpt, image) = match (args.next(), args.next()) {
        (Some(c), Some(i)) => (c, i),
        _ => return Err(Error::Usage("usage: recognize_image CKPT IMAGE.png".into())),
    };
    let info = read_checkpoint_info(ckpt.as_ref())?;
    let trainer = Trainer::load(&info.config, ckpt.as_ref())?;
    let pixels = load_image(image.as_ref())?;
    // The label slot is ignored by recognition.
    let img = LabeledFaceImage::new(pixels, Expression::Anger, "query", Domain::Human)?;
    // Desk roster ids sort the same as their indices (c0, c1, ...).
    let ci = info
        .config
        .fixed_character
        .strip_prefix('c')
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let labels = recognize(&trainer.gen, &trainer.dis, ci, &[img])?;
    println!("{}", labels[0].name());
    Ok(())
}
