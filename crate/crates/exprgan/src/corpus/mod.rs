//! Synthetic glyph corpus, dataset I/O, and the deterministic augmentation
//! engine.

pub mod augment;
pub mod dataset;
pub mod synth;
pub mod types;

pub use augment::{augment, apply_tuple, crop_five, hflip, rotate, AugmentPlan, TransformTuple, ANGLES_DEG, VARIANTS};
pub use dataset::{load_dataset, load_image, save_dataset, MANIFEST};
pub use synth::{character_id, decode_expression, generate_corpus, human_subject_id, mouth_mask, CorpusSpec};
pub use types::{Domain, Expression, LabeledFaceImage};
